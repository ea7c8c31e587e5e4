//! Benefit matrices between symmetry sets and optimal assignment of predicted
//! to ground-truth symmetries, used both in training and evaluation.

use nalgebra::Vector3;

use crate::error::{Result, SymError};
use crate::geom::{reflect_point_raw, rotate_point_raw, SymmetryHypothesis, SymmetryKind};

/// Regularizer in the benefit denominators.
pub const BENEFIT_EPSILON: f64 = 0.01;

/// The 16 comparison angles kappa * pi/8, kappa = 1..=16.
pub fn gamma_angles() -> [f64; 16] {
    let mut g = [0.0; 16];
    for (k, a) in g.iter_mut().enumerate() {
        *a = (k as f64 + 1.0) * std::f64::consts::FRAC_PI_8;
    }
    g
}

#[derive(Debug, Clone)]
pub struct BenefitMatrix {
    /// Row-major M x K values, all finite and positive.
    pub values: Vec<f64>,
    pub m: usize,
    pub k: usize,
}

impl BenefitMatrix {
    pub fn new(m: usize, k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != m * k {
            return Err(SymError::InvalidArgument("benefit matrix shape mismatch".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(SymError::InvalidArgument(
                "benefit entries must be finite and positive".into(),
            ));
        }
        Ok(Self { values, m, k })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let k = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(m * k);
        for r in rows {
            if r.len() != k {
                return Err(SymError::InvalidArgument("ragged benefit matrix".into()));
            }
            values.extend_from_slice(r);
        }
        Self::new(m, k, values)
    }

    #[inline]
    pub fn get(&self, m: usize, k: usize) -> f64 {
        self.values[m * self.k + k]
    }
}

/// One-to-one matching: every ground-truth index appears exactly once, every
/// prediction index at most once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// (prediction m, ground truth k) pairs, sorted by m.
    pub pairs: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn total_benefit(&self, b: &BenefitMatrix) -> f64 {
        self.pairs.iter().map(|&(m, k)| b.get(m, k)).sum()
    }

    /// Ground truth matched to prediction m, if any.
    pub fn gt_for(&self, m: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(pm, _)| pm == m).map(|&(_, k)| k)
    }
}

/// Benefit of matching two reflectional symmetries (larger = more similar).
pub fn benefit_ref(
    a: &SymmetryHypothesis,
    b: &SymmetryHypothesis,
    points: &[Vector3<f64>],
) -> Result<f64> {
    if !a.is_reflectional() || !b.is_reflectional() {
        return Err(SymError::KindMismatch { expected: "reflectional", got: "rotational" });
    }
    let mut sum = 0.0;
    for p in points {
        let ta = reflect_point_raw(p, &a.point, &a.normal);
        let tb = reflect_point_raw(p, &b.point, &b.normal);
        sum += 1.0 / ((ta - tb).norm() + BENEFIT_EPSILON);
    }
    Ok(sum)
}

/// Benefit of matching two rotational symmetries, averaged over the 16
/// comparison angles.
pub fn benefit_rot(
    a: &SymmetryHypothesis,
    b: &SymmetryHypothesis,
    points: &[Vector3<f64>],
) -> Result<f64> {
    if !a.is_rotational() || !b.is_rotational() {
        return Err(SymError::KindMismatch { expected: "rotational", got: "reflectional" });
    }
    let angles = gamma_angles();
    let mut total = 0.0;
    for &g in &angles {
        for p in points {
            let ta = rotate_point_raw(p, &a.point, &a.normal, g);
            let tb = rotate_point_raw(p, &b.point, &b.normal, g);
            total += 1.0 / ((ta - tb).norm() + BENEFIT_EPSILON);
        }
    }
    Ok(total / angles.len() as f64)
}

/// Benefit for a pair of the same kind.
pub fn benefit(
    a: &SymmetryHypothesis,
    b: &SymmetryHypothesis,
    points: &[Vector3<f64>],
) -> Result<f64> {
    match a.kind {
        SymmetryKind::Reflectional => benefit_ref(a, b, points),
        SymmetryKind::Rotational => benefit_rot(a, b, points),
    }
}

/// Mean transform displacement between two symmetries of the same kind.
/// Unlike the benefit this is a distance with length units, suitable as a
/// clustering metric.
pub fn dissimilarity(
    a: &SymmetryHypothesis,
    b: &SymmetryHypothesis,
    points: &[Vector3<f64>],
) -> Result<f64> {
    if a.kind != b.kind {
        return Err(SymError::KindMismatch { expected: a.kind.name(), got: b.kind.name() });
    }
    if points.is_empty() {
        return Err(SymError::InvalidArgument("empty point set".into()));
    }
    let n = points.len() as f64;
    match a.kind {
        SymmetryKind::Reflectional => {
            let mut sum = 0.0;
            for p in points {
                let ta = reflect_point_raw(p, &a.point, &a.normal);
                let tb = reflect_point_raw(p, &b.point, &b.normal);
                sum += (ta - tb).norm();
            }
            Ok(sum / n)
        }
        SymmetryKind::Rotational => {
            let angles = gamma_angles();
            let mut sum = 0.0;
            for &g in &angles {
                for p in points {
                    let ta = rotate_point_raw(p, &a.point, &a.normal, g);
                    let tb = rotate_point_raw(p, &b.point, &b.normal, g);
                    sum += (ta - tb).norm();
                }
            }
            Ok(sum / (n * angles.len() as f64))
        }
    }
}

/// Transformed-point signature of a symmetry over a fixed reference point set.
/// Two signatures over the same reference points give the dissimilarity as a
/// plain mean coordinate distance, letting clustering precompute transforms.
#[derive(Debug, Clone)]
pub struct TransformSignature {
    pub kind: SymmetryKind,
    pub coords: Vec<Vector3<f64>>,
}

impl TransformSignature {
    pub fn of(sym: &SymmetryHypothesis, points: &[Vector3<f64>]) -> Self {
        let coords = match sym.kind {
            SymmetryKind::Reflectional => points
                .iter()
                .map(|p| reflect_point_raw(p, &sym.point, &sym.normal))
                .collect(),
            SymmetryKind::Rotational => {
                let mut coords = Vec::with_capacity(points.len() * 16);
                for &g in &gamma_angles() {
                    for p in points {
                        coords.push(rotate_point_raw(p, &sym.point, &sym.normal, g));
                    }
                }
                coords
            }
        };
        Self { kind: sym.kind, coords }
    }

    /// Mean displacement between two signatures over the same reference set.
    pub fn distance(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.kind, other.kind);
        debug_assert_eq!(self.coords.len(), other.coords.len());
        let sum: f64 = self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b).norm())
            .sum();
        sum / self.coords.len() as f64
    }
}

/// Rectangular Hungarian algorithm, minimizing cost. `cost` is n x m with
/// n <= m; returns for each row its assigned column.
fn hungarian_min(cost: &[f64], n: usize, m: usize) -> Vec<usize> {
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1]; // p[j] = row occupying column j (1-based), 0 = free
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Maximum total benefit achievable matching the given ground-truth columns
/// to the given prediction rows one-to-one.
fn best_value(b: &BenefitMatrix, rows: &[usize], cols: &[usize]) -> f64 {
    if cols.is_empty() {
        return 0.0;
    }
    debug_assert!(cols.len() <= rows.len());
    let max = cols
        .iter()
        .flat_map(|&k| rows.iter().map(move |&m| b.get(m, k)))
        .fold(f64::NEG_INFINITY, f64::max);
    // Minimize (max - benefit) over GT rows x prediction columns.
    let n = cols.len();
    let mm = rows.len();
    let mut cost = vec![0.0; n * mm];
    for (ci, &k) in cols.iter().enumerate() {
        for (ri, &m) in rows.iter().enumerate() {
            cost[ci * mm + ri] = max - b.get(m, k);
        }
    }
    let assign = hungarian_min(&cost, n, mm);
    cols.iter()
        .enumerate()
        .map(|(ci, &k)| b.get(rows[assign[ci]], k))
        .sum()
}

/// Solve the optimal assignment of predictions to ground truths, maximizing
/// total benefit. Requires M >= K. Among maximal assignments the one with the
/// lexicographically smallest (m, k) pair list is returned.
pub fn optimal_assign(b: &BenefitMatrix) -> Result<Assignment> {
    if b.m < b.k {
        return Err(SymError::InvalidArgument(format!(
            "cannot assign {} ground truths to {} predictions",
            b.k, b.m
        )));
    }
    if b.k == 0 {
        return Ok(Assignment { pairs: Vec::new() });
    }
    let all_rows: Vec<usize> = (0..b.m).collect();
    let all_cols: Vec<usize> = (0..b.k).collect();
    let target = best_value(b, &all_rows, &all_cols);
    let tol = 1e-9 * (1.0 + target.abs());

    let mut pairs = Vec::with_capacity(b.k);
    let mut rows_left = all_rows;
    let mut cols_left = all_cols;
    let mut fixed_value = 0.0;
    'outer: for m in 0..b.m {
        if cols_left.is_empty() {
            break;
        }
        if !rows_left.contains(&m) {
            continue;
        }
        for k in 0..b.k {
            if !cols_left.contains(&k) {
                continue;
            }
            let rows_rest: Vec<usize> = rows_left.iter().cloned().filter(|&r| r != m).collect();
            let cols_rest: Vec<usize> = cols_left.iter().cloned().filter(|&c| c != k).collect();
            if cols_rest.len() > rows_rest.len() {
                continue;
            }
            let v = fixed_value + b.get(m, k) + best_value(b, &rows_rest, &cols_rest);
            if v >= target - tol {
                pairs.push((m, k));
                fixed_value += b.get(m, k);
                rows_left = rows_rest;
                cols_left = cols_rest;
                continue 'outer;
            }
        }
    }
    debug_assert_eq!(pairs.len(), b.k);
    Ok(Assignment { pairs })
}
