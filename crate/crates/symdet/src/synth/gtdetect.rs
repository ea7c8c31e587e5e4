//! Ground-truth symmetry detection on complete geometry: pair-voting plane
//! candidates, iterative reflection refinement, clustering, axis derivation
//! from plane pairs, and order estimation by per-angle chamfer residuals.

use nalgebra::Vector3;
use rand::Rng;
use std::f64::consts::PI;

use crate::aggregate::{cluster, CandidateSymmetry, ClusterParams, PredictionBundle};
use crate::error::Result;
use crate::geom::{
    bbox_diagonal, centroid, reflect_point_raw, rotate_point_raw, SymmetryHypothesis,
};
use crate::losses::MAX_ORDER;
use crate::synth::mesh::Mesh;
use crate::synth::nn::NnGrid;

#[derive(Debug, Clone)]
pub struct GtDetectParams {
    /// Surface samples drawn from the mesh.
    pub samples: usize,
    /// Random point pairs proposed as plane candidates.
    pub pairs: usize,
    /// Reflection-fit refinement sweeps per candidate.
    pub refine_iters: usize,
    /// Points used during refinement and quick validation.
    pub subsample: usize,
    /// Points used for final validation of cluster centers.
    pub validate_samples: usize,
    /// Accepted normalized chamfer residual (fraction of the max distance to
    /// the plane/axis).
    pub residual_tol: f64,
    /// Minimum summed votes for a plane cluster.
    pub min_votes: f64,
}

impl Default for GtDetectParams {
    fn default() -> Self {
        Self {
            samples: 4000,
            pairs: 3000,
            refine_iters: 6,
            subsample: 64,
            validate_samples: 512,
            residual_tol: 0.05,
            min_votes: 4.0,
        }
    }
}

/// Evenly strided subsample.
fn stride_sample(points: &[Vector3<f64>], max: usize) -> Vec<Vector3<f64>> {
    if points.len() <= max {
        return points.to_vec();
    }
    (0..max).map(|i| points[i * points.len() / max]).collect()
}

fn rho_plane(points: &[Vector3<f64>], point: &Vector3<f64>, n: &Vector3<f64>) -> f64 {
    points.iter().map(|p| (p - point).dot(n).abs()).fold(0.0, f64::max)
}

fn rho_axis(points: &[Vector3<f64>], point: &Vector3<f64>, n: &Vector3<f64>) -> f64 {
    points
        .iter()
        .map(|p| {
            let d = p - point;
            (d - d.dot(n) * n).norm()
        })
        .fold(0.0, f64::max)
}

/// Mean nearest-neighbor distance of the reflected subsample, normalized by
/// the plane's max point distance.
fn plane_residual(
    grid: &NnGrid,
    sub: &[Vector3<f64>],
    rho_pts: &[Vector3<f64>],
    point: &Vector3<f64>,
    n: &Vector3<f64>,
) -> f64 {
    let rho = rho_plane(rho_pts, point, n);
    if rho <= 0.0 {
        return f64::INFINITY;
    }
    let mean: f64 = sub
        .iter()
        .map(|p| grid.nearest_distance(&reflect_point_raw(p, point, n)))
        .sum::<f64>()
        / sub.len() as f64;
    mean / rho
}

fn axis_residual(
    dist: &dyn Fn(&Vector3<f64>) -> f64,
    sub: &[Vector3<f64>],
    rho_pts: &[Vector3<f64>],
    point: &Vector3<f64>,
    n: &Vector3<f64>,
    angle: f64,
) -> f64 {
    let rho = rho_axis(rho_pts, point, n);
    if rho <= 0.0 {
        return f64::INFINITY;
    }
    let mean: f64 = sub
        .iter()
        .map(|p| dist(&rotate_point_raw(p, point, n, angle)))
        .sum::<f64>()
        / sub.len() as f64;
    mean / rho
}

/// One reflection-fit sweep: reflect the subsample, pull nearest-neighbor
/// correspondences, and refit the plane from the correspondence midpoints and
/// displacement directions.
fn refine_plane(
    grid: &NnGrid,
    sub: &[Vector3<f64>],
    center: &Vector3<f64>,
    diag: f64,
    point: &mut Vector3<f64>,
    normal: &mut Vector3<f64>,
    iters: usize,
) {
    for _ in 0..iters {
        let mut dir_acc = Vector3::zeros();
        let mut d_acc = 0.0;
        let mut d_count = 0.0;
        for p in sub {
            let q = grid.point(grid.nearest(&reflect_point_raw(p, point, normal)).0);
            let v = p - q;
            // Displacements parallel to the plane normal carry orientation;
            // near-plane points only vote for the offset.
            if v.norm() > 0.05 * diag {
                dir_acc += if v.dot(normal) >= 0.0 { v } else { -v };
            }
            let mid = (p + q) * 0.5;
            d_acc += mid.dot(normal);
            d_count += 1.0;
        }
        if dir_acc.norm() > 1e-12 {
            *normal = dir_acc.normalize();
        }
        let d = d_acc / d_count;
        // Representative plane point: projection of the cloud centroid.
        *point = center + (d - center.dot(normal)) * *normal;
    }
}

/// Refine an axis by fitting the best rigid rotation (Kabsch) to nearest-
/// neighbor correspondences of the subsample rotated by `gamma`, then
/// extracting that rotation's axis. Returns false when the fit degenerates.
fn refine_axis(
    grid: &NnGrid,
    sub: &[Vector3<f64>],
    center: &Vector3<f64>,
    point: &mut Vector3<f64>,
    dir: &mut Vector3<f64>,
    gamma: f64,
    iters: usize,
) -> bool {
    for _ in 0..iters {
        let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = sub
            .iter()
            .map(|p| {
                let q = grid.point(grid.nearest(&rotate_point_raw(p, point, dir, gamma)).0);
                (*p, q)
            })
            .collect();
        let n = pairs.len() as f64;
        let pc: Vector3<f64> = pairs.iter().map(|(p, _)| p).sum::<Vector3<f64>>() / n;
        let qc: Vector3<f64> = pairs.iter().map(|(_, q)| q).sum::<Vector3<f64>>() / n;
        let mut h = nalgebra::Matrix3::<f64>::zeros();
        for (p, q) in &pairs {
            h += (p - pc) * (q - qc).transpose();
        }
        let svd = h.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = nalgebra::Matrix3::identity();
        if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        let r = v_t.transpose() * d * u.transpose();
        let rot = nalgebra::Rotation3::from_matrix_unchecked(r);
        let Some((axis, angle)) = rot.axis_angle() else {
            return false;
        };
        if angle < 0.05 {
            return false;
        }
        let mut n_new = axis.into_inner();
        if n_new.dot(dir) < 0.0 {
            n_new = -n_new;
        }
        // Fixed point of the fitted motion: (I - R) a = t, solved by least
        // squares (singular along the axis).
        let t = qc - r * pc;
        let a = (nalgebra::Matrix3::identity() - r)
            .svd(true, true)
            .solve(&t, 1e-9)
            .unwrap_or(*point);
        *dir = n_new;
        // Representative axis point: closest point to the cloud centroid.
        *point = a + (center - a).dot(&n_new) * n_new;
    }
    true
}

/// Detect reflection planes and rotational axes of a complete point sample.
/// When `surface` is given, order estimation measures exact point-to-mesh
/// distances (tessellation-level noise floor) instead of sample NN distances.
fn detect_with(
    points: &[Vector3<f64>],
    surface: Option<&Mesh>,
    params: &GtDetectParams,
    rng: &mut impl Rng,
) -> Result<Vec<SymmetryHypothesis>> {
    if points.len() < 16 {
        return Ok(Vec::new());
    }
    let diag = bbox_diagonal(points);
    if diag <= 0.0 {
        return Ok(Vec::new());
    }
    let center = centroid(points);
    let grid = NnGrid::new(points, diag / 25.0);
    let sub = stride_sample(points, params.subsample);
    let validate = stride_sample(points, params.validate_samples);

    // --- Plane candidates from random pair bisectors, refined in place.
    let mut candidates: Vec<SymmetryHypothesis> = Vec::new();
    for _ in 0..params.pairs {
        let i = rng.gen_range(0..points.len());
        let j = rng.gen_range(0..points.len());
        let v = points[j] - points[i];
        if v.norm() < 0.25 * diag {
            continue;
        }
        let mut normal = v.normalize();
        let mut point = (points[i] + points[j]) * 0.5;
        refine_plane(&grid, &sub, &center, diag, &mut point, &mut normal, params.refine_iters);
        if plane_residual(&grid, &sub, points, &point, &normal) < params.residual_tol {
            candidates.push(SymmetryHypothesis::reflectional(point, normal)?);
        }
    }

    // --- Cluster surviving candidates; each survivor carries one vote.
    let mut out: Vec<SymmetryHypothesis> = Vec::new();
    if !candidates.is_empty() {
        let bundle = PredictionBundle {
            candidates: candidates
                .iter()
                .map(|s| CandidateSymmetry { point_index: 0, sym: s.clone() })
                .collect(),
            num_points: candidates.len(),
        };
        let cl_params = ClusterParams {
            eps: 0.05,
            min_weight: params.min_votes,
            reference_points: candidates.len() as f64,
            confidence_floor: 0.0,
            max_signature_points: 64,
        };
        let result = cluster(&bundle, points, &cl_params)?;
        for sym in result.symmetries {
            // Re-refine the cluster center and validate on the larger set.
            let mut point = sym.point;
            let mut normal = sym.normal;
            refine_plane(&grid, &validate, &center, diag, &mut point, &mut normal, 3);
            if plane_residual(&grid, &validate, points, &point, &normal) < params.residual_tol {
                let dup = out.iter().any(|s| {
                    s.normal.dot(&normal).abs() > 0.999
                        && ((point - s.point).dot(&s.normal)).abs() < 0.01 * diag
                });
                if !dup {
                    out.push(SymmetryHypothesis::reflectional(point, normal)?);
                }
            }
        }
    }

    // --- Axis candidates from intersections of plane pairs.
    // Order discrimination needs a residual floor well below the geometric
    // deviation of a wrong order; against the exact surface the floor is the
    // tessellation error, allowing a much tighter tolerance.
    let order_dist: Box<dyn Fn(&Vector3<f64>) -> f64> = match surface {
        Some(mesh) => Box::new(move |q: &Vector3<f64>| mesh.distance_to(q)),
        None => {
            let g = &grid;
            Box::new(move |q: &Vector3<f64>| g.nearest_distance(q))
        }
    };
    let order_tol = if surface.is_some() { 0.005 } else { params.residual_tol };
    let planes: Vec<SymmetryHypothesis> = out.clone();
    let mut axis_candidates: Vec<SymmetryHypothesis> = Vec::new();
    // Any rotational symmetry axis contains the centroid and is a principal
    // direction of the covariance, so the three eigenvectors are natural
    // candidates; this also covers continuous families whose mirror planes
    // collapse into a single cluster.
    let mut cov = nalgebra::Matrix3::<f64>::zeros();
    for p in points {
        let d = p - center;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = nalgebra::SymmetricEigen::new(cov);
    for k in 0..3 {
        let dir: Vector3<f64> = eig.eigenvectors.column(k).into();
        if dir.norm() < 0.5 {
            continue;
        }
        let dir = dir.normalize();
        if let Some((p, d, order)) =
            estimate_axis(&grid, &order_dist, &sub, points, &center, &center, &dir, order_tol)
        {
            axis_candidates.push(SymmetryHypothesis::rotational(p, d, order)?);
        }
    }
    for i in 0..planes.len() {
        for j in i + 1..planes.len() {
            let n1 = planes[i].normal;
            let n2 = planes[j].normal;
            let dir = n1.cross(&n2);
            if dir.norm() < 0.17 {
                continue; // nearly parallel planes
            }
            let dir = dir.normalize();
            // Closest point to the centroid on the intersection line:
            // solve p = center + a*n1 + b*n2 with p on both planes.
            let d1 = (planes[i].point - center).dot(&n1);
            let d2 = (planes[j].point - center).dot(&n2);
            let dot = n1.dot(&n2);
            let det = 1.0 - dot * dot;
            let a = (d1 - d2 * dot) / det;
            let b = (d2 - d1 * dot) / det;
            let point = center + a * n1 + b * n2;
            if let Some((p, d, order)) =
                estimate_axis(&grid, &order_dist, &sub, points, &center, &point, &dir, order_tol)
            {
                axis_candidates.push(SymmetryHypothesis::rotational(p, d, order)?);
            }
        }
    }
    if !axis_candidates.is_empty() {
        let bundle = PredictionBundle {
            candidates: axis_candidates
                .iter()
                .map(|s| CandidateSymmetry { point_index: 0, sym: s.clone() })
                .collect(),
            num_points: axis_candidates.len(),
        };
        let cl_params = ClusterParams {
            eps: 0.05,
            min_weight: 1.0,
            reference_points: axis_candidates.len() as f64,
            confidence_floor: 0.0,
            max_signature_points: 64,
        };
        let result = cluster(&bundle, points, &cl_params)?;
        for sym in result.symmetries {
            // Re-refine and re-estimate the order on the larger set.
            if let Some((p, d, order)) = estimate_axis(
                &grid,
                &order_dist,
                &validate,
                points,
                &center,
                &sym.point,
                &sym.normal,
                order_tol,
            ) {
                let dup = out.iter().any(|s| {
                    s.is_rotational()
                        && s.normal.dot(&d).abs() > 0.999
                        && {
                            let off = p - s.point;
                            (off - off.dot(&s.normal) * s.normal).norm() < 0.01 * diag
                        }
                });
                if !dup {
                    out.push(SymmetryHypothesis::rotational(p, d, order)?);
                }
            }
        }
    }

    for s in &mut out {
        s.confidence = 1.0;
    }
    Ok(out)
}

/// Smallest-angle-first order estimation: continuous when an irrational angle
/// passes; otherwise the largest valid discrete order up to 10. Returns the
/// order and its residual, or None when no rotation fits.
#[allow(clippy::too_many_arguments)]
fn estimate_axis(
    grid: &NnGrid,
    dist: &dyn Fn(&Vector3<f64>) -> f64,
    sub: &[Vector3<f64>],
    rho_pts: &[Vector3<f64>],
    center: &Vector3<f64>,
    point0: &Vector3<f64>,
    dir0: &Vector3<f64>,
    tol: f64,
) -> Option<(Vector3<f64>, Vector3<f64>, u32)> {
    // Continuous first: 1 radian and sqrt(2) radians are incommensurate with
    // a full turn, so only a continuous symmetry survives both.
    let (mut p, mut d) = (*point0, *dir0);
    if refine_axis(grid, sub, center, &mut p, &mut d, 1.0, 3) {
        let c1 = axis_residual(dist, sub, rho_pts, &p, &d, 1.0);
        let c2 = axis_residual(dist, sub, rho_pts, &p, &d, 2.0_f64.sqrt());
        if c1 < tol && c2 < tol {
            return Some((p, d, 0));
        }
    }
    for r in (2..=MAX_ORDER).rev() {
        let (mut p, mut d) = (*point0, *dir0);
        let gamma = 2.0 * PI / r as f64;
        if !refine_axis(grid, sub, center, &mut p, &mut d, gamma, 3) {
            continue;
        }
        // Refinement must not have walked off the proposed axis line.
        if d.dot(dir0).abs() < 0.9 {
            continue;
        }
        if axis_residual(dist, sub, rho_pts, &p, &d, gamma) < tol {
            return Some((p, d, r));
        }
    }
    None
}

/// Detect symmetries of a complete point sample.
pub fn gt_detect_points(
    points: &[Vector3<f64>],
    params: &GtDetectParams,
    rng: &mut impl Rng,
) -> Result<Vec<SymmetryHypothesis>> {
    detect_with(points, None, params, rng)
}

/// Detect symmetries of a mesh via a dense surface sample.
pub fn gt_detect(
    mesh: &Mesh,
    params: &GtDetectParams,
    rng: &mut impl Rng,
) -> Result<Vec<SymmetryHypothesis>> {
    let (points, _) = mesh.sample_surface(params.samples, rng)?;
    detect_with(&points, Some(mesh), params, rng)
}
