//! Turns per-point multi-way symmetry predictions into a final symmetry set
//! by confidence-weighted density clustering.

use nalgebra::Vector3;

use crate::error::{Result, SymError};
use crate::geom::{bbox_diagonal, centroid, SymmetryHypothesis, SymmetryKind};
use crate::matching::TransformSignature;

pub const MAX_REF_OUTPUTS: usize = 9;
pub const MAX_ROT_OUTPUTS: usize = 3;

/// One candidate symmetry emitted by one point, camera frame.
#[derive(Debug, Clone)]
pub struct CandidateSymmetry {
    /// Index of the emitting point in the scan.
    pub point_index: usize,
    pub sym: SymmetryHypothesis,
}

/// All gated candidates of a scan plus the scan's point count.
#[derive(Debug, Clone)]
pub struct PredictionBundle {
    pub candidates: Vec<CandidateSymmetry>,
    pub num_points: usize,
}

impl PredictionBundle {
    pub fn validate(&self) -> Result<()> {
        let mut ref_count = vec![0usize; self.num_points];
        let mut rot_count = vec![0usize; self.num_points];
        for c in &self.candidates {
            if c.point_index >= self.num_points {
                return Err(SymError::InvalidArgument("candidate point index out of range".into()));
            }
            if !(0.0..=1.0).contains(&c.sym.confidence) {
                return Err(SymError::InvalidArgument("candidate confidence out of range".into()));
            }
            match c.sym.kind {
                SymmetryKind::Reflectional => ref_count[c.point_index] += 1,
                SymmetryKind::Rotational => rot_count[c.point_index] += 1,
            }
        }
        if ref_count.iter().any(|&c| c > MAX_REF_OUTPUTS)
            || rot_count.iter().any(|&c| c > MAX_ROT_OUTPUTS)
        {
            return Err(SymError::InvalidArgument("too many candidates per point".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ClusterParams {
    /// Maximum neighborhood dissimilarity, in units of the normalized
    /// (unit bounding-box diagonal) cloud.
    pub eps: f64,
    /// Core weight threshold at the reference point count.
    pub min_weight: f64,
    /// Reference point count the threshold was calibrated for.
    pub reference_points: f64,
    /// Candidates below this confidence are discarded before clustering.
    pub confidence_floor: f64,
    /// Maximum number of reference points used in transform signatures.
    pub max_signature_points: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            eps: 0.2,
            min_weight: 500.0,
            reference_points: 1000.0,
            confidence_floor: 0.2,
            max_signature_points: 64,
        }
    }
}

impl ClusterParams {
    /// Core threshold scaled to the scan's point count.
    pub fn weight_threshold(&self, num_points: usize) -> f64 {
        self.min_weight * num_points as f64 / self.reference_points
    }
}

#[derive(Debug, Clone)]
pub struct ClusterResult {
    /// Final symmetries; confidence is the normalized cluster mass.
    pub symmetries: Vec<SymmetryHypothesis>,
    /// For each input candidate, the id of its cluster in `symmetries`,
    /// or None for noise / filtered candidates.
    pub member_map: Vec<Option<usize>>,
}

/// Normalized cluster mass: min(1, total member confidence / point count).
pub fn confidence_of(member_weight: f64, num_points: usize) -> f64 {
    (member_weight / num_points as f64).min(1.0)
}

/// Evenly strided subsample of at most `max` points.
fn subsample(points: &[Vector3<f64>], max: usize) -> Vec<Vector3<f64>> {
    if points.len() <= max {
        return points.to_vec();
    }
    (0..max)
        .map(|i| points[i * points.len() / max])
        .collect()
}

/// Confidence-weighted DBSCAN over the candidates of `bundle`. Dissimilarity
/// is the mean transform displacement over the scan points normalized to unit
/// bounding-box diagonal; reflectional and rotational candidates are
/// clustered independently.
pub fn cluster(
    bundle: &PredictionBundle,
    points: &[Vector3<f64>],
    params: &ClusterParams,
) -> Result<ClusterResult> {
    if bundle.candidates.is_empty() {
        return Ok(ClusterResult { symmetries: Vec::new(), member_map: Vec::new() });
    }
    if points.is_empty() {
        return Err(SymError::InvalidArgument("empty point set".into()));
    }
    let diag = bbox_diagonal(points);
    let scale = if diag > 0.0 { 1.0 / diag } else { 1.0 };
    let center = centroid(points);
    let norm_points: Vec<Vector3<f64>> = points.iter().map(|p| (p - center) * scale).collect();
    let sig_points = subsample(&norm_points, params.max_signature_points);

    let mut member_map = vec![None; bundle.candidates.len()];
    let mut symmetries = Vec::new();

    for kind in [SymmetryKind::Reflectional, SymmetryKind::Rotational] {
        // Active candidate indices after the confidence floor.
        let active: Vec<usize> = bundle
            .candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.sym.kind == kind && c.sym.confidence >= params.confidence_floor)
            .map(|(i, _)| i)
            .collect();
        if active.is_empty() {
            continue;
        }
        // Candidates mapped into the normalized cloud.
        let normed: Vec<SymmetryHypothesis> = active
            .iter()
            .map(|&i| {
                let c = &bundle.candidates[i];
                let mut s = c.sym.clone();
                s.point = (s.point - center) * scale;
                s
            })
            .collect();
        let sigs: Vec<TransformSignature> =
            normed.iter().map(|s| TransformSignature::of(s, &sig_points)).collect();
        let weights: Vec<f64> = active.iter().map(|&i| bundle.candidates[i].sym.confidence).collect();

        let labels = weighted_dbscan(&sigs, &weights, params.eps, params.weight_threshold(bundle.num_points));

        let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
        for cl in 0..n_clusters {
            let members: Vec<usize> =
                (0..active.len()).filter(|&i| labels[i] == Some(cl)).collect();
            let weight: f64 = members.iter().map(|&i| weights[i]).sum();
            let mut mean_point = Vector3::zeros();
            let mut mean_normal = Vector3::zeros();
            let first_normal = normed[members[0]].normal;
            let mut order_votes = std::collections::BTreeMap::new();
            for &i in &members {
                let w = weights[i];
                mean_point += w * normed[i].point;
                let mut n = normed[i].normal;
                if n.dot(&first_normal) < 0.0 {
                    n = -n;
                }
                mean_normal += w * n;
                if let Some(o) = normed[i].order {
                    *order_votes.entry(o).or_insert(0.0) += w;
                }
            }
            mean_point /= weight;
            let normal = if mean_normal.norm() > 1e-12 {
                mean_normal.normalize()
            } else {
                first_normal
            };
            // Majority vote; BTreeMap iteration makes ties resolve to the
            // smaller order.
            let order = match kind {
                SymmetryKind::Reflectional => None,
                SymmetryKind::Rotational => {
                    let mut best = (0u32, f64::NEG_INFINITY);
                    for (&o, &w) in &order_votes {
                        if w > best.1 {
                            best = (o, w);
                        }
                    }
                    Some(best.0)
                }
            };
            let sym = SymmetryHypothesis::new(
                kind,
                mean_point / scale + center,
                normal,
                order,
                confidence_of(weight, bundle.num_points),
            )?;
            let id = symmetries.len();
            symmetries.push(sym);
            for &i in &members {
                member_map[active[i]] = Some(id);
            }
        }
    }

    Ok(ClusterResult { symmetries, member_map })
}

/// Plain weighted DBSCAN over a precomputed signature set. A candidate is a
/// core point when the summed weight of its eps-neighborhood (itself
/// included) reaches `threshold`. Seeds are visited by (weight desc, index)
/// so the result does not depend on input order.
fn weighted_dbscan(
    sigs: &[TransformSignature],
    weights: &[f64],
    eps: f64,
    threshold: f64,
) -> Vec<Option<usize>> {
    let n = sigs.len();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        neighbors[i].push(i);
        for j in i + 1..n {
            if sigs[i].distance(&sigs[j]) <= eps {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    let is_core: Vec<bool> = (0..n)
        .map(|i| neighbors[i].iter().map(|&j| weights[j]).sum::<f64>() >= threshold)
        .collect();

    let mut seed_order: Vec<usize> = (0..n).collect();
    seed_order.sort_by(|&a, &b| {
        weights[b].partial_cmp(&weights[a]).unwrap().then(a.cmp(&b))
    });

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next_cluster = 0;
    for &seed in &seed_order {
        if visited[seed] || !is_core[seed] {
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(seed);
        visited[seed] = true;
        while let Some(i) = queue.pop_front() {
            labels[i] = Some(cluster);
            if is_core[i] {
                for &j in &neighbors[i] {
                    if !visited[j] {
                        visited[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    labels
}
