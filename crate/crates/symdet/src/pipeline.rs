//! Frame-level detection pipeline: predict per-point candidates, aggregate
//! them by clustering, and verify the survivors against the carved
//! visibility volume.

use std::time::Instant;

use nalgebra::Vector3;

use crate::aggregate::{cluster, ClusterParams};
use crate::error::Result;
use crate::geom::{bbox_diagonal, ObjectScan, SymmetryHypothesis};
use crate::predictor::model::{farthest_point_indices, predict, ModelParams};
use crate::verify::{carve, default_voxel_size, verify_symmetry, VerifyParams};

#[derive(Debug, Clone)]
pub struct DetectParams {
    pub cluster: ClusterParams,
    /// Trimmed symmetric-ICP iterations that snap each aggregated plane to
    /// the scan geometry; 0 disables refinement.
    pub refine_iters: usize,
    /// None disables visibility verification.
    pub verify: Option<VerifyParams>,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            cluster: ClusterParams::default(),
            refine_iters: 6,
            verify: Some(VerifyParams::default()),
        }
    }
}

/// Points used for plane refinement (farthest-point subsample of the scan).
const REFINE_POINTS: usize = 384;

/// Snap a reflection plane onto the scan: reflect each sample point across
/// the current plane, pair it with its nearest scan sample, drop the worst
/// pairs, and refit the plane from the surviving pairs (the normal is the
/// principal direction of the pair displacements, the plane passes through
/// the pair midpoints). Pairs whose two ends coincide are exactly the points
/// on the plane; they constrain the offset but not the normal. Returns the
/// input plane unchanged when the displacements carry no signal (the
/// mirrored surface was not observed).
fn refine_reflection(
    sym: &SymmetryHypothesis,
    pts: &[Vector3<f64>],
    diag: f64,
    iters: usize,
) -> SymmetryHypothesis {
    let mut n = sym.normal;
    let mut d = sym.point.dot(&n);
    for _ in 0..iters {
        let mut pairs: Vec<(Vector3<f64>, Vector3<f64>, f64)> = Vec::with_capacity(pts.len());
        for p in pts {
            let refl = p - 2.0 * (p.dot(&n) - d) * n;
            let mut best = f64::INFINITY;
            let mut bq = *p;
            for q in pts {
                let dist = (refl - q).norm_squared();
                if dist < best {
                    best = dist;
                    bq = *q;
                }
            }
            pairs.push((*p, bq, best.sqrt()));
        }
        let mut res: Vec<f64> = pairs.iter().map(|pr| pr.2).collect();
        res.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let tol = (2.0 * res[res.len() / 2]).max(0.01 * diag);
        let mut scatter = nalgebra::Matrix3::<f64>::zeros();
        let mut mid_sum = Vector3::zeros();
        let mut kept = 0usize;
        for (p, q, r) in &pairs {
            if *r > tol {
                continue;
            }
            let disp = p - q;
            scatter += disp * disp.transpose();
            mid_sum += (p + q) / 2.0;
            kept += 1;
        }
        if kept == 0 || scatter.trace() < 1e-8 * diag * diag {
            break;
        }
        let eig = nalgebra::SymmetricEigen::new(scatter);
        let imax = (0..3)
            .max_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap())
            .unwrap();
        let mut n_new: Vector3<f64> = eig.eigenvectors.column(imax).into();
        if n_new.dot(&n) < 0.0 {
            n_new = -n_new;
        }
        // A refit that leaves the basin of the initial estimate means the
        // pairing latched onto a different structure; stop instead.
        if n_new.dot(&n) < 0.7 {
            break;
        }
        n = n_new.normalize();
        d = (mid_sum / kept as f64).dot(&n);
    }
    let mut out = sym.clone();
    out.normal = n;
    out.point = d * n;
    out
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimes {
    pub inference: f64,
    pub aggregation: f64,
    pub verification: f64,
}

#[derive(Debug, Clone)]
pub struct Detection {
    /// Verified symmetries, camera frame.
    pub symmetries: Vec<SymmetryHypothesis>,
    /// Aggregated symmetries removed by verification.
    pub rejected: Vec<SymmetryHypothesis>,
    /// Indices of the subsampled points within the scan.
    pub subsample: Vec<usize>,
    /// Per subsampled point, the index into `symmetries` of its cluster,
    /// or None for noise / rejected clusters.
    pub point_labels: Vec<Option<usize>>,
    pub times: StageTimes,
}

/// Run predict -> cluster -> verify on one scan.
pub fn detect_scan(
    model: &ModelParams,
    scan: &ObjectScan,
    params: &DetectParams,
) -> Result<Detection> {
    scan.validate()?;
    let subsample = farthest_point_indices(&scan.points, model.config.max_points);
    let points: Vec<Vector3<f64>> = subsample.iter().map(|&i| scan.points[i]).collect();
    let colors: Vec<[f64; 3]> = subsample.iter().map(|&i| scan.colors[i]).collect();

    let t0 = Instant::now();
    let bundle = predict(model, &points, &colors)?;
    let inference = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let clustered = cluster(&bundle, &points, &params.cluster)?;
    let diag = bbox_diagonal(&scan.points);
    let refined: Vec<SymmetryHypothesis> = if params.refine_iters > 0 {
        let ridx = farthest_point_indices(&scan.points, REFINE_POINTS);
        let rpts: Vec<Vector3<f64>> = ridx.iter().map(|&i| scan.points[i]).collect();
        clustered
            .symmetries
            .iter()
            .map(|s| {
                if s.is_reflectional() {
                    refine_reflection(s, &rpts, diag, params.refine_iters)
                } else {
                    s.clone()
                }
            })
            .collect()
    } else {
        clustered.symmetries.clone()
    };
    // Refinement can pull two clusters onto the same plane; merge those.
    let mut remap: Vec<usize> = Vec::with_capacity(refined.len());
    let mut merged: Vec<SymmetryHypothesis> = Vec::new();
    for s in &refined {
        let dup = merged.iter().position(|u| {
            if !(s.is_reflectional() && u.is_reflectional()) {
                return false;
            }
            let cos = s.normal.dot(&u.normal);
            let off = s.point.dot(&s.normal) - cos.signum() * u.point.dot(&u.normal);
            cos.abs() > 0.985 && off.abs() < 0.03 * diag
        });
        match dup {
            Some(j) => {
                remap.push(j);
                if s.confidence > merged[j].confidence {
                    merged[j] = s.clone();
                }
            }
            None => {
                remap.push(merged.len());
                merged.push(s.clone());
            }
        }
    }
    let aggregation = t0.elapsed().as_secs_f64();

    // Best cluster per point: the cluster of its highest-confidence
    // clustered candidate.
    let mut best: Vec<Option<(f64, usize)>> = vec![None; points.len()];
    for (ci, c) in bundle.candidates.iter().enumerate() {
        if let Some(cl) = clustered.member_map[ci] {
            let slot = &mut best[c.point_index];
            if slot.map_or(true, |(conf, _)| c.sym.confidence > conf) {
                *slot = Some((c.sym.confidence, remap[cl]));
            }
        }
    }

    let t0 = Instant::now();
    let mut keep_map: Vec<Option<usize>> = vec![None; merged.len()];
    let mut symmetries = Vec::new();
    let mut rejected = Vec::new();
    match &params.verify {
        None => {
            for (i, s) in merged.iter().enumerate() {
                keep_map[i] = Some(symmetries.len());
                symmetries.push(s.clone());
            }
        }
        Some(vp) => {
            let mut lo = scan.points[0];
            let mut hi = scan.points[0];
            for p in &scan.points {
                lo = lo.inf(p);
                hi = hi.sup(p);
            }
            // The mirrored / rotated images of the object stay within one
            // extra diagonal of its bounding box for any nearby symmetry.
            let pad = Vector3::repeat(diag.max(1e-3));
            let vol = carve(
                &scan.depth,
                &scan.intrinsics,
                (lo - pad, hi + pad),
                default_voxel_size(diag, None),
            )?;
            for (i, s) in merged.iter().enumerate() {
                let (keep, _) = verify_symmetry(s, &points, &vol, vp)?;
                if keep {
                    keep_map[i] = Some(symmetries.len());
                    symmetries.push(s.clone());
                } else {
                    rejected.push(s.clone());
                }
            }
        }
    }
    let verification = t0.elapsed().as_secs_f64();

    let point_labels = best
        .iter()
        .map(|slot| slot.and_then(|(_, cl)| keep_map[cl]))
        .collect();

    Ok(Detection {
        symmetries,
        rejected,
        subsample,
        point_labels,
        times: StageTimes { inference, aggregation, verification },
    })
}
