//! Dense symmetry errors, precision-recall curves, counterpart-distance
//! curves, rotational-order metrics, and occlusion ratio.

use nalgebra::Vector3;

use crate::error::{Result, SymError};
use crate::geom::{reflect_point_raw, rotate_point_raw, ObjectScan, SymmetryHypothesis, SymmetryKind};
use crate::matching::{gamma_angles, optimal_assign, BenefitMatrix};

/// Default dense-error threshold separating true from false positives.
pub const ERROR_THRESHOLD: f64 = 0.25;

/// Normalized dense error between a predicted and a ground-truth reflectional
/// symmetry over the given points.
pub fn dense_error_ref(
    s: &SymmetryHypothesis,
    s_hat: &SymmetryHypothesis,
    points: &[Vector3<f64>],
) -> Result<f64> {
    if !s.is_reflectional() || !s_hat.is_reflectional() {
        return Err(SymError::KindMismatch { expected: "reflectional", got: "rotational" });
    }
    if points.is_empty() {
        return Err(SymError::InvalidArgument("empty point set".into()));
    }
    let rho = points
        .iter()
        .map(|p| (p - s_hat.point).dot(&s_hat.normal).abs())
        .fold(0.0f64, f64::max);
    if rho <= 0.0 {
        return Err(SymError::Degenerate("all points lie on the ground-truth plane".into()));
    }
    let n = points.len() as f64;
    let sum: f64 = points
        .iter()
        .map(|p| {
            let t = reflect_point_raw(p, &s.point, &s.normal);
            let th = reflect_point_raw(p, &s_hat.point, &s_hat.normal);
            (t - th).norm()
        })
        .sum();
    Ok(sum / (n * rho))
}

/// Normalized dense error between rotational symmetries, averaged over the 16
/// comparison angles.
pub fn dense_error_rot(
    s: &SymmetryHypothesis,
    s_hat: &SymmetryHypothesis,
    points: &[Vector3<f64>],
) -> Result<f64> {
    if !s.is_rotational() || !s_hat.is_rotational() {
        return Err(SymError::KindMismatch { expected: "rotational", got: "reflectional" });
    }
    if points.is_empty() {
        return Err(SymError::InvalidArgument("empty point set".into()));
    }
    let rho = points
        .iter()
        .map(|p| {
            let d = p - s_hat.point;
            (d - d.dot(&s_hat.normal) * s_hat.normal).norm()
        })
        .fold(0.0f64, f64::max);
    if rho <= 0.0 {
        return Err(SymError::Degenerate("all points lie on the ground-truth axis".into()));
    }
    // Axis direction carries a sign ambiguity; align the prediction with the
    // ground truth so both rotate the same way for each comparison angle.
    let dir = if s.normal.dot(&s_hat.normal) < 0.0 { -s.normal } else { s.normal };
    let n = points.len() as f64;
    let angles = gamma_angles();
    let mut total = 0.0;
    for &g in &angles {
        for p in points {
            let t = rotate_point_raw(p, &s.point, &dir, g);
            let th = rotate_point_raw(p, &s_hat.point, &s_hat.normal, g);
            total += (t - th).norm();
        }
    }
    Ok(total / (angles.len() as f64 * n * rho))
}

/// Dense error dispatched on kind; the kinds of `s` and `s_hat` must agree.
pub fn dense_error(
    s: &SymmetryHypothesis,
    s_hat: &SymmetryHypothesis,
    points: &[Vector3<f64>],
) -> Result<f64> {
    match s_hat.kind {
        SymmetryKind::Reflectional => dense_error_ref(s, s_hat, points),
        SymmetryKind::Rotational => dense_error_rot(s, s_hat, points),
    }
}

/// Per-frame evaluation input for one symmetry kind: the dense error of every
/// prediction against every ground truth, plus prediction confidences.
#[derive(Debug, Clone)]
pub struct FrameEval {
    pub frame_id: String,
    /// errors[p][g], row per prediction.
    pub errors: Vec<Vec<f64>>,
    /// Parallel to the prediction rows.
    pub confidences: Vec<f64>,
    pub num_gt: usize,
}

/// The matching of one frame at a fixed confidence threshold.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub frame_id: String,
    /// (prediction, ground truth, dense error) for matched pairs within the
    /// error threshold.
    pub matched: Vec<(usize, usize, f64)>,
    /// Predictions above the confidence threshold left without a valid match.
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_ground_truths: Vec<usize>,
}

/// One-to-one match of confident predictions to ground truths minimizing the
/// total dense error; matched pairs above `error_threshold` still count as
/// false positive plus false negative.
pub fn match_frame(
    frame: &FrameEval,
    confidence_threshold: f64,
    error_threshold: f64,
) -> Result<EvalRecord> {
    let active: Vec<usize> = (0..frame.errors.len())
        .filter(|&p| frame.confidences[p] >= confidence_threshold)
        .collect();
    let k = frame.num_gt;
    let mut matched = Vec::new();
    let mut used_pred = vec![false; frame.errors.len()];
    let mut used_gt = vec![false; k];
    if !active.is_empty() && k > 0 {
        // Convert errors to positive benefits so one-to-one assignment picks
        // the minimum-error pairing.
        let mut max_err = 0.0f64;
        for &p in &active {
            for g in 0..k {
                max_err = max_err.max(frame.errors[p][g]);
            }
        }
        // Transpose when there are fewer predictions than ground truths so
        // every prediction gets its best ground truth.
        if active.len() >= k {
            let rows: Vec<Vec<f64>> = active
                .iter()
                .map(|&p| (0..k).map(|g| max_err - frame.errors[p][g] + 1.0).collect())
                .collect();
            let assign = optimal_assign(&BenefitMatrix::from_rows(&rows)?)?;
            for (ai, g) in assign.pairs {
                let p = active[ai];
                let e = frame.errors[p][g];
                if e <= error_threshold {
                    matched.push((p, g, e));
                    used_pred[p] = true;
                    used_gt[g] = true;
                }
            }
        } else {
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|g| active.iter().map(|&p| max_err - frame.errors[p][g] + 1.0).collect())
                .collect();
            let assign = optimal_assign(&BenefitMatrix::from_rows(&rows)?)?;
            for (g, ai) in assign.pairs {
                let p = active[ai];
                let e = frame.errors[p][g];
                if e <= error_threshold {
                    matched.push((p, g, e));
                    used_pred[p] = true;
                    used_gt[g] = true;
                }
            }
        }
    }
    matched.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let unmatched_predictions =
        active.iter().cloned().filter(|&p| !used_pred[p]).collect();
    let unmatched_ground_truths = (0..k).filter(|&g| !used_gt[g]).collect();
    Ok(EvalRecord {
        frame_id: frame.frame_id.clone(),
        matched,
        unmatched_predictions,
        unmatched_ground_truths,
    })
}

/// One precision-recall sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Sweep the confidence threshold over all distinct prediction confidences
/// and report precision/recall at the given dense-error threshold.
pub fn pr_curve(frames: &[FrameEval], error_threshold: f64) -> Result<Vec<PrPoint>> {
    let mut thresholds: Vec<f64> = frames
        .iter()
        .flat_map(|f| f.confidences.iter().cloned())
        .collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let total_gt: usize = frames.iter().map(|f| f.num_gt).sum();

    let mut curve = Vec::with_capacity(thresholds.len());
    for t in thresholds {
        let mut tp = 0usize;
        let mut total_pred = 0usize;
        for f in frames {
            let rec = match_frame(f, t, error_threshold)?;
            tp += rec.matched.len();
            total_pred += rec.matched.len() + rec.unmatched_predictions.len();
        }
        let precision = if total_pred > 0 { tp as f64 / total_pred as f64 } else { 1.0 };
        let recall = if total_gt > 0 { tp as f64 / total_gt as f64 } else { 0.0 };
        curve.push(PrPoint { threshold: t, precision, recall });
    }
    Ok(curve)
}

/// Precision, recall and F1 at one fixed confidence threshold.
pub fn pr_at_threshold(
    frames: &[FrameEval],
    confidence_threshold: f64,
    error_threshold: f64,
) -> Result<(f64, f64, f64)> {
    let total_gt: usize = frames.iter().map(|f| f.num_gt).sum();
    let mut tp = 0usize;
    let mut total_pred = 0usize;
    for f in frames {
        let rec = match_frame(f, confidence_threshold, error_threshold)?;
        tp += rec.matched.len();
        total_pred += rec.matched.len() + rec.unmatched_predictions.len();
    }
    let precision = if total_pred > 0 { tp as f64 / total_pred as f64 } else { 1.0 };
    let recall = if total_gt > 0 { tp as f64 / total_gt as f64 } else { 1.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((precision, recall, f1))
}

/// Cumulative distribution of counterpart errors: fraction of predictions
/// within distance t, swept up to `t_max`, plus the normalized area under the
/// curve.
pub fn counterpart_curve(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    t_max: f64,
    steps: usize,
) -> Result<(Vec<(f64, f64)>, f64)> {
    if pred.len() != gt.len() {
        return Err(SymError::InvalidArgument("counterpart cardinality mismatch".into()));
    }
    if pred.is_empty() || t_max <= 0.0 || steps == 0 {
        return Err(SymError::InvalidArgument("empty counterpart set or bad sweep".into()));
    }
    let errors: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| (p - g).norm()).collect();
    let n = errors.len() as f64;
    let mut curve = Vec::with_capacity(steps + 1);
    for s in 0..=steps {
        let t = t_max * s as f64 / steps as f64;
        let frac = errors.iter().filter(|&&e| e <= t).count() as f64 / n;
        curve.push((t, frac));
    }
    // Exact integral of the step CDF over [0, t_max], normalized.
    let auc = errors
        .iter()
        .map(|&e| (t_max - e.min(t_max)) / t_max)
        .sum::<f64>()
        / n;
    Ok((curve, auc))
}

/// Order classification accuracy and mean rotation-angle error in degrees.
/// Continuous symmetries (order 0) count toward accuracy only.
pub fn order_metrics(pred_orders: &[u32], gt_orders: &[u32]) -> Result<(f64, f64)> {
    if pred_orders.len() != gt_orders.len() || pred_orders.is_empty() {
        return Err(SymError::InvalidArgument("order list mismatch".into()));
    }
    let n = pred_orders.len() as f64;
    let correct = pred_orders.iter().zip(gt_orders).filter(|(a, b)| a == b).count() as f64;
    let mut angle_sum = 0.0;
    let mut angle_count = 0usize;
    for (&r, &r_hat) in pred_orders.iter().zip(gt_orders) {
        if r >= 2 && r_hat >= 2 {
            let err = (2.0 * std::f64::consts::PI / r as f64
                - 2.0 * std::f64::consts::PI / r_hat as f64)
                .abs();
            angle_sum += err.to_degrees();
            angle_count += 1;
        }
    }
    let mean_angle = if angle_count > 0 { angle_sum / angle_count as f64 } else { 0.0 };
    Ok((correct / n, mean_angle))
}

/// Fraction of the originally visible surface hidden by the occluder,
/// approximated by per-pixel footprint areas (z^2 / (fx*fy)).
pub fn occlusion_ratio(scan_full: &ObjectScan, scan_occluded: &ObjectScan) -> Result<f64> {
    let full = surface_area_estimate(scan_full);
    if full <= 0.0 {
        return Err(SymError::InvalidArgument("empty full scan".into()));
    }
    let vis = surface_area_estimate(scan_occluded);
    Ok((1.0 - vis / full).clamp(0.0, 1.0))
}

fn surface_area_estimate(scan: &ObjectScan) -> f64 {
    let intr = &scan.intrinsics;
    let mut area = 0.0;
    for (i, (&m, &z)) in scan.mask.iter().zip(scan.depth.iter()).enumerate() {
        let _ = i;
        if m && z > 0.0 {
            area += z * z / (intr.fx * intr.fy);
        }
    }
    area
}
