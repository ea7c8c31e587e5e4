//! Point-wise multi-task loss family: symmetry type classification,
//! foot-point / axis regression, and counterpart / orbit classification,
//! as pure scalar functions with analytic gradients.

use nalgebra::Vector3;

use crate::error::{Result, SymError};

/// Number of rotational-order classes: class 0 is continuous symmetry,
/// classes 1..=9 map to discrete orders 2..=10.
pub const ORDER_CLASSES: usize = 10;

/// Maximum discrete order representable by the classifier.
pub const MAX_ORDER: u32 = 10;

/// Map a rotational order (0 = continuous, 2..=10 discrete) to its class index.
pub fn order_to_class(order: u32) -> Result<usize> {
    match order {
        0 => Ok(0),
        2..=MAX_ORDER => Ok(order as usize - 1),
        _ => Err(SymError::InvalidArgument(format!(
            "rotational order {order} not representable in {ORDER_CLASSES} classes"
        ))),
    }
}

pub fn class_to_order(class: usize) -> u32 {
    if class == 0 {
        0
    } else {
        class as u32 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtType {
    Null = 0,
    Reflectional = 1,
    Rotational = 2,
}

/// Trade-off weights for the counterpart terms.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub w_ref: f64,
    pub w_rot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_ref: 0.5, w_rot: 0.5 }
    }
}

/// One point's multi-task outputs for a single candidate symmetry.
/// All coordinates are in the local frame of the point.
#[derive(Debug, Clone)]
pub struct PointPrediction {
    pub type_logits: [f64; 3],
    pub foot_point: Vector3<f64>,
    pub counterpart: Vector3<f64>,
    pub counterpart_logits: Vec<f64>,
    pub orbit_logits: Vec<f64>,
    /// Unit axis direction.
    pub axis_dir: Vector3<f64>,
    pub order_logits: [f64; ORDER_CLASSES],
}

/// Ground truth for one point, local frame.
#[derive(Debug, Clone)]
pub struct PointGroundTruth {
    pub gt_type: GtType,
    pub foot_point: Vector3<f64>,
    pub counterpart: Vector3<f64>,
    pub counterpart_labels: Vec<bool>,
    pub orbit_labels: Vec<bool>,
    pub axis_dir: Vector3<f64>,
    pub order_class: usize,
}

/// Gradients of [`loss_point`] with respect to every predicted quantity.
#[derive(Debug, Clone)]
pub struct PointGradients {
    pub type_logits: [f64; 3],
    pub foot_point: Vector3<f64>,
    pub counterpart: Vector3<f64>,
    pub counterpart_logits: Vec<f64>,
    pub orbit_logits: Vec<f64>,
    pub axis_dir: Vector3<f64>,
    pub order_logits: [f64; ORDER_CLASSES],
}

/// Softmax cross-entropy; returns loss and gradient wrt the logits.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    debug_assert!(target < logits.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_sum = sum.ln() + max;
    let loss = log_sum - logits[target];
    let mut grad: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    grad[target] -= 1.0;
    (loss, grad)
}

/// Numerically stable binary cross-entropy on a logit; returns loss and
/// gradient wrt the logit. `target` is 0 or 1.
#[inline]
pub fn bce_with_logit(logit: f64, target: f64) -> (f64, f64) {
    // log(1 + e^x) computed stably.
    let softplus = if logit > 0.0 {
        logit + (-logit).exp().ln_1p()
    } else {
        logit.exp().ln_1p()
    };
    let loss = softplus - target * logit;
    let sigma = 1.0 / (1.0 + (-logit).exp());
    (loss, sigma - target)
}

/// Cross-entropy loss for symmetry type (Eq. 1 term).
pub fn loss_type(type_logits: &[f64; 3], gt_type: GtType) -> (f64, [f64; 3]) {
    let (l, g) = softmax_cross_entropy(type_logits, gt_type as usize);
    (l, [g[0], g[1], g[2]])
}

/// Squared-distance foot-point regression for reflectional symmetry.
/// Gradient is wrt the predicted foot point.
pub fn loss_ref_reg(o: &Vector3<f64>, o_hat: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let d = o - o_hat;
    (d.norm_squared(), 2.0 * d)
}

/// Counterpart loss for reflectional symmetry: mean BCE over the counterpart
/// probabilities plus squared distance of the regressed counterpart.
pub fn loss_ref_cp(
    counterpart_logits: &[f64],
    q: &Vector3<f64>,
    labels: &[bool],
    q_hat: &Vector3<f64>,
) -> (f64, Vec<f64>, Vector3<f64>) {
    debug_assert_eq!(counterpart_logits.len(), labels.len());
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad_logits = vec![0.0; counterpart_logits.len()];
    for (g, (&logit, &lab)) in
        grad_logits.iter_mut().zip(counterpart_logits.iter().zip(labels.iter()))
    {
        let (l, dl) = bce_with_logit(logit, if lab { 1.0 } else { 0.0 });
        loss += l / n;
        *g = dl / n;
    }
    let d = q - q_hat;
    loss += d.norm_squared();
    (loss, grad_logits, 2.0 * d)
}

/// Foot-point and axis-direction regression for rotational symmetry.
/// The axis term is sign-invariant. Gradients are wrt the predicted foot
/// point and predicted (unit) axis direction.
pub fn loss_rot_reg(
    o: &Vector3<f64>,
    axis_dir: &Vector3<f64>,
    o_hat: &Vector3<f64>,
    axis_hat: &Vector3<f64>,
) -> (f64, Vector3<f64>, Vector3<f64>) {
    let d = o - o_hat;
    let dot = axis_dir.dot(axis_hat);
    let loss = d.norm_squared() + (1.0 - dot.abs()).abs();
    // d|1-|x||/dx = -sign(1-|x|) * sign(x)
    let dldx = -(1.0 - dot.abs()).signum() * dot.signum();
    (loss, 2.0 * d, dldx * axis_hat)
}

/// Orbit-membership and order-classification loss for rotational symmetry.
pub fn loss_rot_cp(
    orbit_logits: &[f64],
    order_logits: &[f64; ORDER_CLASSES],
    orbit_labels: &[bool],
    order_class: usize,
) -> (f64, Vec<f64>, [f64; ORDER_CLASSES]) {
    debug_assert_eq!(orbit_logits.len(), orbit_labels.len());
    let n = orbit_labels.len() as f64;
    let mut loss = 0.0;
    let mut grad_orbit = vec![0.0; orbit_logits.len()];
    for (g, (&logit, &lab)) in grad_orbit.iter_mut().zip(orbit_logits.iter().zip(orbit_labels)) {
        let (l, dl) = bce_with_logit(logit, if lab { 1.0 } else { 0.0 });
        loss += l / n;
        *g = dl / n;
    }
    let (l_order, g_order) = softmax_cross_entropy(order_logits, order_class);
    loss += l_order;
    let mut grad_order = [0.0; ORDER_CLASSES];
    grad_order.copy_from_slice(&g_order);
    (loss, grad_orbit, grad_order)
}

/// Full per-point loss: type classification plus the branch selected by the
/// ground-truth type (Eq. 2). Returns the scalar loss and gradients wrt all
/// predicted quantities (zero for heads outside the active branch).
pub fn loss_point(
    pred: &PointPrediction,
    gt: &PointGroundTruth,
    weights: &LossWeights,
) -> (f64, PointGradients) {
    let (mut loss, grad_type) = loss_type(&pred.type_logits, gt.gt_type);
    let mut grads = PointGradients {
        type_logits: grad_type,
        foot_point: Vector3::zeros(),
        counterpart: Vector3::zeros(),
        counterpart_logits: vec![0.0; pred.counterpart_logits.len()],
        orbit_logits: vec![0.0; pred.orbit_logits.len()],
        axis_dir: Vector3::zeros(),
        order_logits: [0.0; ORDER_CLASSES],
    };
    match gt.gt_type {
        GtType::Null => {}
        GtType::Reflectional => {
            let (l_reg, g_foot) = loss_ref_reg(&pred.foot_point, &gt.foot_point);
            let (l_cp, g_logits, g_q) = loss_ref_cp(
                &pred.counterpart_logits,
                &pred.counterpart,
                &gt.counterpart_labels,
                &gt.counterpart,
            );
            loss += l_reg + weights.w_ref * l_cp;
            grads.foot_point = g_foot;
            grads.counterpart = weights.w_ref * g_q;
            for (g, src) in grads.counterpart_logits.iter_mut().zip(g_logits) {
                *g = weights.w_ref * src;
            }
        }
        GtType::Rotational => {
            let (l_reg, g_foot, g_axis) =
                loss_rot_reg(&pred.foot_point, &pred.axis_dir, &gt.foot_point, &gt.axis_dir);
            let (l_cp, g_orbit, g_order) = loss_rot_cp(
                &pred.orbit_logits,
                &pred.order_logits,
                &gt.orbit_labels,
                gt.order_class,
            );
            loss += l_reg + weights.w_rot * l_cp;
            grads.foot_point = g_foot;
            grads.axis_dir = g_axis;
            for (g, src) in grads.orbit_logits.iter_mut().zip(g_orbit) {
                *g = weights.w_rot * src;
            }
            for (g, src) in grads.order_logits.iter_mut().zip(g_order) {
                *g = weights.w_rot * src;
            }
        }
    }
    (loss, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FD_H: f64 = 1e-5;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        (f(x + FD_H) - f(x - FD_H)) / (2.0 * FD_H)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn type_loss_confident_correct_is_near_zero() {
        let (l, _) = loss_type(&[10.0, -10.0, -10.0], GtType::Null);
        assert!(l < 1e-8);
    }

    #[test]
    fn type_loss_uniform_is_ln3() {
        for t in [GtType::Null, GtType::Reflectional, GtType::Rotational] {
            let (l, _) = loss_type(&[0.0, 0.0, 0.0], t);
            assert!((l - 3.0f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn type_loss_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let logits = [
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            ];
            let t = match rng.gen_range(0..3) {
                0 => GtType::Null,
                1 => GtType::Reflectional,
                _ => GtType::Rotational,
            };
            let (_, grad) = loss_type(&logits, t);
            for k in 0..3 {
                let fd = central_diff(
                    |x| {
                        let mut l = logits;
                        l[k] = x;
                        loss_type(&l, t).0
                    },
                    logits[k],
                );
                assert!(rel_err(grad[k], fd) < 1e-5, "grad {} fd {}", grad[k], fd);
            }
        }
    }

    #[test]
    fn ref_reg_values() {
        let o = Vector3::new(1.0, 0.0, 0.0);
        let z = Vector3::zeros();
        assert_eq!(loss_ref_reg(&o, &o).0, 0.0);
        assert_eq!(loss_ref_reg(&o, &z).0, 1.0);
    }

    #[test]
    fn ref_reg_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..100 {
            let o = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen());
            let oh = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen());
            let (_, g) = loss_ref_reg(&o, &oh);
            for k in 0..3 {
                let fd = central_diff(
                    |x| {
                        let mut o2 = o;
                        o2[k] = x;
                        loss_ref_reg(&o2, &oh).0
                    },
                    o[k],
                );
                assert!(rel_err(g[k], fd) < 1e-6);
            }
        }
    }

    #[test]
    fn ref_cp_perfect_is_near_zero() {
        let labels = vec![true, false, false, true];
        let logits = vec![20.0, -20.0, -20.0, 20.0];
        let q = Vector3::new(0.1, 0.2, 0.3);
        let (l, _, _) = loss_ref_cp(&logits, &q, &labels, &q);
        assert!(l < 1e-8);
    }

    #[test]
    fn ref_cp_zero_logits_give_ln2() {
        // sigma(0) = 1/2, so every BCE term is ln 2 regardless of label.
        let labels = vec![true, false, false, false];
        let logits = vec![0.0; 4];
        let q = Vector3::new(1.0, 0.0, 0.0);
        let qh = Vector3::zeros();
        let (l, _, _) = loss_ref_cp(&logits, &q, &labels, &qh);
        assert!((l - (2.0f64.ln() + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn ref_cp_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let n = 6;
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let q = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let qh = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let (_, g_logits, g_q) = loss_ref_cp(&logits, &q, &labels, &qh);
            for k in 0..n {
                let fd = central_diff(
                    |x| {
                        let mut l2 = logits.clone();
                        l2[k] = x;
                        loss_ref_cp(&l2, &q, &labels, &qh).0
                    },
                    logits[k],
                );
                assert!(rel_err(g_logits[k], fd) < 1e-5);
            }
            for k in 0..3 {
                let fd = central_diff(
                    |x| {
                        let mut q2 = q;
                        q2[k] = x;
                        loss_ref_cp(&logits, &q2, &labels, &qh).0
                    },
                    q[k],
                );
                assert!(rel_err(g_q[k], fd) < 1e-5);
            }
        }
    }

    #[test]
    fn rot_reg_values() {
        let o = Vector3::new(0.1, 0.2, 0.3);
        let n = Vector3::z();
        assert!(loss_rot_reg(&o, &n, &o, &n).0 < 1e-15);
        // Sign-invariant in the axis direction.
        assert!(loss_rot_reg(&o, &-n, &o, &n).0 < 1e-15);
        assert_eq!(
            loss_rot_reg(&o, &n, &o, &n).0,
            loss_rot_reg(&o, &-n, &o, &n).0
        );
        // Perpendicular axes cost exactly 1.
        assert!((loss_rot_reg(&o, &Vector3::x(), &o, &n).0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rot_reg_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut checked = 0;
        while checked < 100 {
            let o = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let oh = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let n: Vector3<f64> =
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                    .normalize();
            let nh: Vector3<f64> =
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                    .normalize();
            if n.dot(&nh).abs() < 1e-3 {
                continue; // non-differentiable kink of |dot|
            }
            let (_, g_o, g_n) = loss_rot_reg(&o, &n, &oh, &nh);
            for k in 0..3 {
                let fd = central_diff(
                    |x| {
                        let mut o2 = o;
                        o2[k] = x;
                        loss_rot_reg(&o2, &n, &oh, &nh).0
                    },
                    o[k],
                );
                assert!(rel_err(g_o[k], fd) < 1e-5);
                // Free-direction gradient (normalization handled by caller).
                let fd = central_diff(
                    |x| {
                        let mut n2 = n;
                        n2[k] = x;
                        loss_rot_reg(&o, &n2, &oh, &nh).0
                    },
                    n[k],
                );
                assert!(rel_err(g_n[k], fd) < 1e-4, "axis grad {} fd {}", g_n[k], fd);
            }
            checked += 1;
        }
    }

    #[test]
    fn rot_cp_uniform_order_logits_give_ln10() {
        let (l, _, _) = loss_rot_cp(&[], &[0.0; ORDER_CLASSES], &[], 3);
        assert!((l - 10.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rot_cp_perfect_is_near_zero() {
        let labels = vec![true, false];
        let logits = vec![25.0, -25.0];
        let mut order = [-20.0; ORDER_CLASSES];
        order[4] = 20.0;
        let (l, _, _) = loss_rot_cp(&logits, &order, &labels, 4);
        assert!(l < 1e-8);
    }

    #[test]
    fn rot_cp_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..100 {
            let n = 5;
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut order = [0.0; ORDER_CLASSES];
            for o in order.iter_mut() {
                *o = rng.gen_range(-2.0..2.0);
            }
            let cls = rng.gen_range(0..ORDER_CLASSES);
            let (_, g_orbit, g_order) = loss_rot_cp(&logits, &order, &labels, cls);
            for k in 0..n {
                let fd = central_diff(
                    |x| {
                        let mut l2 = logits.clone();
                        l2[k] = x;
                        loss_rot_cp(&l2, &order, &labels, cls).0
                    },
                    logits[k],
                );
                assert!(rel_err(g_orbit[k], fd) < 1e-5);
            }
            for k in 0..ORDER_CLASSES {
                let fd = central_diff(
                    |x| {
                        let mut o2 = order;
                        o2[k] = x;
                        loss_rot_cp(&logits, &o2, &labels, cls).0
                    },
                    order[k],
                );
                assert!(rel_err(g_order[k], fd) < 1e-5);
            }
        }
    }

    fn random_pred(rng: &mut impl Rng, n: usize) -> PointPrediction {
        PointPrediction {
            type_logits: [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
            foot_point: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            counterpart: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            counterpart_logits: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            orbit_logits: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            axis_dir: Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.5)
                .normalize(),
            order_logits: {
                let mut o = [0.0; ORDER_CLASSES];
                for x in o.iter_mut() {
                    *x = rng.gen_range(-2.0..2.0);
                }
                o
            },
        }
    }

    fn random_gt(rng: &mut impl Rng, n: usize, t: GtType) -> PointGroundTruth {
        PointGroundTruth {
            gt_type: t,
            foot_point: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            counterpart: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            counterpart_labels: (0..n).map(|_| rng.gen_bool(0.3)).collect(),
            orbit_labels: (0..n).map(|_| rng.gen_bool(0.3)).collect(),
            axis_dir: Vector3::new(rng.gen_range(-1.0..1.0), 0.3, rng.gen_range(-1.0..1.0))
                .normalize(),
            order_class: rng.gen_range(0..ORDER_CLASSES),
        }
    }

    #[test]
    fn point_loss_null_with_perfect_type_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let mut pred = random_pred(&mut rng, 4);
        pred.type_logits = [15.0, -15.0, -15.0];
        let gt = random_gt(&mut rng, 4, GtType::Null);
        let (l, _) = loss_point(&pred, &gt, &LossWeights::default());
        assert!(l < 1e-8);
    }

    #[test]
    fn point_loss_ref_branch_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let pred = random_pred(&mut rng, 5);
        let gt = random_gt(&mut rng, 5, GtType::Reflectional);
        let w = LossWeights::default();
        let (l, _) = loss_point(&pred, &gt, &w);
        let l_type = loss_type(&pred.type_logits, GtType::Reflectional).0;
        let l_reg = loss_ref_reg(&pred.foot_point, &gt.foot_point).0;
        let l_cp = loss_ref_cp(
            &pred.counterpart_logits,
            &pred.counterpart,
            &gt.counterpart_labels,
            &gt.counterpart,
        )
        .0;
        assert!((l - (l_type + l_reg + 0.5 * l_cp)).abs() < 1e-12);
    }

    #[test]
    fn point_loss_nonnegative_and_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        for trial in 0..60 {
            let t = match trial % 3 {
                0 => GtType::Null,
                1 => GtType::Reflectional,
                _ => GtType::Rotational,
            };
            let pred = random_pred(&mut rng, 4);
            let gt = random_gt(&mut rng, 4, t);
            let w = LossWeights::default();
            let (l, g) = loss_point(&pred, &gt, &w);
            assert!(l >= 0.0);
            // Spot-check a few coordinates by finite differences.
            for k in 0..3 {
                let fd = central_diff(
                    |x| {
                        let mut p2 = pred.clone();
                        p2.foot_point[k] = x;
                        loss_point(&p2, &gt, &w).0
                    },
                    pred.foot_point[k],
                );
                assert!(rel_err(g.foot_point[k], fd) < 1e-4 || (g.foot_point[k] - fd).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn order_class_mapping() {
        assert_eq!(order_to_class(0).unwrap(), 0);
        assert_eq!(order_to_class(2).unwrap(), 1);
        assert_eq!(order_to_class(10).unwrap(), 9);
        assert!(order_to_class(11).is_err());
        assert!(order_to_class(1).is_err());
        for c in 0..ORDER_CLASSES {
            assert_eq!(order_to_class(class_to_order(c)).unwrap(), c);
        }
    }

    #[test]
    fn losses_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let n = 8;
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let q = Vector3::new(0.1, 0.2, 0.3);
        let qh = Vector3::new(0.0, 0.1, 0.4);
        let (l1, _, _) = loss_ref_cp(&logits, &q, &labels, &qh);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.rotate_left(3);
        let logits_p: Vec<f64> = idx.iter().map(|&i| logits[i]).collect();
        let labels_p: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        let (l2, _, _) = loss_ref_cp(&logits_p, &q, &labels_p, &qh);
        assert!((l1 - l2).abs() < 1e-12);
    }
}
