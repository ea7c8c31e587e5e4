//! Optimal-assignment training of the point predictor: per-point matching of
//! candidate heads to ground-truth symmetries, the multi-task loss with
//! analytic gradients, and an Adam loop over rendered frames.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SymError};
use crate::geom::{
    bbox_diagonal, centroid, make_ground_truth_points, GroundTruthLabel, SymmetryHypothesis,
};
use crate::io::load_frame;
use crate::losses::{
    bce_with_logit, loss_ref_cp, loss_ref_reg, loss_rot_cp, loss_rot_reg, loss_type,
    order_to_class, softmax_cross_entropy, GtType, LossWeights, ORDER_CLASSES,
};
use crate::matching::{benefit, optimal_assign, BenefitMatrix};
use crate::predictor::model::{
    farthest_point_indices, features, forward, param_grads, ForwardPass, ModelConfig, ModelParams,
    REF_COLS, ROT_COLS,
};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Weight of the per-head presence supervision.
    pub presence_weight: f64,
    /// Weight of the foot-point / axis regression terms. Values above one
    /// push parameter accuracy harder than the classification terms.
    pub reg_weight: f64,
    /// Relative weight of the auxiliary regression applied to unmatched
    /// heads (see [`PointAssignment::ref_aux`]).
    pub aux_weight: f64,
    /// Points used when evaluating assignment benefits.
    pub benefit_points: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            seed: 0,
            weights: LossWeights::default(),
            presence_weight: 1.0,
            reg_weight: 4.0,
            aux_weight: 0.25,
            benefit_points: 32,
        }
    }
}

/// One training frame, normalized to centroid zero and unit bounding-box
/// diagonal, with precomputed supervision.
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub points: Vec<Vector3<f64>>,
    pub colors: Vec<[f64; 3]>,
    pub gt: GroundTruthLabel,
    /// Per-point active loss branch.
    pub gt_types: Vec<GtType>,
    /// Indices of the reflectional / rotational symmetries within `gt`.
    pub ref_gt: Vec<usize>,
    pub rot_gt: Vec<usize>,
    /// Small point subsample for assignment benefits.
    pub bench_points: Vec<Vector3<f64>>,
}

fn strided(points: &[Vector3<f64>], max: usize) -> Vec<Vector3<f64>> {
    if points.len() <= max {
        return points.to_vec();
    }
    (0..max).map(|i| points[i * points.len() / max]).collect()
}

/// Subsample, normalize, and label a camera-frame scan for training.
pub fn prepare_frame(
    points: &[Vector3<f64>],
    colors: &[[f64; 3]],
    syms: &[SymmetryHypothesis],
    cfg: &ModelConfig,
    benefit_points: usize,
) -> Result<FrameSample> {
    if points.is_empty() {
        return Err(SymError::InvalidArgument("empty point set".into()));
    }
    let idx = farthest_point_indices(points, cfg.max_points);
    let sub: Vec<Vector3<f64>> = idx.iter().map(|&i| points[i]).collect();
    let sub_colors: Vec<[f64; 3]> =
        idx.iter().map(|&i| colors.get(i).copied().unwrap_or([0.0; 3])).collect();
    let center = centroid(&sub);
    let diag = bbox_diagonal(&sub);
    let scale = if diag > 0.0 { 1.0 / diag } else { 1.0 };
    let normed: Vec<Vector3<f64>> = sub.iter().map(|p| (p - center) * scale).collect();
    let normed_syms: Vec<SymmetryHypothesis> = syms
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.point = (s.point - center) * scale;
            s
        })
        .collect();
    let gt = make_ground_truth_points(&normed, &normed_syms)?;
    let ref_gt = gt.reflectional_indices();
    let rot_gt = gt.rotational_indices();
    if ref_gt.len() > cfg.max_ref || rot_gt.len() > cfg.max_rot {
        return Err(SymError::InvalidArgument(format!(
            "{} planes / {} axes exceed the model's output budget",
            ref_gt.len(),
            rot_gt.len()
        )));
    }
    // Active branch per point: with both kinds present, alternate so every
    // head family receives supervision.
    let gt_types: Vec<GtType> = (0..normed.len())
        .map(|i| match (ref_gt.is_empty(), rot_gt.is_empty()) {
            (true, true) => GtType::Null,
            (false, true) => GtType::Reflectional,
            (true, false) => GtType::Rotational,
            (false, false) => {
                if i % 2 == 0 {
                    GtType::Reflectional
                } else {
                    GtType::Rotational
                }
            }
        })
        .collect();
    let bench_points = strided(&normed, benefit_points);
    Ok(FrameSample {
        points: normed,
        colors: sub_colors,
        gt,
        gt_types,
        ref_gt,
        rot_gt,
        bench_points,
    })
}

/// Head-to-ground-truth matching for one point's active branch.
/// Pairs are (head index, index into `ref_gt` / `rot_gt`).
#[derive(Debug, Clone, Default)]
pub struct PointAssignment {
    pub ref_pairs: Vec<(usize, usize)>,
    pub rot_pairs: Vec<(usize, usize)>,
    /// Heads left without a match, paired with their highest-benefit ground
    /// truth. They receive down-weighted regression only, so every head
    /// emits a plausible symmetry instead of drifting as noise that later
    /// floods aggregation.
    pub ref_aux: Vec<(usize, usize)>,
    pub rot_aux: Vec<(usize, usize)>,
}

/// Match candidate heads to ground truths by maximizing the transform
/// benefit of the decoded candidates, accumulated over the whole frame so
/// every point supervises the same head-to-symmetry pairing. Per-point
/// matchings churn between neighboring points early in training, which
/// washes out the presence supervision; the frame-level matching keeps each
/// head on one symmetry.
pub fn assign_frame(
    fp: &ForwardPass,
    frame: &FrameSample,
    cfg: &ModelConfig,
) -> Result<Vec<PointAssignment>> {
    let ref_out = fp.tape.value(fp.ref_head);
    let rot_out = fp.tape.value(fp.rot_head);
    let mut ref_rows = vec![vec![0.0; frame.ref_gt.len()]; cfg.max_ref];
    let mut rot_rows = vec![vec![0.0; frame.rot_gt.len()]; cfg.max_rot];
    let (mut any_ref, mut any_rot) = (false, false);
    for i in 0..frame.points.len() {
        match frame.gt_types[i] {
            GtType::Null => {}
            GtType::Reflectional => {
                any_ref = true;
                let row: Vec<f64> = ref_out.row(i).to_vec();
                for m in 0..cfg.max_ref {
                    let (_, foot, _, normal) =
                        crate::predictor::model::ref_candidate(&frame.points[i], &row, m);
                    let cand = SymmetryHypothesis::reflectional(foot, normal)?;
                    for (k, &s) in frame.ref_gt.iter().enumerate() {
                        ref_rows[m][k] +=
                            benefit(&cand, &frame.gt.symmetries[s], &frame.bench_points)?;
                    }
                }
            }
            GtType::Rotational => {
                any_rot = true;
                let row: Vec<f64> = rot_out.row(i).to_vec();
                for m in 0..cfg.max_rot {
                    let (_, foot, axis, _, _) =
                        crate::predictor::model::rot_candidate(&frame.points[i], &row, m);
                    let cand = SymmetryHypothesis::rotational(foot, axis, 0)?;
                    for (k, &s) in frame.rot_gt.iter().enumerate() {
                        rot_rows[m][k] +=
                            benefit(&cand, &frame.gt.symmetries[s], &frame.bench_points)?;
                    }
                }
            }
        }
    }
    let ref_pairs = if any_ref {
        optimal_assign(&BenefitMatrix::from_rows(&ref_rows)?)?.pairs
    } else {
        Vec::new()
    };
    let rot_pairs = if any_rot {
        optimal_assign(&BenefitMatrix::from_rows(&rot_rows)?)?.pairs
    } else {
        Vec::new()
    };
    let aux_of = |rows: &[Vec<f64>], pairs: &[(usize, usize)]| -> Vec<(usize, usize)> {
        let mut aux = Vec::new();
        for (m, row) in rows.iter().enumerate() {
            if row.is_empty() || pairs.iter().any(|&(mm, _)| mm == m) {
                continue;
            }
            let mut best = 0usize;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            aux.push((m, best));
        }
        aux
    };
    let ref_aux = if any_ref { aux_of(&ref_rows, &ref_pairs) } else { Vec::new() };
    let rot_aux = if any_rot { aux_of(&rot_rows, &rot_pairs) } else { Vec::new() };
    let out = (0..frame.points.len())
        .map(|i| match frame.gt_types[i] {
            GtType::Null => PointAssignment::default(),
            GtType::Reflectional => PointAssignment {
                ref_pairs: ref_pairs.clone(),
                ref_aux: ref_aux.clone(),
                ..PointAssignment::default()
            },
            GtType::Rotational => PointAssignment {
                rot_pairs: rot_pairs.clone(),
                rot_aux: rot_aux.clone(),
                ..PointAssignment::default()
            },
        })
        .collect();
    Ok(out)
}

/// Frame loss under a fixed assignment, with the backward seed gradients for
/// every output the loss touches. Loss and seeds are averaged over points.
pub fn frame_loss(
    fp: &ForwardPass,
    frame: &FrameSample,
    asg: &[PointAssignment],
    cfg: &TrainConfig,
    model: &ModelConfig,
) -> (f64, Vec<(usize, Array2<f64>)>) {
    let n = frame.points.len();
    let type_out = fp.tape.value(fp.type_logits);
    let ref_out = fp.tape.value(fp.ref_head);
    let rot_out = fp.tape.value(fp.rot_head);
    let use_cp = model.use_counterpart && !fp.pair_logits.is_empty();

    let mut seed_type: Array2<f64> = Array2::zeros(type_out.dim());
    let mut seed_ref: Array2<f64> = Array2::zeros(ref_out.dim());
    let mut seed_rot: Array2<f64> = Array2::zeros(rot_out.dim());
    let mut seed_pair: Vec<Array2<f64>> = if use_cp {
        fp.pair_logits.iter().map(|&id| Array2::zeros(fp.tape.value(id).dim())).collect()
    } else {
        Vec::new()
    };

    let mut loss = 0.0;
    for i in 0..n {
        let p = frame.points[i];
        let row3 = [type_out[[i, 0]], type_out[[i, 1]], type_out[[i, 2]]];
        let (lt, g3) = loss_type(&row3, frame.gt_types[i]);
        loss += lt;
        for (j, g) in g3.iter().enumerate() {
            seed_type[[i, j]] += g;
        }
        let mut ref_presence_supervised = false;
        let mut rot_presence_supervised = false;
        match frame.gt_types[i] {
            GtType::Null => {
                // An object with no symmetry at all still supervises every
                // presence logit towards zero.
                ref_presence_supervised = true;
                rot_presence_supervised = true;
            }
            GtType::Reflectional => {
                ref_presence_supervised = true;
                let row: Vec<f64> = ref_out.row(i).to_vec();
                for &(m, kk) in &asg[i].ref_pairs {
                    let s = frame.ref_gt[kk];
                    let base = m * REF_COLS;
                    let foot_pred =
                        p + Vector3::new(row[base + 1], row[base + 2], row[base + 3]);
                    let (l, g_foot) = loss_ref_reg(&foot_pred, &frame.gt.foot_points[s][i]);
                    loss += cfg.reg_weight * l;
                    for a in 0..3 {
                        seed_ref[[i, base + 1 + a]] += cfg.reg_weight * g_foot[a];
                    }
                    if use_cp {
                        let logits: Vec<f64> = fp.tape.value(fp.pair_logits[m]).row(i).to_vec();
                        let labels = frame.gt.counterpart_membership[s].as_ref().unwrap().row(i);
                        let q_pred =
                            p + Vector3::new(row[base + 4], row[base + 5], row[base + 6]);
                        let q_gt = frame.gt.counterparts[s].as_ref().unwrap()[i];
                        let (l, g_logits, g_q) = loss_ref_cp(&logits, &q_pred, labels, &q_gt);
                        loss += cfg.weights.w_ref * l;
                        for (j, g) in g_logits.iter().enumerate() {
                            seed_pair[m][[i, j]] += cfg.weights.w_ref * g;
                        }
                        for a in 0..3 {
                            seed_ref[[i, base + 4 + a]] += cfg.weights.w_ref * g_q[a];
                        }
                        // The decoded plane normal leans on the counterpart
                        // (twice the lever arm of the foot point), so its
                        // regression gets the same weight as the foot's.
                        let (l, g_q) = loss_ref_reg(&q_pred, &q_gt);
                        loss += cfg.reg_weight * l;
                        for a in 0..3 {
                            seed_ref[[i, base + 4 + a]] += cfg.reg_weight * g_q[a];
                        }
                    }
                }
                let w_aux = cfg.aux_weight * cfg.reg_weight;
                for &(m, kk) in &asg[i].ref_aux {
                    let s = frame.ref_gt[kk];
                    let base = m * REF_COLS;
                    let foot_pred =
                        p + Vector3::new(row[base + 1], row[base + 2], row[base + 3]);
                    let (l, g_foot) = loss_ref_reg(&foot_pred, &frame.gt.foot_points[s][i]);
                    loss += w_aux * l;
                    for a in 0..3 {
                        seed_ref[[i, base + 1 + a]] += w_aux * g_foot[a];
                    }
                }
            }
            GtType::Rotational => {
                rot_presence_supervised = true;
                let row: Vec<f64> = rot_out.row(i).to_vec();
                for &(m, kk) in &asg[i].rot_pairs {
                    let s = frame.rot_gt[kk];
                    let sym = &frame.gt.symmetries[s];
                    let base = m * ROT_COLS;
                    let foot_pred =
                        p + Vector3::new(row[base + 1], row[base + 2], row[base + 3]);
                    let raw = Vector3::new(row[base + 4], row[base + 5], row[base + 6]);
                    let mag = raw.norm();
                    let axis_pred = if mag > 1e-8 { raw / mag } else { Vector3::z() };
                    let (l, g_foot, g_axis) = loss_rot_reg(
                        &foot_pred,
                        &axis_pred,
                        &frame.gt.foot_points[s][i],
                        &sym.normal,
                    );
                    loss += cfg.reg_weight * l;
                    for a in 0..3 {
                        seed_rot[[i, base + 1 + a]] += cfg.reg_weight * g_foot[a];
                    }
                    if mag > 1e-8 {
                        // Chain through the normalization of the raw axis.
                        let g_raw = (g_axis - axis_pred * g_axis.dot(&axis_pred)) / mag;
                        for a in 0..3 {
                            seed_rot[[i, base + 4 + a]] += cfg.reg_weight * g_raw[a];
                        }
                    }
                    let mut order_logits = [0.0; ORDER_CLASSES];
                    order_logits.copy_from_slice(&row[base + 7..base + 7 + ORDER_CLASSES]);
                    let class = order_to_class(sym.order.unwrap_or(0)).unwrap_or(0);
                    if use_cp {
                        let head = model.max_ref + m;
                        let logits: Vec<f64> =
                            fp.tape.value(fp.pair_logits[head]).row(i).to_vec();
                        let labels = frame.gt.orbit_membership[s].as_ref().unwrap().row(i);
                        let (l, g_orbit, g_order) =
                            loss_rot_cp(&logits, &order_logits, labels, class);
                        loss += cfg.weights.w_rot * l;
                        for (j, g) in g_orbit.iter().enumerate() {
                            seed_pair[head][[i, j]] += cfg.weights.w_rot * g;
                        }
                        for (j, g) in g_order.iter().enumerate() {
                            seed_rot[[i, base + 7 + j]] += cfg.weights.w_rot * g;
                        }
                    } else {
                        // The order classifier is not a counterpart output;
                        // keep training it in the ablation.
                        let (l, g_order) = softmax_cross_entropy(&order_logits, class);
                        loss += cfg.weights.w_rot * l;
                        for (j, g) in g_order.iter().enumerate() {
                            seed_rot[[i, base + 7 + j]] += cfg.weights.w_rot * g;
                        }
                    }
                }
                let w_aux = cfg.aux_weight * cfg.reg_weight;
                for &(m, kk) in &asg[i].rot_aux {
                    let s = frame.rot_gt[kk];
                    let sym = &frame.gt.symmetries[s];
                    let base = m * ROT_COLS;
                    let foot_pred =
                        p + Vector3::new(row[base + 1], row[base + 2], row[base + 3]);
                    let raw = Vector3::new(row[base + 4], row[base + 5], row[base + 6]);
                    let mag = raw.norm();
                    let axis_pred = if mag > 1e-8 { raw / mag } else { Vector3::z() };
                    let (l, g_foot, g_axis) = loss_rot_reg(
                        &foot_pred,
                        &axis_pred,
                        &frame.gt.foot_points[s][i],
                        &sym.normal,
                    );
                    loss += w_aux * l;
                    for a in 0..3 {
                        seed_rot[[i, base + 1 + a]] += w_aux * g_foot[a];
                    }
                    if mag > 1e-8 {
                        let g_raw = (g_axis - axis_pred * g_axis.dot(&axis_pred)) / mag;
                        for a in 0..3 {
                            seed_rot[[i, base + 4 + a]] += w_aux * g_raw[a];
                        }
                    }
                    let mut order_logits = [0.0; ORDER_CLASSES];
                    order_logits.copy_from_slice(&row[base + 7..base + 7 + ORDER_CLASSES]);
                    let class = order_to_class(sym.order.unwrap_or(0)).unwrap_or(0);
                    let (l, g_order) = softmax_cross_entropy(&order_logits, class);
                    loss += cfg.aux_weight * cfg.weights.w_rot * l;
                    for (j, g) in g_order.iter().enumerate() {
                        seed_rot[[i, base + 7 + j]] += cfg.aux_weight * cfg.weights.w_rot * g;
                    }
                }
            }
        }
        if ref_presence_supervised {
            for m in 0..model.max_ref {
                let target = asg[i].ref_pairs.iter().any(|&(mm, _)| mm == m);
                let (l, g) = bce_with_logit(ref_out[[i, m * REF_COLS]], target as u8 as f64);
                loss += cfg.presence_weight * l / model.max_ref as f64;
                seed_ref[[i, m * REF_COLS]] += cfg.presence_weight * g / model.max_ref as f64;
            }
        }
        if rot_presence_supervised {
            for m in 0..model.max_rot {
                let target = asg[i].rot_pairs.iter().any(|&(mm, _)| mm == m);
                let (l, g) = bce_with_logit(rot_out[[i, m * ROT_COLS]], target as u8 as f64);
                loss += cfg.presence_weight * l / model.max_rot as f64;
                seed_rot[[i, m * ROT_COLS]] += cfg.presence_weight * g / model.max_rot as f64;
            }
        }
    }

    let inv = 1.0 / n as f64;
    let mut seeds = vec![
        (fp.type_logits, seed_type * inv),
        (fp.ref_head, seed_ref * inv),
        (fp.rot_head, seed_rot * inv),
    ];
    for (head, seed) in seed_pair.into_iter().enumerate() {
        seeds.push((fp.pair_logits[head], seed * inv));
    }
    (loss * inv, seeds)
}

/// One optimization step on one frame: forward, assign, loss, backward.
pub fn train_step(
    params: &ModelParams,
    frame: &FrameSample,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let x = features(&frame.points, &frame.colors, &params.config);
    let fp = forward(params, x, params.config.use_counterpart);
    let asg = assign_frame(&fp, frame, &params.config)?;
    let (loss, seeds) = frame_loss(&fp, frame, &asg, cfg, &params.config);
    let mut node_grads = fp.tape.backward(&seeds);
    Ok((loss, param_grads(&fp, &mut node_grads)))
}

/// Adam with bias correction, state ordered like [`ModelParams::params`].
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams, cfg: &TrainConfig) -> Self {
        let shapes: Vec<_> = params.params().iter().map(|p| p.dim()).collect();
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            m: shapes.iter().map(|&d| Array2::zeros(d)).collect(),
            v: shapes.iter().map(|&d| Array2::zeros(d)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Array2<f64>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((slot, g), (m, v)) in params
            .params_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m *= self.beta1;
            *m += &(g * (1.0 - self.beta1));
            *v *= self.beta2;
            *v += &(g.mapv(|x| x * x) * (1.0 - self.beta2));
            let update = m.mapv(|x| x / bc1) / (v.mapv(|x| (x / bc2).sqrt()) + self.eps);
            *slot -= &(update * self.lr);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean frame loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Train a fresh model over the given frame directories. Frames are visited
/// in a seeded random order each epoch; everything is deterministic in the
/// seed. When `log_path` is given, a per-epoch loss CSV is written there.
pub fn train(
    frame_dirs: &[PathBuf],
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<(ModelParams, TrainReport)> {
    if frame_dirs.is_empty() {
        return Err(SymError::InvalidArgument("no training frames".into()));
    }
    let mut frames = Vec::with_capacity(frame_dirs.len());
    for dir in frame_dirs {
        let (scan, syms, _) = load_frame(dir)?;
        frames.push(prepare_frame(
            &scan.points,
            &scan.colors,
            &syms,
            &model_cfg,
            cfg.benefit_points,
        )?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(model_cfg, &mut rng)?;
    let mut opt = Adam::new(&params, cfg);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // Cosine decay from the base rate to a tenth of it; fine steps late
        // in training tighten the regression heads considerably.
        let frac = epoch as f64 / cfg.epochs.max(1) as f64;
        opt.lr = cfg.lr * (0.55 + 0.45 * (std::f64::consts::PI * frac).cos());
        let mut order: Vec<usize> = (0..frames.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &f in &order {
            let (loss, grads) = train_step(&params, &frames[f], cfg)?;
            opt.step(&mut params, &grads);
            total += loss;
        }
        epoch_losses.push(total / frames.len() as f64);
    }
    if let Some(path) = log_path {
        let mut csv = String::from("epoch,mean_loss\n");
        for (e, l) in epoch_losses.iter().enumerate() {
            csv.push_str(&format!("{e},{l:.6}\n"));
        }
        std::fs::write(path, csv)?;
    }
    Ok((params, TrainReport { epoch_losses }))
}
