//! The point-cloud symmetry predictor: a per-point encoder with global
//! attention pooling, multi-output symmetry heads, and bilinear pair heads
//! for counterpart / orbit classification.

use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{CandidateSymmetry, PredictionBundle, MAX_REF_OUTPUTS, MAX_ROT_OUTPUTS};
use crate::error::{Result, SymError};
use crate::geom::{bbox_diagonal, centroid, SymmetryHypothesis};
use crate::losses::{class_to_order, ORDER_CLASSES};
use crate::predictor::tape::Tape;

/// Columns per reflectional candidate in the reflection head:
/// presence logit, foot-point offset (3), counterpart offset (3).
pub const REF_COLS: usize = 7;
/// Columns per rotational candidate in the rotation head:
/// presence logit, foot-point offset (3), axis direction (3), order logits.
pub const ROT_COLS: usize = 7 + ORDER_CLASSES;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Widths of the three per-point encoder layers.
    pub encoder: [usize; 3],
    /// Width of the shared trunk after pooling.
    pub trunk: usize,
    /// Width of the pair-attention projections.
    pub attn: usize,
    pub max_ref: usize,
    pub max_rot: usize,
    /// Scans are subsampled to at most this many points.
    pub max_points: usize,
    pub use_rgb: bool,
    pub use_counterpart: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 6,
            encoder: [64, 128, 256],
            trunk: 128,
            attn: 16,
            max_ref: MAX_REF_OUTPUTS,
            max_rot: MAX_ROT_OUTPUTS,
            max_points: 256,
            use_rgb: true,
            use_counterpart: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels != 6 {
            return Err(SymError::InvalidArgument("input must have 6 channels".into()));
        }
        if self.encoder.iter().any(|&w| w == 0) || self.trunk == 0 || self.attn == 0 {
            return Err(SymError::InvalidArgument("zero-width layer".into()));
        }
        if self.max_ref == 0 || self.max_ref > MAX_REF_OUTPUTS || self.max_rot == 0
            || self.max_rot > MAX_ROT_OUTPUTS
        {
            return Err(SymError::InvalidArgument("output count out of range".into()));
        }
        if self.max_points < 8 {
            return Err(SymError::InvalidArgument("max_points must be at least 8".into()));
        }
        Ok(())
    }

    pub fn ref_head_cols(&self) -> usize {
        self.max_ref * REF_COLS
    }

    pub fn rot_head_cols(&self) -> usize {
        self.max_rot * ROT_COLS
    }
}

/// All learnable weights. The parameter order returned by [`ModelParams::params`]
/// is fixed and shared by the optimizer and the checkpoint format.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub enc_w1: Array2<f64>,
    pub enc_b1: Array2<f64>,
    pub enc_w2: Array2<f64>,
    pub enc_b2: Array2<f64>,
    pub enc_w3: Array2<f64>,
    pub enc_b3: Array2<f64>,
    pub pool_w: Array2<f64>,
    pub pool_b: Array2<f64>,
    pub trunk_w: Array2<f64>,
    pub trunk_b: Array2<f64>,
    pub type_w: Array2<f64>,
    pub type_b: Array2<f64>,
    pub ref_w: Array2<f64>,
    pub ref_b: Array2<f64>,
    pub rot_w: Array2<f64>,
    pub rot_b: Array2<f64>,
    pub attn_q: Array2<f64>,
    pub attn_k: Array2<f64>,
    /// One bilinear form per pair head: `max_ref` counterpart heads followed
    /// by `max_rot` orbit heads.
    pub bilinear: Vec<Array2<f64>>,
}

fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-s..s))
}

impl ModelParams {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let [e1, e2, e3] = config.encoder;
        let t = config.trunk;
        let a = config.attn;
        let bilinear = (0..config.max_ref + config.max_rot).map(|_| xavier(rng, a, a)).collect();
        Ok(Self {
            enc_w1: xavier(rng, config.input_channels, e1),
            enc_b1: Array2::zeros((1, e1)),
            enc_w2: xavier(rng, e1, e2),
            enc_b2: Array2::zeros((1, e2)),
            enc_w3: xavier(rng, e2, e3),
            enc_b3: Array2::zeros((1, e3)),
            pool_w: xavier(rng, 1, e3),
            pool_b: Array2::zeros((1, e3)),
            trunk_w: xavier(rng, 2 * e3, t),
            trunk_b: Array2::zeros((1, t)),
            type_w: xavier(rng, t, 3),
            type_b: Array2::zeros((1, 3)),
            ref_w: xavier(rng, t, config.ref_head_cols()),
            ref_b: Array2::zeros((1, config.ref_head_cols())),
            rot_w: xavier(rng, t, config.rot_head_cols()),
            rot_b: Array2::zeros((1, config.rot_head_cols())),
            attn_q: xavier(rng, t, a),
            attn_k: xavier(rng, t, a),
            bilinear,
            config,
        })
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut v = vec![
            &self.enc_w1, &self.enc_b1, &self.enc_w2, &self.enc_b2, &self.enc_w3, &self.enc_b3,
            &self.pool_w, &self.pool_b, &self.trunk_w, &self.trunk_b, &self.type_w, &self.type_b,
            &self.ref_w, &self.ref_b, &self.rot_w, &self.rot_b, &self.attn_q, &self.attn_k,
        ];
        v.extend(self.bilinear.iter());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = vec![
            &mut self.enc_w1, &mut self.enc_b1, &mut self.enc_w2, &mut self.enc_b2,
            &mut self.enc_w3, &mut self.enc_b3, &mut self.pool_w, &mut self.pool_b,
            &mut self.trunk_w, &mut self.trunk_b, &mut self.type_w, &mut self.type_b,
            &mut self.ref_w, &mut self.ref_b, &mut self.rot_w, &mut self.rot_b,
            &mut self.attn_q, &mut self.attn_k,
        ];
        v.extend(self.bilinear.iter_mut());
        v
    }

    /// Serialize to the binary checkpoint format: a magic tag, a format
    /// version, the JSON-encoded config, then every parameter as f32
    /// little-endian with its shape.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"SYMN");
        buf.write_u32::<LittleEndian>(1)?;
        let json = serde_json::to_vec(&self.config)?;
        buf.write_u32::<LittleEndian>(json.len() as u32)?;
        buf.extend_from_slice(&json);
        let params = self.params();
        buf.write_u32::<LittleEndian>(params.len() as u32)?;
        for p in params {
            buf.write_u32::<LittleEndian>(p.nrows() as u32)?;
            buf.write_u32::<LittleEndian>(p.ncols() as u32)?;
            for &v in p.iter() {
                buf.write_f32::<LittleEndian>(v as f32)?;
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path)?;
        let mut r = std::io::Cursor::new(&data);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"SYMN" {
            return Err(SymError::Parse("not a model checkpoint".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != 1 {
            return Err(SymError::Parse(format!("unsupported checkpoint version {version}")));
        }
        let json_len = r.read_u32::<LittleEndian>()? as usize;
        let mut json = vec![0u8; json_len];
        r.read_exact(&mut json)?;
        let config: ModelConfig = serde_json::from_slice(&json)?;
        // Template with the expected shapes, then fill in order.
        let mut out = Self::init(config, &mut rand::rngs::mock::StepRng::new(0, 1))?;
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut slots = out.params_mut();
        if count != slots.len() {
            return Err(SymError::Parse(format!(
                "checkpoint has {count} parameters, expected {}",
                slots.len()
            )));
        }
        for slot in slots.iter_mut() {
            let rows = r.read_u32::<LittleEndian>()? as usize;
            let cols = r.read_u32::<LittleEndian>()? as usize;
            if (rows, cols) != slot.dim() {
                return Err(SymError::Parse(format!(
                    "checkpoint shape {rows}x{cols} does not match expected {:?}",
                    slot.dim()
                )));
            }
            for v in slot.iter_mut() {
                *v = r.read_f32::<LittleEndian>()? as f64;
            }
        }
        if r.position() != data.len() as u64 {
            return Err(SymError::Parse("trailing bytes in checkpoint".into()));
        }
        Ok(out)
    }
}

/// Node ids of the network outputs on the tape of one forward pass.
pub struct ForwardPass {
    pub tape: Tape,
    /// n x 3 symmetry-type logits.
    pub type_logits: usize,
    /// n x (max_ref * REF_COLS) reflection head.
    pub ref_head: usize,
    /// n x (max_rot * ROT_COLS) rotation head.
    pub rot_head: usize,
    /// n x n pair logits per head (counterpart heads then orbit heads);
    /// empty when attention was skipped.
    pub pair_logits: Vec<usize>,
    /// Leaf node of every parameter, ordered like [`ModelParams::params`].
    pub param_ids: Vec<usize>,
}

/// Build the n x 6 input matrix from normalized points and colors. With
/// `use_rgb` off the color channels are zeroed so checkpoints keep one shape.
pub fn features(
    points: &[Vector3<f64>],
    colors: &[[f64; 3]],
    config: &ModelConfig,
) -> Array2<f64> {
    let n = points.len();
    let mut x = Array2::zeros((n, config.input_channels));
    for i in 0..n {
        x[[i, 0]] = points[i].x;
        x[[i, 1]] = points[i].y;
        x[[i, 2]] = points[i].z;
        if config.use_rgb {
            if let Some(c) = colors.get(i) {
                x[[i, 3]] = c[0];
                x[[i, 4]] = c[1];
                x[[i, 5]] = c[2];
            }
        }
    }
    x
}

/// Run the network. `with_attention` controls whether the n x n pair heads
/// are evaluated; decoding symmetry candidates does not need them.
pub fn forward(params: &ModelParams, x: Array2<f64>, with_attention: bool) -> ForwardPass {
    let n = x.nrows();
    let mut tape = Tape::new();
    let raw = params.params();
    let param_ids: Vec<usize> = raw.iter().map(|p| tape.leaf((*p).clone())).collect();
    // Indices into param_ids, matching the params() order.
    let [ew1, eb1, ew2, eb2, ew3, eb3, pw, pb, tw, tb, tyw, tyb, rw, rb, ow, ob, aq, ak] = [
        param_ids[0], param_ids[1], param_ids[2], param_ids[3], param_ids[4], param_ids[5],
        param_ids[6], param_ids[7], param_ids[8], param_ids[9], param_ids[10], param_ids[11],
        param_ids[12], param_ids[13], param_ids[14], param_ids[15], param_ids[16], param_ids[17],
    ];

    let input = tape.leaf(x);
    let h = tape.matmul(input, ew1);
    let h = tape.add_row_bias(h, eb1);
    let h = tape.relu(h);
    let h = tape.matmul(h, ew2);
    let h = tape.add_row_bias(h, eb2);
    let h = tape.relu(h);
    let h = tape.matmul(h, ew3);
    let h = tape.add_row_bias(h, eb3);
    let f = tape.relu(h);

    // Per-channel attention pooling over the points.
    let pwb = tape.broadcast_rows(pw, n);
    let scores = tape.mul(f, pwb);
    let scores = tape.add_row_bias(scores, pb);
    let attn = tape.softmax_cols(scores);
    let weighted = tape.mul(attn, f);
    let pooled = tape.sum_rows(weighted);
    let global = tape.broadcast_rows(pooled, n);

    let cat = tape.concat_cols(f, global);
    let h = tape.matmul(cat, tw);
    let h = tape.add_row_bias(h, tb);
    let trunk = tape.relu(h);

    let type_logits = tape.matmul(trunk, tyw);
    let type_logits = tape.add_row_bias(type_logits, tyb);
    let ref_head = tape.matmul(trunk, rw);
    let ref_head = tape.add_row_bias(ref_head, rb);
    let rot_head = tape.matmul(trunk, ow);
    let rot_head = tape.add_row_bias(rot_head, ob);

    let mut pair_logits = Vec::new();
    if with_attention {
        let q = tape.matmul(trunk, aq);
        let k = tape.matmul(trunk, ak);
        for c in 0..params.config.max_ref + params.config.max_rot {
            let qa = tape.matmul(q, param_ids[18 + c]);
            pair_logits.push(tape.matmul_t(qa, k));
        }
    }

    ForwardPass { tape, type_logits, ref_head, rot_head, pair_logits, param_ids }
}

/// Collect the parameter gradients out of a node-gradient vector returned by
/// `Tape::backward`, ordered like [`ModelParams::params`].
pub fn param_grads(fp: &ForwardPass, node_grads: &mut Vec<Array2<f64>>) -> Vec<Array2<f64>> {
    fp.param_ids
        .iter()
        .map(|&id| std::mem::replace(&mut node_grads[id], Array2::zeros((0, 0))))
        .collect()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Softmax of a 3-logit row.
pub fn softmax3(row: &[f64; 3]) -> [f64; 3] {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = [
        (row[0] - max).exp(),
        (row[1] - max).exp(),
        (row[2] - max).exp(),
    ];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

/// Geometry of one reflectional candidate at point `p`: presence logit,
/// foot point, regressed counterpart, and plane normal. The normal combines
/// the foot direction `p - foot` (length d) with the counterpart bisector
/// `(p - q) / 2` (also length d but regressed over twice the lever arm), and
/// falls back to +z when both are degenerate.
pub fn ref_candidate(
    p: &Vector3<f64>,
    ref_row: &[f64],
    c: usize,
) -> (f64, Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let base = c * REF_COLS;
    let presence = ref_row[base];
    let foot = p + Vector3::new(ref_row[base + 1], ref_row[base + 2], ref_row[base + 3]);
    let cp = p + Vector3::new(ref_row[base + 4], ref_row[base + 5], ref_row[base + 6]);
    let dir = (p - foot) + (p - cp) * 0.5;
    let normal = if dir.norm() > 1e-8 { dir.normalize() } else { Vector3::z() };
    (presence, foot, cp, normal)
}

/// Geometry of one rotational candidate at point `p`: presence logit, foot
/// point, unit axis with its pre-normalization magnitude, and order class.
pub fn rot_candidate(
    p: &Vector3<f64>,
    rot_row: &[f64],
    c: usize,
) -> (f64, Vector3<f64>, Vector3<f64>, f64, usize) {
    let base = c * ROT_COLS;
    let presence = rot_row[base];
    let foot = p + Vector3::new(rot_row[base + 1], rot_row[base + 2], rot_row[base + 3]);
    let raw = Vector3::new(rot_row[base + 4], rot_row[base + 5], rot_row[base + 6]);
    let mag = raw.norm();
    let axis = if mag > 1e-8 { raw / mag } else { Vector3::z() };
    let order_logits = &rot_row[base + 7..base + 7 + ORDER_CLASSES];
    let class = order_logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    (presence, foot, axis, mag, class)
}

/// Deterministic farthest-point subsample of at most `max` indices, seeded
/// at index 0.
pub fn farthest_point_indices(points: &[Vector3<f64>], max: usize) -> Vec<usize> {
    if points.len() <= max {
        return (0..points.len()).collect();
    }
    let mut chosen = Vec::with_capacity(max);
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut cur = 0usize;
    chosen.push(cur);
    for _ in 1..max {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, d) in dist.iter_mut().enumerate() {
            let nd = (points[i] - points[cur]).norm_squared();
            if nd < *d {
                *d = nd;
            }
            if *d > best.1 {
                best = (i, *d);
            }
        }
        cur = best.0;
        chosen.push(cur);
    }
    chosen
}

/// Run the predictor on an already-subsampled camera-frame point cloud and
/// emit every candidate symmetry with its confidence (type probability times
/// presence probability). The caller clusters the result over the same
/// points.
pub fn predict(
    params: &ModelParams,
    points: &[Vector3<f64>],
    colors: &[[f64; 3]],
) -> Result<PredictionBundle> {
    if points.is_empty() {
        return Err(SymError::InvalidArgument("empty point set".into()));
    }
    let center = centroid(points);
    let diag = bbox_diagonal(points);
    let scale = if diag > 0.0 { 1.0 / diag } else { 1.0 };
    let normed: Vec<Vector3<f64>> = points.iter().map(|p| (p - center) * scale).collect();
    let x = features(&normed, colors, &params.config);
    let fp = forward(params, x, false);

    let type_out = fp.tape.value(fp.type_logits);
    let ref_out = fp.tape.value(fp.ref_head);
    let rot_out = fp.tape.value(fp.rot_head);
    let mut candidates = Vec::new();
    for i in 0..normed.len() {
        let ty = softmax3(&[type_out[[i, 0]], type_out[[i, 1]], type_out[[i, 2]]]);
        let ref_row: Vec<f64> = ref_out.row(i).to_vec();
        for c in 0..params.config.max_ref {
            let (presence, foot, _, normal) = ref_candidate(&normed[i], &ref_row, c);
            let conf = ty[1] * sigmoid(presence);
            let sym = SymmetryHypothesis::reflectional(foot / scale + center, normal)?
                .with_confidence(conf);
            candidates.push(CandidateSymmetry { point_index: i, sym });
        }
        let rot_row: Vec<f64> = rot_out.row(i).to_vec();
        for c in 0..params.config.max_rot {
            let (presence, foot, axis, _, class) = rot_candidate(&normed[i], &rot_row, c);
            let conf = ty[2] * sigmoid(presence);
            let sym =
                SymmetryHypothesis::rotational(foot / scale + center, axis, class_to_order(class))?
                    .with_confidence(conf);
            candidates.push(CandidateSymmetry { point_index: i, sym });
        }
    }
    let bundle = PredictionBundle { candidates, num_points: normed.len() };
    bundle.validate()?;
    Ok(bundle)
}
