//! Benchmark dataset construction: seeded shape instances, random views,
//! occluder injection, and train / holdout-view / holdout-instance /
//! holdout-category splits.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregate::{MAX_REF_OUTPUTS, MAX_ROT_OUTPUTS};
use crate::error::{Result, SymError};
use crate::geom::CameraIntrinsics;
use crate::io::{write_frame, FrameMeta};
use crate::synth::scan::{inject_occluder, random_pose, transfer_symmetries, virtual_scan};
use crate::synth::shapes::{random_shape, ProceduralShape, ShapeKind};

pub const SPLITS: [&str; 4] = ["train", "holdout_view", "holdout_instance", "holdout_category"];

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    /// Shape kinds seen during training.
    pub kinds: Vec<ShapeKind>,
    /// Kind reserved for the holdout-category split; must not be in `kinds`.
    pub holdout_kind: Option<ShapeKind>,
    pub instances_per_kind: usize,
    pub views_per_instance: usize,
    /// Extra views of the training instances forming the holdout-view split.
    pub holdout_views_per_instance: usize,
    /// Fresh instances per kind forming the holdout-instance split.
    pub holdout_instances_per_kind: usize,
    pub holdout_instance_views: usize,
    /// Target occlusion-ratio range; None disables occluders.
    pub occlusion: Option<(f64, f64)>,
    pub intrinsics: CameraIntrinsics,
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 80.0,
        fy: 80.0,
        cx: 32.0,
        cy: 32.0,
        width: 64,
        height: 64,
        depth_scale: 1e-4,
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(SymError::InvalidArgument("no shape kinds".into()));
        }
        if let Some(h) = self.holdout_kind {
            if self.kinds.contains(&h) {
                return Err(SymError::InvalidArgument(
                    "holdout kind overlaps training kinds".into(),
                ));
            }
        }
        if let Some((lo, hi)) = self.occlusion {
            if !(0.0..1.0).contains(&lo) || !(0.0..1.0).contains(&hi) || lo > hi {
                return Err(SymError::InvalidArgument("bad occlusion range".into()));
            }
        }
        self.intrinsics.validate()
    }
}

fn check_annotation_budget(shape: &ProceduralShape) -> Result<()> {
    let refs = shape.symmetries.iter().filter(|s| s.is_reflectional()).count();
    let rots = shape.symmetries.iter().filter(|s| s.is_rotational()).count();
    if refs > MAX_REF_OUTPUTS || rots > MAX_ROT_OUTPUTS {
        return Err(SymError::InvalidArgument(format!(
            "shape {} has {refs} planes / {rots} axes, over the output budget",
            shape.id
        )));
    }
    Ok(())
}

/// Render one frame of `shape`, retrying the pose until the scan has enough
/// points.
fn render_frame(
    shape: &ProceduralShape,
    spec: &DatasetSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(crate::geom::ObjectScan, Vec<crate::geom::SymmetryHypothesis>, f64)> {
    for _ in 0..32 {
        let pose = random_pose(rng);
        let mesh = shape.mesh.transformed(&pose);
        let scan = match virtual_scan(&mesh, &spec.intrinsics) {
            Ok(s) => s,
            Err(_) => continue,
        };
        if scan.len() < 64 {
            continue;
        }
        let syms = transfer_symmetries(&shape.symmetries, &pose);
        let (scan, ratio) = match spec.occlusion {
            None => (scan, 0.0),
            Some((lo, hi)) => {
                let target = rng.gen_range(lo..=hi);
                let seed = rng.gen::<u64>();
                let (occ, achieved) = inject_occluder(&scan, target, seed)?;
                if occ.len() < 48 {
                    continue;
                }
                (occ, achieved)
            }
        };
        return Ok((scan, syms, ratio));
    }
    Err(SymError::Degenerate(format!("could not render shape {}", shape.id)))
}

/// Build the dataset under `out_dir`; returns frame counts per split.
pub fn build_dataset(
    spec: &DatasetSpec,
    seed: u64,
    out_dir: &Path,
) -> Result<BTreeMap<String, usize>> {
    spec.validate()?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Training instances, reused by the holdout-view split.
    let mut train_shapes: Vec<ProceduralShape> = Vec::new();
    for &kind in &spec.kinds {
        for i in 0..spec.instances_per_kind {
            let id = format!("{}-{i:02}", kind.name());
            let shape = random_shape(kind, &mut rng, &id)?;
            check_annotation_budget(&shape)?;
            train_shapes.push(shape);
        }
    }

    let mut emit = |split: &str,
                    shape: &ProceduralShape,
                    view: usize,
                    rng: &mut ChaCha8Rng|
     -> Result<()> {
        let (scan, syms, ratio) = render_frame(shape, spec, rng)?;
        let frame_id = format!("{}-{split}-v{view:02}", shape.id);
        let meta = FrameMeta {
            frame_id: frame_id.clone(),
            shape_id: shape.id.clone(),
            shape_kind: shape.kind.name().into(),
            split: split.into(),
            occlusion_ratio: ratio,
        };
        write_frame(&out_dir.join(split).join(&frame_id), &scan, &syms, &meta)?;
        *counts.entry(split.into()).or_insert(0) += 1;
        Ok(())
    };

    for shape in &train_shapes {
        for v in 0..spec.views_per_instance {
            emit("train", shape, v, &mut rng)?;
        }
    }
    for shape in &train_shapes {
        for v in 0..spec.holdout_views_per_instance {
            emit("holdout_view", shape, v, &mut rng)?;
        }
    }
    for &kind in &spec.kinds {
        for i in 0..spec.holdout_instances_per_kind {
            let id = format!("{}-h{i:02}", kind.name());
            let shape = random_shape(kind, &mut rng, &id)?;
            check_annotation_budget(&shape)?;
            for v in 0..spec.holdout_instance_views {
                emit("holdout_instance", &shape, v, &mut rng)?;
            }
        }
    }
    if let Some(kind) = spec.holdout_kind {
        for i in 0..spec.holdout_instances_per_kind {
            let id = format!("{}-c{i:02}", kind.name());
            let shape = random_shape(kind, &mut rng, &id)?;
            check_annotation_budget(&shape)?;
            for v in 0..spec.holdout_instance_views {
                emit("holdout_category", &shape, v, &mut rng)?;
            }
        }
    }

    let stats = serde_json::to_string_pretty(&counts)? + "\n";
    std::fs::write(out_dir.join("stats.json"), stats)?;
    Ok(counts)
}
