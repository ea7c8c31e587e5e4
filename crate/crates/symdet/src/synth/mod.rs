//! Benchmark construction: procedural shapes, ground-truth symmetry
//! detection on complete geometry, virtual RGB-D scanning, and dataset
//! assembly.

pub mod dataset;
pub mod gtdetect;
pub mod mesh;
pub mod nn;
pub mod scan;
pub mod shapes;

pub use dataset::{build_dataset, default_intrinsics, DatasetSpec};
pub use gtdetect::{gt_detect, gt_detect_points, GtDetectParams};
pub use mesh::Mesh;
pub use scan::{inject_occluder, random_pose, transfer_symmetries, virtual_scan};
pub use shapes::{random_shape, ProceduralShape, ShapeKind};
