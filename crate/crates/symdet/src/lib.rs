//! Detection, training, aggregation, verification and evaluation of
//! reflectional and rotational symmetries in single-view RGB-D scans.

pub mod aggregate;
pub mod error;
pub mod geom;
pub mod io;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod predictor;
pub mod synth;
pub mod verify;

pub use error::{Result, SymError};
pub use geom::{CameraIntrinsics, ObjectScan, SymmetryHypothesis, SymmetryKind};
