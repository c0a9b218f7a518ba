//! Post-backbone geometry for metric-scale, truncation-robust 3D human pose
//! estimation.
//!
//! The crate covers everything that happens after a CNN has produced its
//! heatmaps: decoding volumetric heatmaps with soft-argmax, reconstructing the
//! absolute root position from a 2D pose and a root-relative 3D pose,
//! bone-length based distance recovery for 2.5D predictions, training losses
//! with analytic gradients, and the usual evaluation metrics. A synthetic
//! scene generator provides ground truth for all of it.
//!
//! Units are millimeters for 3D quantities and pixels for image quantities.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod error;
pub mod heatmap;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod pose;
pub mod reconstruction;
pub mod scale_recovery;
pub mod skeleton;
pub mod striding;
pub mod synth;

pub use camera::CameraIntrinsics;
pub use error::{GeomError, Result};
pub use heatmap::{HeatmapGeometry, HeatmapMode, HeatmapVolume};
pub use pose::{Frame, Pose2D, Pose3D, Space};
pub use reconstruction::{ReconstructionInput, RootSolution};
pub use scale_recovery::{BoneSpec, Pose25D};
pub use striding::{StridingConfig, StridingMode};
