//! Perception-aware receding-horizon planning driven by evidential
//! scene-coordinate uncertainty, with PnP-RANSAC localization fused with
//! inertial data in a fixed-lag smoother.

// Validation writes `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod costs;
pub mod error;
pub mod evidential;
pub mod lbfgs;
pub mod localize;
pub mod planner;
pub mod sim;
pub mod special;
pub mod spline;

pub use error::{Error, Result};
pub use camera::{CameraModel, CameraParams};
pub use costs::{CostWeights, KinematicLimits};
pub use evidential::{NigParams, ToyFit, ToyFitOptions};
pub use localize::{RansacConfig, RoomBox, SmootherConfig};
pub use planner::PlannerConfig;
pub use sim::{AblationFlags, FieldConfig, FieldSpec, LocalizeConfig, RunMetrics, Scenario, SummaryRow, Wall, YawPolicy};
