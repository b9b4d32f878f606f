//! Pose estimation: synthetic scene-coordinate regression, PnP-RANSAC,
//! inertial simulation and propagation, and the fixed-lag smoother.

pub mod imu;
pub mod pnp;
pub mod scene;
pub mod smoother;

use nalgebra::{Isometry3, Rotation3, Translation3, UnitQuaternion, Vector3};

pub use imu::{imu_simulate, propagate, ImuBias, ImuNoise, ImuSample, NavState};
pub use pnp::{pnp_dlt, pnp_ransac, Correspondence, RansacConfig};
pub use scene::{regress_scene, EntropyField, FieldCell, RoomBox, SceneSample};
pub use smoother::{FixedLagSmoother, SmootherConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoseSource {
    Pnp,
    Smoothed,
    GroundTruth,
}

impl PoseSource {
    pub fn as_str(self) -> &'static str {
        match self {
            PoseSource::Pnp => "pnp",
            PoseSource::Smoothed => "smoothed",
            PoseSource::GroundTruth => "ground_truth",
        }
    }
}

/// World pose of the vehicle body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
    pub t: f64,
    pub source: PoseSource,
    /// RANSAC consensus size; zero for other sources.
    pub inlier_count: usize,
    /// Reprojection RMS in pixels over the inliers; zero for other sources.
    pub reprojection_rms: f64,
}

impl PoseEstimate {
    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>, t: f64, source: PoseSource) -> Self {
        Self { rotation, translation, t, source, inlier_count: 0, reprojection_rms: 0.0 }
    }

    pub fn from_yaw(position: Vector3<f64>, yaw: f64, t: f64, source: PoseSource) -> Self {
        Self::new(Rotation3::from_axis_angle(&Vector3::z_axis(), yaw), position, t, source)
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), UnitQuaternion::from_rotation_matrix(&self.rotation))
    }

    /// Heading of the body x axis projected onto the horizontal plane.
    pub fn yaw(&self) -> f64 {
        let x = self.rotation * Vector3::x();
        x.y.atan2(x.x)
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}
