//! Pinhole camera, body mount, and the smooth frustum indicator.
//!
//! Camera frame: x right, y down, z along the optical axis. Body frame:
//! x forward, y left, z up. The vehicle attitude used by the planner is a
//! pure yaw rotation about world z.

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};

/// Argument clamp for the smooth step, ±40 saturates well below f64 epsilon.
const STEP_CLAMP: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    pub width: f64,
    pub height: f64,
    pub cx: f64,
    pub cy: f64,
    /// Physical pixel size, meters per pixel.
    pub lx: f64,
    pub ly: f64,
    /// Focal length, meters.
    pub f: f64,
    pub smoothing_s: f64,
    /// Rotation taking body-frame vectors to camera-frame vectors.
    pub mount_rotation: Rotation3<f64>,
    /// Camera center in the body frame.
    pub mount_translation: Vector3<f64>,
}

impl Default for CameraParams {
    /// 480×480 image, 90° field of view, unit focal length.
    fn default() -> Self {
        Self {
            width: 480.0,
            height: 480.0,
            cx: 240.0,
            cy: 240.0,
            lx: 1.0 / 240.0,
            ly: 1.0 / 240.0,
            f: 1.0,
            smoothing_s: 5.0,
            mount_rotation: forward_mount(),
            mount_translation: Vector3::zeros(),
        }
    }
}

/// Body x → camera z, body −y → camera x, body −z → camera y.
pub fn forward_mount() -> Rotation3<f64> {
    Rotation3::from_matrix_unchecked(Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerDisplacements {
    pub top_right: Vector3<f64>,
    pub lower_right: Vector3<f64>,
    pub top_left: Vector3<f64>,
    pub lower_left: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumNormals {
    pub right: Vector3<f64>,
    pub top: Vector3<f64>,
    pub left: Vector3<f64>,
    pub bottom: Vector3<f64>,
    pub focal_offset: f64,
}

impl FrustumNormals {
    pub fn sides(&self) -> [Vector3<f64>; 4] {
        [self.right, self.top, self.left, self.bottom]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    params: CameraParams,
    normals: FrustumNormals,
}

impl CameraModel {
    pub fn new(params: CameraParams) -> Result<Self> {
        let p = &params;
        for (name, v) in [
            ("width", p.width),
            ("height", p.height),
            ("pixel_size_x", p.lx),
            ("pixel_size_y", p.ly),
            ("focal_length", p.f),
            ("smoothing_s", p.smoothing_s),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("camera {name} must be positive, got {v}")));
            }
        }
        if !p.cx.is_finite() || !p.cy.is_finite() || p.mount_translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("camera principal point and mount translation must be finite"));
        }
        let r = p.mount_rotation.matrix();
        if (r.transpose() * r - Matrix3::identity()).abs().max() > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mount rotation must be orthonormal with determinant +1"));
        }
        let corners = corners_of(p);
        let normals = normals_from_corners(&corners);
        check_inward(&normals, &corners)?;
        Ok(Self { params, normals })
    }

    pub fn params(&self) -> &CameraParams {
        &self.params
    }

    /// Copy of this camera with a different smoothing constant.
    pub fn with_smoothing(&self, s: f64) -> Result<Self> {
        Self::new(CameraParams { smoothing_s: s, ..self.params.clone() })
    }

    pub fn corner_displacements(&self) -> CornerDisplacements {
        corners_of(&self.params)
    }

    pub fn frustum_normals(&self) -> FrustumNormals {
        self.normals
    }

    /// Focal length in pixels along x and y.
    pub fn focal_pixels(&self) -> (f64, f64) {
        (self.params.f / self.params.lx, self.params.f / self.params.ly)
    }

    /// Pixel coordinates of a camera-frame point, or `None` behind the camera.
    pub fn project(&self, v_cam: &Vector3<f64>) -> Option<Vector2<f64>> {
        if v_cam.z <= 0.0 {
            return None;
        }
        let (fx, fy) = self.focal_pixels();
        Some(Vector2::new(self.params.cx + fx * v_cam.x / v_cam.z, self.params.cy + fy * v_cam.y / v_cam.z))
    }

    /// Camera-frame ray through a pixel, scaled to unit depth.
    pub fn pixel_ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let (fx, fy) = self.focal_pixels();
        Vector3::new((pixel.x - self.params.cx) / fx, (pixel.y - self.params.cy) / fy, 1.0)
    }

    pub fn in_image(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.x < self.params.width && pixel.y >= 0.0 && pixel.y < self.params.height
    }

    /// World pose of the camera given the world pose of the body.
    pub fn camera_pose(&self, body_pose: &Isometry3<f64>) -> Isometry3<f64> {
        let mount = Isometry3::from_parts(
            Translation3::from(self.params.mount_translation),
            UnitQuaternion::from_rotation_matrix(&self.params.mount_rotation.inverse()),
        );
        body_pose * mount
    }

    /// Body pose that places the camera at `camera_pose`.
    pub fn body_pose_from_camera(&self, camera_pose: &Isometry3<f64>) -> Isometry3<f64> {
        let mount = Isometry3::from_parts(
            Translation3::from(self.params.mount_translation),
            UnitQuaternion::from_rotation_matrix(&self.params.mount_rotation.inverse()),
        );
        camera_pose * mount.inverse()
    }

    pub fn world_to_camera(&self, body_pose: &Isometry3<f64>, point_world: &Vector3<f64>) -> Vector3<f64> {
        let body = body_pose.inverse_transform_point(&(*point_world).into());
        self.params.mount_rotation * (body.coords - self.params.mount_translation)
    }

    pub fn camera_to_world(&self, body_pose: &Isometry3<f64>, point_cam: &Vector3<f64>) -> Vector3<f64> {
        let body = self.params.mount_rotation.inverse() * point_cam + self.params.mount_translation;
        body_pose.transform_point(&body.into()).coords
    }

    /// Signed plane tests: four side normals dotted with v, then depth beyond f.
    fn plane_values(&self, v: &Vector3<f64>) -> [f64; 5] {
        let n = &self.normals;
        [n.right.dot(v), n.top.dot(v), n.left.dot(v), n.bottom.dot(v), v.z - n.focal_offset]
    }

    pub fn soft_indicator(&self, v_cam: &Vector3<f64>) -> [f64; 5] {
        let s = self.params.smoothing_s;
        self.plane_values(v_cam).map(|d| smooth_step(d / s).0)
    }

    pub fn frustum_score(&self, v_cam: &Vector3<f64>) -> f64 {
        self.soft_indicator(v_cam).iter().product()
    }

    /// Score and its gradient with respect to the camera-frame point.
    pub fn score_gradient_cam(&self, v_cam: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let s = self.params.smoothing_s;
        let planes = [self.normals.right, self.normals.top, self.normals.left, self.normals.bottom, Vector3::z()];
        let vals = self.plane_values(v_cam);
        let mut score = 1.0;
        let mut grad_log = Vector3::zeros();
        for (d, n) in vals.iter().zip(&planes) {
            let (o, saturated) = smooth_step(d / s);
            score *= o;
            if !saturated {
                // d/dx ½(1 + tanh x) = 2 o (1 − o), divided by o for the log-product.
                grad_log += n * (2.0 * (1.0 - o) / s);
            }
        }
        (score, grad_log * score)
    }

    /// Hard containment: strictly inside all four side planes and beyond the image plane.
    pub fn exact_inside(&self, v_cam: &Vector3<f64>) -> bool {
        self.plane_values(v_cam).iter().all(|d| *d > 0.0)
    }

    /// Minimum absolute plane value, in the same units as the plane tests.
    pub fn plane_margin(&self, v_cam: &Vector3<f64>) -> f64 {
        self.plane_values(v_cam).iter().map(|d| d.abs()).fold(f64::INFINITY, f64::min)
    }

    /// Frustum score of a world point seen from a body at `position` with
    /// yaw `yaw`, with gradients with respect to position and yaw.
    pub fn score_and_gradient(&self, position: &Vector3<f64>, yaw: f64, point: &Vector3<f64>) -> ScoreGradient {
        let (sy, cy) = yaw.sin_cos();
        let d = point - position;
        // Body-frame offset v_b = Rz(ψ)ᵀ d.
        let vb = Vector3::new(cy * d.x + sy * d.y, -sy * d.x + cy * d.y, d.z);
        let dvb_dyaw = Vector3::new(-sy * d.x + cy * d.y, -cy * d.x - sy * d.y, 0.0);
        let r = self.params.mount_rotation.matrix();
        let v_cam = r * (vb - self.params.mount_translation);
        let (score, g_cam) = self.score_gradient_cam(&v_cam);
        // dF/dv_b = Rᵀ g_cam; dv_b/dp = −Rz(ψ)ᵀ.
        let g_body = r.transpose() * g_cam;
        let d_position = -Vector3::new(cy * g_body.x - sy * g_body.y, sy * g_body.x + cy * g_body.y, g_body.z);
        ScoreGradient { score, d_position, d_yaw: g_body.dot(&dvb_dyaw) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreGradient {
    pub score: f64,
    pub d_position: Vector3<f64>,
    pub d_yaw: f64,
}

/// Body pose with yaw-only attitude.
pub fn yaw_pose(position: &Vector3<f64>, yaw: f64) -> Isometry3<f64> {
    Isometry3::from_parts(Translation3::from(*position), UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw))
}

/// ½(1 + tanh x) with x clamped; also reports whether the clamp was active.
fn smooth_step(x: f64) -> (f64, bool) {
    let saturated = x.abs() > STEP_CLAMP;
    let x = x.clamp(-STEP_CLAMP, STEP_CLAMP);
    // ½(1 + tanh x) = 1 / (1 + e^{−2x})
    (1.0 / (1.0 + (-2.0 * x).exp()), saturated)
}

/// Every side plane must face the frustum interior, represented by the mean
/// of the four corner rays at unit depth and the optical axis.
fn check_inward(normals: &FrustumNormals, c: &CornerDisplacements) -> Result<()> {
    let rays = [c.top_right, c.lower_right, c.top_left, c.lower_left];
    let centroid = (rays.iter().map(|r| r / r.z).sum::<Vector3<f64>>() + Vector3::z()) / 5.0;
    if normals.sides().iter().any(|n| n.dot(&centroid) <= 0.0) {
        return Err(Error::invalid("frustum side normals do not all point inward"));
    }
    Ok(())
}

fn corners_of(p: &CameraParams) -> CornerDisplacements {
    let right = (p.width - p.cx) * p.lx;
    let left = -p.cx * p.lx;
    let top = -p.cy * p.ly;
    let lower = (p.height - p.cy) * p.ly;
    CornerDisplacements {
        top_right: Vector3::new(right, top, p.f),
        lower_right: Vector3::new(right, lower, p.f),
        top_left: Vector3::new(left, top, p.f),
        lower_left: Vector3::new(left, lower, p.f),
    }
}

fn normals_from_corners(c: &CornerDisplacements) -> FrustumNormals {
    FrustumNormals {
        right: c.top_right.cross(&c.lower_right),
        top: c.top_left.cross(&c.top_right),
        left: c.lower_left.cross(&c.top_left),
        bottom: c.lower_right.cross(&c.lower_left),
        focal_offset: c.top_right.z,
    }
}
