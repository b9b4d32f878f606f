//! Synthetic scene-coordinate regression over a box-shaped room.
//!
//! Rays through random pixels hit the room walls; the predicted world point
//! is the hit point plus Gaussian noise whose scale comes from an
//! [`EntropyField`]. Each prediction carries per-axis NIG parameters whose
//! aleatoric variance equals the noise variance, and the scalar entropy is
//! the sum of the three component entropies.

use nalgebra::{Isometry3, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::evidential::{predictive_entropy, NigParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSample {
    pub world_point: Vector3<f64>,
    pub pixel: Vector2<f64>,
    /// NIG parameters for the x, y and z components.
    pub nig: [NigParams; 3],
    pub entropy: f64,
}

impl SceneSample {
    pub fn aleatoric(&self) -> f64 {
        self.nig.iter().map(|m| m.aleatoric()).sum()
    }
    pub fn epistemic(&self) -> f64 {
        self.nig.iter().map(|m| m.epistemic()).sum()
    }
}

/// A sample together with the surface point it was generated from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub sample: SceneSample,
    pub surface_point: Vector3<f64>,
}

impl LabeledSample {
    pub fn l2_error(&self) -> f64 {
        (self.sample.world_point - self.surface_point).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomBox {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl RoomBox {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self> {
        if (0..3).any(|k| !(max[k] > min[k])) {
            return Err(Error::invalid("room extents must be strictly increasing per axis"));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] > self.min[k] && p[k] < self.max[k])
    }

    /// First wall hit by a ray starting inside the room.
    pub fn ray_exit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Vector3<f64>> {
        if !self.contains(origin) {
            return None;
        }
        let mut t_hit = f64::INFINITY;
        for k in 0..3 {
            if dir[k] > 0.0 {
                t_hit = t_hit.min((self.max[k] - origin[k]) / dir[k]);
            } else if dir[k] < 0.0 {
                t_hit = t_hit.min((self.min[k] - origin[k]) / dir[k]);
            }
        }
        t_hit.is_finite().then(|| origin + dir * t_hit)
    }
}

/// Noise scale and evidential shape parameters for one cell of the field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldCell {
    pub sigma: f64,
    pub lambda: f64,
    pub alpha: f64,
}

impl FieldCell {
    pub fn new(sigma: f64, lambda: f64, alpha: f64) -> Result<Self> {
        if !(sigma > 0.0) || !(lambda > 0.0) || !(alpha > 1.0) {
            return Err(Error::invalid(format!(
                "field cell needs sigma > 0, lambda > 0, alpha > 1 (got {sigma}, {lambda}, {alpha})"
            )));
        }
        Ok(Self { sigma, lambda, alpha })
    }
}

/// Regular grid of cells tiling the room.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyField {
    room: RoomBox,
    dims: [usize; 3],
    cells: Vec<FieldCell>,
    /// Standard deviation of a log-normal factor on each predicted β. Zero
    /// means the reported uncertainty is exact.
    pub prediction_jitter: f64,
}

impl EntropyField {
    pub fn uniform(room: RoomBox, cell: FieldCell) -> Self {
        Self { room, dims: [1, 1, 1], cells: vec![cell], prediction_jitter: 0.0 }
    }

    /// Builds the field by evaluating `f` at every cell center.
    pub fn from_fn<F>(room: RoomBox, dims: [usize; 3], mut f: F) -> Result<Self>
    where
        F: FnMut(Vector3<f64>) -> FieldCell,
    {
        if dims.contains(&0) {
            return Err(Error::invalid("field grid dimensions must be positive"));
        }
        let mut cells = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        let size = room.max - room.min;
        for iz in 0..dims[2] {
            for iy in 0..dims[1] {
                for ix in 0..dims[0] {
                    let frac = Vector3::new(
                        (ix as f64 + 0.5) / dims[0] as f64,
                        (iy as f64 + 0.5) / dims[1] as f64,
                        (iz as f64 + 0.5) / dims[2] as f64,
                    );
                    let cell = f(room.min + size.component_mul(&frac));
                    FieldCell::new(cell.sigma, cell.lambda, cell.alpha)?;
                    cells.push(cell);
                }
            }
        }
        Ok(Self { room, dims, cells, prediction_jitter: 0.0 })
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.prediction_jitter = jitter;
        self
    }

    pub fn room(&self) -> &RoomBox {
        &self.room
    }

    pub fn cell_at(&self, p: &Vector3<f64>) -> &FieldCell {
        let size = self.room.max - self.room.min;
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let u = ((p[k] - self.room.min[k]) / size[k]).clamp(0.0, 1.0);
            idx[k] = ((u * self.dims[k] as f64) as usize).min(self.dims[k] - 1);
        }
        &self.cells[idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])]
    }

    /// Entropy a prediction at `p` would carry without jitter.
    pub fn nominal_entropy(&self, p: &Vector3<f64>) -> f64 {
        let c = self.cell_at(p);
        let nig = NigParams::from_aleatoric(0.0, c.sigma, c.lambda, c.alpha).expect("validated cell");
        3.0 * predictive_entropy(&nig)
    }
}

/// Casts `n_pixels` rays through random pixels and returns noisy scene
/// coordinates with their uncertainty. Rays that miss the room are skipped.
pub fn regress_scene<R: Rng>(
    cam: &CameraModel,
    body_pose: &Isometry3<f64>,
    field: &EntropyField,
    n_pixels: usize,
    rng: &mut R,
) -> Vec<LabeledSample> {
    let cam_pose = cam.camera_pose(body_pose);
    let origin = cam_pose.translation.vector;
    let (w, h) = (cam.params().width, cam.params().height);
    let mut out = Vec::with_capacity(n_pixels);
    for _ in 0..n_pixels {
        let pixel = Vector2::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        let dir = cam_pose.rotation * cam.pixel_ray(&pixel);
        let Some(surface) = field.room().ray_exit(&origin, &dir) else {
            continue;
        };
        let cell = *field.cell_at(&surface);
        let noise = Normal::new(0.0, cell.sigma).expect("positive sigma");
        let world_point = surface + Vector3::from_fn(|_, _| noise.sample(rng));
        let nig = [0, 1, 2].map(|k| {
            let scale: f64 = if field.prediction_jitter > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                (field.prediction_jitter * z).exp()
            } else {
                1.0
            };
            NigParams::new(world_point[k], cell.lambda, cell.alpha, cell.sigma * cell.sigma * (cell.alpha - 1.0) * scale)
                .expect("validated cell")
        });
        let entropy = nig.iter().map(predictive_entropy).sum();
        out.push(LabeledSample { sample: SceneSample { world_point, pixel, nig, entropy }, surface_point: surface });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{yaw_pose, CameraParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn room() -> RoomBox {
        RoomBox::new(Vector3::new(-5.0, -5.0, 0.0), Vector3::new(5.0, 5.0, 3.0)).unwrap()
    }

    #[test]
    fn noiseless_field_reproduces_surface() {
        let cam = CameraModel::new(CameraParams::default()).unwrap();
        let field = EntropyField::uniform(room(), FieldCell::new(1e-9, 1.0, 2.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = regress_scene(&cam, &yaw_pose(&Vector3::new(0.0, 0.0, 1.5), 0.3), &field, 500, &mut rng);
        assert_eq!(s.len(), 500);
        let mean = s.iter().map(|x| x.l2_error()).sum::<f64>() / s.len() as f64;
        assert!(mean < 1e-6);
        for x in &s {
            assert!((x.sample.entropy - x.sample.nig.iter().map(predictive_entropy).sum::<f64>()).abs() < 1e-12);
            // Every surface point reprojects to its pixel.
            let v = cam.world_to_camera(&yaw_pose(&Vector3::new(0.0, 0.0, 1.5), 0.3), &x.surface_point);
            assert!((cam.project(&v).unwrap() - x.sample.pixel).norm() < 1e-6);
        }
    }

    #[test]
    fn noisier_cells_have_higher_entropy() {
        let cam = CameraModel::new(CameraParams::default()).unwrap();
        let field = EntropyField::from_fn(room(), [2, 1, 1], |c| {
            FieldCell { sigma: if c.x < 0.0 { 0.01 } else { 0.5 }, lambda: 1.0, alpha: 2.0 }
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pose = yaw_pose(&Vector3::new(0.0, 0.0, 1.5), std::f64::consts::FRAC_PI_2);
        let s = regress_scene(&cam, &pose, &field, 2000, &mut rng);
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for x in &s {
            if x.surface_point.x < 0.0 {
                left.push(x.sample.entropy)
            } else {
                right.push(x.sample.entropy)
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(!left.is_empty() && !right.is_empty());
        assert!(mean(&right) > mean(&left));
    }

    #[test]
    fn regression_is_deterministic() {
        let cam = CameraModel::new(CameraParams::default()).unwrap();
        let field = EntropyField::uniform(room(), FieldCell::new(0.1, 1.0, 2.0).unwrap()).with_jitter(0.3);
        let pose = yaw_pose(&Vector3::new(1.0, 0.0, 1.0), 1.0);
        let a = regress_scene(&cam, &pose, &field, 100, &mut ChaCha8Rng::seed_from_u64(5));
        let b = regress_scene(&cam, &pose, &field, 100, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn rays_from_outside_miss() {
        let r = room();
        assert!(r.ray_exit(&Vector3::new(10.0, 0.0, 1.0), &Vector3::x()).is_none());
        let hit = r.ray_exit(&Vector3::new(0.0, 0.0, 1.0), &Vector3::new(1.0, 1.0, 0.0)).unwrap();
        assert!((hit - Vector3::new(5.0, 5.0, 1.0)).norm() < 1e-12);
    }
}
