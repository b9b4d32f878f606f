//! Camera pose from 2D–3D correspondences.
//!
//! The linear solve is a normalized DLT for the 3×4 projection in
//! normalized image coordinates. Its left 3×3 block is projected onto SO(3)
//! by the orthogonal polar factor, and the pose is then refined by
//! Gauss–Newton on pixel reprojection error.

use std::cmp::Ordering;

use nalgebra::{DMatrix, Isometry3, Matrix3, Matrix6, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3, Vector6};
use rand::seq::index;
use rand::Rng;

use super::{PoseEstimate, PoseSource};
use crate::camera::CameraModel;
use crate::error::{Error, Result};

const MIN_POINTS: usize = 6;
const GN_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub world: Vector3<f64>,
    pub pixel: Vector2<f64>,
    pub entropy: f64,
}

impl Correspondence {
    pub fn new(world: Vector3<f64>, pixel: Vector2<f64>) -> Self {
        Self { world, pixel, entropy: 0.0 }
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        let a = [self.world.x, self.world.y, self.world.z, self.pixel.x, self.pixel.y, self.entropy];
        let b = [other.world.x, other.world.y, other.world.z, other.pixel.x, other.pixel.y, other.entropy];
        a.iter().zip(&b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    }
}

/// World-to-camera rigid transform x_c = R x_w + t.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CameraExtrinsics {
    r: Rotation3<f64>,
    t: Vector3<f64>,
}

impl CameraExtrinsics {
    fn to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r * x + self.t
    }

    fn camera_pose(&self) -> Isometry3<f64> {
        let inv = self.r.inverse();
        Isometry3::from_parts(Translation3::from(-(inv * self.t)), UnitQuaternion::from_rotation_matrix(&inv))
    }

    fn residual(&self, cam: &CameraModel, c: &Correspondence) -> Option<Vector2<f64>> {
        cam.project(&self.to_camera(&c.world)).map(|p| p - c.pixel)
    }
}

fn dlt(cam: &CameraModel, pts: &[Correspondence]) -> Result<CameraExtrinsics> {
    if pts.len() < MIN_POINTS {
        return Err(Error::invalid(format!("PnP needs at least {MIN_POINTS} correspondences, got {}", pts.len())));
    }
    let n = pts.len() as f64;
    let centroid = pts.iter().map(|c| c.world).sum::<Vector3<f64>>() / n;
    let spread = pts.iter().map(|c| (c.world - centroid).norm()).sum::<f64>() / n;
    if !(spread > 1e-12) {
        return Err(Error::Degenerate("all world points coincide".into()));
    }
    let scale = 3f64.sqrt() / spread;

    let mut a = DMatrix::zeros(2 * pts.len(), 12);
    for (k, c) in pts.iter().enumerate() {
        let x = (c.world - centroid) * scale;
        let m = cam.pixel_ray(&c.pixel);
        let xh = [x.x, x.y, x.z, 1.0];
        for j in 0..4 {
            // u·(p3·X) − (p1·X) = 0 and v·(p3·X) − (p2·X) = 0
            a[(2 * k, j)] = -xh[j];
            a[(2 * k, 8 + j)] = m.x * xh[j];
            a[(2 * k + 1, 4 + j)] = -xh[j];
            a[(2 * k + 1, 8 + j)] = m.y * xh[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V");
    let sv = &svd.singular_values;
    // Order singular values descending to locate the null space.
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let (smallest, second) = (order[11], order[10]);
    if sv[second] < 1e-9 * sv[order[0]] {
        return Err(Error::Degenerate("correspondences do not determine a unique projection".into()));
    }
    let p = v_t.row(smallest);
    let mut m = Matrix3::from_fn(|r, c| p[4 * r + c]);
    let mut p4 = Vector3::new(p[3], p[7], p[11]);
    if m.determinant() < 0.0 {
        m = -m;
        p4 = -p4;
    }
    let svd3 = m.svd(true, true);
    let (u, v_t3) = (svd3.u.expect("requested U"), svd3.v_t.expect("requested V"));
    let s = svd3.singular_values.mean();
    if !(s > 0.0) {
        return Err(Error::Degenerate("projection has a vanishing rotation block".into()));
    }
    let r = u * v_t3;
    let r = if r.determinant() < 0.0 {
        return Err(Error::Degenerate("polar factor is a reflection".into()));
    } else {
        Rotation3::from_matrix_unchecked(r)
    };
    // Undo the world normalization: x_n = scale (x − c), so
    // x_c ∝ R x_n + p4/s = scale R x + (p4/s − scale R c); divide by scale.
    let t = p4 / (s * scale) - r * centroid;
    Ok(CameraExtrinsics { r, t })
}

fn refine(cam: &CameraModel, pts: &[Correspondence], mut ext: CameraExtrinsics) -> CameraExtrinsics {
    let (fx, fy) = cam.focal_pixels();
    let cost = |e: &CameraExtrinsics| -> f64 {
        pts.iter().map(|c| e.residual(cam, c).map_or(1e12, |r| r.norm_squared())).sum()
    };
    let mut current = cost(&ext);
    for _ in 0..GN_STEPS {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for c in pts {
            let xc = ext.to_camera(&c.world);
            if xc.z <= 0.0 {
                continue;
            }
            let Some(r) = ext.residual(cam, c) else { continue };
            let iz = 1.0 / xc.z;
            let dproj = nalgebra::Matrix2x3::new(
                fx * iz,
                0.0,
                -fx * xc.x * iz * iz,
                0.0,
                fy * iz,
                -fy * xc.y * iz * iz,
            );
            // Left perturbation R ← exp(δθ) R: ∂x_c/∂δθ = −[R x]×, ∂x_c/∂t = I.
            let rx = ext.r * c.world;
            let mut dx = nalgebra::Matrix3x6::zeros();
            dx.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rx.cross_matrix()));
            dx.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = dproj * dx;
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let Some(step) = h.cholesky().map(|ch| ch.solve(&(-g))) else { break };
        let trial = CameraExtrinsics {
            r: Rotation3::new(step.fixed_rows::<3>(0).into_owned()) * ext.r,
            t: ext.t + step.fixed_rows::<3>(3),
        };
        let next = cost(&trial);
        if !(next < current) {
            break;
        }
        let gain = current - next;
        ext = trial;
        current = next;
        if gain <= 1e-14 * current.max(1e-30) || step.norm() < 1e-14 {
            break;
        }
    }
    // Keep the rotation numerically orthonormal.
    let q = UnitQuaternion::from_rotation_matrix(&ext.r);
    CameraExtrinsics { r: q.to_rotation_matrix(), t: ext.t }
}

fn reprojection_rms(cam: &CameraModel, pts: &[Correspondence], ext: &CameraExtrinsics) -> f64 {
    let sum: f64 = pts.iter().map(|c| ext.residual(cam, c).map_or(f64::INFINITY, |r| r.norm_squared())).sum();
    (sum / pts.len() as f64).sqrt()
}

fn body_estimate(cam: &CameraModel, ext: &CameraExtrinsics, t: f64) -> PoseEstimate {
    let body = cam.body_pose_from_camera(&ext.camera_pose());
    PoseEstimate::new(body.rotation.to_rotation_matrix(), body.translation.vector, t, PoseSource::Pnp)
}

/// Body pose from at least six correspondences, stamped with time `t`.
pub fn pnp_dlt(pts: &[Correspondence], cam: &CameraModel, t: f64) -> Result<PoseEstimate> {
    let ext = refine(cam, pts, dlt(cam, pts)?);
    let mut est = body_estimate(cam, &ext, t);
    est.inlier_count = pts.len();
    est.reprojection_rms = reprojection_rms(cam, pts, &ext);
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub inlier_px: f64,
    pub max_iters: usize,
    pub confidence: f64,
    /// When set, only correspondences with entropy at or below this
    /// percentile of the frame are used.
    pub entropy_percentile: Option<f64>,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { inlier_px: 2.0, max_iters: 500, confidence: 0.999, entropy_percentile: None }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_px > 0.0) {
            return Err(Error::invalid("inlier_px must be positive"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::invalid("ransac_confidence must lie in (0, 1)"));
        }
        if let Some(p) = self.entropy_percentile {
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::invalid("entropy percentile must lie in (0, 100]"));
            }
        }
        Ok(())
    }
}

/// Nearest-rank percentile of a non-empty slice.
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

fn inliers(cam: &CameraModel, pts: &[Correspondence], ext: &CameraExtrinsics, thr: f64) -> (Vec<usize>, f64) {
    let thr2 = thr * thr;
    let mut idx = Vec::new();
    let mut score = 0.0;
    for (i, c) in pts.iter().enumerate() {
        if let Some(r) = ext.residual(cam, c) {
            let e = r.norm_squared();
            if e < thr2 {
                idx.push(i);
                score += e;
            }
        }
    }
    (idx, score)
}

/// Robust body pose from correspondences that may contain outliers.
///
/// The input is sorted into a canonical order first, so the result does not
/// depend on the order in which correspondences are supplied.
pub fn pnp_ransac<R: Rng>(
    pts: &[Correspondence],
    cam: &CameraModel,
    cfg: &RansacConfig,
    t: f64,
    rng: &mut R,
) -> Result<PoseEstimate> {
    cfg.validate()?;
    let mut pool: Vec<Correspondence> = pts.to_vec();
    if let Some(pct) = cfg.entropy_percentile {
        if !pool.is_empty() {
            let ent: Vec<f64> = pool.iter().map(|c| c.entropy).collect();
            let thr = percentile(&ent, pct);
            pool.retain(|c| c.entropy <= thr);
        }
    }
    if pool.len() < MIN_POINTS {
        return Err(Error::LocalizationFailure(format!("only {} correspondences available", pool.len())));
    }
    pool.sort_by(Correspondence::canonical_cmp);

    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut needed = cfg.max_iters;
    let mut iter = 0;
    let mut minimal = Vec::with_capacity(MIN_POINTS);
    while iter < needed.min(cfg.max_iters) {
        iter += 1;
        let mut pick = index::sample(rng, pool.len(), MIN_POINTS).into_vec();
        pick.sort_unstable();
        minimal.clear();
        minimal.extend(pick.iter().map(|&i| pool[i]));
        let Ok(ext) = dlt(cam, &minimal) else { continue };
        let (idx, score) = inliers(cam, &pool, &ext, cfg.inlier_px);
        let better = match &best {
            None => true,
            Some((b, s)) => idx.len() > b.len() || (idx.len() == b.len() && score < *s),
        };
        if better && idx.len() >= MIN_POINTS {
            let w = idx.len() as f64 / pool.len() as f64;
            let miss = 1.0 - w.powi(MIN_POINTS as i32);
            needed = if miss <= 0.0 {
                0
            } else {
                ((1.0 - cfg.confidence).ln() / miss.ln()).ceil().max(1.0) as usize
            };
            best = Some((idx, score));
        }
    }

    let Some((idx, _)) = best else {
        return Err(Error::LocalizationFailure("no hypothesis reached six inliers".into()));
    };
    let consensus: Vec<Correspondence> = idx.iter().map(|&i| pool[i]).collect();
    let ext = refine(cam, &consensus, dlt(cam, &consensus).map_err(|e| Error::LocalizationFailure(e.to_string()))?);
    // One re-selection pass with the refined pose.
    let (idx, _) = inliers(cam, &pool, &ext, cfg.inlier_px);
    if idx.len() < MIN_POINTS {
        return Err(Error::LocalizationFailure("refined pose lost its consensus".into()));
    }
    let consensus: Vec<Correspondence> = idx.iter().map(|&i| pool[i]).collect();
    let ext = refine(cam, &consensus, ext);
    let mut est = body_estimate(cam, &ext, t);
    est.inlier_count = consensus.len();
    est.reprojection_rms = reprojection_rms(cam, &consensus, &ext);
    Ok(est)
}
