//! Reference implementations used as test oracles. Each is written without
//! calling the code it checks.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{Isometry3, Matrix3, Vector2, Vector3, Vector4};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use eviplan_core::camera::{CameraModel, CameraParams};
use eviplan_core::costs::{Channels, CostTerm, WaypointSet};
use eviplan_core::evidential::NigParams;
use eviplan_core::planner::{plan_horizon, splice, PlanState, PlannerConfig};
use eviplan_core::sim::{
    standard_room, uncertainty_study, FieldConfig, FieldSpec, UncertaintyConfig, UncertaintyCurve, CLOSED_LOOP_N_CTRL,
};
use eviplan_core::localize::{
    imu_simulate, Correspondence, FixedLagSmoother, ImuNoise, NavState, PoseEstimate, PoseSource, SceneSample,
    SmootherConfig,
};
use eviplan_core::spline::{BSplineTrajectory, Trajectory};
use eviplan_core::Result;

/// ln Γ(x) for x > 0 by upward recurrence to x ≥ 15 and the Stirling series.
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0);
    let mut shift = 0.0;
    let mut z = x;
    while z < 15.0 {
        shift += z.ln();
        z += 1.0;
    }
    let z2 = z * z;
    let series = 1.0 / (12.0 * z) - 1.0 / (360.0 * z * z2) + 1.0 / (1260.0 * z * z2 * z2)
        - 1.0 / (1680.0 * z * z2 * z2 * z2)
        + 1.0 / (1188.0 * z * z2 * z2 * z2 * z2);
    (z - 0.5) * z.ln() - z + 0.5 * (2.0 * PI).ln() + series - shift
}

/// Log density of the Student-t with location `mu`, squared scale `s2` and
/// `nu` degrees of freedom.
pub fn student_t_ln_pdf(x: f64, mu: f64, s2: f64, nu: f64) -> f64 {
    let z = (x - mu) * (x - mu) / (nu * s2);
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI * s2).ln() - 0.5 * (nu + 1.0) * z.ln_1p()
}

fn simpson_step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, 50)
}

/// −∫ p ln p over the real line for the Student-t, with x = μ + s·tan θ
/// mapping the line onto (−π/2, π/2).
pub fn student_t_entropy_by_quadrature(mu: f64, s2: f64, nu: f64) -> f64 {
    let s = s2.sqrt();
    let f = |th: f64| {
        let c = th.cos();
        if c < 1e-300 {
            return 0.0;
        }
        let x = mu + s * th.tan();
        let lp = student_t_ln_pdf(x, mu, s2, nu);
        let jac = s / (c * c);
        if !jac.is_finite() {
            return 0.0;
        }
        -lp * lp.exp() * jac
    };
    // Split at the center so the peak sits on a node.
    let h = 0.5 * PI;
    adaptive_simpson(f, -h, 0.0, 1e-11) + adaptive_simpson(f, 0.0, h, 1e-11)
}

/// Clamped uniform cubic knot vector.
pub fn clamped_knots(n: usize, t0: f64, dt: f64) -> Vec<f64> {
    let mut k = vec![t0; 4];
    for i in 1..n - 3 {
        k.push(t0 + dt * i as f64);
    }
    k.extend([t0 + dt * (n - 3) as f64; 4]);
    k
}

/// De Boor's triangular scheme for a cubic spline.
pub fn de_boor(cps: &[Vector4<f64>], knots: &[f64], t: f64) -> Vector4<f64> {
    let p = 3;
    let n = cps.len();
    let mut s = p;
    while s < n - 1 && t >= knots[s + 1] {
        s += 1;
    }
    let mut d: Vec<Vector4<f64>> = (0..=p).map(|j| cps[j + s - p]).collect();
    for r in 1..=p {
        for j in (r..=p).rev() {
            let i = j + s - p;
            let den = knots[i + p + 1 - r] - knots[i];
            let a = if den > 0.0 { (t - knots[i]) / den } else { 0.0 };
            d[j] = d[j - 1] * (1.0 - a) + d[j] * a;
        }
    }
    d[p]
}

/// Camera-frame coordinates of a world point seen from a yaw-only body pose.
pub fn to_camera(params: &CameraParams, position: &Vector3<f64>, yaw: f64, point: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = yaw.sin_cos();
    let rz = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    let body = rz.transpose() * (point - position);
    params.mount_rotation * (body - params.mount_translation)
}

/// Containment by projection: beyond the image plane and landing strictly
/// inside the image.
pub fn projects_inside(params: &CameraParams, v: &Vector3<f64>) -> bool {
    if v.z <= params.f {
        return false;
    }
    let u = params.cx + params.f * v.x / (v.z * params.lx);
    let w = params.cy + params.f * v.y / (v.z * params.ly);
    u > 0.0 && u < params.width && w > 0.0 && w < params.height
}

/// Smooth frustum score written from the image corners.
pub fn soft_score(params: &CameraParams, v: &Vector3<f64>) -> f64 {
    let x0 = -params.cx * params.lx;
    let x1 = (params.width - params.cx) * params.lx;
    let y0 = -params.cy * params.ly;
    let y1 = (params.height - params.cy) * params.ly;
    let f = params.f;
    let (tr, br, tl, bl) =
        (Vector3::new(x1, y0, f), Vector3::new(x1, y1, f), Vector3::new(x0, y0, f), Vector3::new(x0, y1, f));
    let planes = [tr.cross(&br).dot(v), tl.cross(&tr).dot(v), bl.cross(&tl).dot(v), br.cross(&bl).dot(v), v.z - f];
    planes.iter().map(|d| 0.5 * (1.0 + (d / params.smoothing_s).tanh())).product()
}

/// Brute-force maximizer over yaw in steps of `step_deg` degrees of
/// Σ_j ω_j F at a fixed position.
pub fn best_yaw(params: &CameraParams, position: &Vector3<f64>, points: &[(Vector3<f64>, f64)], step_deg: f64) -> f64 {
    let steps = (360.0 / step_deg).round() as usize;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..steps {
        let yaw = (-180.0 + step_deg * k as f64).to_radians();
        let v: f64 = points.iter().map(|(p, w)| w * soft_score(params, &to_camera(params, position, yaw, p))).sum();
        if v > best.0 {
            best = (v, yaw);
        }
    }
    best.1
}

/// Smallest absolute difference between two angles, in radians.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// One-sided sign test: probability of at least `wins` successes out of
/// `n` fair coin flips.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let ln_choose = |k: usize| ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0);
    (wins..=n).map(|k| (ln_choose(k) - n as f64 * 2f64.ln()).exp()).sum()
}

/// Central difference of a scalar function.
pub fn central_diff<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// ‖a − b‖∞ relative to the larger of ‖a‖∞ and ‖b‖∞, with an absolute
/// floor for vanishing gradients.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(floor, f64::max);
    diff / scale
}

/// `n` exact correspondences at depths 3 to 7 m seen from `body`.
pub fn pnp_scene<R: Rng>(rng: &mut R, cam: &CameraModel, body: &Isometry3<f64>, n: usize) -> Vec<Correspondence> {
    (0..n)
        .map(|_| {
            let px = Vector2::new(rng.random_range(0.0..cam.params().width), rng.random_range(0.0..cam.params().height));
            let depth = rng.random_range(3.0..7.0);
            Correspondence::new(cam.camera_to_world(body, &(cam.pixel_ray(&px) * depth)), px)
        })
        .collect()
}

/// Body pose with small roll and pitch and arbitrary yaw.
pub fn random_body<R: Rng>(rng: &mut R) -> Isometry3<f64> {
    Isometry3::new(
        Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.5..2.5)),
        Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-3.1..3.1)),
    )
}

/// Smoothed translation RMSE on a 10 s flight with noisy IMU and a PnP
/// stream at 5 Hz. With `outliers`, exactly 10% of the poses are moved by
/// 1 m in a random direction; the outlier draw depends only on `seed`.
pub fn smoother_trial(seed: u64, outliers: bool, huber: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cps = vec![Vector4::new(0.0, 0.0, 1.5, 0.0)];
    for k in 1..10 {
        let prev: Vector4<f64> = cps[k - 1];
        cps.push(prev + Vector4::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(-0.2..0.2), rng.random_range(-0.5..0.5)));
    }
    let traj = BSplineTrajectory::build_clamped(cps, 0.0, 10.0 / 7.0).unwrap();
    let noise = ImuNoise { accel_sigma: 0.05, gyro_sigma: 0.005, ..Default::default() };
    let (imu, _) = imu_simulate(&traj, 200.0, &noise, &mut rng).unwrap();

    let pose_noise = Normal::new(0.0, 0.03).unwrap();
    let yaw_noise = Normal::new(0.0, 0.01).unwrap();
    let n = 49;
    let mut poses: Vec<PoseEstimate> = (1..=n)
        .map(|k| {
            let t = 0.2 * k as f64;
            let s = traj.sample(t).unwrap();
            let p = s.position + Vector3::from_fn(|_, _| pose_noise.sample(&mut rng));
            PoseEstimate::from_yaw(p, s.yaw + yaw_noise.sample(&mut rng), t, PoseSource::Pnp)
        })
        .collect();
    let picks = index::sample(&mut rng, n, n / 10).into_vec();
    if outliers {
        for i in picks {
            let d = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            poses[i].translation += d;
        }
    }

    let cfg = SmootherConfig { huber_delta: if huber { SmootherConfig::default().huber_delta } else { None }, ..Default::default() };
    let s0 = traj.sample(0.0).unwrap();
    let mut sm = FixedLagSmoother::new(cfg, NavState { t: 0.0, position: s0.position, velocity: s0.velocity.xyz(), yaw: s0.yaw }).unwrap();
    let mut next = 0;
    let mut sq = 0.0;
    for s in &imu {
        while next < poses.len() && poses[next].t + cfg.latency <= s.t {
            sm.add_pose(&poses[next]).unwrap();
            next += 1;
        }
        let est = sm.add_imu(*s).unwrap();
        sq += (est.translation - traj.sample(s.t).unwrap().position).norm_squared();
    }
    (sq / imu.len() as f64).sqrt()
}

/// Hover point used by the yaw-oracle scenes.
pub const HOVER: Vector3<f64> = Vector3::new(0.0, 0.0, 1.5);

/// Scene around a hover point: a low-entropy cluster within ±10° of a random
/// bearing in front of the starting heading (yaw 0) and high-entropy points
/// in every direction. Returns the pool and the cluster bearing.
pub fn hover_cluster_pool(seed: u64) -> (Vec<SceneSample>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bearing = rng.random_range(-0.5 * PI..0.5 * PI);
    let nig = NigParams::new(0.0, 1.0, 2.0, 1.0).unwrap();
    let pool = (0..300)
        .map(|k| {
            let cluster = k < 90;
            let a = if cluster { bearing + rng.random_range(-0.17..0.17) } else { rng.random_range(-PI..PI) };
            let r = rng.random_range(3.0..5.0);
            let p = HOVER + Vector3::new(r * a.cos(), r * a.sin(), rng.random_range(-1.0..1.0));
            let entropy = if cluster { rng.random_range(0.0..0.5) } else { rng.random_range(2.0..3.0) };
            SceneSample { world_point: p, pixel: Vector2::zeros(), nig: [nig; 3], entropy }
        })
        .collect();
    (pool, bearing)
}

/// Hovers in front of the cluster scene of `seed` for `replans` receding
/// horizons and returns the terminal yaw of the last plan together with the
/// grid-search optimum over the samples that plan selected.
pub fn hover_yaw_trial(seed: u64, replans: usize) -> (f64, f64) {
    let cam = CameraModel::new(CameraParams::default()).unwrap();
    let cfg = PlannerConfig { n_ctrl: CLOSED_LOOP_N_CTRL, ..Default::default() };
    let (pool, _) = hover_cluster_pool(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = PlanState::at_rest(0.0, HOVER, 0.0);
    let wps = WaypointSet::new(vec![HOVER, HOVER], vec![]).unwrap();
    let mut plan = plan_horizon(&s, &wps, &pool, &cam, &cfg, &mut rng).unwrap();
    for _ in 0..replans {
        let t = s.t + cfg.t_exec;
        let q = plan.trajectory.eval(t).unwrap();
        s = PlanState { t, position: q.xyz(), yaw: q.w, initial: splice(&plan, t).unwrap() };
        let wps = WaypointSet::new(vec![s.position, HOVER], vec![]).unwrap();
        plan = plan_horizon(&s, &wps, &pool, &cam, &cfg, &mut rng).unwrap();
    }
    let weighted: Vec<_> =
        plan.selected_samples.iter().map(|&i| (pool[i].world_point, (-cfg.weights.a * pool[i].entropy).exp())).collect();
    let best = best_yaw(cam.params(), &HOVER, &weighted, 0.1);
    (plan.trajectory.control_points().last().unwrap().w, best)
}

/// Uncertainty study on a field whose noise grows linearly across the room,
/// so that both the reported entropy and the regression error increase
/// together.
pub fn monotone_study(seed: u64, n_images: usize) -> Vec<UncertaintyCurve> {
    let field = FieldConfig { spec: FieldSpec::Gradient { axis: 0, sigma_min: 0.02, sigma_max: 0.5 }, ..Default::default() }
        .build(&standard_room())
        .unwrap();
    let cam = CameraModel::new(CameraParams::default()).unwrap();
    let cfg = UncertaintyConfig { n_images, ..Default::default() };
    uncertainty_study(&field, &cam, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Mean of the per-bin error standard deviations over the bottom and top
/// quarter of the bins.
pub fn quartile_std(curve: &UncertaintyCurve) -> (f64, f64) {
    let q = curve.bins.len() / 4;
    let mean = |bins: &[eviplan_core::sim::BinStat]| {
        let v: Vec<f64> = bins.iter().filter_map(|b| b.std_error).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    (mean(&curve.bins[..q]), mean(&curve.bins[curve.bins.len() - q..]))
}

pub fn random_traj(rng: &mut ChaCha8Rng) -> BSplineTrajectory {
    let n = rng.random_range(6..10);
    let cps = (0..n)
        .map(|_| {
            Vector4::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..2.0),
                rng.random_range(-3.0..3.0),
            )
        })
        .collect();
    BSplineTrajectory::build_clamped(cps, rng.random_range(0.0..5.0), rng.random_range(0.2..0.6)).unwrap()
}

pub fn random_samples(rng: &mut ChaCha8Rng, n: usize) -> Vec<SceneSample> {
    (0..n)
        .map(|_| {
            let a: f64 = rng.random_range(-3.2..3.2);
            let r = rng.random_range(2.0..5.0);
            let p = Vector3::new(r * a.cos(), r * a.sin(), rng.random_range(0.0..3.0));
            let nig = [0, 1, 2].map(|k| NigParams::new(p[k], 1.0, 2.0, 0.01).unwrap());
            SceneSample { world_point: p, pixel: Vector2::zeros(), nig, entropy: rng.random_range(-2.0..3.0) }
        })
        .collect()
}

/// Central differences over every control-point scalar.
pub fn fd_gradient<F: FnMut(&BSplineTrajectory) -> Result<CostTerm>>(traj: &BSplineTrajectory, mut f: F) -> Vec<f64> {
    let mut probe = traj.clone();
    let mut out = Vec::new();
    for i in 0..traj.n_ctrl() {
        for c in 0..4 {
            let x = traj.control_points()[i][c];
            let h = 1e-6 * x.abs().max(1.0);
            let mut cps = traj.control_points().to_vec();
            cps[i][c] = x + h;
            probe.set_control_points(&cps).unwrap();
            let up = f(&probe).unwrap().value;
            cps[i][c] = x - h;
            probe.set_control_points(&cps).unwrap();
            let dn = f(&probe).unwrap().value;
            out.push((up - dn) / (2.0 * h));
        }
    }
    out
}

pub fn flat(term: &CostTerm) -> Vec<f64> {
    term.grad.iter().flat_map(|g| g.iter().copied().collect::<Vec<_>>()).collect()
}

/// Relative error between analytic and central-difference gradients over the
/// coordinates selected by `ch`.
pub fn cost_grad_error<F: FnMut(&BSplineTrajectory) -> Result<CostTerm>>(traj: &BSplineTrajectory, ch: Channels, mut f: F) -> f64 {
    let keep = |k: &usize| match ch {
        Channels::Position => k % 4 != 3,
        Channels::Yaw => k % 4 == 3,
        Channels::All => true,
    };
    let an: Vec<f64> = flat(&f(traj).unwrap()).into_iter().enumerate().filter(|(k, _)| keep(k)).map(|(_, v)| v).collect();
    let fd: Vec<f64> = fd_gradient(traj, &mut f).into_iter().enumerate().filter(|(k, _)| keep(k)).map(|(_, v)| v).collect();
    rel_err(&an, &fd, 1e-6)
}

