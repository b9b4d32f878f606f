//! Receding-horizon trajectory generation.
//!
//! Each plan spans `t_plan` seconds from the current pose. Position is
//! optimized first with the yaw channel ignored; yaw is then optimized with
//! the position trajectory held fixed. Both stages share one clamped uniform
//! knot vector, so a plan is stored as a single 4-D spline.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::Rng;

use crate::camera::CameraModel;
use crate::costs::{
    sample_times, total_position_cost, total_yaw_cost, CostContext, CostWeights, InitialState, KinematicLimits,
    WaypointSet,
};
use crate::error::{Error, Result};
use crate::lbfgs::{minimize, LbfgsConfig, LbfgsResult};
use crate::localize::pnp::percentile;
use crate::localize::{wrap_angle, SceneSample};
use crate::spline::BSplineTrajectory;

/// Horizontal speed below which the heading of the velocity is undefined.
pub const MIN_HEADING_SPEED: f64 = 0.05;

/// Number of constant headings tried as yaw-stage starting points.
const YAW_SCAN_HEADINGS: usize = 36;

/// Entropy-related planner components that can be switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    /// Weight visibility terms by exp(−a·H).
    pub ow: bool,
    /// Drop scene samples above the entropy percentile before sampling.
    pub or: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self { ow: true, or: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub t_plan: f64,
    pub t_exec: f64,
    pub n_ctrl: usize,
    pub weights: CostWeights,
    pub limits: KinematicLimits,
    pub entropy_percentile: f64,
    pub ablation: Ablation,
    pub lbfgs: LbfgsConfig,
    /// Yaw-stage starts refined besides the forward-facing one, taken from
    /// the best-scoring constant-heading candidates.
    pub yaw_restarts: usize,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            t_plan: 0.8,
            t_exec: 0.5,
            n_ctrl: 6,
            weights: CostWeights::default(),
            limits: KinematicLimits::default(),
            entropy_percentile: 50.0,
            ablation: Ablation::default(),
            lbfgs: LbfgsConfig::default(),
            yaw_restarts: 2,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_plan > 0.0) || !self.t_plan.is_finite() {
            return Err(Error::invalid(format!("t_plan must be positive, got {}", self.t_plan)));
        }
        if !(self.t_exec > 0.0) || self.t_exec > self.t_plan {
            return Err(Error::invalid(format!(
                "t_exec must lie in (0, t_plan], got {} with t_plan {}",
                self.t_exec, self.t_plan
            )));
        }
        if self.n_ctrl < 4 {
            return Err(Error::invalid(format!("n_ctrl must be at least 4, got {}", self.n_ctrl)));
        }
        if !(self.entropy_percentile > 0.0 && self.entropy_percentile <= 100.0) {
            return Err(Error::invalid(format!(
                "entropy_percentile must lie in (0, 100], got {}",
                self.entropy_percentile
            )));
        }
        if self.lbfgs.memory == 0 {
            return Err(Error::invalid("lbfgs memory must be positive"));
        }
        self.weights.validate()?;
        self.limits.validate()
    }

    /// Knot spacing of a horizon spline.
    pub fn knot_spacing(&self) -> f64 {
        self.t_plan / (self.n_ctrl - 3) as f64
    }
}

/// Pose and prescribed derivatives at the start of a horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanState {
    pub t: f64,
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub initial: InitialState,
}

impl PlanState {
    pub fn at_rest(t: f64, position: Vector3<f64>, yaw: f64) -> Self {
        Self { t, position, yaw, initial: InitialState::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    /// x, y, z from the position stage and yaw from the yaw stage.
    pub trajectory: BSplineTrajectory,
    pub position_cost_history: Vec<f64>,
    pub yaw_cost_history: Vec<f64>,
    /// Indices into the scene-sample pool passed to the planner.
    pub selected_samples: Vec<usize>,
    pub position_iterations: usize,
    pub yaw_iterations: usize,
    /// Either stage ended on a line-search failure.
    pub degraded: bool,
}

/// Picks the scene samples that enter the visibility cost.
///
/// With rejection enabled only samples whose entropy is at or below the
/// configured percentile of the pool are eligible. Up to `n_f` eligible
/// samples are drawn without replacement. Returned indices are sorted.
pub fn select_samples<R: Rng>(pool: &[SceneSample], cfg: &PlannerConfig, rng: &mut R) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::invalid("scene-sample pool is empty"));
    }
    let eligible: Vec<usize> = if cfg.ablation.or {
        let entropies: Vec<f64> = pool.iter().map(|s| s.entropy).collect();
        let thr = percentile(&entropies, cfg.entropy_percentile);
        (0..pool.len()).filter(|&i| pool[i].entropy <= thr).collect()
    } else {
        (0..pool.len()).collect()
    };
    let k = cfg.weights.n_f.min(eligible.len());
    let mut picked: Vec<usize> =
        rand::seq::index::sample(rng, eligible.len(), k).into_iter().map(|j| eligible[j]).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Piecewise-linear interpolation of the waypoint polyline in time.
fn polyline_at(times: &[f64], points: &[Vector3<f64>], t: f64) -> Vector3<f64> {
    if t <= times[0] {
        return points[0];
    }
    for k in 1..times.len() {
        if t <= times[k] {
            let u = (t - times[k - 1]) / (times[k] - times[k - 1]).max(1e-12);
            return points[k - 1] + (points[k] - points[k - 1]) * u;
        }
    }
    *points.last().unwrap()
}

/// Starting spline: positions follow the waypoint polyline at the Greville
/// abscissae and yaw holds the current heading.
pub fn initial_guess(state: &PlanState, wps: &WaypointSet, cfg: &PlannerConfig) -> Result<BSplineTrajectory> {
    cfg.validate()?;
    let t_end = state.t + cfg.t_plan;
    let mut times = vec![state.t];
    let mut points = vec![state.position];
    for (t, w) in wps.interior() {
        if !(t > state.t && t < t_end) {
            return Err(Error::invalid(format!(
                "waypoint arrival time {t} outside the horizon ({}, {t_end})",
                state.t
            )));
        }
        times.push(t);
        points.push(*w);
    }
    times.push(t_end);
    points.push(*wps.last());
    let flat = vec![Vector4::new(0.0, 0.0, 0.0, state.yaw); cfg.n_ctrl];
    let mut traj = BSplineTrajectory::build_clamped(flat, state.t, cfg.knot_spacing())?;
    let mut cps: Vec<Vector4<f64>> = traj
        .greville()
        .iter()
        .map(|&g| {
            let p = polyline_at(&times, &points, g);
            Vector4::new(p.x, p.y, p.z, state.yaw)
        })
        .collect();
    // Endpoints are pinned exactly, not through interpolation round-off.
    let last = wps.last();
    cps[0] = Vector4::new(state.position.x, state.position.y, state.position.z, state.yaw);
    cps[cfg.n_ctrl - 1] = Vector4::new(last.x, last.y, last.z, state.yaw);
    traj.set_control_points(&cps)?;
    Ok(traj)
}

fn set_position_vars(base: &[Vector4<f64>], x: &[f64]) -> Vec<Vector4<f64>> {
    let mut cps = base.to_vec();
    for (k, chunk) in x.chunks(3).enumerate() {
        cps[k + 1].x = chunk[0];
        cps[k + 1].y = chunk[1];
        cps[k + 1].z = chunk[2];
    }
    cps
}

/// Runs the position stage on `traj` in place. The first and last control
/// points stay where they are.
pub fn optimize_position(traj: &mut BSplineTrajectory, ctx: &CostContext, lbfgs: &LbfgsConfig) -> Result<LbfgsResult> {
    let n = traj.n_ctrl();
    let base = traj.control_points().to_vec();
    let x0: Vec<f64> = base[1..n - 1].iter().flat_map(|c| [c.x, c.y, c.z]).collect();
    let mut probe = traj.clone();
    let res = minimize(
        |x, g| {
            let cps = set_position_vars(&base, x);
            let eval = probe.set_control_points(&cps).and_then(|_| total_position_cost(&probe, ctx));
            match eval {
                Ok(c) => {
                    for (k, gk) in c.grad[1..n - 1].iter().enumerate() {
                        g[3 * k..3 * k + 3].copy_from_slice(&[gk.x, gk.y, gk.z]);
                    }
                    c.value
                }
                Err(_) => f64::NAN,
            }
        },
        &x0,
        lbfgs,
    )?;
    traj.set_control_points(&set_position_vars(&base, &res.x))?;
    Ok(res)
}

/// Runs the yaw stage on `traj` in place over the yaw control points with
/// indices in `free`; all other control-point coordinates are held fixed.
pub fn optimize_yaw(
    traj: &mut BSplineTrajectory,
    ctx: &CostContext,
    free: std::ops::Range<usize>,
    lbfgs: &LbfgsConfig,
) -> Result<LbfgsResult> {
    if free.end > traj.n_ctrl() {
        return Err(Error::invalid("free yaw range exceeds the control-point count"));
    }
    let base = traj.control_points().to_vec();
    let x0: Vec<f64> = base[free.clone()].iter().map(|c| c.w).collect();
    let set = |x: &[f64]| {
        let mut cps = base.clone();
        for (c, v) in cps[free.clone()].iter_mut().zip(x) {
            c.w = *v;
        }
        cps
    };
    let mut probe = traj.clone();
    let res = minimize(
        |x, g| {
            let eval = probe.set_control_points(&set(x)).and_then(|_| total_yaw_cost(&probe, ctx));
            match eval {
                Ok(c) => {
                    for (gi, gk) in g.iter_mut().zip(&c.grad[free.clone()]) {
                        *gi = gk.w;
                    }
                    c.value
                }
                Err(_) => f64::NAN,
            }
        },
        &x0,
        lbfgs,
    )?;
    traj.set_control_points(&set(&res.x))?;
    Ok(res)
}

/// Yaw policies that ignore the scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineYaw {
    Constant(f64),
    Forward,
}

/// Yaw control points for a baseline policy on the knots of `position`.
///
/// Forward keeps `current_yaw` on the first control point so the yaw stays
/// continuous across replans. The others take the horizontal velocity
/// heading at their Greville abscissae, unwrapped in sequence; where the
/// horizontal speed is below [`MIN_HEADING_SPEED`] the previous value is
/// held.
pub fn baseline_yaw(policy: BaselineYaw, position: &BSplineTrajectory, current_yaw: f64) -> Result<BSplineTrajectory> {
    let mut cps = position.control_points().to_vec();
    match policy {
        BaselineYaw::Constant(psi) => cps.iter_mut().for_each(|c| c.w = psi),
        BaselineYaw::Forward => {
            let mut prev = current_yaw;
            for (c, g) in cps.iter_mut().zip(position.greville()).skip(1) {
                let v = position.eval_derivative(g, 1)?;
                if v.x.hypot(v.y) >= MIN_HEADING_SPEED {
                    prev += wrap_angle(v.y.atan2(v.x) - prev);
                }
                c.w = prev;
            }
            cps[0].w = current_yaw;
        }
    }
    let mut out = position.clone();
    out.set_control_points(&cps)?;
    Ok(out)
}

/// Yaw control points that start with the prescribed yaw rate, acceleration
/// and jerk and then hold `to`, leaving the positions of `traj` untouched.
///
/// The first four yaw control points are the only ones that affect the
/// derivatives at the start, so the second to fourth are solved from the
/// initial state and the rest are set to the target heading.
fn yaw_turn(traj: &BSplineTrajectory, state: &PlanState, to: f64) -> Result<Vec<Vector4<f64>>> {
    let n = traj.n_ctrl();
    let mut cps = traj.control_points().to_vec();
    for c in cps.iter_mut() {
        c.w = to;
    }
    cps[0].w = state.yaw;
    if n < 5 {
        return Ok(cps);
    }
    let t0 = traj.t_start();
    let init = &state.initial;
    let mut m = Matrix3::zeros();
    let mut rhs = Vector3::new(init.v0.w, init.a0.w, init.j0.w);
    for (row, order) in (1..=3).enumerate() {
        let jac = traj.d_eval_d_control(t0, order)?;
        for i in 1..=3 {
            m[(row, i - 1)] = jac[(3, 4 * i + 3)];
        }
        rhs[row] -= jac[(3, 3)] * state.yaw;
    }
    if let Some(x) = m.lu().solve(&rhs) {
        for i in 1..=3 {
            cps[i].w = x[i - 1];
        }
    }
    Ok(cps)
}

/// Plans one horizon: position stage, sample selection, then the yaw stage.
///
/// The yaw stage starts from the forward-facing yaw and from the best
/// `yaw_restarts` of a scan over constant target headings, since the
/// visibility cost is multimodal in yaw. The lowest final cost wins, with
/// ties going to the earlier start.
pub fn plan_horizon<R: Rng>(
    state: &PlanState,
    wps: &WaypointSet,
    pool: &[SceneSample],
    cam: &CameraModel,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Result<PlanResult> {
    let mut traj = initial_guess(state, wps, cfg)?;
    let times = sample_times(&traj, Some(wps));
    let selected = if pool.is_empty() { Vec::new() } else { select_samples(pool, cfg, rng)? };
    let samples: Vec<SceneSample> = selected.iter().map(|&i| pool[i]).collect();
    let ctx = CostContext {
        weights: &cfg.weights,
        waypoints: wps,
        limits: &cfg.limits,
        initial: &state.initial,
        camera: cam,
        samples: &samples,
        times: &times,
        entropy_weighting: cfg.ablation.ow,
    };

    let pos = optimize_position(&mut traj, &ctx, &cfg.lbfgs)?;

    let n = traj.n_ctrl();
    let forward = baseline_yaw(BaselineYaw::Forward, &traj, state.yaw)?;
    let mut starts = vec![forward.control_points().to_vec()];
    if !samples.is_empty() {
        let mut probe = traj.clone();
        let mut scored = Vec::with_capacity(YAW_SCAN_HEADINGS + 1);
        let mut candidates = vec![yaw_turn(&traj, state, state.yaw)?];
        for k in 0..YAW_SCAN_HEADINGS {
            let heading = -PI + 2.0 * PI * k as f64 / YAW_SCAN_HEADINGS as f64;
            candidates.push(yaw_turn(&traj, state, state.yaw + wrap_angle(heading - state.yaw))?);
        }
        for (k, cps) in candidates.iter().enumerate() {
            probe.set_control_points(cps)?;
            scored.push((total_yaw_cost(&probe, &ctx)?.value, k));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        starts.extend(scored.iter().take(cfg.yaw_restarts).map(|&(_, k)| candidates[k].clone()));
    }

    let mut best: Option<(BSplineTrajectory, LbfgsResult)> = None;
    for cps in starts {
        let mut cand = traj.clone();
        cand.set_control_points(&cps)?;
        let res = optimize_yaw(&mut cand, &ctx, 1..n, &cfg.lbfgs)?;
        if best.as_ref().is_none_or(|(_, b)| res.value < b.value) {
            best = Some((cand, res));
        }
    }
    let (traj, yaw) = best.expect("at least one yaw start");

    Ok(PlanResult {
        trajectory: traj,
        degraded: pos.degraded() || yaw.degraded(),
        position_cost_history: pos.history,
        yaw_cost_history: yaw.history,
        selected_samples: selected,
        position_iterations: pos.iterations,
        yaw_iterations: yaw.iterations,
    })
}

/// Plans positions only and assigns yaw from a baseline policy.
pub fn plan_baseline(
    state: &PlanState,
    wps: &WaypointSet,
    cam: &CameraModel,
    cfg: &PlannerConfig,
    policy: BaselineYaw,
) -> Result<PlanResult> {
    let mut traj = initial_guess(state, wps, cfg)?;
    let times = sample_times(&traj, Some(wps));
    let ctx = CostContext {
        weights: &cfg.weights,
        waypoints: wps,
        limits: &cfg.limits,
        initial: &state.initial,
        camera: cam,
        samples: &[],
        times: &times,
        entropy_weighting: cfg.ablation.ow,
    };
    let pos = optimize_position(&mut traj, &ctx, &cfg.lbfgs)?;
    let traj = baseline_yaw(policy, &traj, state.yaw)?;
    Ok(PlanResult {
        trajectory: traj,
        degraded: pos.degraded(),
        position_cost_history: pos.history,
        yaw_cost_history: Vec::new(),
        selected_samples: Vec::new(),
        position_iterations: pos.iterations,
        yaw_iterations: 0,
    })
}

/// Velocity, acceleration and jerk of the previous plan at `t`, used as the
/// prescribed start derivatives of the next one.
pub fn splice(prev: &PlanResult, t: f64) -> Result<InitialState> {
    let traj = &prev.trajectory;
    Ok(InitialState {
        v0: traj.eval_derivative(t, 1)?,
        a0: traj.eval_derivative(t, 2)?,
        j0: traj.eval_derivative(t, 3)?,
    })
}
