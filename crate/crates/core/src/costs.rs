//! Trajectory cost terms and their gradients with respect to control points.
//!
//! Every term returns its value together with one gradient 4-vector per
//! control point. A [`Channels`] mask selects which coordinates a term acts
//! on, so the same code serves the position (x, y, z) and yaw sub-problems.

use nalgebra::{Vector3, Vector4};
use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::localize::SceneSample;
use crate::spline::BSplineTrajectory;

/// Number of sample times used when no interior waypoint times exist.
pub const FALLBACK_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub lambda_wp: f64,
    pub lambda_fov: f64,
    pub lambda_eq: f64,
    pub lambda_ie: f64,
    pub lambda_s: f64,
    /// Sharpness of the entropy weight exp(−a·H).
    pub a: f64,
    /// Number of scene coordinates sampled per plan.
    pub n_f: usize,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { lambda_wp: 1e4, lambda_fov: 1e1, lambda_eq: 1e3, lambda_ie: 1.0, lambda_s: 5.0, a: 0.5, n_f: 200 }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_wp", self.lambda_wp),
            ("lambda_fov", self.lambda_fov),
            ("lambda_eq", self.lambda_eq),
            ("lambda_ie", self.lambda_ie),
            ("lambda_s", self.lambda_s),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if !(self.a > 0.0) || !self.a.is_finite() {
            return Err(Error::invalid(format!("a must be positive, got {}", self.a)));
        }
        Ok(())
    }
}

/// Waypoints w_0..w_{r−1} with arrival times for the interior ones.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointSet {
    waypoints: Vec<Vector3<f64>>,
    arrival_times: Vec<f64>,
}

impl WaypointSet {
    pub fn new(waypoints: Vec<Vector3<f64>>, arrival_times: Vec<f64>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::invalid("a waypoint set needs at least a start and an end"));
        }
        if arrival_times.len() != waypoints.len() - 2 {
            return Err(Error::invalid(format!(
                "{} waypoints need {} interior arrival times, got {}",
                waypoints.len(),
                waypoints.len() - 2,
                arrival_times.len()
            )));
        }
        if arrival_times.windows(2).any(|w| !(w[1] > w[0])) || arrival_times.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("arrival times must be finite and strictly increasing"));
        }
        Ok(Self { waypoints, arrival_times })
    }

    /// Arrival times proportional to cumulative arc length along the
    /// polyline, with the last waypoint reached at `t_start + duration`.
    pub fn from_polyline(waypoints: Vec<Vector3<f64>>, t_start: f64, duration: f64) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::invalid("a waypoint set needs at least a start and an end"));
        }
        if !(duration > 0.0) {
            return Err(Error::invalid("horizon duration must be positive"));
        }
        let mut cum = vec![0.0];
        for w in waypoints.windows(2) {
            cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
        }
        let total = *cum.last().unwrap();
        let r = waypoints.len();
        let steps = cum.windows(2).map(|c| c[1] - c[0]);
        let times: Vec<f64> = if total > 1e-9 && steps.clone().all(|d| d > 1e-9 * total) {
            cum[1..r - 1].iter().map(|c| t_start + duration * c / total).collect()
        } else {
            (1..r - 1).map(|i| t_start + duration * i as f64 / (r - 1) as f64).collect()
        };
        Self::new(waypoints, times)
    }

    pub fn waypoints(&self) -> &[Vector3<f64>] {
        &self.waypoints
    }
    pub fn arrival_times(&self) -> &[f64] {
        &self.arrival_times
    }
    pub fn interior(&self) -> impl Iterator<Item = (f64, &Vector3<f64>)> {
        self.arrival_times.iter().copied().zip(&self.waypoints[1..self.waypoints.len() - 1])
    }
    pub fn last(&self) -> &Vector3<f64> {
        self.waypoints.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicLimits {
    pub v_max: Vector4<f64>,
    pub a_max: Vector4<f64>,
}

impl Default for KinematicLimits {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self { v_max: Vector4::new(2.0, 2.0, 2.0, 2.0 * PI), a_max: Vector4::new(5.0, 5.0, 5.0, 4.0 * PI) }
    }
}

impl KinematicLimits {
    pub fn validate(&self) -> Result<()> {
        for (name, lim) in [("v_max", &self.v_max), ("a_max", &self.a_max)] {
            if lim.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive in every channel, got {:?}", lim.as_slice())));
            }
        }
        Ok(())
    }
}

/// Prescribed derivatives at the start of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InitialState {
    pub v0: Vector4<f64>,
    pub a0: Vector4<f64>,
    pub j0: Vector4<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channels {
    Position,
    Yaw,
    All,
}

impl Channels {
    fn range(self) -> std::ops::Range<usize> {
        match self {
            Channels::Position => 0..3,
            Channels::Yaw => 3..4,
            Channels::All => 0..4,
        }
    }
    fn mask(self) -> Vector4<f64> {
        let mut m = Vector4::zeros();
        for c in self.range() {
            m[c] = 1.0;
        }
        m
    }
}

/// A cost value with one gradient entry per control point.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTerm {
    pub value: f64,
    pub grad: Vec<Vector4<f64>>,
}

impl CostTerm {
    pub fn zero(n: usize) -> Self {
        Self { value: 0.0, grad: vec![Vector4::zeros(); n] }
    }

    fn add_scaled(&mut self, other: &CostTerm, w: f64) {
        self.value += w * other.value;
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            *a += b * w;
        }
    }
}

/// Sample times for the visibility and limit terms: the interior arrival
/// times followed by the horizon end, or a uniform grid when the set has no
/// interior waypoints.
pub fn sample_times(traj: &BSplineTrajectory, wps: Option<&WaypointSet>) -> Vec<f64> {
    let (t0, t1) = (traj.t_start(), traj.t_end());
    match wps {
        Some(w) if !w.arrival_times().is_empty() => {
            let mut times: Vec<f64> = w.arrival_times().iter().copied().filter(|t| *t > t0 && *t < t1).collect();
            times.push(t1);
            times
        }
        _ => (1..=FALLBACK_SAMPLES).map(|k| t0 + (t1 - t0) * k as f64 / FALLBACK_SAMPLES as f64).collect(),
    }
}

fn check_time(traj: &BSplineTrajectory, t: f64) -> Result<()> {
    if t < traj.t_start() || t > traj.t_end() {
        return Err(Error::invalid(format!(
            "sample time {t} outside trajectory domain [{}, {}]",
            traj.t_start(),
            traj.t_end()
        )));
    }
    Ok(())
}

pub fn waypoint_cost(traj: &BSplineTrajectory, wps: &WaypointSet) -> Result<CostTerm> {
    let mut out = CostTerm::zero(traj.n_ctrl());
    for (t, w) in wps.interior() {
        check_time(traj, t)?;
        let q = traj.eval(t)?;
        let err = q.xyz() - w;
        out.value += err.norm_squared();
        let weights = traj.control_weights(t, 0)?;
        let g = Vector4::new(2.0 * err.x, 2.0 * err.y, 2.0 * err.z, 0.0);
        for (gi, wi) in out.grad.iter_mut().zip(&weights) {
            *gi += g * *wi;
        }
    }
    Ok(out)
}

/// −Σ_i Σ_j ω_j F(c_i, v_j) with ω_j = exp(−a H_j), or ω_j = 1 without entropy
/// weighting.
pub fn fov_cost(
    traj: &BSplineTrajectory,
    cam: &CameraModel,
    samples: &[SceneSample],
    weights: &CostWeights,
    times: &[f64],
    entropy_weighting: bool,
    channels: Channels,
) -> Result<CostTerm> {
    let n = traj.n_ctrl();
    if samples.is_empty() {
        return Ok(CostTerm::zero(n));
    }
    for &t in times {
        check_time(traj, t)?;
    }
    let omega: Vec<f64> =
        samples.iter().map(|s| if entropy_weighting { (-weights.a * s.entropy).exp() } else { 1.0 }).collect();
    let mask = channels.mask();

    // Per-time contributions are independent; collect in order and reduce
    // sequentially so the sum is reproducible.
    let parts: Vec<Result<(f64, Vector4<f64>, Vec<f64>)>> = times
        .par_iter()
        .map(|&t| {
            let q = traj.eval(t)?;
            let pos = q.xyz();
            let mut value = 0.0;
            let mut dq = Vector4::zeros();
            for (s, w) in samples.iter().zip(&omega) {
                let g = cam.score_and_gradient(&pos, q[3], &s.world_point);
                value -= w * g.score;
                dq -= Vector4::new(g.d_position.x, g.d_position.y, g.d_position.z, g.d_yaw) * *w;
            }
            Ok((value, dq.component_mul(&mask), traj.control_weights(t, 0)?))
        })
        .collect();

    let mut out = CostTerm::zero(n);
    for part in parts {
        let (value, dq, cw) = part?;
        out.value += value;
        for (gi, wi) in out.grad.iter_mut().zip(&cw) {
            *gi += dq * *wi;
        }
    }
    Ok(out)
}

pub fn equality_cost(traj: &BSplineTrajectory, init: &InitialState, channels: Channels) -> Result<CostTerm> {
    let t0 = traj.t_start();
    let mask = channels.mask();
    let mut out = CostTerm::zero(traj.n_ctrl());
    for (order, target) in [(1, init.v0), (2, init.a0), (3, init.j0)] {
        let err = (traj.eval_derivative(t0, order)? - target).component_mul(&mask);
        out.value += err.norm_squared();
        let w = traj.control_weights(t0, order)?;
        for (gi, wi) in out.grad.iter_mut().zip(&w) {
            *gi += err * (2.0 * wi);
        }
    }
    Ok(out)
}

/// Penalty max(0, x² − x_max²)², zero inside the limit and C¹ at it.
fn limit_penalty(x: f64, x_max: f64) -> (f64, f64) {
    let e = x * x - x_max * x_max;
    if e > 0.0 {
        (e * e, 4.0 * e * x)
    } else {
        (0.0, 0.0)
    }
}

pub fn inequality_cost(
    traj: &BSplineTrajectory,
    limits: &KinematicLimits,
    times: &[f64],
    channels: Channels,
) -> Result<CostTerm> {
    let mut out = CostTerm::zero(traj.n_ctrl());
    for &t in times {
        check_time(traj, t)?;
        for (order, lim) in [(1, &limits.v_max), (2, &limits.a_max)] {
            let d = traj.eval_derivative(t, order)?;
            let mut g = Vector4::zeros();
            for c in channels.range() {
                let (v, dv) = limit_penalty(d[c], lim[c]);
                out.value += v;
                g[c] = dv;
            }
            if g == Vector4::zeros() {
                continue;
            }
            let w = traj.control_weights(t, order)?;
            for (gi, wi) in out.grad.iter_mut().zip(&w) {
                *gi += g * *wi;
            }
        }
    }
    Ok(out)
}

/// Σ ‖q_{i+1} − 2q_i + q_{i−1}‖² over the control polygon.
pub fn smoothness_cost(control_points: &[Vector4<f64>], channels: Channels) -> Result<CostTerm> {
    let n = control_points.len();
    if n < 3 {
        return Err(Error::invalid(format!("smoothness needs at least 3 control points, got {n}")));
    }
    let mask = channels.mask();
    let mut out = CostTerm::zero(n);
    for i in 1..n - 1 {
        let d = (control_points[i + 1] - control_points[i] * 2.0 + control_points[i - 1]).component_mul(&mask);
        out.value += d.norm_squared();
        out.grad[i - 1] += d * 2.0;
        out.grad[i] -= d * 4.0;
        out.grad[i + 1] += d * 2.0;
    }
    Ok(out)
}

/// Everything the two sub-objectives need besides the trajectory.
#[derive(Debug, Clone)]
pub struct CostContext<'a> {
    pub weights: &'a CostWeights,
    pub waypoints: &'a WaypointSet,
    pub limits: &'a KinematicLimits,
    pub initial: &'a InitialState,
    pub camera: &'a CameraModel,
    pub samples: &'a [SceneSample],
    pub times: &'a [f64],
    pub entropy_weighting: bool,
}

/// λ_wp·C_wp + λ_eq·C_eq + λ_ie·C_ie + λ_s·C_s on x, y, z.
pub fn total_position_cost(traj: &BSplineTrajectory, ctx: &CostContext) -> Result<CostTerm> {
    let w = ctx.weights;
    let ch = Channels::Position;
    let mut out = CostTerm::zero(traj.n_ctrl());
    if w.lambda_wp != 0.0 {
        out.add_scaled(&waypoint_cost(traj, ctx.waypoints)?, w.lambda_wp);
    }
    if w.lambda_eq != 0.0 {
        out.add_scaled(&equality_cost(traj, ctx.initial, ch)?, w.lambda_eq);
    }
    if w.lambda_ie != 0.0 {
        out.add_scaled(&inequality_cost(traj, ctx.limits, ctx.times, ch)?, w.lambda_ie);
    }
    if w.lambda_s != 0.0 {
        out.add_scaled(&smoothness_cost(traj.control_points(), ch)?, w.lambda_s);
    }
    Ok(out)
}

/// λ_fov·C_fov + λ_eq·C_eq + λ_ie·C_ie + λ_s·C_s on yaw.
pub fn total_yaw_cost(traj: &BSplineTrajectory, ctx: &CostContext) -> Result<CostTerm> {
    let w = ctx.weights;
    let ch = Channels::Yaw;
    let mut out = CostTerm::zero(traj.n_ctrl());
    if w.lambda_fov != 0.0 {
        let fov = fov_cost(traj, ctx.camera, ctx.samples, w, ctx.times, ctx.entropy_weighting, ch)?;
        out.add_scaled(&fov, w.lambda_fov);
    }
    if w.lambda_eq != 0.0 {
        out.add_scaled(&equality_cost(traj, ctx.initial, ch)?, w.lambda_eq);
    }
    if w.lambda_ie != 0.0 {
        out.add_scaled(&inequality_cost(traj, ctx.limits, ctx.times, ch)?, w.lambda_ie);
    }
    if w.lambda_s != 0.0 {
        out.add_scaled(&smoothness_cost(traj.control_points(), ch)?, w.lambda_s);
    }
    Ok(out)
}

/// Central-difference gradient of `cost` over every control-point scalar.
/// Slow; meant for checking the analytic gradients.
pub fn numeric_gradient<F>(traj: &BSplineTrajectory, h: f64, mut cost: F) -> Result<Vec<Vector4<f64>>>
where
    F: FnMut(&BSplineTrajectory) -> Result<f64>,
{
    let base = traj.control_points().to_vec();
    let mut probe = traj.clone();
    let mut grad = vec![Vector4::zeros(); base.len()];
    for i in 0..base.len() {
        for c in 0..4 {
            let step = h * base[i][c].abs().max(1.0);
            let mut cps = base.clone();
            cps[i][c] += step;
            probe.set_control_points(&cps)?;
            let fp = cost(&probe)?;
            cps[i][c] -= 2.0 * step;
            probe.set_control_points(&cps)?;
            let fm = cost(&probe)?;
            grad[i][c] = (fp - fm) / (2.0 * step);
        }
    }
    Ok(grad)
}
