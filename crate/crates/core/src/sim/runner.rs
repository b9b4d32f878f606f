//! Closed-loop run: plan, fly, sense, localize, repeat.
//!
//! Time advances in IMU ticks. Every `t_exec` the planner starts a new
//! horizon from the latest smoothed estimate. The vehicle tracks each plan
//! perfectly, shifted by an offset that keeps the true pose and its first
//! two derivatives continuous at the splice, so estimation error shows up
//! as a drift of the flown path rather than as a jump the IMU never sensed. Frames are captured every SCR period
//! and their PnP poses reach the smoother after the configured latency.

use std::collections::VecDeque;

use nalgebra::{Rotation3, Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::{yaw_pose, CameraModel};
use crate::costs::{InitialState, WaypointSet};
use crate::error::Result;
use crate::localize::imu::{draw_bias, measure};
use crate::localize::{
    pnp_ransac, regress_scene, wrap_angle, Correspondence, EntropyField, FixedLagSmoother, NavState, PoseEstimate,
    SceneSample,
};
use crate::planner::{plan_baseline, plan_horizon, splice, BaselineYaw, PlanResult, PlanState};
use crate::sim::metrics::{rotation_error, translation_error_cm, ErrorStats, RunMetrics, StepRecord};
use crate::sim::scenario::{Scenario, YawPolicy};
use crate::spline::{BSplineTrajectory, Trajectory, TrajectorySample};

const STREAM_SURVEY: u64 = 1;
const STREAM_SCENE: u64 = 2;
const STREAM_IMU: u64 = 3;
const STREAM_PLANNER: u64 = 4;
const STREAM_RANSAC: u64 = 5;

/// Independent generator for one subsystem of a seeded run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Reference path: waypoints with arrival times proportional to arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub times: Vec<f64>,
    pub points: Vec<Vector3<f64>>,
}

impl Reference {
    pub fn new(waypoints: &[Vector3<f64>], duration: f64) -> Result<Self> {
        let set = WaypointSet::from_polyline(waypoints.to_vec(), 0.0, duration)?;
        let mut times = vec![0.0];
        times.extend_from_slice(set.arrival_times());
        times.push(duration);
        Ok(Self { times, points: waypoints.to_vec() })
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Linear interpolation, held at the ends.
    pub fn at(&self, t: f64) -> Vector3<f64> {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            return self.points[0];
        }
        if k >= self.times.len() {
            return *self.points.last().unwrap();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let u = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
        self.points[k - 1] + (self.points[k] - self.points[k - 1]) * u
    }

    /// Heading of the first path segment of non-zero horizontal length.
    pub fn initial_heading(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .find(|d| d.x.hypot(d.y) > 1e-9)
            .map(|d| d.y.atan2(d.x))
            .unwrap_or(0.0)
    }

    /// Waypoints of the horizon [t0, t0 + t_plan] starting at `start`: the
    /// reference waypoints due strictly inside the horizon and the reference
    /// position at its end.
    pub fn horizon(&self, start: Vector3<f64>, t0: f64, t_plan: f64) -> Result<WaypointSet> {
        let t1 = t0 + t_plan;
        let margin = 1e-6 * t_plan;
        let mut pts = vec![start];
        let mut times = Vec::new();
        for (t, p) in self.times.iter().zip(&self.points) {
            if *t > t0 + margin && *t < t1 - margin {
                times.push(*t);
                pts.push(*p);
            }
        }
        pts.push(self.at(t1));
        WaypointSet::new(pts, times)
    }
}

/// A plan as flown: the planned spline plus a constant offset and a blend
/// that starts at the velocity and acceleration mismatch at the splice and
/// decays to zero, with zero rate and acceleration, after `span` seconds.
#[derive(Debug, Clone)]
struct Segment {
    traj: BSplineTrajectory,
    offset: Vector4<f64>,
    t0: f64,
    span: f64,
    dv: Vector4<f64>,
    da: Vector4<f64>,
}

impl Segment {
    fn new(traj: BSplineTrajectory, prev: Option<&TrajectorySample>, start: Vector4<f64>, t0: f64, span: f64) -> Result<Self> {
        let s = traj.sample(t0)?;
        let planned = Vector4::new(s.position.x, s.position.y, s.position.z, s.yaw);
        let (dv, da) = match prev {
            Some(p) => (p.velocity - s.velocity, p.acceleration - s.acceleration),
            None => (-s.velocity, -s.acceleration),
        };
        Ok(Self { traj, offset: start - planned, t0, span, dv, da })
    }

    fn sample(&self, t: f64) -> Result<TrajectorySample> {
        let mut s = self.traj.sample(t)?;
        let big_t = self.span;
        let tau = (t - self.t0).clamp(0.0, big_t);
        let w = 1.0 - tau / big_t;
        let a = self.dv;
        let b = self.da + self.dv * (3.0 / big_t);
        let f = a + b * tau;
        let w2 = w * w;
        let w3 = w2 * w;
        let w4 = w3 * w;
        let q = a * (big_t / 4.0 * (1.0 - w4)) + b * (big_t * big_t * (0.05 - (w4 / 4.0 - w4 * w / 5.0)));
        let q1 = f * w3;
        let q2 = b * w3 - f * (3.0 * w2 / big_t);
        let q3 = b * (-6.0 * w2 / big_t) + f * (6.0 * w / (big_t * big_t));
        let q = q + self.offset;
        s.position += q.xyz();
        s.yaw += q.w;
        s.velocity += q1;
        s.acceleration += q2;
        s.jerk += q3;
        Ok(s)
    }
}

/// Scene map the planner draws from, built before take-off by regressing
/// frames at evenly spaced headings from the centroid of the path.
pub fn survey_map(sc: &Scenario, cam: &CameraModel, field: &EntropyField, seed: u64) -> Vec<SceneSample> {
    let mut rng = stream_rng(seed, STREAM_SURVEY);
    let n = sc.waypoints.len() as f64;
    let center = sc.waypoints.iter().fold(Vector3::zeros(), |a, w| a + w) / n;
    let mut map = Vec::new();
    for k in 0..sc.survey.frames {
        let yaw = 2.0 * std::f64::consts::PI * k as f64 / sc.survey.frames as f64;
        let pose = yaw_pose(&center, yaw);
        map.extend(regress_scene(cam, &pose, field, sc.survey.pixels_per_frame, &mut rng).into_iter().map(|l| l.sample));
    }
    map
}

fn rz(yaw: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), yaw)
}

fn record_failure(failure: &mut Option<String>, reason: String) {
    if failure.is_none() {
        *failure = Some(reason);
    }
}

/// Runs `sc` once with its own seed.
pub fn run_scenario(sc: &Scenario) -> Result<RunMetrics> {
    run_scenario_with_seed(sc, sc.seed)
}

/// Runs `sc` once with `seed`. Configuration problems are errors; smoother
/// and planner failures end the run early and mark it failed. Leaving the room
/// ends the run early without marking it failed.
pub fn run_scenario_with_seed(sc: &Scenario, seed: u64) -> Result<RunMetrics> {
    sc.validate()?;
    let cam = CameraModel::new(sc.camera.clone())?;
    let field = sc.field.build(&sc.room)?;
    let reference = Reference::new(&sc.waypoints, sc.duration)?;
    let map = match sc.yaw_policy {
        YawPolicy::PerceptionAware => survey_map(sc, &cam, &field, seed),
        _ => Vec::new(),
    };
    let mut scene_rng = stream_rng(seed, STREAM_SCENE);
    let mut imu_rng = stream_rng(seed, STREAM_IMU);
    let mut plan_rng = stream_rng(seed, STREAM_PLANNER);
    let mut ransac_rng = stream_rng(seed, STREAM_RANSAC);

    let loc = &sc.localize;
    let rate = loc.imu_rate;
    let exec_ticks = ((sc.planner.t_exec * rate).round() as usize).max(1);
    let scr_ticks = ((loc.scr_period * rate).round() as usize).max(1);
    let latency_ticks = (loc.smoother.latency * rate).round() as usize;
    let end_tick = (sc.duration * rate + 1e-9).floor() as usize;
    let bias = draw_bias(&loc.imu_noise, &mut imu_rng);

    let p0 = reference.at(0.0);
    let yaw0 = match sc.yaw_policy {
        YawPolicy::Constant(psi) => psi,
        _ => reference.initial_heading(),
    };
    let mut smoother =
        FixedLagSmoother::new(loc.smoother, NavState { t: 0.0, position: p0, velocity: Vector3::zeros(), yaw: yaw0 })?;

    let mut segment: Option<Segment> = None;
    let mut prev_plan: Option<PlanResult> = None;
    let mut pending: VecDeque<(usize, PoseEstimate)> = VecDeque::new();
    let mut failure: Option<String> = None;
    let (mut sm_t, mut sm_r) = (Vec::new(), Vec::new());
    let (mut pnp_t, mut pnp_r) = (Vec::new(), Vec::new());
    let mut series = Vec::new();
    let mut frames = 0;
    let mut pnp_failures = 0;
    let mut left_room = None;

    for i in 0..=end_tick {
        let t = i as f64 / rate;

        if i % exec_ticks == 0 && i < end_tick {
            let est = smoother.latest_state();
            let (position, yaw) = if i == 0 { (p0, yaw0) } else { (est.position, est.yaw) };
            let initial = match &prev_plan {
                Some(p) => splice(p, t)?,
                None => InitialState::default(),
            };
            let state = PlanState { t, position, yaw, initial };
            let plan = reference.horizon(position, t, sc.planner.t_plan).and_then(|wps| match sc.yaw_policy {
                YawPolicy::Constant(psi) => plan_baseline(&state, &wps, &cam, &sc.planner, BaselineYaw::Constant(psi)),
                YawPolicy::Forward => plan_baseline(&state, &wps, &cam, &sc.planner, BaselineYaw::Forward),
                YawPolicy::PerceptionAware => plan_horizon(&state, &wps, &map, &cam, &sc.planner, &mut plan_rng),
            });
            let plan = match plan {
                Ok(p) => p,
                Err(e) => {
                    record_failure(&mut failure, format!("planner: {e}"));
                    break;
                }
            };
            let prev = segment.as_ref().map(|seg| seg.sample(t)).transpose()?;
            let start = match &prev {
                Some(p) => Vector4::new(p.position.x, p.position.y, p.position.z, p.yaw),
                None => Vector4::new(p0.x, p0.y, p0.z, yaw0),
            };
            segment = Some(Segment::new(plan.trajectory.clone(), prev.as_ref(), start, t, sc.planner.t_exec)?);
            prev_plan = Some(plan);
        }

        let truth = segment.as_ref().expect("planned at tick 0").sample(t)?;
        if !sc.room.contains(&truth.position) {
            left_room = Some(t);
            break;
        }

        while pending.front().is_some_and(|(tick, _)| *tick <= i) {
            let (_, pose) = pending.pop_front().unwrap();
            if let Err(e) = smoother.add_pose(&pose) {
                record_failure(&mut failure, format!("smoother: {e}"));
                break;
            }
        }
        if failure.is_some() {
            break;
        }
        let out = match smoother.add_imu(measure(t, &truth, &bias, &loc.imu_noise, &mut imu_rng)) {
            Ok(o) => o,
            Err(e) => {
                record_failure(&mut failure, format!("smoother: {e}"));
                break;
            }
        };
        if !out.translation.iter().all(|v| v.is_finite()) {
            record_failure(&mut failure, "smoother: non-finite estimate".into());
            break;
        }
        let gt_rot = rz(truth.yaw);
        let e_t = translation_error_cm(&out.translation, &truth.position);
        let e_r = rotation_error(&out.rotation, &gt_rot);
        sm_t.push(e_t);
        sm_r.push(e_r);

        if i % scr_ticks == 0 {
            frames += 1;
            let body = yaw_pose(&truth.position, truth.yaw);
            let corr: Vec<Correspondence> = regress_scene(&cam, &body, &field, loc.n_pixels, &mut scene_rng)
                .iter()
                .map(|l| Correspondence { world: l.sample.world_point, pixel: l.sample.pixel, entropy: l.sample.entropy })
                .collect();
            let (mut pnp, mut pe_t, mut pe_r) = (None, None, None);
            match pnp_ransac(&corr, &cam, &loc.ransac, t, &mut ransac_rng) {
                Ok(p) => {
                    let et = translation_error_cm(&p.translation, &truth.position);
                    let er = rotation_error(&p.rotation, &gt_rot);
                    pnp_t.push(et);
                    pnp_r.push(er);
                    pnp = Some((p.translation, p.yaw()));
                    pe_t = Some(et);
                    pe_r = Some(er);
                    pending.push_back((i + latency_ticks, p));
                }
                Err(_) => pnp_failures += 1,
            }
            series.push(StepRecord {
                t,
                gt_position: truth.position,
                gt_yaw: wrap_angle(truth.yaw),
                pnp,
                smoothed_position: out.translation,
                smoothed_yaw: out.yaw(),
                pnp_error_t_cm: pe_t,
                pnp_error_r_deg: pe_r,
                smoothed_error_t_cm: e_t,
                smoothed_error_r_deg: e_r,
            });
        }
    }

    Ok(RunMetrics {
        scenario: sc.name.clone(),
        policy: sc.yaw_policy.name().to_string(),
        seed,
        pnp: ErrorStats::from_errors(&pnp_t, &pnp_r),
        smoothed: ErrorStats::from_errors(&sm_t, &sm_r),
        failure,
        frames,
        pnp_failures,
        left_room,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localize::ImuNoise;
    use crate::sim::scenario::{directional_scenario, FieldSpec, PathShape};

    #[test]
    fn reference_interpolates_and_builds_horizons() {
        let wps = vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 1.0), Vector3::new(1.0, 1.0, 1.0)];
        let r = Reference::new(&wps, 2.0).unwrap();
        assert_eq!(r.times, vec![0.0, 1.0, 2.0]);
        assert!((r.at(0.5) - Vector3::new(0.5, 0.0, 1.0)).norm() < 1e-12);
        assert_eq!(r.at(5.0), wps[2]);
        assert_eq!(r.initial_heading(), 0.0);
        let h = r.horizon(wps[0], 0.5, 0.8).unwrap();
        assert_eq!(h.arrival_times(), &[1.0]);
        assert!((h.last() - Vector3::new(1.0, 0.3, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn segment_blend_is_smooth_at_the_splice_and_decays() {
        let cps = (0..8).map(|k| Vector4::new(k as f64, (0.3 * k as f64).sin(), 1.0, 0.1 * k as f64)).collect();
        let traj = BSplineTrajectory::build_clamped(cps, 0.0, 0.4).unwrap();
        let prev = TrajectorySample {
            t: 1.0,
            position: Vector3::new(0.5, -0.2, 1.1),
            yaw: 0.3,
            velocity: Vector4::new(0.4, -0.1, 0.2, 0.05),
            acceleration: Vector4::new(-1.0, 0.5, 0.0, 0.2),
            jerk: Vector4::zeros(),
        };
        let start = Vector4::new(0.5, -0.2, 1.1, 0.3);
        let seg = Segment::new(traj.clone(), Some(&prev), start, 1.0, 0.5).unwrap();
        let s = seg.sample(1.0).unwrap();
        assert!((s.position - prev.position).norm() < 1e-12);
        assert!((s.yaw - prev.yaw).abs() < 1e-12);
        assert!((s.velocity - prev.velocity).norm() < 1e-12);
        assert!((s.acceleration - prev.acceleration).norm() < 1e-12);

        let h = 1e-5;
        for t in [1.1, 1.3, 1.45] {
            let (a, b, c) = (seg.sample(t - h).unwrap(), seg.sample(t).unwrap(), seg.sample(t + h).unwrap());
            let dp = (c.position - a.position) / (2.0 * h);
            assert!((dp - b.velocity.xyz()).norm() < 1e-6);
            let dv = (c.velocity - a.velocity) / (2.0 * h);
            assert!((dv - b.acceleration).norm() < 1e-5);
            let da = (c.acceleration - a.acceleration) / (2.0 * h);
            assert!((da - b.jerk).norm() < 1e-3);
        }

        let late = seg.sample(1.6).unwrap();
        let plain = traj.sample(1.6).unwrap();
        assert!((late.velocity - plain.velocity).norm() < 1e-12);
        assert!((late.acceleration - plain.acceleration).norm() < 1e-12);
        let shift = late.position - plain.position;
        let shift2 = seg.sample(1.9).unwrap().position - traj.sample(1.9).unwrap().position;
        assert!((shift - shift2).norm() < 1e-12);
    }

    fn quiet(policy: YawPolicy) -> Scenario {
        let mut sc = directional_scenario(policy);
        sc.duration = 3.0;
        sc.waypoints = PathShape::Circle { radius: 2.0 }.waypoints(Vector3::new(0.0, 0.0, 1.5), 24)[..7].to_vec();
        sc.field.spec = FieldSpec::Uniform { sigma: 1e-9 };
        sc.field.jitter = 0.0;
        sc.localize.imu_noise = ImuNoise::default();
        sc
    }

    #[test]
    fn noiseless_loop_tracks_truth() {
        for policy in [YawPolicy::Constant(0.0), YawPolicy::Forward, YawPolicy::PerceptionAware] {
            let m = run_scenario(&quiet(policy)).unwrap();
            assert!(!m.failed(), "{:?}", m.failure);
            assert!(m.smoothed.unwrap().rmse_t_cm < 0.1, "{policy:?} {:?}", m.smoothed);
            assert_eq!(m.pnp_failures, 0);
        }
    }

    #[test]
    fn noiseless_lap_stays_on_the_path() {
        let mut sc = directional_scenario(YawPolicy::Forward);
        sc.field.spec = FieldSpec::Uniform { sigma: 1e-9 };
        sc.field.jitter = 0.0;
        sc.localize.imu_noise = ImuNoise::default();
        let m = run_scenario(&sc).unwrap();
        assert!(!m.failed(), "{:?}", m.failure);
        let worst = m.series.iter().map(|r| (r.gt_position.xy().norm() - 2.0).abs()).fold(0.0, f64::max);
        assert!(worst < 0.1, "{worst}");
    }

    #[test]
    fn runs_are_deterministic() {
        let mut sc = directional_scenario(YawPolicy::PerceptionAware);
        sc.duration = 2.0;
        sc.waypoints = sc.waypoints[..5].to_vec();
        let a = run_scenario_with_seed(&sc, 7).unwrap();
        let b = run_scenario_with_seed(&sc, 7).unwrap();
        assert_eq!(a, b);
    }
}
