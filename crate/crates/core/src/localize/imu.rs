//! Inertial measurements for a yaw-only attitude and their integration.
//!
//! The body z axis stays aligned with world z, so the attitude is the single
//! angle ψ and the gyro only senses ψ̇ about body z.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::spline::{Trajectory, TrajectorySample};

pub const GRAVITY: f64 = 9.81;

pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Specific force in the body frame, gravity included.
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuNoise {
    pub accel_sigma: f64,
    pub gyro_sigma: f64,
    /// Standard deviation of the constant per-run biases.
    pub accel_bias_sigma: f64,
    pub gyro_bias_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuBias {
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

fn rot_z(yaw: f64, v: &Vector3<f64>) -> Vector3<f64> {
    let (s, c) = yaw.sin_cos();
    Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

fn rot_z_inv(yaw: f64, v: &Vector3<f64>) -> Vector3<f64> {
    rot_z(-yaw, v)
}

/// Samples accelerometer and gyro readings along `traj` at `rate` Hz from
/// its start to its end. Returns the samples and the bias that was drawn.
pub fn imu_simulate<T: Trajectory + ?Sized, R: Rng>(
    traj: &T,
    rate: f64,
    noise: &ImuNoise,
    rng: &mut R,
) -> Result<(Vec<ImuSample>, ImuBias)> {
    if !(rate > 0.0) {
        return Err(Error::invalid("IMU rate must be positive"));
    }
    let (t0, t1) = traj.domain();
    let n = ((t1 - t0) * rate + 1e-9).floor() as usize;
    let bias = draw_bias(noise, rng);
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = t0 + k as f64 / rate;
        let s = traj.sample(t.min(t1))?;
        out.push(measure(t, &s, &bias, noise, rng));
    }
    Ok((out, bias))
}

/// Draws the per-run biases used by [`imu_simulate`].
pub fn draw_bias<R: Rng>(noise: &ImuNoise, rng: &mut R) -> ImuBias {
    ImuBias { accel: gaussian3(noise.accel_bias_sigma, rng), gyro: gaussian3(noise.gyro_bias_sigma, rng) }
}

/// One noisy reading stamped `t` of the motion described by `s`.
pub fn measure<R: Rng>(t: f64, s: &TrajectorySample, bias: &ImuBias, noise: &ImuNoise, rng: &mut R) -> ImuSample {
    let accel = rot_z_inv(s.yaw, &(s.acceleration.xyz() - gravity())) + bias.accel + gaussian3(noise.accel_sigma, rng);
    let gyro = Vector3::new(0.0, 0.0, s.velocity[3]) + bias.gyro + gaussian3(noise.gyro_sigma, rng);
    ImuSample { t, accel, gyro }
}

/// Noise-free reading at a single instant.
pub fn ideal_sample<T: Trajectory + ?Sized>(traj: &T, t: f64) -> Result<ImuSample> {
    let s = traj.sample(t)?;
    Ok(ImuSample {
        t,
        accel: rot_z_inv(s.yaw, &(s.acceleration.xyz() - gravity())),
        gyro: Vector3::new(0.0, 0.0, s.velocity[3]),
    })
}

fn gaussian3<R: Rng>(sigma: f64, rng: &mut R) -> Vector3<f64> {
    if sigma > 0.0 {
        let d = Normal::new(0.0, sigma).expect("positive sigma");
        Vector3::from_fn(|_, _| d.sample(rng))
    } else {
        Vector3::zeros()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub yaw: f64,
}

/// Relative motion accumulated over a window of IMU samples, expressed in
/// the body frame at the window start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preintegrated {
    pub dt: f64,
    pub dp: Vector3<f64>,
    pub dv: Vector3<f64>,
    pub dyaw: f64,
}

impl Preintegrated {
    pub fn identity() -> Self {
        Self { dt: 0.0, dp: Vector3::zeros(), dv: Vector3::zeros(), dyaw: 0.0 }
    }

    /// Predicted state at the window end from `start`.
    pub fn predict(&self, start: &NavState) -> NavState {
        let g = gravity();
        NavState {
            t: start.t + self.dt,
            position: start.position + start.velocity * self.dt + g * (0.5 * self.dt * self.dt) + rot_z(start.yaw, &self.dp),
            velocity: start.velocity + g * self.dt + rot_z(start.yaw, &self.dv),
            yaw: start.yaw + self.dyaw,
        }
    }

    /// ∂(position, velocity) / ∂ψ_start of `predict`.
    pub fn d_predict_d_yaw(&self, yaw: f64) -> (Vector3<f64>, Vector3<f64>) {
        let (s, c) = yaw.sin_cos();
        let d = |v: &Vector3<f64>| Vector3::new(-s * v.x - c * v.y, c * v.x - s * v.y, 0.0);
        (d(&self.dp), d(&self.dv))
    }
}

/// Integrates bias-corrected samples between `t_from` and `t_to`.
///
/// Yaw uses the trapezoid rule on the gyro rate; velocity uses the trapezoid
/// rule on acceleration and position the matching exact rule for linearly
/// varying acceleration. Samples outside the interval are ignored; the
/// interval ends are covered by holding the nearest sample.
pub fn preintegrate(samples: &[ImuSample], bias: &ImuBias, t_from: f64, t_to: f64) -> Result<Preintegrated> {
    if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::invalid("IMU timestamps must be strictly increasing"));
    }
    if t_to < t_from {
        return Err(Error::invalid("preintegration interval is reversed"));
    }
    let mut acc = Preintegrated::identity();
    if t_to == t_from || samples.is_empty() {
        return Ok(acc);
    }
    // Knots: interval ends plus samples strictly inside.
    let mut knots: Vec<(f64, Vector3<f64>, f64)> = Vec::new();
    let at = |t: f64| -> (Vector3<f64>, f64) {
        // Linear interpolation between bracketing samples, held at the ends.
        let k = samples.partition_point(|s| s.t <= t);
        let (a, b) = if k == 0 {
            (&samples[0], &samples[0])
        } else if k == samples.len() {
            (&samples[k - 1], &samples[k - 1])
        } else {
            (&samples[k - 1], &samples[k])
        };
        let u = if b.t > a.t { (t - a.t) / (b.t - a.t) } else { 0.0 };
        let f = a.accel + (b.accel - a.accel) * u - bias.accel;
        let w = a.gyro.z + (b.gyro.z - a.gyro.z) * u - bias.gyro.z;
        (f, w)
    };
    let (f0, w0) = at(t_from);
    knots.push((t_from, f0, w0));
    for s in samples.iter().filter(|s| s.t > t_from && s.t < t_to) {
        knots.push((s.t, s.accel - bias.accel, s.gyro.z - bias.gyro.z));
    }
    let (f1, w1) = at(t_to);
    knots.push((t_to, f1, w1));

    let mut yaw = 0.0;
    for k in knots.windows(2) {
        let (ta, fa, wa) = k[0];
        let (tb, fb, wb) = k[1];
        let h = tb - ta;
        let yaw_b = yaw + 0.5 * (wa + wb) * h;
        let aa = rot_z(yaw, &fa);
        let ab = rot_z(yaw_b, &fb);
        acc.dp += acc.dv * h + (aa * 2.0 + ab) * (h * h / 6.0);
        acc.dv += (aa + ab) * (0.5 * h);
        yaw = yaw_b;
    }
    acc.dyaw = yaw;
    acc.dt = t_to - t_from;
    Ok(acc)
}

/// Propagates `state` through the samples in `window` up to the last sample
/// time. An empty window leaves the state unchanged.
pub fn propagate(state: &NavState, window: &[ImuSample], bias: &ImuBias) -> Result<NavState> {
    if window.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::invalid("IMU timestamps must be strictly increasing"));
    }
    let Some(last) = window.last() else {
        return Ok(*state);
    };
    if last.t < state.t {
        return Err(Error::invalid("IMU window ends before the state time"));
    }
    Ok(preintegrate(window, bias, state.t, last.t)?.predict(state))
}

/// Horizontal part of a vector.
pub fn horizontal(v: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(v.x, v.y)
}
