//! Scenario description: room, noise field, reference path, yaw policy and
//! the planner and localization settings of a closed-loop run.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::camera::CameraParams;
use crate::error::{Error, Result};
use crate::localize::{EntropyField, FieldCell, ImuNoise, RansacConfig, RoomBox, SmootherConfig};
use crate::planner::{Ablation, PlannerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wall {
    PosX,
    NegX,
    PosY,
    NegY,
}

impl Wall {
    pub fn as_str(self) -> &'static str {
        match self {
            Wall::PosX => "+x",
            Wall::NegX => "-x",
            Wall::PosY => "+y",
            Wall::NegY => "-y",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "+x" => Ok(Wall::PosX),
            "-x" => Ok(Wall::NegX),
            "+y" => Ok(Wall::PosY),
            "-y" => Ok(Wall::NegY),
            _ => Err(Error::invalid(format!("unknown wall {s:?}; expected +x, -x, +y or -y"))),
        }
    }

    /// Heading of a camera looking straight at this wall.
    pub fn facing_yaw(self) -> f64 {
        match self {
            Wall::PosX => 0.0,
            Wall::NegX => PI,
            Wall::PosY => 0.5 * PI,
            Wall::NegY => -0.5 * PI,
        }
    }

    /// Distance from `p` to the wall plane.
    fn distance(self, room: &RoomBox, p: &Vector3<f64>) -> f64 {
        match self {
            Wall::PosX => room.max.x - p.x,
            Wall::NegX => p.x - room.min.x,
            Wall::PosY => room.max.y - p.y,
            Wall::NegY => p.y - room.min.y,
        }
    }
}

/// Spatial layout of the regression noise scale σ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldSpec {
    Uniform { sigma: f64 },
    /// σ_low within `depth` of one wall, σ_high everywhere else.
    LowNoiseWall { wall: Wall, sigma_low: f64, sigma_high: f64, depth: f64 },
    /// σ varies linearly along `axis` (0, 1 or 2) across the room.
    Gradient { axis: usize, sigma_min: f64, sigma_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldConfig {
    pub spec: FieldSpec,
    pub lambda: f64,
    pub alpha: f64,
    /// Log-normal spread of the reported uncertainty around the true one.
    pub jitter: f64,
    /// Edge length of a field cell in meters.
    pub cell_size: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            spec: FieldSpec::LowNoiseWall { wall: Wall::PosX, sigma_low: 0.02, sigma_high: 0.25, depth: 0.5 },
            lambda: 1.0,
            alpha: 2.0,
            jitter: 0.3,
            cell_size: 0.5,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        FieldCell::new(1.0, self.lambda, self.alpha)?;
        if !(self.jitter >= 0.0) || !self.jitter.is_finite() {
            return Err(Error::invalid(format!("jitter must be non-negative, got {}", self.jitter)));
        }
        if !(self.cell_size > 0.0) {
            return Err(Error::invalid(format!("cell_size must be positive, got {}", self.cell_size)));
        }
        let ok = match self.spec {
            FieldSpec::Uniform { sigma } => sigma > 0.0,
            FieldSpec::LowNoiseWall { sigma_low, sigma_high, depth, .. } => {
                sigma_low > 0.0 && sigma_high > 0.0 && depth > 0.0
            }
            FieldSpec::Gradient { axis, sigma_min, sigma_max } => axis < 3 && sigma_min > 0.0 && sigma_max > 0.0,
        };
        if !ok {
            return Err(Error::invalid("field sigmas and depth must be positive and the gradient axis below 3"));
        }
        Ok(())
    }

    pub fn build(&self, room: &RoomBox) -> Result<EntropyField> {
        self.validate()?;
        let size = room.max - room.min;
        let dims = [0, 1, 2].map(|k| ((size[k] / self.cell_size).round() as usize).max(1));
        let (lambda, alpha) = (self.lambda, self.alpha);
        let spec = self.spec;
        let field = EntropyField::from_fn(*room, dims, |c| {
            let sigma = match spec {
                FieldSpec::Uniform { sigma } => sigma,
                FieldSpec::LowNoiseWall { wall, sigma_low, sigma_high, depth } => {
                    if wall.distance(room, &c) < depth {
                        sigma_low
                    } else {
                        sigma_high
                    }
                }
                FieldSpec::Gradient { axis, sigma_min, sigma_max } => {
                    let u = (c[axis] - room.min[axis]) / size[axis];
                    sigma_min + (sigma_max - sigma_min) * u
                }
            };
            FieldCell { sigma, lambda, alpha }
        })?;
        Ok(field.with_jitter(self.jitter))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YawPolicy {
    Constant(f64),
    Forward,
    PerceptionAware,
}

impl YawPolicy {
    pub fn name(self) -> &'static str {
        match self {
            YawPolicy::Constant(_) => "constant",
            YawPolicy::Forward => "forward",
            YawPolicy::PerceptionAware => "perception_aware",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizeConfig {
    /// Time between camera frames.
    pub scr_period: f64,
    pub imu_rate: f64,
    /// Pixels regressed per frame.
    pub n_pixels: usize,
    pub ransac: RansacConfig,
    pub smoother: SmootherConfig,
    pub imu_noise: ImuNoise,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            scr_period: 0.2,
            imu_rate: 200.0,
            n_pixels: 300,
            ransac: RansacConfig::default(),
            smoother: SmootherConfig::default(),
            imu_noise: ImuNoise { accel_sigma: 0.05, gyro_sigma: 0.005, accel_bias_sigma: 0.0, gyro_bias_sigma: 0.0 },
        }
    }
}

impl LocalizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.imu_rate > 0.0) || !self.imu_rate.is_finite() {
            return Err(Error::invalid(format!("imu_rate_hz must be positive, got {}", self.imu_rate)));
        }
        for (name, v) in [("scr_period_s", self.scr_period), ("latency_s", self.smoother.latency)] {
            let ticks = v * self.imu_rate;
            if !(v >= 0.0) || (ticks - ticks.round()).abs() > 1e-6 {
                return Err(Error::invalid(format!("{name} must be a non-negative multiple of the IMU period, got {v}")));
            }
        }
        if !(self.scr_period > 0.0) {
            return Err(Error::invalid("scr_period_s must be positive"));
        }
        if self.n_pixels < 6 {
            return Err(Error::invalid("n_pixels must be at least 6"));
        }
        let n = &self.imu_noise;
        if [n.accel_sigma, n.gyro_sigma, n.accel_bias_sigma, n.gyro_bias_sigma].iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("IMU noise sigmas must be non-negative"));
        }
        self.ransac.validate()?;
        self.smoother.validate()
    }
}

/// Pre-flight pass that builds the scene map the planner draws from: frames
/// at evenly spaced headings from the center of the reference path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurveyConfig {
    pub frames: usize,
    pub pixels_per_frame: usize,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        Self { frames: 16, pixels_per_frame: 250 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub room: RoomBox,
    pub field: FieldConfig,
    /// Reference waypoints, visited with arrival times proportional to arc
    /// length over `duration`.
    pub waypoints: Vec<Vector3<f64>>,
    pub duration: f64,
    pub yaw_policy: YawPolicy,
    pub camera: CameraParams,
    pub planner: PlannerConfig,
    pub localize: LocalizeConfig,
    pub survey: SurveyConfig,
    pub seed: u64,
    pub repeats: usize,
}

/// Control points per horizon in closed-loop runs. With six, matching the
/// initial velocity, acceleration and jerk fixes three of the four free
/// control points, the last free one cannot absorb splice errors and
/// repeated replanning diverges from the path.
pub const CLOSED_LOOP_N_CTRL: usize = 8;

impl Scenario {
    /// A scenario with default settings around the given path.
    pub fn new(name: &str, room: RoomBox, waypoints: Vec<Vector3<f64>>, duration: f64) -> Self {
        Self {
            name: name.to_string(),
            room,
            field: FieldConfig::default(),
            waypoints,
            duration,
            yaw_policy: YawPolicy::PerceptionAware,
            camera: CameraParams::default(),
            planner: PlannerConfig { n_ctrl: CLOSED_LOOP_N_CTRL, ..Default::default() },
            localize: LocalizeConfig::default(),
            survey: SurveyConfig::default(),
            seed: 0,
            repeats: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::invalid("waypoints: at least two are required"));
        }
        if let Some(w) = self.waypoints.iter().find(|w| !self.room.contains(w)) {
            return Err(Error::invalid(format!("waypoints: {w:?} lies outside the room")));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::invalid(format!("duration must be positive, got {}", self.duration)));
        }
        if self.repeats == 0 {
            return Err(Error::invalid("repeats must be at least 1"));
        }
        if self.survey.frames == 0 || self.survey.pixels_per_frame == 0 {
            return Err(Error::invalid("survey frames and pixels must be positive"));
        }
        let exec_ticks = self.planner.t_exec * self.localize.imu_rate;
        if (exec_ticks - exec_ticks.round()).abs() > 1e-6 {
            return Err(Error::invalid("t_exec must be a multiple of the IMU period"));
        }
        self.field.validate()?;
        self.planner.validate()?;
        self.localize.validate()?;
        crate::camera::CameraModel::new(self.camera.clone())?;
        Ok(())
    }
}

/// Entropy-driven components of the perception-aware pipeline: weighting of
/// the visibility cost (`ow`), rejection of uncertain samples in planning
/// (`or`) and rejection of uncertain correspondences before PnP (`sc`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AblationFlags {
    pub ow: bool,
    pub or: bool,
    pub sc: bool,
}

impl AblationFlags {
    pub const VANILLA: Self = Self { ow: false, or: false, sc: false };
    pub const OW: Self = Self { ow: true, or: false, sc: false };
    pub const OW_OR: Self = Self { ow: true, or: true, sc: false };
    pub const OW_OR_SC: Self = Self { ow: true, or: true, sc: true };

    /// The four rows of the ablation, each adding one component.
    pub const LADDER: [Self; 4] = [Self::VANILLA, Self::OW, Self::OW_OR, Self::OW_OR_SC];

    /// Flags as currently set in a scenario.
    pub fn of(sc: &Scenario) -> Self {
        let a = sc.planner.ablation;
        Self { ow: a.ow, or: a.or, sc: sc.localize.ransac.entropy_percentile.is_some() }
    }

    pub fn label(self) -> String {
        if self == Self::VANILLA {
            return "vanilla".to_string();
        }
        let mut out = String::new();
        for (on, name) in [(self.ow, "+ow"), (self.or, "+or"), (self.sc, "+sc")] {
            if on {
                out.push_str(name);
            }
        }
        out
    }

    /// Switches a perception-aware scenario to these components. Correspondence
    /// rejection uses the same percentile as planning-sample rejection.
    pub fn apply(self, sc: &mut Scenario) {
        sc.yaw_policy = YawPolicy::PerceptionAware;
        sc.planner.ablation = Ablation { ow: self.ow, or: self.or };
        sc.localize.ransac.entropy_percentile = self.sc.then_some(sc.planner.entropy_percentile);
    }
}

/// Closed reference paths in the horizontal plane at height `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathShape {
    Circle { radius: f64 },
    /// Figure eight x = a·sin θ, y = a·sin θ cos θ.
    Lemniscate { a: f64 },
    /// Four-petal rose r = a·cos 2θ.
    Rose { a: f64 },
    Square { side: f64 },
}

impl PathShape {
    /// `n` waypoints around `center`, closing back on the first one.
    pub fn waypoints(self, center: Vector3<f64>, n: usize) -> Vec<Vector3<f64>> {
        let n = n.max(4);
        let at = |u: f64| -> Vector3<f64> {
            let th = 2.0 * PI * u;
            let (x, y) = match self {
                PathShape::Circle { radius } => (radius * th.cos(), radius * th.sin()),
                PathShape::Lemniscate { a } => (a * th.sin(), a * th.sin() * th.cos()),
                PathShape::Rose { a } => {
                    let r = a * (2.0 * th).cos();
                    (r * th.cos(), r * th.sin())
                }
                PathShape::Square { side } => {
                    let h = 0.5 * side;
                    let s = (4.0 * u).rem_euclid(4.0);
                    let f = s.fract();
                    match s as usize {
                        0 => (h, -h + side * f),
                        1 => (h - side * f, h),
                        2 => (-h, h - side * f),
                        _ => (-h + side * f, -h),
                    }
                }
            };
            center + Vector3::new(x, y, 0.0)
        };
        (0..=n).map(|k| at(k as f64 / n as f64)).collect()
    }
}

/// 10 × 10 × 3 m room centered on the origin in x and y.
pub fn standard_room() -> RoomBox {
    RoomBox::new(Vector3::new(-5.0, -5.0, 0.0), Vector3::new(5.0, 5.0, 3.0)).expect("valid extents")
}

/// One lap of a 2 m circle in a room where only the +x wall is low-noise.
pub fn directional_scenario(policy: YawPolicy) -> Scenario {
    directional_suite(policy).swap_remove(0)
}

/// One lap each of a circle, figure eight, rose and square in the room of
/// [`directional_scenario`], flown at about 1 m/s.
pub fn directional_suite(policy: YawPolicy) -> Vec<Scenario> {
    let center = Vector3::new(0.0, 0.0, 1.5);
    [
        ("directional_circle", PathShape::Circle { radius: 2.0 }, 24, 12.0),
        ("directional_lemniscate", PathShape::Lemniscate { a: 2.5 }, 24, 12.0),
        ("directional_rose", PathShape::Rose { a: 2.5 }, 40, 20.0),
        ("directional_square", PathShape::Square { side: 3.0 }, 24, 12.0),
    ]
    .into_iter()
    .map(|(name, shape, n, duration)| {
        let mut sc = Scenario::new(name, standard_room(), shape.waypoints(center, n), duration);
        sc.yaw_policy = policy;
        sc
    })
    .collect()
}
