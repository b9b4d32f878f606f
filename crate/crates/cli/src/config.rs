//! Scenario configuration files. TOML with flat sections; unknown keys are
//! rejected and missing keys take the library defaults.

use std::f64::consts::PI;
use std::path::Path;

use eviplan_core::camera::CameraParams;
use eviplan_core::costs::{CostWeights, KinematicLimits};
use eviplan_core::lbfgs::LbfgsConfig;
use eviplan_core::localize::{ImuBias, ImuNoise, RansacConfig, RoomBox, SmootherConfig};
use eviplan_core::planner::{Ablation, PlannerConfig};
use eviplan_core::sim::{
    standard_room, FieldConfig, FieldSpec, LocalizeConfig, Scenario, SurveyConfig, UncertaintyConfig, Wall, YawPolicy,
};
use nalgebra::{Matrix3, Rotation3, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Cruise speed used to derive a duration when none is given.
pub const DEFAULT_SPEED: f64 = 1.0;

/// A parsed and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub scenario: Scenario,
    /// Heading held by the constant-yaw baseline.
    pub constant_yaw: f64,
    pub uncertainty: UncertaintyConfig,
}

impl Config {
    /// Canonical TOML text with every key written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(&ConfigFile::from_config(self)).expect("config sections serialize")
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

pub fn parse_config(path: &Path) -> Result<Config, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<Config, CliError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    file.to_config()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub field: FieldSection,
    #[serde(default)]
    pub camera: CameraSection,
    #[serde(default)]
    pub planner: PlannerSection,
    #[serde(default)]
    pub weights: WeightsSection,
    #[serde(default)]
    pub localize: LocalizeSection,
    #[serde(default)]
    pub uncertainty: UncertaintySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    pub waypoints: Vec<[f64; 3]>,
    /// Defaults to the path length at [`DEFAULT_SPEED`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub room_min: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub room_max: Option<[f64; 3]>,
    /// perception_aware, forward or constant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub yaw_policy: Option<String>,
    /// Radians. Defaults to facing the wall opposite the low-noise one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constant_yaw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub survey_frames: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub survey_pixels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSection {
    /// low_noise_wall, uniform or gradient.
    pub kind: String,
    pub wall: String,
    pub sigma_low: f64,
    pub sigma_high: f64,
    pub depth: f64,
    pub sigma: f64,
    pub axis: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub jitter: f64,
    pub cell_size: f64,
}

impl Default for FieldSection {
    fn default() -> Self {
        let d = FieldConfig::default();
        let mut s = Self {
            kind: String::new(),
            wall: "+x".into(),
            sigma_low: 0.02,
            sigma_high: 0.25,
            depth: 0.5,
            sigma: 0.1,
            axis: 0,
            sigma_min: 0.02,
            sigma_max: 0.5,
            lambda: d.lambda,
            alpha: d.alpha,
            jitter: d.jitter,
            cell_size: d.cell_size,
        };
        s.set_spec(&d.spec);
        s
    }
}

impl FieldSection {
    fn set_spec(&mut self, spec: &FieldSpec) {
        match *spec {
            FieldSpec::Uniform { sigma } => {
                self.kind = "uniform".into();
                self.sigma = sigma;
            }
            FieldSpec::LowNoiseWall { wall, sigma_low, sigma_high, depth } => {
                self.kind = "low_noise_wall".into();
                self.wall = wall.as_str().into();
                self.sigma_low = sigma_low;
                self.sigma_high = sigma_high;
                self.depth = depth;
            }
            FieldSpec::Gradient { axis, sigma_min, sigma_max } => {
                self.kind = "gradient".into();
                self.axis = axis;
                self.sigma_min = sigma_min;
                self.sigma_max = sigma_max;
            }
        }
    }

    fn spec(&self) -> Result<FieldSpec, CliError> {
        Ok(match self.kind.as_str() {
            "uniform" => FieldSpec::Uniform { sigma: self.sigma },
            "low_noise_wall" => FieldSpec::LowNoiseWall {
                wall: Wall::parse(&self.wall).map_err(|e| CliError::Config(format!("field.wall: {e}")))?,
                sigma_low: self.sigma_low,
                sigma_high: self.sigma_high,
                depth: self.depth,
            },
            "gradient" => FieldSpec::Gradient { axis: self.axis, sigma_min: self.sigma_min, sigma_max: self.sigma_max },
            other => {
                return Err(CliError::Config(format!(
                    "field.kind: unknown value {other:?}; expected low_noise_wall, uniform or gradient"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    pub width: f64,
    pub height: f64,
    pub cx: f64,
    pub cy: f64,
    pub pixel_size_x: f64,
    pub pixel_size_y: f64,
    pub focal_length: f64,
    pub smoothing_s: f64,
    /// Rows of the body-to-camera rotation.
    pub mount_rotation: [[f64; 3]; 3],
    pub mount_translation: [f64; 3],
}

impl Default for CameraSection {
    fn default() -> Self {
        Self::from_params(&CameraParams::default())
    }
}

impl CameraSection {
    fn from_params(p: &CameraParams) -> Self {
        let r = p.mount_rotation.matrix();
        Self {
            width: p.width,
            height: p.height,
            cx: p.cx,
            cy: p.cy,
            pixel_size_x: p.lx,
            pixel_size_y: p.ly,
            focal_length: p.f,
            smoothing_s: p.smoothing_s,
            mount_rotation: [0, 1, 2].map(|i| [0, 1, 2].map(|j| r[(i, j)])),
            mount_translation: p.mount_translation.into(),
        }
    }

    fn params(&self) -> CameraParams {
        let m = &self.mount_rotation;
        CameraParams {
            width: self.width,
            height: self.height,
            cx: self.cx,
            cy: self.cy,
            lx: self.pixel_size_x,
            ly: self.pixel_size_y,
            f: self.focal_length,
            smoothing_s: self.smoothing_s,
            mount_rotation: Rotation3::from_matrix_unchecked(Matrix3::from_fn(|i, j| m[i][j])),
            mount_translation: Vector3::from(self.mount_translation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub t_plan: f64,
    pub t_exec: f64,
    pub n_ctrl: usize,
    pub entropy_percentile: f64,
    pub yaw_restarts: usize,
    /// Per-channel limits x, y, z, yaw.
    pub v_max: [f64; 4],
    pub a_max: [f64; 4],
    pub lbfgs_memory: usize,
    pub lbfgs_max_iters: usize,
    pub lbfgs_grad_tol: f64,
    pub lbfgs_cost_tol: f64,
    /// Entropy weighting of the visibility cost.
    pub ow: bool,
    /// Rejection of uncertain planning samples.
    pub or: bool,
    pub seed: u64,
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self::from_config(&default_scenario().planner)
    }
}

impl PlannerSection {
    fn from_config(p: &PlannerConfig) -> Self {
        Self {
            t_plan: p.t_plan,
            t_exec: p.t_exec,
            n_ctrl: p.n_ctrl,
            entropy_percentile: p.entropy_percentile,
            yaw_restarts: p.yaw_restarts,
            v_max: p.limits.v_max.into(),
            a_max: p.limits.a_max.into(),
            lbfgs_memory: p.lbfgs.memory,
            lbfgs_max_iters: p.lbfgs.max_iters,
            lbfgs_grad_tol: p.lbfgs.grad_tol,
            lbfgs_cost_tol: p.lbfgs.cost_tol,
            ow: p.ablation.ow,
            or: p.ablation.or,
            seed: p.seed,
        }
    }

    fn config(&self, weights: CostWeights) -> PlannerConfig {
        PlannerConfig {
            t_plan: self.t_plan,
            t_exec: self.t_exec,
            n_ctrl: self.n_ctrl,
            weights,
            limits: KinematicLimits { v_max: Vector4::from(self.v_max), a_max: Vector4::from(self.a_max) },
            entropy_percentile: self.entropy_percentile,
            ablation: Ablation { ow: self.ow, or: self.or },
            lbfgs: LbfgsConfig {
                memory: self.lbfgs_memory,
                max_iters: self.lbfgs_max_iters,
                grad_tol: self.lbfgs_grad_tol,
                cost_tol: self.lbfgs_cost_tol,
            },
            yaw_restarts: self.yaw_restarts,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    pub lambda_wp: f64,
    pub lambda_fov: f64,
    pub lambda_eq: f64,
    pub lambda_ie: f64,
    pub lambda_s: f64,
    /// Sharpness of the entropy weight exp(-a H).
    pub a: f64,
    pub n_f: usize,
}

impl Default for WeightsSection {
    fn default() -> Self {
        Self::from_weights(&CostWeights::default())
    }
}

impl WeightsSection {
    fn from_weights(w: &CostWeights) -> Self {
        Self {
            lambda_wp: w.lambda_wp,
            lambda_fov: w.lambda_fov,
            lambda_eq: w.lambda_eq,
            lambda_ie: w.lambda_ie,
            lambda_s: w.lambda_s,
            a: w.a,
            n_f: w.n_f,
        }
    }

    fn weights(&self) -> CostWeights {
        CostWeights {
            lambda_wp: self.lambda_wp,
            lambda_fov: self.lambda_fov,
            lambda_eq: self.lambda_eq,
            lambda_ie: self.lambda_ie,
            lambda_s: self.lambda_s,
            a: self.a,
            n_f: self.n_f,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeSection {
    pub scr_period_s: f64,
    pub imu_rate_hz: f64,
    pub n_pixels: usize,
    pub inlier_px: f64,
    pub ransac_max_iters: usize,
    pub ransac_confidence: f64,
    /// Entropy prefilter of correspondences before RANSAC.
    pub sc: bool,
    pub sc_percentile: f64,
    pub lag_s: f64,
    pub latency_s: f64,
    pub pose_sigma_t: f64,
    pub pose_sigma_r: f64,
    pub huber: bool,
    pub huber_delta: f64,
    pub imu_sigma_p: f64,
    pub imu_sigma_v: f64,
    pub imu_sigma_yaw: f64,
    pub init_sigma_p: f64,
    pub init_sigma_v: f64,
    pub init_sigma_yaw: f64,
    pub smoother_max_iters: usize,
    pub accel_sigma: f64,
    pub gyro_sigma: f64,
    pub accel_bias_sigma: f64,
    pub gyro_bias_sigma: f64,
    /// Bias the smoother subtracts from the readings.
    pub assumed_accel_bias: [f64; 3],
    pub assumed_gyro_bias: [f64; 3],
}

impl Default for LocalizeSection {
    fn default() -> Self {
        Self::from_config(&LocalizeConfig::default(), PlannerConfig::default().entropy_percentile)
    }
}

impl LocalizeSection {
    fn from_config(l: &LocalizeConfig, default_percentile: f64) -> Self {
        let sm = &l.smoother;
        let huber_default = SmootherConfig::default().huber_delta.unwrap_or(0.1);
        Self {
            scr_period_s: l.scr_period,
            imu_rate_hz: l.imu_rate,
            n_pixels: l.n_pixels,
            inlier_px: l.ransac.inlier_px,
            ransac_max_iters: l.ransac.max_iters,
            ransac_confidence: l.ransac.confidence,
            sc: l.ransac.entropy_percentile.is_some(),
            sc_percentile: l.ransac.entropy_percentile.unwrap_or(default_percentile),
            lag_s: sm.lag,
            latency_s: sm.latency,
            pose_sigma_t: sm.pose_sigma_t,
            pose_sigma_r: sm.pose_sigma_r,
            huber: sm.huber_delta.is_some(),
            huber_delta: sm.huber_delta.unwrap_or(huber_default),
            imu_sigma_p: sm.imu_sigma_p,
            imu_sigma_v: sm.imu_sigma_v,
            imu_sigma_yaw: sm.imu_sigma_yaw,
            init_sigma_p: sm.init_sigma_p,
            init_sigma_v: sm.init_sigma_v,
            init_sigma_yaw: sm.init_sigma_yaw,
            smoother_max_iters: sm.max_iters,
            accel_sigma: l.imu_noise.accel_sigma,
            gyro_sigma: l.imu_noise.gyro_sigma,
            accel_bias_sigma: l.imu_noise.accel_bias_sigma,
            gyro_bias_sigma: l.imu_noise.gyro_bias_sigma,
            assumed_accel_bias: sm.bias.accel.into(),
            assumed_gyro_bias: sm.bias.gyro.into(),
        }
    }

    fn config(&self) -> LocalizeConfig {
        LocalizeConfig {
            scr_period: self.scr_period_s,
            imu_rate: self.imu_rate_hz,
            n_pixels: self.n_pixels,
            ransac: RansacConfig {
                inlier_px: self.inlier_px,
                max_iters: self.ransac_max_iters,
                confidence: self.ransac_confidence,
                entropy_percentile: self.sc.then_some(self.sc_percentile),
            },
            smoother: SmootherConfig {
                lag: self.lag_s,
                pose_sigma_t: self.pose_sigma_t,
                pose_sigma_r: self.pose_sigma_r,
                huber_delta: self.huber.then_some(self.huber_delta),
                imu_sigma_p: self.imu_sigma_p,
                imu_sigma_v: self.imu_sigma_v,
                imu_sigma_yaw: self.imu_sigma_yaw,
                init_sigma_p: self.init_sigma_p,
                init_sigma_v: self.init_sigma_v,
                init_sigma_yaw: self.init_sigma_yaw,
                max_iters: self.smoother_max_iters,
                latency: self.latency_s,
                bias: ImuBias {
                    accel: Vector3::from(self.assumed_accel_bias),
                    gyro: Vector3::from(self.assumed_gyro_bias),
                },
            },
            imu_noise: ImuNoise {
                accel_sigma: self.accel_sigma,
                gyro_sigma: self.gyro_sigma,
                accel_bias_sigma: self.accel_bias_sigma,
                gyro_bias_sigma: self.gyro_bias_sigma,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintySection {
    pub n_images: usize,
    pub pixels_per_image: usize,
    pub radius: f64,
    pub bins: usize,
    pub clip_fraction: f64,
}

impl Default for UncertaintySection {
    fn default() -> Self {
        Self::from_config(&UncertaintyConfig::default())
    }
}

impl UncertaintySection {
    fn from_config(u: &UncertaintyConfig) -> Self {
        Self {
            n_images: u.n_images,
            pixels_per_image: u.pixels_per_image,
            radius: u.radius,
            bins: u.bins,
            clip_fraction: u.clip_fraction,
        }
    }

    fn config(&self) -> UncertaintyConfig {
        UncertaintyConfig {
            n_images: self.n_images,
            pixels_per_image: self.pixels_per_image,
            radius: self.radius,
            bins: self.bins,
            clip_fraction: self.clip_fraction,
        }
    }
}

fn default_scenario() -> Scenario {
    Scenario::new("", standard_room(), Vec::new(), 1.0)
}

fn path_length(pts: &[Vector3<f64>]) -> f64 {
    pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Heading that faces away from the low-noise wall, or +x otherwise.
fn default_constant_yaw(spec: &FieldSpec) -> f64 {
    match spec {
        FieldSpec::LowNoiseWall { wall, .. } => wrap(wall.facing_yaw() + PI),
        _ => 0.0,
    }
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

impl ConfigFile {
    pub fn to_config(&self) -> Result<Config, CliError> {
        let s = &self.scenario;
        if s.name.trim().is_empty() {
            return Err(CliError::Config("scenario.name must not be empty".into()));
        }
        let def = default_scenario();
        let room = RoomBox::new(
            s.room_min.map(Vector3::from).unwrap_or(def.room.min),
            s.room_max.map(Vector3::from).unwrap_or(def.room.max),
        )
        .map_err(|e| CliError::Config(format!("scenario.room_min/room_max: {e}")))?;
        let waypoints: Vec<Vector3<f64>> = s.waypoints.iter().copied().map(Vector3::from).collect();
        let duration = s.duration_s.unwrap_or_else(|| path_length(&waypoints) / DEFAULT_SPEED);
        let field = FieldConfig {
            spec: self.field.spec()?,
            lambda: self.field.lambda,
            alpha: self.field.alpha,
            jitter: self.field.jitter,
            cell_size: self.field.cell_size,
        };
        let constant_yaw = s.constant_yaw.unwrap_or_else(|| default_constant_yaw(&field.spec));
        let yaw_policy = match s.yaw_policy.as_deref().unwrap_or("perception_aware") {
            "perception_aware" => YawPolicy::PerceptionAware,
            "forward" => YawPolicy::Forward,
            "constant" => YawPolicy::Constant(constant_yaw),
            other => {
                return Err(CliError::Config(format!(
                    "scenario.yaw_policy: unknown value {other:?}; expected perception_aware, forward or constant"
                )))
            }
        };
        let scenario = Scenario {
            name: s.name.clone(),
            room,
            field,
            waypoints,
            duration,
            yaw_policy,
            camera: self.camera.params(),
            planner: self.planner.config(self.weights.weights()),
            localize: self.localize.config(),
            survey: SurveyConfig {
                frames: s.survey_frames.unwrap_or(def.survey.frames),
                pixels_per_frame: s.survey_pixels.unwrap_or(def.survey.pixels_per_frame),
            },
            seed: s.seed.unwrap_or(def.seed),
            repeats: s.repeats.unwrap_or(def.repeats),
        };
        scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let uncertainty = self.uncertainty.config();
        uncertainty.validate().map_err(|e| CliError::Config(format!("uncertainty: {e}")))?;
        Ok(Config { scenario, constant_yaw, uncertainty })
    }

    /// Every key written out explicitly.
    pub fn from_config(cfg: &Config) -> Self {
        let sc = &cfg.scenario;
        let mut field = FieldSection { lambda: sc.field.lambda, alpha: sc.field.alpha, jitter: sc.field.jitter, cell_size: sc.field.cell_size, ..Default::default() };
        field.set_spec(&sc.field.spec);
        Self {
            scenario: ScenarioSection {
                name: sc.name.clone(),
                waypoints: sc.waypoints.iter().map(|w| (*w).into()).collect(),
                duration_s: Some(sc.duration),
                room_min: Some(sc.room.min.into()),
                room_max: Some(sc.room.max.into()),
                yaw_policy: Some(sc.yaw_policy.name().to_string()),
                constant_yaw: Some(match sc.yaw_policy {
                    YawPolicy::Constant(psi) => psi,
                    _ => cfg.constant_yaw,
                }),
                seed: Some(sc.seed),
                repeats: Some(sc.repeats),
                survey_frames: Some(sc.survey.frames),
                survey_pixels: Some(sc.survey.pixels_per_frame),
            },
            field,
            camera: CameraSection::from_params(&sc.camera),
            planner: PlannerSection::from_config(&sc.planner),
            weights: WeightsSection::from_weights(&sc.planner.weights),
            localize: LocalizeSection::from_config(&sc.localize, sc.planner.entropy_percentile),
            uncertainty: UncertaintySection::from_config(&cfg.uncertainty),
        }
    }
}
