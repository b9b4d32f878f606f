//! Error statistics of a run and their aggregation over repeats.

use nalgebra::{Rotation3, Vector3};

use crate::localize::PoseSource;

/// Geodesic angle between two rotations in degrees.
pub fn rotation_error(r_est: &Rotation3<f64>, r_gt: &Rotation3<f64>) -> f64 {
    let c = ((r_est.matrix().transpose() * r_gt.matrix()).trace() - 1.0) * 0.5;
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Translation error in centimeters.
pub fn translation_error_cm(t_est: &Vector3<f64>, t_gt: &Vector3<f64>) -> f64 {
    (t_est - t_gt).norm() * 100.0
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn rmse(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub rmse_t_cm: f64,
    pub mean_t_cm: f64,
    pub median_t_cm: f64,
    pub rmse_r_deg: f64,
    pub mean_r_deg: f64,
    pub median_r_deg: f64,
    pub count: usize,
}

impl ErrorStats {
    /// Statistics of paired translation and rotation errors; `None` when
    /// there are none.
    pub fn from_errors(t_cm: &[f64], r_deg: &[f64]) -> Option<Self> {
        if t_cm.is_empty() || t_cm.len() != r_deg.len() {
            return None;
        }
        Some(Self {
            rmse_t_cm: rmse(t_cm),
            mean_t_cm: mean(t_cm),
            median_t_cm: median(t_cm),
            rmse_r_deg: rmse(r_deg),
            mean_r_deg: mean(r_deg),
            median_r_deg: median(r_deg),
            count: t_cm.len(),
        })
    }

    pub fn columns(&self) -> [f64; 6] {
        [self.rmse_t_cm, self.mean_t_cm, self.median_t_cm, self.rmse_r_deg, self.mean_r_deg, self.median_r_deg]
    }

    /// Column-wise average over several runs.
    fn average(stats: &[ErrorStats]) -> Option<Self> {
        if stats.is_empty() {
            return None;
        }
        let n = stats.len() as f64;
        let col = |f: fn(&ErrorStats) -> f64| stats.iter().map(f).sum::<f64>() / n;
        Some(Self {
            rmse_t_cm: col(|s| s.rmse_t_cm),
            mean_t_cm: col(|s| s.mean_t_cm),
            median_t_cm: col(|s| s.median_t_cm),
            rmse_r_deg: col(|s| s.rmse_r_deg),
            mean_r_deg: col(|s| s.mean_r_deg),
            median_r_deg: col(|s| s.median_r_deg),
            count: stats.iter().map(|s| s.count).sum(),
        })
    }
}

/// Ground truth and estimates at one camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub gt_position: Vector3<f64>,
    pub gt_yaw: f64,
    /// `None` when PnP-RANSAC failed on this frame.
    pub pnp: Option<(Vector3<f64>, f64)>,
    pub smoothed_position: Vector3<f64>,
    pub smoothed_yaw: f64,
    pub pnp_error_t_cm: Option<f64>,
    pub pnp_error_r_deg: Option<f64>,
    pub smoothed_error_t_cm: f64,
    pub smoothed_error_r_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub scenario: String,
    pub policy: String,
    pub seed: u64,
    /// Raw PnP poses over the frames where PnP succeeded.
    pub pnp: Option<ErrorStats>,
    /// Smoother output at every IMU sample.
    pub smoothed: Option<ErrorStats>,
    /// Why the run failed, if it did. Failed runs are left out of averages.
    pub failure: Option<String>,
    /// Time at which the true vehicle left the room. The run stops there but
    /// is not a failure unless the smoother also failed.
    pub left_room: Option<f64>,
    pub frames: usize,
    pub pnp_failures: usize,
    pub series: Vec<StepRecord>,
}

impl RunMetrics {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn stats(&self, source: PoseSource) -> Option<&ErrorStats> {
        match source {
            PoseSource::Pnp => self.pnp.as_ref(),
            PoseSource::Smoothed => self.smoothed.as_ref(),
            PoseSource::GroundTruth => None,
        }
    }
}

/// One row of a summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: String,
    pub source: PoseSource,
    /// Averages over successful runs; `None` when every run failed.
    pub stats: Option<ErrorStats>,
    pub success_rate: f64,
    pub runs: usize,
}

/// Averages the runs of each policy, PnP row first, then smoothed.
///
/// Failed runs are left out of the averages and only counted in the
/// success rate. Policies appear in order of first occurrence and runs are
/// reduced in seed order, so the result does not depend on input order
/// beyond that.
pub fn aggregate(runs: &[RunMetrics]) -> Vec<SummaryRow> {
    let mut policies: Vec<&str> = Vec::new();
    for r in runs {
        if !policies.contains(&r.policy.as_str()) {
            policies.push(&r.policy);
        }
    }
    let mut rows = Vec::new();
    for p in policies {
        let mut group: Vec<&RunMetrics> = runs.iter().filter(|r| r.policy == p).collect();
        group.sort_by_key(|r| r.seed);
        let ok: Vec<&RunMetrics> = group.iter().copied().filter(|r| !r.failed()).collect();
        let success_rate = ok.len() as f64 / group.len() as f64;
        for source in [PoseSource::Pnp, PoseSource::Smoothed] {
            let stats: Vec<ErrorStats> = ok.iter().filter_map(|r| r.stats(source).copied()).collect();
            rows.push(SummaryRow {
                policy: p.to_string(),
                source,
                stats: ErrorStats::average(&stats),
                success_rate,
                runs: group.len(),
            });
        }
    }
    rows
}
