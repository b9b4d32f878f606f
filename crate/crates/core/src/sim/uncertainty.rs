//! Relationship between regression error and the three uncertainty
//! estimates, collected along a circular flight.

use nalgebra::Vector3;
use rand::Rng;

use crate::camera::{yaw_pose, CameraModel};
use crate::error::{Error, Result};
use crate::localize::{regress_scene, EntropyField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyConfig {
    pub n_images: usize,
    pub pixels_per_image: usize,
    pub radius: f64,
    pub bins: usize,
    /// Fraction of the largest uncertainty values dropped before binning.
    pub clip_fraction: f64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self { n_images: 200, pixels_per_image: 500, radius: 2.0, bins: 20, clip_fraction: 0.03 }
    }
}

impl UncertaintyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 || self.pixels_per_image == 0 || self.bins == 0 {
            return Err(Error::invalid("image count, pixel count and bin count must be positive"));
        }
        if !(self.clip_fraction >= 0.0 && self.clip_fraction < 1.0) {
            return Err(Error::invalid("clip fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Error and uncertainty of one regressed scene coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyRecord {
    pub l2_error: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStat {
    /// Normalized lower and upper edges.
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_error: Option<f64>,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyCurve {
    pub metric: &'static str,
    /// Raw value range mapped onto [0, 1] before binning.
    pub range: (f64, f64),
    pub retained: usize,
    pub total: usize,
    pub bins: Vec<BinStat>,
}

impl UncertaintyCurve {
    /// Pearson correlation between bin index and bin-mean error over the
    /// non-empty bins.
    pub fn index_error_correlation(&self) -> f64 {
        let (x, y): (Vec<f64>, Vec<f64>) =
            self.bins.iter().enumerate().filter_map(|(i, b)| b.mean_error.map(|m| (i as f64, m))).unzip();
        pearson(&x, &y)
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Regresses `n_images` frames from a circle around the room center at its
/// mid height, looking along the direction of travel.
pub fn collect_records<R: Rng>(
    field: &EntropyField,
    cam: &CameraModel,
    cfg: &UncertaintyConfig,
    rng: &mut R,
) -> Result<Vec<UncertaintyRecord>> {
    cfg.validate()?;
    let room = field.room();
    let center = (room.min + room.max) * 0.5;
    let mut out = Vec::new();
    for k in 0..cfg.n_images {
        let a = 2.0 * std::f64::consts::PI * k as f64 / cfg.n_images as f64;
        let p = center + Vector3::new(cfg.radius * a.cos(), cfg.radius * a.sin(), 0.0);
        let pose = yaw_pose(&p, a + 0.5 * std::f64::consts::PI);
        for l in regress_scene(cam, &pose, field, cfg.pixels_per_image, rng) {
            out.push(UncertaintyRecord {
                l2_error: l.l2_error(),
                aleatoric: l.sample.aleatoric(),
                epistemic: l.sample.epistemic(),
                entropy: l.sample.entropy,
            });
        }
    }
    Ok(out)
}

/// Drops the largest `clip_fraction` of `values`, min-max normalizes the
/// rest and reports error statistics per equal-width bin.
pub fn bin_errors(metric: &'static str, errors: &[f64], values: &[f64], bins: usize, clip_fraction: f64) -> UncertaintyCurve {
    let total = values.len();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let keep = ((1.0 - clip_fraction) * total as f64).round() as usize;
    order.truncate(keep);
    let lo = order.first().map(|&i| values[i]).unwrap_or(0.0);
    let hi = order.last().map(|&i| values[i]).unwrap_or(0.0);
    let span = hi - lo;
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for &i in &order {
        let u = if span > 0.0 { (values[i] - lo) / span } else { 0.0 };
        let b = ((u * bins as f64) as usize).min(bins - 1);
        members[b].push(errors[i]);
    }
    let stats = members
        .iter()
        .enumerate()
        .map(|(b, m)| {
            let (mean, std) = if m.is_empty() {
                (None, None)
            } else {
                let n = m.len() as f64;
                let mean = m.iter().sum::<f64>() / n;
                let var = m.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
                (Some(mean), Some(var.sqrt()))
            };
            BinStat {
                lo: b as f64 / bins as f64,
                hi: (b + 1) as f64 / bins as f64,
                count: m.len(),
                mean_error: mean,
                std_error: std,
            }
        })
        .collect();
    UncertaintyCurve { metric, range: (lo, hi), retained: order.len(), total, bins: stats }
}

/// Binned error curves for aleatoric, epistemic and entropy, in that order.
pub fn uncertainty_study<R: Rng>(
    field: &EntropyField,
    cam: &CameraModel,
    cfg: &UncertaintyConfig,
    rng: &mut R,
) -> Result<Vec<UncertaintyCurve>> {
    let recs = collect_records(field, cam, cfg, rng)?;
    if recs.is_empty() {
        return Err(Error::invalid("no scene coordinates were collected"));
    }
    let errors: Vec<f64> = recs.iter().map(|r| r.l2_error).collect();
    let metrics: [(&'static str, fn(&UncertaintyRecord) -> f64); 3] =
        [("aleatoric", |r| r.aleatoric), ("epistemic", |r| r.epistemic), ("entropy", |r| r.entropy)];
    Ok(metrics
        .iter()
        .map(|(name, f)| {
            let v: Vec<f64> = recs.iter().map(f).collect();
            bin_errors(name, &errors, &v, cfg.bins, cfg.clip_fraction)
        })
        .collect())
}
