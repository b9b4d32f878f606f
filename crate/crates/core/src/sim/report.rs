//! CSV output with fixed column order and number formatting, so identical
//! runs produce identical bytes.

use std::io::Write;

use crate::error::Result;
use crate::evidential::{moments, predictive_entropy, ToyFit};
use crate::sim::metrics::{RunMetrics, SummaryRow};
use crate::sim::uncertainty::UncertaintyCurve;

pub const SUMMARY_COLUMNS: [&str; 9] = [
    "policy",
    "source",
    "rmse_t_cm",
    "mean_t_cm",
    "median_t_cm",
    "rmse_r_deg",
    "mean_r_deg",
    "median_r_deg",
    "success_rate",
];

pub const RUN_COLUMNS: [&str; 19] = [
    "t",
    "gt_x",
    "gt_y",
    "gt_z",
    "gt_yaw",
    "pnp_x",
    "pnp_y",
    "pnp_z",
    "pnp_yaw",
    "smoothed_x",
    "smoothed_y",
    "smoothed_z",
    "smoothed_yaw",
    "pnp_err_t_cm",
    "pnp_err_r_deg",
    "smoothed_err_t_cm",
    "smoothed_err_r_deg",
    "policy",
    "seed",
];

pub const TOY_FIT_COLUMNS: [&str; 6] = ["bin_center", "prediction", "aleatoric", "epistemic", "entropy", "count"];

pub const UNCERTAINTY_COLUMNS: [&str; 7] = ["metric", "bin", "lo", "hi", "count", "mean_error_m", "std_error_m"];

/// Contents of the comment line that opens every CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvMeta {
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
    /// Further key-value pairs, written in order.
    pub extra: Vec<(String, String)>,
}

impl CsvMeta {
    pub fn new(seed: u64, config_hash: &str) -> Self {
        Self { seed, config_hash: config_hash.to_string(), version: env!("CARGO_PKG_VERSION").to_string(), extra: Vec::new() }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "# seed={} config_hash={} version={}", self.seed, self.config_hash, self.version)?;
        for (k, v) in &self.extra {
            write!(w, " {k}={v}")?;
        }
        writeln!(w)?;
        Ok(())
    }
}

/// Fixed six-decimal formatting; missing values are empty fields.
pub fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

pub fn write_summary<W: Write>(mut w: W, rows: &[SummaryRow], meta: &CsvMeta) -> Result<()> {
    meta.write(&mut w)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        let mut rec = vec![r.policy.clone(), r.source.as_str().to_string()];
        match &r.stats {
            Some(s) => rec.extend(s.columns().iter().map(|v| fmt(*v))),
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        rec.push(fmt(r.success_rate));
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_run<W: Write>(mut w: W, run: &RunMetrics, meta: &CsvMeta) -> Result<()> {
    let mut meta = meta.clone().with("policy", &run.policy).with("scenario", &run.scenario);
    if let Some(f) = &run.failure {
        meta = meta.with("failed", f.replace(' ', "_"));
    }
    if let Some(t) = run.left_room {
        meta = meta.with("left_room_at", fmt(t));
    }
    meta.write(&mut w)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(RUN_COLUMNS)?;
    for s in &run.series {
        let mut rec = vec![fmt(s.t)];
        rec.extend([s.gt_position.x, s.gt_position.y, s.gt_position.z, s.gt_yaw].map(fmt));
        match s.pnp {
            Some((p, y)) => rec.extend([p.x, p.y, p.z, y].map(fmt)),
            None => rec.extend(std::iter::repeat_n(String::new(), 4)),
        }
        rec.extend([s.smoothed_position.x, s.smoothed_position.y, s.smoothed_position.z, s.smoothed_yaw].map(fmt));
        rec.push(fmt_opt(s.pnp_error_t_cm));
        rec.push(fmt_opt(s.pnp_error_r_deg));
        rec.push(fmt(s.smoothed_error_t_cm));
        rec.push(fmt(s.smoothed_error_r_deg));
        rec.push(run.policy.clone());
        rec.push(run.seed.to_string());
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_uncertainty<W: Write>(mut w: W, curves: &[UncertaintyCurve], meta: &CsvMeta) -> Result<()> {
    meta.write(&mut w)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(UNCERTAINTY_COLUMNS)?;
    for c in curves {
        for (i, b) in c.bins.iter().enumerate() {
            csv.write_record([
                c.metric.to_string(),
                i.to_string(),
                fmt(b.lo),
                fmt(b.hi),
                b.count.to_string(),
                fmt_opt(b.mean_error),
                fmt_opt(b.std_error),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// One row per bin of a toy evidential fit.
pub fn write_toy_fit<W: Write>(mut w: W, fit: &ToyFit, meta: &CsvMeta) -> Result<()> {
    meta.write(&mut w)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(TOY_FIT_COLUMNS)?;
    for ((x, nig), count) in fit.bin_centers.iter().zip(&fit.params).zip(&fit.counts) {
        let (pred, alea, epi) = moments(nig);
        let mut rec: Vec<String> = [*x, pred, alea, epi, predictive_entropy(nig)].map(fmt).to_vec();
        rec.push(count.to_string());
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}
