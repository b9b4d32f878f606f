//! Subcommand implementations. Progress goes to standard error; standard
//! output only carries CSV text when `--stdout` is given.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use eviplan_core::camera::CameraModel;
use eviplan_core::evidential::{fit_toy_dataset, ToyFitOptions};
use eviplan_core::sim::{
    aggregate, run_scenario_with_seed, uncertainty_study, write_run, write_summary, write_toy_fit, write_uncertainty,
    AblationFlags, CsvMeta, RunMetrics, Scenario, YawPolicy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::config::{parse_config, Config};
use crate::{AblationArgs, Cli, CliError, Command, CommonArgs};

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Run { common, ablation } => run(common, ablation, out),
        Command::Compare { common, ablation } => compare(common, ablation, out),
        Command::Ablate { common } => ablate(common, out),
        Command::Uncertainty { common } => uncertainty(common, out),
        Command::FitDemo { output_dir, seed, samples, stdout } => fit_demo(output_dir, *seed, *samples, *stdout, out),
        Command::ValidateConfig { config, canonical } => {
            let cfg = parse_config(config)?;
            writeln!(out, "{} config_hash={}", cfg.scenario.name, cfg.hash())?;
            if *canonical {
                write!(out, "{}", cfg.to_toml())?;
            }
            Ok(())
        }
    }
}

/// Sets the entropy components without touching the yaw policy.
fn set_flags(sc: &mut Scenario, flags: AblationFlags) {
    let policy = sc.yaw_policy;
    flags.apply(sc);
    sc.yaw_policy = policy;
}

/// Parses the config and applies the command-line overrides.
fn prepare(common: &CommonArgs, ablation: Option<&AblationArgs>) -> Result<Config, CliError> {
    let mut cfg = parse_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(r) = common.repeats {
        if r == 0 {
            return Err(CliError::Config("--repeats must be at least 1".into()));
        }
        cfg.scenario.repeats = r;
    }
    if let Some(a) = ablation.filter(|a| a.any()) {
        set_flags(&mut cfg.scenario, AblationFlags { ow: a.ow, or: a.or, sc: a.sc });
    }
    Ok(cfg)
}

fn seeds(sc: &Scenario) -> Vec<u64> {
    (0..sc.repeats as u64).map(|k| sc.seed.wrapping_add(k)).collect()
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker threads: {e}")))
}

/// One closed-loop run, labelled for file names and summary rows.
struct Job {
    label: String,
    scenario: Scenario,
    seed: u64,
}

/// Runs all jobs in parallel and returns the metrics in job order, with the
/// policy field replaced by the job label.
fn run_jobs(jobs: &[Job], threads: Option<usize>) -> Result<Vec<RunMetrics>, CliError> {
    let done = AtomicUsize::new(0);
    let total = jobs.len();
    let results: Vec<Result<RunMetrics, CliError>> = thread_pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|job| {
                let mut m = run_scenario_with_seed(&job.scenario, job.seed)?;
                m.policy = job.label.clone();
                let k = done.fetch_add(1, Ordering::SeqCst) + 1;
                let status = match (&m.failure, &m.smoothed) {
                    (Some(f), _) => format!("failed: {f}"),
                    (None, Some(s)) => format!("smoothed mean {:.1} cm", s.mean_t_cm),
                    (None, None) => "no estimates".to_string(),
                };
                eprintln!("[{k}/{total}] {} {} seed {}: {status}", job.scenario.name, job.label, job.seed);
                Ok(m)
            })
            .collect()
    });
    results.into_iter().collect()
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn output_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

/// Writes one CSV per run and the summary; returns the summary bytes.
fn write_batch(
    command: &str,
    common: &CommonArgs,
    cfg: &Config,
    jobs: &[Job],
    runs: &[RunMetrics],
) -> Result<Vec<u8>, CliError> {
    output_dir(&common.output_dir)?;
    let hash = cfg.hash();
    for (job, run) in jobs.iter().zip(runs) {
        let flags = AblationFlags::of(&job.scenario);
        let meta = CsvMeta::new(job.seed, &hash)
            .with("command", command)
            .with("ow", flags.ow)
            .with("or", flags.or)
            .with("sc", flags.sc);
        let name = format!("{}_{}_seed{}.csv", job.scenario.name, job.label, job.seed);
        let mut w = create(&common.output_dir, &name)?;
        write_run(&mut w, run, &meta)?;
        w.flush()?;
    }
    let failed = runs.iter().filter(|r| r.failed()).count();
    eprintln!("{command}: {} runs, {failed} failed", runs.len());
    let meta = CsvMeta::new(cfg.scenario.seed, &hash)
        .with("command", command)
        .with("scenario", &cfg.scenario.name)
        .with("repeats", cfg.scenario.repeats);
    let mut summary = Vec::new();
    write_summary(&mut summary, &aggregate(runs), &meta)?;
    let mut w = create(&common.output_dir, &format!("{command}_summary.csv"))?;
    w.write_all(&summary)?;
    w.flush()?;
    Ok(summary)
}

fn finish(summary: &[u8], to_stdout: bool, out: &mut dyn Write) -> Result<(), CliError> {
    if to_stdout {
        out.write_all(summary)?;
        out.flush()?;
    }
    Ok(())
}

fn run(common: &CommonArgs, ablation: &AblationArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = prepare(common, Some(ablation))?;
    let label = cfg.scenario.yaw_policy.name().to_string();
    let jobs: Vec<Job> =
        seeds(&cfg.scenario).into_iter().map(|seed| Job { label: label.clone(), scenario: cfg.scenario.clone(), seed }).collect();
    let runs = run_jobs(&jobs, common.jobs)?;
    let summary = write_batch("run", common, &cfg, &jobs, &runs)?;
    finish(&summary, common.stdout, out)
}

fn compare(common: &CommonArgs, ablation: &AblationArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = prepare(common, Some(ablation))?;
    let policies = [YawPolicy::Constant(cfg.constant_yaw), YawPolicy::Forward, YawPolicy::PerceptionAware];
    let mut jobs = Vec::new();
    for policy in policies {
        for seed in seeds(&cfg.scenario) {
            let mut scenario = cfg.scenario.clone();
            scenario.yaw_policy = policy;
            jobs.push(Job { label: policy.name().to_string(), scenario, seed });
        }
    }
    let runs = run_jobs(&jobs, common.jobs)?;
    let summary = write_batch("compare", common, &cfg, &jobs, &runs)?;
    finish(&summary, common.stdout, out)
}

fn ablate(common: &CommonArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = prepare(common, None)?;
    let mut jobs = Vec::new();
    for flags in AblationFlags::LADDER {
        for seed in seeds(&cfg.scenario) {
            let mut scenario = cfg.scenario.clone();
            flags.apply(&mut scenario);
            jobs.push(Job { label: flags.label(), scenario, seed });
        }
    }
    let runs = run_jobs(&jobs, common.jobs)?;
    let summary = write_batch("ablate", common, &cfg, &jobs, &runs)?;
    finish(&summary, common.stdout, out)
}

fn uncertainty(common: &CommonArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = prepare(common, None)?;
    let sc = &cfg.scenario;
    let field = sc.field.build(&sc.room)?;
    let cam = CameraModel::new(sc.camera.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let curves = thread_pool(common.jobs)?.install(|| uncertainty_study(&field, &cam, &cfg.uncertainty, &mut rng))?;
    for c in &curves {
        eprintln!("uncertainty: {} Pearson r {:.3} between bin index and mean error", c.metric, c.index_error_correlation());
    }
    output_dir(&common.output_dir)?;
    let meta = CsvMeta::new(sc.seed, &cfg.hash()).with("command", "uncertainty").with("scenario", &sc.name);
    let mut bytes = Vec::new();
    write_uncertainty(&mut bytes, &curves, &meta)?;
    let mut w = create(&common.output_dir, "uncertainty.csv")?;
    w.write_all(&bytes)?;
    w.flush()?;
    finish(&bytes, common.stdout, out)
}

/// Inputs uniform on [0, 2), targets sin 3x with noise σ = 0.01 below x = 1
/// and σ = 0.5 above.
pub fn toy_dataset(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = Normal::new(0.0, 0.01).expect("valid sigma");
    let noisy = Normal::new(0.0, 0.5).expect("valid sigma");
    (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(0.0..2.0);
            let e = if x < 1.0 { clean.sample(&mut rng) } else { noisy.sample(&mut rng) };
            (x, (3.0 * x).sin() + e)
        })
        .unzip()
}

fn fit_demo(dir: &Path, seed: u64, samples: usize, to_stdout: bool, out: &mut dyn Write) -> Result<(), CliError> {
    if samples == 0 {
        return Err(CliError::Config("--samples must be positive".into()));
    }
    let (xs, vs) = toy_dataset(samples, seed);
    let opts = ToyFitOptions { seed, ..Default::default() };
    let fit = fit_toy_dataset(&xs, &vs, &opts)?;
    if let (Some(first), Some(last)) = (fit.loss_history.first(), fit.loss_history.last()) {
        eprintln!("fit-demo: loss {first:.4} -> {last:.4} over {} iterations", fit.loss_history.len() - 1);
    }
    output_dir(dir)?;
    let meta = CsvMeta::new(seed, "none").with("command", "fit-demo").with("samples", samples);
    let mut bytes = Vec::new();
    write_toy_fit(&mut bytes, &fit, &meta)?;
    let mut w = create(dir, "fit_demo.csv")?;
    w.write_all(&bytes)?;
    w.flush()?;
    finish(&bytes, to_stdout, out)
}
