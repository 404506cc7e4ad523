//! Command implementations behind the `icrf` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use icrf::bench::{aggregate, run_experiment, ExperimentSpec};
use icrf::config::RunConfig;
use icrf::forest::{variable_importance, IcrfModel};
use icrf::io::{atomic_write, load_covariates, load_csv, write_csv};
use icrf::metrics::{abs_errors, imse1, imse2, Metric};
use icrf::simgen::{generate, Scenario, TruthTable, DEFAULT_TAU};
use icrf::{IcrfError, Result};

#[derive(Debug, Parser)]
#[command(name = "icrf", version, about = "Interval censored recursive forests")]
pub struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a forest and write the model and its per-fold OOB table.
    Fit(FitArgs),
    /// Predict survival curves for query covariates.
    Predict(PredictArgs),
    /// Simulate a dataset and its truth sidecar.
    Simulate(SimulateArgs),
    /// Score a model on test data.
    Evaluate(EvaluateArgs),
    /// Permutation variable importance.
    Importance(ImportanceArgs),
    /// Run a replicated simulation experiment.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config study length.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub query: PathBuf,
    /// `start:end:step`; defaults to 101 points on [0, tau].
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub smoothed: bool,
    /// 1-based fold; defaults to the selected fold.
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: u8,
    #[arg(long)]
    pub n: usize,
    #[arg(long = "M", default_value_t = 1)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Points of the truth grid on [0, tau].
    #[arg(long, default_value_t = 1001)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportanceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub nperm: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "imse1")]
    pub metric: Metric,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| IcrfError::Config(e.to_string()))?
            .install(|| dispatch(cli.command)),
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Importance(a) => cmd_importance(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

/// Parses `start:end:step` into an inclusive equispaced grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| IcrfError::Config(format!("grid `{spec}`: {m}"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad("expected start:end:step")))
        .collect::<Result<_>>()?;
    let [start, end, step] = parts[..] else {
        return Err(bad("expected start:end:step"));
    };
    if !(start >= 0.0 && end >= start && step > 0.0 && end.is_finite()) {
        return Err(bad("need 0 <= start <= end and step > 0"));
    }
    let k = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=k).map(|i| (start + i as f64 * step).min(end)).collect())
}

fn table_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| IcrfError::Serde(e.to_string()))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => atomic_write(p, bytes),
        None => Ok(std::io::stdout().write_all(bytes)?),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| v.to_string())
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let data = load_csv(&a.data, a.tau.or(cfg.tau))?;
    let mut params = cfg.forest_params();
    if let Some(s) = a.seed {
        params.seed = s;
    }
    let model = IcrfModel::fit(&data, &params)?;
    model.save(&a.out)?;
    let rows: Vec<Vec<String>> = model
        .oob_errors()
        .into_iter()
        .enumerate()
        .map(|(k, e)| vec![(k + 1).to_string(), fmt_opt(e), ((k + 1 == model.k_opt) as u8).to_string()])
        .collect();
    let bytes = table_bytes(&["fold", "oob_error", "k_opt"], rows)?;
    match &a.report {
        Some(p) => atomic_write(p, &bytes),
        None => Ok(std::io::stderr().write_all(&bytes)?),
    }
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = IcrfModel::load(&a.model)?;
    let grid = match &a.grid {
        Some(g) => parse_grid(g)?,
        None => (0..=100).map(|k| model.tau * k as f64 / 100.0).collect(),
    };
    let (_, xs) = load_covariates(&a.query)?;
    let curves = model.predict_many(&xs, a.fold, a.smoothed, &grid)?;
    let rows = curves.iter().enumerate().flat_map(|(q, curve)| {
        grid.iter().zip(curve).map(move |(t, s)| vec![(q + 1).to_string(), t.to_string(), s.to_string()])
    });
    emit(a.out.as_deref(), &table_bytes(&["query_id", "t", "survival"], rows)?)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let scenario = Scenario { id: a.scenario, n: a.n, m: a.m, tau: a.tau, seed: a.seed };
    let sim = generate(&scenario)?;
    write_csv(&a.out, &sim.dataset)?;
    if let Some(p) = &a.truth {
        if a.resolution < 2 {
            return Err(IcrfError::Config("truth resolution must be at least 2".into()));
        }
        sim.truth_table(a.resolution).write(p)?;
    }
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let model = IcrfModel::load(&a.model)?;
    let data = load_csv(&a.test, Some(model.tau))?;
    let obs = &data.observations;
    let curves = obs
        .iter()
        .map(|o| model.predict_tabulated(&o.covariates, a.fold))
        .collect::<Result<Vec<_>>>()?;
    let skipped_as_na = |r: Result<f64>| match r {
        Ok(v) => Ok(v.to_string()),
        Err(IcrfError::AllSkipped) => Ok("NA".to_string()),
        Err(e) => Err(e),
    };
    let mut rows = vec![
        vec!["imse1".to_string(), skipped_as_na(imse1(&curves, obs, model.tau).map(|r| r.value))?],
        vec!["imse2".to_string(), skipped_as_na(imse2(&curves, obs, model.tau).map(|r| r.value))?],
    ];
    if let Some(p) = &a.truth {
        let truth = TruthTable::read(p)?;
        if truth.values.len() != obs.len() {
            return Err(IcrfError::InvariantViolation(format!(
                "truth sidecar has {} rows, test data has {}",
                truth.values.len(),
                obs.len()
            )));
        }
        let mut sum_int = 0.0;
        let mut sum_sup = 0.0;
        for (o, s0) in obs.iter().zip(&truth.values) {
            let est = model.predict(&o.covariates, a.fold, true, &truth.grid)?;
            let (int, sup) = abs_errors(&truth.grid, &est, s0);
            sum_int += int;
            sum_sup += sup;
        }
        let n = obs.len() as f64;
        rows.push(vec!["eps_int".into(), (sum_int / n).to_string()]);
        rows.push(vec!["eps_sup".into(), (sum_sup / n).to_string()]);
    }
    emit(a.out.as_deref(), &table_bytes(&["metric", "value"], rows)?)
}

pub fn cmd_importance(a: &ImportanceArgs) -> Result<()> {
    let model = IcrfModel::load(&a.model)?;
    let data = load_csv(&a.data, Some(model.tau))?;
    let imp = variable_importance(&model, &data, a.nperm, a.metric, a.seed)?;
    let rows = (0..imp.raw.len()).map(|j| {
        vec![
            imp.feature_names[j].clone(),
            imp.raw[j].to_string(),
            imp.std_error[j].to_string(),
            imp.rescaled[j].to_string(),
            imp.multiplier.to_string(),
        ]
    });
    emit(a.out.as_deref(), &table_bytes(&["feature", "raw", "std_error", "rescaled", "multiplier"], rows)?)
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let spec = ExperimentSpec::load(&a.spec)?;
    let rows = run_experiment(&spec, &a.out)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    eprintln!("{} rows, {} cells, {} failed replicates", rows.len(), aggregate(&rows).len(), failed);
    Ok(())
}
