//! Replicated simulation experiments.
//!
//! Every (scenario, M, n, split rule, prediction rule, replicate) cell fits a
//! forest on simulated training data and scores each fold's smoothed
//! prediction against the truth at fresh test covariates. Replicate seeds
//! depend only on (base seed, scenario, M, n, replicate), so rules are
//! compared on identical data.
//!
//! Results are written per replicate as shards under `shards/` and merged
//! into `raw.csv` and `summary.csv`. Completed shards are skipped on re-runs.
//! Wall-clock times go to `timing.csv` so the other tables stay reproducible.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IcrfError, Result};
use crate::forest::{fit, variable_importance, ForestParams};
use crate::io::atomic_write;
use crate::metrics::{abs_errors, time_grid, Metric, DEFAULT_GRID_RESOLUTION};
use crate::simgen::{draw_covariates, generate, truth_eval, Scenario, DEFAULT_TAU};
use crate::split::{SplitKind, SplitRule};
use crate::tree::{PredictionRule, TreeParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenarios: Vec<u8>,
    pub m_values: Vec<usize>,
    pub n_values: Vec<usize>,
    pub n_replicates: usize,
    pub split_rules: Vec<SplitKind>,
    pub predictions: Vec<PredictionRule>,
    pub n_tree: usize,
    pub n_fold: usize,
    pub n_min: usize,
    pub base_seed: u64,
    pub n_test: usize,
    pub tau: f64,
    /// Also record the feature with the largest permutation importance.
    pub importance: bool,
    pub importance_perm: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenarios: vec![1],
            m_values: vec![1],
            n_values: vec![300],
            n_replicates: 20,
            split_rules: vec![SplitKind::Gwrs],
            predictions: vec![PredictionRule::QuasiHonest],
            n_tree: 50,
            n_fold: 5,
            n_min: crate::tree::DEFAULT_N_MIN,
            base_seed: 20_240_101,
            n_test: 100,
            tau: DEFAULT_TAU,
            importance: false,
            importance_perm: 10,
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| IcrfError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_replicates == 0 {
            return Err(IcrfError::Config("n_replicates must be at least 1".into()));
        }
        if self.scenarios.iter().any(|id| !(1..=6).contains(id)) {
            return Err(IcrfError::Config("scenario ids must be 1..=6".into()));
        }
        if [self.scenarios.len(), self.m_values.len(), self.n_values.len(), self.split_rules.len(), self.predictions.len()]
            .contains(&0)
        {
            return Err(IcrfError::Config("every experiment axis needs at least one value".into()));
        }
        Ok(())
    }

    /// All tasks in canonical order.
    pub fn tasks(&self) -> Vec<Task> {
        let mut out = Vec::new();
        for &scenario in &self.scenarios {
            for &m in &self.m_values {
                for &n in &self.n_values {
                    for &rule in &self.split_rules {
                        for &prediction in &self.predictions {
                            for replicate in 0..self.n_replicates {
                                let seed = replicate_seed(self.base_seed, scenario, m, n, replicate);
                                out.push(Task { scenario, m, n, rule, prediction, replicate, seed });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one replicate; independent of the split and prediction rules.
pub fn replicate_seed(base: u64, scenario: u8, m: usize, n: usize, replicate: usize) -> u64 {
    [scenario as u64, m as u64, n as u64, replicate as u64].iter().fold(splitmix(base), |acc, &v| splitmix(acc ^ v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Task {
    pub scenario: u8,
    pub m: usize,
    pub n: usize,
    pub rule: SplitKind,
    pub prediction: PredictionRule,
    pub replicate: usize,
    pub seed: u64,
}

impl Task {
    fn shard_name(&self) -> String {
        format!(
            "s{}_m{}_n{}_{}_{}_r{}.csv",
            self.scenario,
            self.m,
            self.n,
            self.rule.name(),
            self.prediction.name(),
            self.replicate
        )
    }
}

/// One fold of one replicate. A failed replicate yields a single row with
/// `fold = 0`, NaN errors and the error code in `status`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub scenario: u8,
    pub m: usize,
    pub n: usize,
    pub rule: String,
    pub prediction: String,
    pub replicate: usize,
    pub seed: u64,
    pub fold: usize,
    pub is_kopt: bool,
    pub eps_int: f64,
    pub eps_sup: f64,
    pub oob_imse1: f64,
    /// 1-based feature index with the largest importance (0 when not computed).
    pub top_feature: usize,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scenario: u8,
    pub m: usize,
    pub n: usize,
    pub rule: String,
    pub prediction: String,
    pub replicate: usize,
    pub seconds: f64,
}

fn forest_params(spec: &ExperimentSpec, task: &Task) -> ForestParams {
    ForestParams {
        n_tree: spec.n_tree,
        n_fold: spec.n_fold,
        tree: TreeParams { n_min: spec.n_min, rule: SplitRule::new(task.rule), prediction: task.prediction, ..TreeParams::default() },
        seed: task.seed,
        ..ForestParams::default()
    }
}

/// Test covariates for a replicate, drawn independently of the training data.
pub fn test_covariates(scenario: u8, n_test: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0x7e57));
    (0..n_test).map(|_| draw_covariates(scenario, &mut rng)).collect()
}

fn run_task_inner(spec: &ExperimentSpec, task: &Task) -> Result<Vec<RawRow>> {
    let scenario = Scenario { id: task.scenario, n: task.n, m: task.m, tau: spec.tau, seed: task.seed };
    let sim = generate(&scenario)?;
    let model = fit(&sim.dataset, &forest_params(spec, task))?;
    let xs = test_covariates(task.scenario, spec.n_test, task.seed);
    let grid = time_grid(spec.tau, DEFAULT_GRID_RESOLUTION);
    let truth: Vec<Vec<f64>> = xs.iter().map(|x| grid.iter().map(|&t| truth_eval(task.scenario, t, x)).collect()).collect();
    let top_feature = if spec.importance {
        let imp = variable_importance(&model, &sim.dataset, spec.importance_perm, Metric::Imse1, task.seed)?;
        imp.top_feature().map_or(0, |j| j + 1)
    } else {
        0
    };
    let mut rows = Vec::with_capacity(model.folds.len());
    for fold in &model.folds {
        let k = fold.fold_index;
        let (mut int_sum, mut sup_sum) = (0.0, 0.0);
        for (x, tru) in xs.iter().zip(&truth) {
            let est = model.predict_tabulated(x, Some(k))?;
            let values: Vec<f64> = grid.iter().map(|&t| est.eval(t)).collect();
            let (i, s) = abs_errors(&grid, &values, tru);
            int_sum += i;
            sup_sum += s;
        }
        let m = xs.len().max(1) as f64;
        rows.push(RawRow {
            scenario: task.scenario,
            m: task.m,
            n: task.n,
            rule: task.rule.name().into(),
            prediction: task.prediction.name().into(),
            replicate: task.replicate,
            seed: task.seed,
            fold: k,
            is_kopt: k == model.k_opt,
            eps_int: int_sum / m,
            eps_sup: sup_sum / m,
            oob_imse1: fold.oob_error.unwrap_or(f64::NAN),
            top_feature,
            status: "ok".into(),
        });
    }
    Ok(rows)
}

/// Runs one replicate; failures become a single status row.
pub fn run_task(spec: &ExperimentSpec, task: &Task) -> (Vec<RawRow>, f64) {
    let start = Instant::now();
    let rows = run_task_inner(spec, task).unwrap_or_else(|e| {
        vec![RawRow {
            scenario: task.scenario,
            m: task.m,
            n: task.n,
            rule: task.rule.name().into(),
            prediction: task.prediction.name().into(),
            replicate: task.replicate,
            seed: task.seed,
            fold: 0,
            is_kopt: false,
            eps_int: f64::NAN,
            eps_sup: f64::NAN,
            oob_imse1: f64::NAN,
            top_feature: 0,
            status: e.code().into(),
        }]
    });
    (rows, start.elapsed().as_secs_f64())
}

/// Runs every task in memory (no files), in canonical order.
pub fn run_in_memory(spec: &ExperimentSpec) -> Result<Vec<RawRow>> {
    spec.validate()?;
    let per_task: Vec<Vec<RawRow>> = spec.tasks().par_iter().map(|t| run_task(spec, t).0).collect();
    Ok(per_task.concat())
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| IcrfError::Serde(e.to_string()))
}

fn from_csv<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize().map(|row| row.map_err(IcrfError::from)).collect()
}

/// Runs (or resumes) the experiment under `out_dir` and returns the merged
/// raw rows.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<Vec<RawRow>> {
    spec.validate()?;
    let shard_dir = out_dir.join("shards");
    std::fs::create_dir_all(&shard_dir)?;
    let tasks = spec.tasks();
    let timings: Vec<Option<TimingRow>> = tasks
        .par_iter()
        .map(|task| {
            let path = shard_dir.join(task.shard_name());
            if path.exists() {
                return Ok(None);
            }
            let (rows, seconds) = run_task(spec, task);
            atomic_write(&path, &to_csv(&rows)?)?;
            Ok(Some(TimingRow {
                scenario: task.scenario,
                m: task.m,
                n: task.n,
                rule: task.rule.name().into(),
                prediction: task.prediction.name().into(),
                replicate: task.replicate,
                seconds,
            }))
        })
        .collect::<Result<_>>()?;
    let mut raw = Vec::new();
    for task in &tasks {
        raw.extend(from_csv::<RawRow>(&std::fs::read(shard_dir.join(task.shard_name()))?)?);
    }
    atomic_write(&out_dir.join("raw.csv"), &to_csv(&raw)?)?;
    atomic_write(&out_dir.join("summary.csv"), &to_csv(&aggregate(&raw))?)?;
    let new_timings: Vec<TimingRow> = timings.into_iter().flatten().collect();
    if !new_timings.is_empty() {
        let timing_path = out_dir.join("timing.csv");
        let mut all: Vec<TimingRow> = if timing_path.exists() { from_csv(&std::fs::read(&timing_path)?)? } else { Vec::new() };
        all.extend(new_timings);
        atomic_write(&timing_path, &to_csv(&all)?)?;
    }
    Ok(raw)
}

/// Linear-interpolation (type 7) sample quantile of sorted data.
pub fn quantile7(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub q1: f64,
    pub q3: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let mean = if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    Summary { mean, q1: quantile7(&v, 0.25), q3: quantile7(&v, 0.75) }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: u8,
    pub m: usize,
    pub n: usize,
    pub rule: String,
    pub prediction: String,
    /// Fold number, or `kopt` for the selected fold.
    pub fold: String,
    pub count: usize,
    pub eps_int_mean: f64,
    pub eps_int_q1: f64,
    pub eps_int_q3: f64,
    pub eps_sup_mean: f64,
    pub eps_sup_q1: f64,
    pub eps_sup_q3: f64,
    pub oob_imse1_mean: f64,
}

/// Mean and quartiles per (scenario, M, n, rule, prediction, fold), plus a
/// `kopt` group per cell. Failed replicates are excluded.
pub fn aggregate(rows: &[RawRow]) -> Vec<SummaryRow> {
    type Key = (u8, usize, usize, String, String, String);
    let mut groups: BTreeMap<Key, Vec<&RawRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.status == "ok") {
        let base = |fold: String| (r.scenario, r.m, r.n, r.rule.clone(), r.prediction.clone(), fold);
        groups.entry(base(format!("{:03}", r.fold))).or_default().push(r);
        if r.is_kopt {
            groups.entry(base("kopt".into())).or_default().push(r);
        }
    }
    groups
        .into_iter()
        .map(|((scenario, m, n, rule, prediction, fold), rs)| {
            let int = summarize(&rs.iter().map(|r| r.eps_int).collect::<Vec<_>>());
            let sup = summarize(&rs.iter().map(|r| r.eps_sup).collect::<Vec<_>>());
            let oob = summarize(&rs.iter().map(|r| r.oob_imse1).collect::<Vec<_>>());
            SummaryRow {
                scenario,
                m,
                n,
                rule,
                prediction,
                fold: fold.trim_start_matches('0').to_string(),
                count: rs.len(),
                eps_int_mean: int.mean,
                eps_int_q1: int.q1,
                eps_int_q3: int.q3,
                eps_sup_mean: sup.mean,
                eps_sup_q1: sup.q1,
                eps_sup_q3: sup.q3,
                oob_imse1_mean: oob.mean,
            }
        })
        .collect()
}
