//! The recursive forest.
//!
//! Fold `k` projects every subject's fold-`k−1` covariate curve onto its
//! censoring interval, grows `n_tree` trees on those carried curves and
//! records the mean out-of-bag error. The fold with the smallest error is the
//! model's default for prediction.

use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IcrfError, Result};
use crate::io::{atomic_write, Dataset};
use crate::metrics::{imse1, imse2, Metric};
use crate::npmle::npmle_curve;
use crate::smooth::{bandwidth, bandwidth_from_constant, SmoothedSurvival};
use crate::split::EndpointSurvival;
use crate::survcurve::{IntervalObservation, LinearSurvival, ProjectableSurvival, StepSurvival};
use crate::tree::{grow_tree, GrowContext, Tree, TreeParams};

/// Equispaced points on `(0, τ]` added to the model grid.
pub const EQUISPACED_POINTS: usize = 100;

/// Positive time points on which carried curves and smoothed leaves are
/// tabulated: every positive finite endpoint plus an equispaced grid on
/// `(0, τ]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn from_observations(observations: &[IntervalObservation], tau: f64) -> Self {
        let mut points: Vec<f64> = (1..=EQUISPACED_POINTS).map(|k| tau * k as f64 / EQUISPACED_POINTS as f64).collect();
        for o in observations {
            points.extend([o.left, o.right].into_iter().filter(|&t| t > 0.0 && t.is_finite()));
        }
        points.sort_by(f64::total_cmp);
        points.dedup();
        Self { points }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// `0` followed by the grid points; the column layout of carried rows.
    pub fn with_origin(&self) -> Vec<f64> {
        std::iter::once(0.0).chain(self.points.iter().copied()).collect()
    }

    pub fn tabulate_step(&self, curve: &StepSurvival) -> Vec<f64> {
        std::iter::once(1.0).chain(self.points.iter().map(|&t| curve.eval(t))).collect()
    }
}

/// Linear interpolation of a tabulated row, flat outside the knots.
fn interp(times: &[f64], row: &[f64], t: f64) -> f64 {
    let idx = times.partition_point(|&x| x <= t);
    if idx == 0 {
        return row[0];
    }
    if idx == times.len() {
        return row[idx - 1];
    }
    let (t0, t1) = (times[idx - 1], times[idx]);
    row[idx - 1] + (row[idx] - row[idx - 1]) * (t - t0) / (t1 - t0)
}

/// Per-subject full-conditional curves `S(t | Xᵢ, Iᵢ)`, tabulated on the
/// model grid (with the origin) and read as piecewise linear.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalCurveSet {
    times: Vec<f64>,
    rows: Vec<f64>,
    n: usize,
    fold_index: usize,
}

impl ConditionalCurveSet {
    /// Projects each covariate row onto its subject's interval.
    pub fn project_rows(
        grid: &TimeGrid,
        cov_rows: &[Vec<f64>],
        observations: &[IntervalObservation],
        tau: f64,
        fold_index: usize,
    ) -> Self {
        let times = grid.with_origin();
        let projected: Vec<Vec<f64>> = cov_rows
            .par_iter()
            .zip(observations)
            .map(|(row, o)| {
                let curve = LinearSurvival::from_sorted_unchecked(times.clone(), row.clone());
                let p = curve.project(o, tau);
                times.iter().map(|&t| p.eval(t)).collect()
            })
            .collect();
        let n = projected.len();
        Self { times, rows: projected.concat(), n, fold_index }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn fold_index(&self) -> usize {
        self.fold_index
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let g = self.times.len();
        &self.rows[i * g..(i + 1) * g]
    }

    pub fn curve(&self, i: usize) -> LinearSurvival {
        LinearSurvival::from_sorted_unchecked(self.times.clone(), self.row(i).to_vec())
    }

    /// Column-wise mean over `members`.
    pub fn mean_row(&self, members: &[usize]) -> Vec<f64> {
        let mut acc = vec![0.0; self.times.len()];
        for &i in members {
            for (a, v) in acc.iter_mut().zip(self.row(i)) {
                *a += v;
            }
        }
        let n = members.len().max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_tree: usize,
    pub n_fold: usize,
    /// In-bag fraction; each tree uses `⌈subsample·n⌉` subjects drawn
    /// without replacement.
    pub subsample: f64,
    pub tree: TreeParams,
    pub initial_smooth: bool,
    pub monitor: Metric,
    pub seed: u64,
    /// Overrides the inter-quartile bandwidth constant.
    pub bandwidth_c: Option<f64>,
    /// Carry each subject's out-of-bag prediction instead of the full forest's.
    pub carry_oob_only: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_tree: 300,
            n_fold: 10,
            subsample: 0.95,
            tree: TreeParams::default(),
            initial_smooth: true,
            monitor: Metric::Imse1,
            seed: 0,
            bandwidth_c: None,
            carry_oob_only: false,
        }
    }
}

impl ForestParams {
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.n_tree == 0 {
            return Err(IcrfError::Config("n_tree must be at least 1".into()));
        }
        if self.n_fold == 0 {
            return Err(IcrfError::Config("n_fold must be at least 1".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(IcrfError::Config(format!("subsample must lie in (0, 1], got {}", self.subsample)));
        }
        if let Some(c) = self.bandwidth_c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(IcrfError::Config(format!("bandwidth constant must be positive, got {c}")));
            }
        }
        self.tree.validate(p)
    }

    pub fn inbag_size(&self, n: usize) -> usize {
        ((self.subsample * n as f64).ceil() as usize).clamp(1, n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestFold {
    pub fold_index: usize,
    pub trees: Vec<Tree>,
    /// Mean of the available per-tree errors; `None` when no tree had a
    /// usable out-of-bag set.
    pub oob_error: Option<f64>,
    pub per_tree_oob: Vec<Option<f64>>,
}

impl ForestFold {
    /// Equal-weight average of the trees' tabulated smoothed leaves at `x`.
    pub fn predict_tabulated(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut acc: Vec<f64> = Vec::new();
        for tree in &self.trees {
            let tab = tree.leaf_for(x)?.tabulated().ok_or_else(missing_cache)?;
            if acc.is_empty() {
                acc = vec![0.0; tab.values().len()];
            }
            acc.iter_mut().zip(tab.values()).for_each(|(a, v)| *a += v);
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    /// Average over trees evaluated exactly at `times`.
    pub fn predict(&self, x: &[f64], smoothed: bool, times: &[f64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; times.len()];
        for tree in &self.trees {
            let leaf = tree.leaf_for(x)?;
            if smoothed {
                acc.iter_mut().zip(times).for_each(|(a, &t)| *a += leaf.smoothed().eval(t));
            } else {
                acc.iter_mut().zip(times).for_each(|(a, &t)| *a += leaf.curve().eval(t));
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }
}

fn missing_cache() -> IcrfError {
    IcrfError::InvariantViolation("leaf tabulation missing; call rebuild_caches".into())
}

fn tree_rng(seed: u64, fold: usize, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((fold as u64) << 32) | tree as u64);
    rng
}

fn complement(inbag: &[usize], n: usize) -> Vec<usize> {
    let mut used = vec![false; n];
    inbag.iter().for_each(|&i| used[i] = true);
    (0..n).filter(|&i| !used[i]).collect()
}

/// One tree's error on the subjects it did not see, using its smoothed
/// tabulated prediction. `None` when the metric has nothing to average.
pub fn tree_oob_error(tree: &Tree, observations: &[IntervalObservation], tau: f64, metric: Metric) -> Result<Option<f64>> {
    let oob = complement(tree.inbag(), observations.len());
    if oob.is_empty() {
        return Ok(None);
    }
    let mut curves = Vec::with_capacity(oob.len());
    let mut subset = Vec::with_capacity(oob.len());
    for &i in &oob {
        let leaf = tree.leaf_for(&observations[i].covariates)?;
        curves.push(leaf.tabulated().ok_or_else(missing_cache)?.clone());
        subset.push(observations[i].clone());
    }
    let value = match metric {
        Metric::Imse1 => imse1(&curves, &subset, tau).map(|r| r.value),
        Metric::Imse2 => imse2(&curves, &subset, tau).map(|r| r.value),
    };
    match value {
        Ok(v) => Ok(Some(v)),
        Err(IcrfError::AllSkipped | IcrfError::EmptyInput) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Per-tree out-of-bag errors of a fold and their mean.
pub fn oob_error(fold: &ForestFold, observations: &[IntervalObservation], tau: f64, metric: Metric) -> Result<(Option<f64>, Vec<Option<f64>>)> {
    let per_tree = fold
        .trees
        .par_iter()
        .map(|t| tree_oob_error(t, observations, tau, metric))
        .collect::<Result<Vec<_>>>()?;
    Ok((mean_some(&per_tree), per_tree))
}

fn mean_some(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Index (1-based) of the smallest recorded error; earliest fold on ties.
fn argmin_fold(folds: &[ForestFold]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for f in folds {
        if let Some(e) = f.oob_error {
            if best.is_none_or(|(_, b)| e < b) {
                best = Some((f.fold_index, e));
            }
        }
    }
    best.map_or(1, |(k, _)| k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcrfModel {
    pub params: ForestParams,
    pub feature_names: Vec<String>,
    pub tau: f64,
    pub grid: TimeGrid,
    pub bandwidth: f64,
    pub initial_marginal: StepSurvival,
    pub folds: Vec<ForestFold>,
    /// 1-based.
    pub k_opt: usize,
}

impl IcrfModel {
    pub fn fit(data: &Dataset, params: &ForestParams) -> Result<Self> {
        fit(data, params)
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Fold `k` (1-based), or the selected fold when `None`.
    pub fn fold(&self, k: Option<usize>) -> Result<&ForestFold> {
        let k = k.unwrap_or(self.k_opt);
        if k == 0 || k > self.folds.len() {
            return Err(IcrfError::InvalidFold { fold: k, n_fold: self.folds.len() });
        }
        Ok(&self.folds[k - 1])
    }

    pub fn oob_errors(&self) -> Vec<Option<f64>> {
        self.folds.iter().map(|f| f.oob_error).collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(IcrfError::DimensionMismatch { expected: self.n_features(), got: x.len() });
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64], fold: Option<usize>, smoothed: bool, times: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.fold(fold)?.predict(x, smoothed, times)
    }

    pub fn predict_many(&self, xs: &[Vec<f64>], fold: Option<usize>, smoothed: bool, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        let f = self.fold(fold)?;
        xs.par_iter()
            .map(|x| {
                self.check_dim(x)?;
                f.predict(x, smoothed, times)
            })
            .collect()
    }

    /// Smoothed prediction on [`IcrfModel::tabulation_times`], linearly
    /// interpolated between grid points.
    pub fn predict_tabulated(&self, x: &[f64], fold: Option<usize>) -> Result<LinearSurvival> {
        self.check_dim(x)?;
        let values = self.fold(fold)?.predict_tabulated(x)?;
        Ok(LinearSurvival::from_sorted_unchecked(self.tabulation_times(), values))
    }

    pub fn tabulation_times(&self) -> Vec<f64> {
        self.grid.with_origin()
    }

    /// Attaches leaf tabulations on the model grid.
    pub fn rebuild_caches(&mut self) {
        let grid = self.grid.points().to_vec();
        self.folds
            .par_iter_mut()
            .for_each(|f| f.trees.iter_mut().for_each(|t| t.tabulate(&grid)));
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut m: IcrfModel = serde_json::from_str(s)?;
        m.rebuild_caches();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Covariate-conditional survival at the interval endpoints, read off a
/// tabulated row.
fn endpoints_from_row(times: &[f64], row: &[f64], o: &IntervalObservation) -> EndpointSurvival {
    EndpointSurvival {
        at_left: interp(times, row, o.left),
        at_right: if o.right.is_finite() { interp(times, row, o.right) } else { 0.0 },
    }
}

pub fn fit(data: &Dataset, params: &ForestParams) -> Result<IcrfModel> {
    let obs = &data.observations;
    let (n, p, tau) = (obs.len(), data.n_features(), data.tau);
    params.validate(p)?;
    let n_min = params.tree.n_min;
    if p == 0 {
        return Err(IcrfError::InsufficientData("at least one covariate is required".into()));
    }
    if n < 2 * n_min {
        return Err(IcrfError::InsufficientData(format!("need at least {} subjects, got {n}", 2 * n_min)));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(IcrfError::Config(format!("tau must be positive and finite, got {tau}")));
    }
    let s = params.inbag_size(n);
    if s == n && params.n_fold > 1 {
        return Err(IcrfError::EmptyOob);
    }

    let grid = TimeGrid::from_observations(obs, tau);
    let times = grid.with_origin();
    let (_, marginal) = npmle_curve(obs, tau, params.tree.tail_correction)?;
    let h = match params.bandwidth_c {
        Some(c) => bandwidth_from_constant(c, n_min),
        None => bandwidth(&marginal, n_min, tau),
    };
    let initial_row = if params.initial_smooth {
        SmoothedSurvival::new(marginal.clone(), h)?.tabulate(grid.points()).values().to_vec()
    } else {
        grid.tabulate_step(&marginal)
    };
    let mut cov_rows = vec![initial_row; n];
    let mut folds = Vec::with_capacity(params.n_fold);

    for k in 1..=params.n_fold {
        let carried = ConditionalCurveSet::project_rows(&grid, &cov_rows, obs, tau, k);
        let endpoints: Vec<EndpointSurvival> =
            cov_rows.iter().zip(obs).map(|(row, o)| endpoints_from_row(&times, row, o)).collect();
        let ctx = GrowContext { observations: obs, carried: &carried, endpoints: &endpoints, tau, bandwidth: h };
        let trees = (0..params.n_tree)
            .into_par_iter()
            .map(|b| {
                let mut rng = tree_rng(params.seed, k, b);
                let mut inbag = sample(&mut rng, n, s).into_vec();
                inbag.sort_unstable();
                let mut tree = grow_tree(&ctx, &inbag, &params.tree, &mut rng)?;
                tree.tabulate(grid.points());
                Ok(tree)
            })
            .collect::<Result<Vec<Tree>>>()?;
        let mut fold = ForestFold { fold_index: k, trees, oob_error: None, per_tree_oob: Vec::new() };
        let (mean, per_tree) = oob_error(&fold, obs, tau, params.monitor)?;
        if mean.is_none() && params.n_fold > 1 {
            return Err(IcrfError::EmptyOob);
        }
        fold.oob_error = mean;
        fold.per_tree_oob = per_tree;
        if k < params.n_fold {
            cov_rows = carried_predictions(&fold, obs, params.carry_oob_only)?;
        }
        folds.push(fold);
    }
    let k_opt = argmin_fold(&folds);
    Ok(IcrfModel {
        params: *params,
        feature_names: data.feature_names.clone(),
        tau,
        grid,
        bandwidth: h,
        initial_marginal: marginal,
        folds,
        k_opt,
    })
}

/// Fold predictions at every training subject, optionally restricted to the
/// trees for which the subject was out of bag.
fn carried_predictions(fold: &ForestFold, obs: &[IntervalObservation], oob_only: bool) -> Result<Vec<Vec<f64>>> {
    if !oob_only {
        return obs.par_iter().map(|o| fold.predict_tabulated(&o.covariates)).collect();
    }
    obs.par_iter()
        .enumerate()
        .map(|(i, o)| {
            let trees: Vec<&Tree> = fold.trees.iter().filter(|t| t.inbag().binary_search(&i).is_err()).collect();
            if trees.is_empty() {
                return fold.predict_tabulated(&o.covariates);
            }
            let mut acc: Vec<f64> = Vec::new();
            for t in &trees {
                let tab = t.leaf_for(&o.covariates)?.tabulated().ok_or_else(missing_cache)?;
                if acc.is_empty() {
                    acc = vec![0.0; tab.values().len()];
                }
                acc.iter_mut().zip(tab.values()).for_each(|(a, v)| *a += v);
            }
            let m = trees.len() as f64;
            acc.iter_mut().for_each(|a| *a /= m);
            Ok(acc)
        })
        .collect()
}

/// Metric of the selected fold's smoothed predictions on `observations`.
pub fn model_error(model: &IcrfModel, observations: &[IntervalObservation], metric: Metric) -> Result<f64> {
    let curves = observations
        .par_iter()
        .map(|o| model.predict_tabulated(&o.covariates, None))
        .collect::<Result<Vec<_>>>()?;
    metric.evaluate(&curves, observations, model.tau)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub feature_names: Vec<String>,
    pub baseline: f64,
    /// Mean increase in error per feature.
    pub raw: Vec<f64>,
    /// Standard error of each mean over permutations.
    pub std_error: Vec<f64>,
    pub rescaled: Vec<f64>,
    /// The largest raw value; `rescaled = raw / multiplier` when positive.
    pub multiplier: f64,
}

impl Importance {
    /// Feature index with the largest raw importance (lowest index on ties).
    pub fn top_feature(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (j, &v) in self.raw.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        best.map(|(j, _)| j)
    }
}

/// Permutation importance: for each feature, the mean over `n_perm`
/// permutations of the error increase when that column is shuffled.
pub fn variable_importance(model: &IcrfModel, data: &Dataset, n_perm: usize, metric: Metric, seed: u64) -> Result<Importance> {
    let obs = &data.observations;
    let p = model.n_features();
    if data.n_features() != p {
        return Err(IcrfError::DimensionMismatch { expected: p, got: data.n_features() });
    }
    let n_perm = n_perm.max(1);
    let baseline = model_error(model, obs, metric)?;
    let stats = (0..p)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let mut diffs = Vec::with_capacity(n_perm);
            for _ in 0..n_perm {
                let mut column: Vec<f64> = obs.iter().map(|o| o.covariates[j]).collect();
                column.shuffle(&mut rng);
                let permuted: Vec<IntervalObservation> = obs
                    .iter()
                    .zip(&column)
                    .map(|(o, &v)| {
                        let mut o = o.clone();
                        o.covariates[j] = v;
                        o
                    })
                    .collect();
                diffs.push(model_error(model, &permuted, metric)? - baseline);
            }
            let mean = diffs.iter().sum::<f64>() / n_perm as f64;
            let se = if n_perm > 1 {
                let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n_perm - 1) as f64;
                (var / n_perm as f64).sqrt()
            } else {
                0.0
            };
            Ok((mean, se))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let raw: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let std_error = stats.iter().map(|s| s.1).collect();
    let multiplier = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rescaled = if multiplier > 0.0 { raw.iter().map(|v| v / multiplier).collect() } else { raw.clone() };
    Ok(Importance { feature_names: model.feature_names.clone(), baseline, raw, std_error, rescaled, multiplier })
}
