//! Error functionals.
//!
//! Oracle errors (`eps_int`, `eps_sup`) compare an estimate to a known truth on
//! an equispaced grid over `[0, τ]`. The data-only errors (`imse1`, `imse2`)
//! need nothing but the observed intervals.

use serde::{Deserialize, Serialize};

use crate::error::{IcrfError, Result};
use crate::survcurve::{IntervalObservation, ProjectableSurvival, SurvivalFunction};

pub const DEFAULT_GRID_RESOLUTION: usize = 1001;

/// Known-status lengths at or below this are treated as empty.
const MIN_KNOWN_LENGTH: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Imse1,
    Imse2,
}

impl std::str::FromStr for Metric {
    type Err = IcrfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "imse1" => Ok(Metric::Imse1),
            "imse2" => Ok(Metric::Imse2),
            other => Err(IcrfError::Config(format!("unknown metric {other:?}"))),
        }
    }
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Imse1 => "imse1",
            Metric::Imse2 => "imse2",
        }
    }

    pub fn evaluate<C: ProjectableSurvival>(self, curves: &[C], obs: &[IntervalObservation], tau: f64) -> Result<f64> {
        match self {
            Metric::Imse1 => imse1(curves, obs, tau).map(|r| r.value),
            Metric::Imse2 => imse2(curves, obs, tau).map(|r| r.value),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub per_subject: Option<Vec<f64>>,
}

/// `t_k = τ·k/(resolution − 1)`, `k = 0..resolution`.
pub fn time_grid(tau: f64, resolution: usize) -> Vec<f64> {
    let res = resolution.max(2);
    (0..res).map(|k| tau * k as f64 / (res - 1) as f64).collect()
}

fn trapezoid(grid: &[f64], ys: &[f64]) -> f64 {
    grid.windows(2).zip(ys.windows(2)).map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1])).sum()
}

/// Integrated (trapezoid) and supremum absolute differences of two curves
/// tabulated on `grid`.
pub fn abs_errors(grid: &[f64], estimate: &[f64], truth: &[f64]) -> (f64, f64) {
    let diff: Vec<f64> = estimate.iter().zip(truth).map(|(a, b)| (a - b).abs()).collect();
    (trapezoid(grid, &diff), diff.iter().copied().fold(0.0, f64::max))
}

fn oracle_error<E, T>(estimate: E, truth: T, x_set: &[Vec<f64>], tau: f64, resolution: usize, sup: bool) -> ErrorReport
where
    E: Fn(&[f64], &[f64]) -> Vec<f64>,
    T: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    let grid = time_grid(tau, resolution);
    let per: Vec<f64> = x_set
        .iter()
        .map(|x| {
            let (int, sup_err) = abs_errors(&grid, &estimate(x, &grid), &truth(x, &grid));
            if sup {
                sup_err
            } else {
                int
            }
        })
        .collect();
    let value = per.iter().sum::<f64>() / per.len().max(1) as f64;
    ErrorReport {
        metric: if sup { "eps_sup" } else { "eps_int" }.into(),
        value,
        n: per.len(),
        per_subject: Some(per),
    }
}

/// `∫_0^τ |S₀(t|x) − Ŝ(t|x)| dt` by the trapezoid rule, averaged over `x_set`.
///
/// `estimate` and `truth` map a covariate vector and a time grid to survival
/// values on that grid.
pub fn eps_int<E, T>(estimate: E, truth: T, x_set: &[Vec<f64>], tau: f64, resolution: usize) -> ErrorReport
where
    E: Fn(&[f64], &[f64]) -> Vec<f64>,
    T: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    oracle_error(estimate, truth, x_set, tau, resolution, false)
}

/// `sup_t |S₀(t|x) − Ŝ(t|x)|` over the grid, averaged over `x_set`.
pub fn eps_sup<E, T>(estimate: E, truth: T, x_set: &[Vec<f64>], tau: f64, resolution: usize) -> ErrorReport
where
    E: Fn(&[f64], &[f64]) -> Vec<f64>,
    T: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    oracle_error(estimate, truth, x_set, tau, resolution, true)
}

/// Squared discrepancy from the known survival status, averaged over the
/// region where the status is known:
///
/// ```text
/// [∫_0^{L∧τ} (1 − Ŝ)² + ∫_{R∧τ}^τ Ŝ²] / [τ − (R∧τ) + (L∧τ)]
/// ```
///
/// Subjects with an empty known region are skipped.
pub fn imse1<C: SurvivalFunction>(curves: &[C], obs: &[IntervalObservation], tau: f64) -> Result<ErrorReport> {
    let mut per = Vec::with_capacity(obs.len());
    for (c, o) in curves.iter().zip(obs) {
        let l = o.left.min(tau);
        let r = o.right.min(tau);
        let known = tau - r + l;
        if known <= MIN_KNOWN_LENGTH {
            continue;
        }
        per.push((c.integral_complement_sq(0.0, l) + c.integral_sq(r, tau)) / known);
    }
    if per.is_empty() {
        return Err(IcrfError::AllSkipped);
    }
    Ok(ErrorReport {
        metric: "imse1".into(),
        value: per.iter().sum::<f64>() / per.len() as f64,
        n: per.len(),
        per_subject: Some(per),
    })
}

/// Mean integrated squared gap between each subject's full-conditional curve
/// (projection of its covariate curve onto its interval) and the covariate
/// curve itself, scaled by `1/τ`.
pub fn imse2<C: ProjectableSurvival>(cov_curves: &[C], obs: &[IntervalObservation], tau: f64) -> Result<ErrorReport> {
    if obs.is_empty() {
        return Err(IcrfError::EmptyInput);
    }
    let per: Vec<f64> = cov_curves
        .iter()
        .zip(obs)
        .map(|(c, o)| c.project(o, tau).integrated_sq_gap(c, 0.0, tau) / tau)
        .collect();
    Ok(ErrorReport {
        metric: "imse2".into(),
        value: per.iter().sum::<f64>() / per.len() as f64,
        n: per.len(),
        per_subject: Some(per),
    })
}
