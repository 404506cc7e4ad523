//! Simulation scenarios with known conditional survival functions.
//!
//! | id | name  | X                    | T          | monitors U          | μ(X)                                   |
//! |----|-------|----------------------|------------|---------------------|----------------------------------------|
//! | 1  | PH-L  | N₂₅(0, Σ(0.9))       | Exp(μ)     | Exp(μ̄)              | exp(0.1·Σ₁₁..₂₀ Xⱼ − 0.1)              |
//! | 2  | PH-NL | U([0,1]¹⁰)           | Exp(μ)     | U(0, τ)             | sin(πX₁) + 2\|X₂ − ½\| + X₃³           |
//! | 3  | nPH   | N₂₅(0, Σ(0.75))      | G(μ, 2)    | U(0, 1.5τ)          | 0.5 + 0.3\|Σ₁₁..₁₅ Xⱼ\|                |
//! | 4  | CNIC  | N₂₅(0, Σ(0.75))      | LN(μ)      | LN(0.8μ)            | 0.3\|Σ₁..₅ Xⱼ\| + 0.3\|Σ₂₁..₂₅ Xⱼ\|    |
//! | 5  | IC    | N₁₀(0, Σ(0.2))       | Exp(μ)     | LN(T)               | 2·expit(X₁ + X₂ + X₃)                  |
//! | 6  | nSM   | N₂₅(0, Σ(0.9))       | SDE(μ)     | Exp(μ̄)              | as scenario 1                          |
//!
//! `Σ(ρ)ᵢⱼ = ρ^|i−j|`. Exponential laws are parameterized by their mean,
//! `LN(m)` is `exp(N(m, 1))`, and `SDE(μ)` is `½(E + ½⌈2E⌉)` with
//! `E ~ Exp(μ)`. `μ̄` is the mean of μ over a fixed pre-draw of covariates.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

use crate::error::{IcrfError, Result};
use crate::io::{atomic_write, Dataset};
use crate::metrics::time_grid;
use crate::smooth::std_normal_cdf;
use crate::survcurve::IntervalObservation;

pub const DEFAULT_TAU: f64 = 5.0;
pub const MU_BAR_DRAWS: usize = 100_000;
const MU_BAR_SEED: u64 = 0x005e_ed0f_3ba5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: u8,
    pub n: usize,
    /// Number of monitoring times per subject.
    pub m: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn new(id: u8, n: usize, m: usize, seed: u64) -> Result<Self> {
        let s = Self { id, n, m, tau: DEFAULT_TAU, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.id) {
            return Err(IcrfError::Config(format!("scenario id must be 1..=6, got {}", self.id)));
        }
        if self.m == 0 {
            return Err(IcrfError::Config("at least one monitoring time is required".into()));
        }
        if !(self.tau > 0.0) {
            return Err(IcrfError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        name(self.id)
    }

    pub fn n_features(&self) -> usize {
        n_features(self.id)
    }
}

pub fn name(id: u8) -> &'static str {
    match id {
        1 => "PH-L",
        2 => "PH-NL",
        3 => "non-PH",
        4 => "CNIC",
        5 => "IC",
        _ => "non-SM",
    }
}

pub fn n_features(id: u8) -> usize {
    match id {
        2 | 5 => 10,
        _ => 25,
    }
}

fn ar1_normal<R: Rng + ?Sized>(p: usize, rho: f64, rng: &mut R) -> Vec<f64> {
    let scale = (1.0 - rho * rho).sqrt();
    let mut x = Vec::with_capacity(p);
    let mut prev: f64 = rng.sample(StandardNormal);
    x.push(prev);
    for _ in 1..p {
        let z: f64 = rng.sample(StandardNormal);
        prev = rho * prev + scale * z;
        x.push(prev);
    }
    x
}

/// Draws one covariate vector from the scenario's covariate law.
pub fn draw_covariates<R: Rng + ?Sized>(id: u8, rng: &mut R) -> Vec<f64> {
    match id {
        2 => (0..10).map(|_| rng.random::<f64>()).collect(),
        1 | 6 => ar1_normal(25, 0.9, rng),
        3 | 4 => ar1_normal(25, 0.75, rng),
        _ => ar1_normal(10, 0.2, rng),
    }
}

fn sum(x: &[f64], from: usize, to: usize) -> f64 {
    x[from - 1..to].iter().sum()
}

/// The scenario's μ(x).
pub fn mu(id: u8, x: &[f64]) -> f64 {
    match id {
        1 | 6 => (0.1 * sum(x, 11, 20) - 0.1).exp(),
        2 => (std::f64::consts::PI * x[0]).sin() + 2.0 * (x[1] - 0.5).abs() + x[2].powi(3),
        3 => 0.5 + 0.3 * sum(x, 11, 15).abs(),
        4 => 0.3 * sum(x, 1, 5).abs() + 0.3 * sum(x, 21, 25).abs(),
        _ => 2.0 / (1.0 + (-(x[0] + x[1] + x[2])).exp()),
    }
}

/// Mean of μ over a fixed pre-draw of [`MU_BAR_DRAWS`] covariate vectors.
pub fn mu_bar(id: u8) -> f64 {
    static CACHE: [OnceLock<f64>; 6] = [const { OnceLock::new() }; 6];
    let idx = (id.clamp(1, 6) - 1) as usize;
    *CACHE[idx].get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(MU_BAR_SEED + id as u64);
        (0..MU_BAR_DRAWS).map(|_| mu(id, &draw_covariates(id, &mut rng))).sum::<f64>() / MU_BAR_DRAWS as f64
    })
}

fn exp_mean<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    Exp::new(1.0 / mean).expect("positive mean").sample(rng)
}

fn lognormal<R: Rng + ?Sized>(location: f64, rng: &mut R) -> f64 {
    LogNormal::new(location, 1.0).expect("finite location").sample(rng)
}

/// Draws a failure time given `μ(x)`.
pub fn draw_time<R: Rng + ?Sized>(id: u8, mu: f64, rng: &mut R) -> f64 {
    match id {
        1 | 2 | 5 => exp_mean(mu, rng),
        3 => Gamma::new(mu, 2.0).expect("positive shape").sample(rng),
        4 => lognormal(mu, rng),
        _ => {
            let e = exp_mean(mu, rng);
            0.5 * (e + 0.5 * (2.0 * e).ceil())
        }
    }
}

/// Draws one monitoring time given `μ(x)` and the latent failure time.
pub fn draw_monitor<R: Rng + ?Sized>(id: u8, mu: f64, t: f64, tau: f64, rng: &mut R) -> f64 {
    match id {
        1 | 6 => exp_mean(mu_bar(id), rng),
        2 => tau * rng.random::<f64>(),
        3 => 1.5 * tau * rng.random::<f64>(),
        4 => lognormal(0.8 * mu, rng),
        _ => lognormal(t, rng),
    }
}

/// Bracketing pair of sorted monitoring times around `t`: `L` is the largest
/// monitor below `t` (or 0), `R` the smallest at or above it (or ∞).
pub fn intervals_from_monitoring(t: f64, monitors: &[f64]) -> (f64, f64) {
    let left = monitors.iter().copied().filter(|&u| u < t).fold(0.0, f64::max);
    let right = monitors.iter().copied().filter(|&u| u >= t).fold(f64::INFINITY, f64::min);
    (left, right)
}

/// True conditional survival `S₀(t | μ)` for the scenario's failure law.
pub fn truth_from_mu(id: u8, t: f64, mu: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    match id {
        1 | 2 | 5 => (-t / mu).exp(),
        3 => GammaDist::new(mu, 0.5).expect("positive shape").sf(t),
        4 => 1.0 - std_normal_cdf(t.ln() - mu),
        _ => {
            let m = (2.0 * t).floor();
            if t < m / 2.0 + 0.25 {
                (-m / (2.0 * mu)).exp()
            } else {
                (-(2.0 * t - (m + 1.0) / 2.0) / mu).exp()
            }
        }
    }
}

pub fn truth_eval(id: u8, t: f64, x: &[f64]) -> f64 {
    truth_from_mu(id, t, mu(id, x))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedDataset {
    pub scenario: Scenario,
    pub dataset: Dataset,
    pub latent_times: Vec<f64>,
}

impl SimulatedDataset {
    pub fn truth(&self, t: f64, x: &[f64]) -> f64 {
        truth_eval(self.scenario.id, t, x)
    }

    /// Truth sidecar: one row per subject with its latent time and `S₀` on
    /// `resolution` equispaced points of `[0, τ]`.
    pub fn truth_table(&self, resolution: usize) -> TruthTable {
        let grid = time_grid(self.scenario.tau, resolution);
        let values = self
            .dataset
            .observations
            .iter()
            .map(|o| grid.iter().map(|&t| self.truth(t, &o.covariates)).collect())
            .collect();
        TruthTable { grid, latent_times: self.latent_times.clone(), values }
    }
}

pub fn generate(scenario: &Scenario) -> Result<SimulatedDataset> {
    scenario.validate()?;
    let id = scenario.id;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut observations = Vec::with_capacity(scenario.n);
    let mut latent_times = Vec::with_capacity(scenario.n);
    for _ in 0..scenario.n {
        let x = draw_covariates(id, &mut rng);
        let m = mu(id, &x);
        let t = draw_time(id, m, &mut rng);
        let monitors: Vec<f64> = (0..scenario.m).map(|_| draw_monitor(id, m, t, scenario.tau, &mut rng)).collect();
        let (l, r) = intervals_from_monitoring(t, &monitors);
        observations.push(IntervalObservation::new(l, r, x)?);
        latent_times.push(t);
    }
    let names = (1..=n_features(id)).map(|j| format!("x{j}")).collect();
    Ok(SimulatedDataset { scenario: *scenario, dataset: Dataset::new(observations, names, scenario.tau)?, latent_times })
}

/// Latent times and true survival values on a shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthTable {
    pub grid: Vec<f64>,
    pub latent_times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl TruthTable {
    /// Header `id,latent_time,<t₀>,<t₁>,…`; one row per subject.
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string(), "latent_time".to_string()];
        header.extend(self.grid.iter().map(f64::to_string));
        w.write_record(&header)?;
        for (i, (t, row)) in self.latent_times.iter().zip(&self.values).enumerate() {
            let mut rec = vec![i.to_string(), t.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| IcrfError::Serde(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_csv_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv_bytes(&fs::read(path)?)
    }

    pub fn from_csv_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(bytes);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let parse = |s: &str, row: usize, col: &str| {
            s.trim().parse::<f64>().map_err(|e| IcrfError::Parse { row, column: col.into(), message: e.to_string() })
        };
        let grid = headers
            .iter()
            .skip(2)
            .map(|h| parse(h, 0, h))
            .collect::<Result<Vec<f64>>>()?;
        let mut latent_times = Vec::new();
        let mut values = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            latent_times.push(parse(&rec[1], k + 1, "latent_time")?);
            values.push(
                (2..headers.len())
                    .map(|j| parse(&rec[j], k + 1, &headers[j]))
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        Ok(Self { grid, latent_times, values })
    }
}
