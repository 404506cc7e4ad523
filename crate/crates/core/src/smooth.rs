//! Gaussian kernel smoothing of step survival curves.
//!
//! The smoothed curve integrates a Gaussian-kernel density estimate of the
//! step curve's jump masses:
//!
//! ```text
//! S~(t) = 1 − Σ_j ΔF_j Φ((t − u_j)/h)                          t > 4h
//! S~(t) = 1 − Σ_j ΔF_j [Φ((t − u_j)/h) − Φ((−t − u_j)/h)]       t ≤ 4h
//! ```
//!
//! The second form is the mirror (reflection) kernel near the origin, which
//! keeps `S~(0) = 1`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{IcrfError, Result};
use crate::survcurve::{LinearSurvival, StepSurvival, SurvivalFunction};

/// Equal-mass atoms used to discretise an exponential tail.
pub const TAIL_ATOMS: usize = 64;

/// Beyond this many bandwidths the Gaussian CDF is 0 or 1 in double precision.
const PHI_CUTOFF: f64 = 8.5;

pub fn std_normal_cdf(z: f64) -> f64 {
    if z > PHI_CUTOFF {
        1.0
    } else if z < -PHI_CUTOFF {
        0.0
    } else {
        0.5 * erfc(-z / std::f64::consts::SQRT_2)
    }
}

/// `½[S⁻¹(0.25) − S⁻¹(0.75)]`.
pub fn bandwidth_constant(marginal: &StepSurvival) -> Result<f64> {
    let upper = marginal.quantile(0.25);
    let lower = marginal.quantile(0.75);
    match (upper, lower) {
        (Some(u), Some(l)) if u - l > 0.0 && (u - l).is_finite() => Ok(0.5 * (u - l)),
        (Some(u), Some(l)) => Err(IcrfError::DegenerateQuantiles(0.5 * (u - l))),
        _ => Err(IcrfError::DegenerateQuantiles(f64::INFINITY)),
    }
}

/// `h = c · n_min^(−1/5)`, with `c = τ/10` when the quartiles are degenerate.
pub fn bandwidth(marginal: &StepSurvival, n_min: usize, tau: f64) -> f64 {
    let c = bandwidth_constant(marginal).unwrap_or(tau / 10.0);
    bandwidth_from_constant(c, n_min)
}

pub fn bandwidth_from_constant(c: f64, n_min: usize) -> f64 {
    c * (n_min.max(1) as f64).powf(-0.2)
}

/// Kernel-smoothed version of a step survival curve.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedSurvival {
    base: StepSurvival,
    bandwidth: f64,
    atoms: Vec<(f64, f64)>,
    /// `cumulative[i]` = total mass of `atoms[..i]`.
    cumulative: Vec<f64>,
}

/// Jump masses of the step part plus the exponential tail split into
/// [`TAIL_ATOMS`] equal-mass atoms at the mid-quantiles of the tail law.
fn mass_atoms(base: &StepSurvival) -> Vec<(f64, f64)> {
    let mut atoms: Vec<(f64, f64)> = base.jumps().into_iter().filter(|&(_, m)| m > 0.0).collect();
    if let (Some(rate), Some(&anchor)) = (base.tail_rate(), base.times().last()) {
        let remaining = base.last_value();
        if rate > 0.0 && remaining > 0.0 {
            let mass = remaining / TAIL_ATOMS as f64;
            for k in 0..TAIL_ATOMS {
                let q = (k as f64 + 0.5) / TAIL_ATOMS as f64;
                atoms.push((anchor - (-q).ln_1p() / rate, mass));
            }
        }
    }
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    atoms
}

impl SmoothedSurvival {
    pub fn new(base: StepSurvival, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(IcrfError::InvalidCurve(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let atoms = mass_atoms(&base);
        let mut cumulative = Vec::with_capacity(atoms.len() + 1);
        let mut acc = 0.0;
        cumulative.push(acc);
        for &(_, m) in &atoms {
            acc += m;
            cumulative.push(acc);
        }
        Ok(Self { base, bandwidth, atoms, cumulative })
    }

    pub fn base(&self) -> &StepSurvival {
        &self.base
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Atoms `(location, mass)` the kernel is applied to, sorted by location.
    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn eval(&self, t: f64) -> f64 {
        let h = self.bandwidth;
        let reach = PHI_CUTOFF * h;
        // Atoms left of the window are fully released, atoms right of it not at all.
        let lo = self.atoms.partition_point(|a| a.0 < t - reach);
        let hi = self.atoms.partition_point(|a| a.0 <= t + reach);
        let mut released = self.cumulative[lo];
        for &(u, m) in &self.atoms[lo..hi] {
            released += m * std_normal_cdf((t - u) / h);
        }
        if t <= 4.0 * h {
            let mirror_hi = self.atoms.partition_point(|a| a.0 <= reach - t);
            for &(u, m) in &self.atoms[..mirror_hi] {
                released -= m * std_normal_cdf((-t - u) / h);
            }
        }
        (1.0 - released).clamp(0.0, 1.0)
    }

    /// Piecewise-linear tabulation on `grid`; a knot at 0 is added if absent.
    pub fn tabulate(&self, grid: &[f64]) -> LinearSurvival {
        let mut times = Vec::with_capacity(grid.len() + 1);
        if grid.first().is_none_or(|&g| g > 0.0) {
            times.push(0.0);
        }
        times.extend_from_slice(grid);
        let values = times.iter().map(|&t| self.eval(t)).collect();
        LinearSurvival::from_sorted_unchecked(times, values)
    }
}

/// Smooths `base` with bandwidth `h`.
pub fn smooth_curve(base: &StepSurvival, h: f64) -> Result<SmoothedSurvival> {
    SmoothedSurvival::new(base.clone(), h)
}

impl SurvivalFunction for SmoothedSurvival {
    fn survival(&self, t: f64) -> f64 {
        self.eval(t)
    }
}

/// Serialized form: the base curve and bandwidth; atoms are rebuilt.
#[derive(Serialize, Deserialize)]
struct SmoothedRepr {
    base: StepSurvival,
    bandwidth: f64,
}

impl Serialize for SmoothedSurvival {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SmoothedRepr { base: self.base.clone(), bandwidth: self.bandwidth }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SmoothedSurvival {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = SmoothedRepr::deserialize(d)?;
        SmoothedSurvival::new(r.base, r.bandwidth).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(times: &[f64], values: &[f64]) -> StepSurvival {
        StepSurvival::new(times.to_vec(), values.to_vec(), None).unwrap()
    }

    #[test]
    fn bandwidth_examples() {
        // S⁻¹(0.75) = 1, S⁻¹(0.25) = 3.
        let c = step(&[1.0, 2.0, 3.0], &[0.75, 0.5, 0.25]);
        assert_eq!(bandwidth_constant(&c).unwrap(), 1.0);
        assert_eq!(bandwidth(&c, 1, 5.0), 1.0);
        assert!((bandwidth(&c, 32, 5.0) - 0.5).abs() < 1e-15);
        let point = StepSurvival::point_mass(2.0);
        assert!(matches!(bandwidth_constant(&point), Err(IcrfError::DegenerateQuantiles(_))));
        assert!((bandwidth(&point, 1, 5.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_jump_is_gaussian_cdf() {
        let s = smooth_curve(&StepSurvival::point_mass(10.0), 0.5).unwrap();
        assert!((s.eval(10.0) - 0.5).abs() < 1e-15);
        assert!((s.eval(10.0 + 1.96 * 0.5) - 0.025).abs() < 1e-4);
    }

    #[test]
    fn mirror_kernel_starts_at_one() {
        let s = smooth_curve(&step(&[0.1, 0.3], &[0.4, 0.0]), 0.2).unwrap();
        assert!((s.eval(0.0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn tiny_bandwidth_recovers_step_curve() {
        let base = step(&[1.0, 2.0, 3.5], &[0.7, 0.3, 0.1]);
        let s = smooth_curve(&base, 1e-6).unwrap();
        for t in [0.5, 1.5, 2.5, 3.0, 4.0] {
            assert!((s.eval(t) - base.eval(t)).abs() < 1e-6);
        }
    }

    #[test]
    fn tail_is_discretised_into_equal_atoms() {
        let base = StepSurvival::new(vec![1.0], vec![0.5], Some(1.0)).unwrap();
        let s = smooth_curve(&base, 0.1).unwrap();
        assert_eq!(s.atoms().len(), 1 + TAIL_ATOMS);
        let total: f64 = s.atoms().iter().map(|a| a.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Median of the tail law sits at 1 + ln 2.
        assert!(s.atoms().iter().skip(1).all(|&(u, _)| u > 1.0));
        assert!((s.eval(1.0 + 2f64.ln()) - 0.25).abs() < 0.02);
    }

    #[test]
    fn tabulation_matches_exact_evaluation_at_knots() {
        let s = smooth_curve(&step(&[1.0, 2.0], &[0.5, 0.0]), 0.3).unwrap();
        let grid = [0.5, 1.0, 1.5, 2.0, 3.0];
        let tab = s.tabulate(&grid);
        assert_eq!(tab.times()[0], 0.0);
        for &g in &grid {
            assert_eq!(tab.eval(g), s.eval(g));
        }
    }

    #[test]
    fn rejects_non_positive_bandwidth() {
        assert!(smooth_curve(&StepSurvival::one(), 0.0).is_err());
    }
}
