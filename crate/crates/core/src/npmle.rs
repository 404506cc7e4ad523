//! Nonparametric maximum likelihood estimation for interval-censored data.
//!
//! The support of the NPMLE is the set of Turnbull intervals (maximal
//! intersections of the observed intervals). Masses on that support are found
//! by the EM self-consistency iteration
//!
//! ```text
//! p_j <- (1/W) Σ_i w_i α_ij p_j / Σ_k α_ik p_k
//! ```
//!
//! started from uniform masses.

use serde::{Deserialize, Serialize};

use crate::error::{IcrfError, Result};
use crate::survcurve::{IntervalObservation, MassInterval, StepSurvival};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 2000;

/// Masses below this are dropped after convergence.
const PRUNE_MASS: f64 = 1e-12;

/// Maximal intersections of a set of intervals, with per-observation
/// membership. Each observation covers a contiguous run of intervals, stored
/// as a half-open index range.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnbullIntervals {
    pub intervals: Vec<(f64, f64)>,
    pub membership: Vec<std::ops::Range<usize>>,
}

impl TurnbullIntervals {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Index set of intervals contained in observation `i`.
    pub fn members_of(&self, i: usize) -> std::ops::Range<usize> {
        self.membership[i].clone()
    }
}

pub fn turnbull_intervals(observations: &[IntervalObservation]) -> Result<TurnbullIntervals> {
    if observations.is_empty() {
        return Err(IcrfError::EmptyInput);
    }
    // Right endpoints sort before left endpoints at equal values: (a, b] and
    // (b, c] do not intersect.
    let mut events: Vec<(f64, u8)> = Vec::with_capacity(2 * observations.len());
    for o in observations {
        events.push((o.left, 1));
        events.push((o.right, 0));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut intervals = Vec::new();
    for w in events.windows(2) {
        if w[0].1 == 1 && w[1].1 == 0 {
            intervals.push((w[0].0, w[1].0));
        }
    }
    let membership = observations
        .iter()
        .map(|o| {
            let lo = intervals.partition_point(|&(q, _)| q < o.left);
            let hi = intervals.partition_point(|&(_, p)| p <= o.right);
            lo..hi.max(lo)
        })
        .collect::<Vec<_>>();
    debug_assert!(membership.iter().all(|r| !r.is_empty()));
    Ok(TurnbullIntervals { intervals, membership })
}

/// Result of [`npmle_fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NpmleFit {
    pub intervals: Vec<(f64, f64)>,
    pub masses: Vec<f64>,
    pub curve: StepSurvival,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
}

impl NpmleFit {
    pub fn mass_intervals(&self) -> Vec<MassInterval> {
        self.intervals
            .iter()
            .zip(&self.masses)
            .map(|(&(left, right), &mass)| MassInterval { left, right, mass })
            .collect()
    }

    /// Survival on `grid` with uniform densities inside bounded intervals and
    /// an exponential density on an unbounded final interval.
    pub fn interpolate_uniform(&self, grid: &[f64]) -> Vec<f64> {
        crate::survcurve::interpolate_uniform(&self.mass_intervals(), grid)
    }
}

/// Weighted log-likelihood `Σ_i w_i log Σ_{j∈I_i} p_j`.
pub fn log_likelihood(tb: &TurnbullIntervals, weights: &[f64], masses: &[f64]) -> f64 {
    tb.membership
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(r, &w)| w * masses[r.clone()].iter().sum::<f64>().ln())
        .sum()
}

/// One EM self-consistency update.
pub fn em_step(tb: &TurnbullIntervals, weights: &[f64], masses: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut acc = vec![0.0; masses.len()];
    for (r, &w) in tb.membership.iter().zip(weights) {
        if w <= 0.0 {
            continue;
        }
        let denom: f64 = masses[r.clone()].iter().sum();
        if denom <= 0.0 {
            continue;
        }
        let scale = w / denom;
        for j in r.clone() {
            acc[j] += scale * masses[j];
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    acc
}

/// Largest absolute self-consistency residual `|p − EM(p)|`.
pub fn self_consistency_residual(tb: &TurnbullIntervals, weights: &[f64], masses: &[f64]) -> f64 {
    em_step(tb, weights, masses)
        .iter()
        .zip(masses)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

pub fn npmle_fit(observations: &[IntervalObservation], weights: &[f64], tol: f64, max_iter: usize) -> Result<NpmleFit> {
    if observations.len() != weights.len() {
        return Err(IcrfError::InvariantViolation("one weight per observation required".into()));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) || !(weights.iter().sum::<f64>() > 0.0) {
        return Err(IcrfError::InvariantViolation("weights must be non-negative with positive sum".into()));
    }
    let tb = turnbull_intervals(observations)?;
    let m = tb.len();
    let mut masses = vec![1.0 / m as f64; m];
    let mut iterations = 0;
    let mut converged = false;
    let mut prev_ll = log_likelihood(&tb, weights, &masses);
    while iterations < max_iter {
        let next = em_step(&tb, weights, &masses);
        iterations += 1;
        let delta = next.iter().zip(&masses).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        masses = next;
        if cfg!(debug_assertions) {
            let ll = log_likelihood(&tb, weights, &masses);
            debug_assert!(
                ll >= prev_ll - 1e-9 * prev_ll.abs().max(1.0),
                "EM log-likelihood decreased: {prev_ll} -> {ll}"
            );
            prev_ll = ll;
        }
        if delta < tol {
            converged = true;
            break;
        }
    }
    let mut total = 0.0;
    for p in masses.iter_mut() {
        if *p < PRUNE_MASS {
            *p = 0.0;
        }
        total += *p;
    }
    masses.iter_mut().for_each(|p| *p /= total);
    let ll = log_likelihood(&tb, weights, &masses);
    let curve = curve_from_masses(&tb.intervals, &masses);
    Ok(NpmleFit { intervals: tb.intervals, masses, curve, iterations, converged, log_likelihood: ll })
}

/// Step curve dropping by each mass at its interval's right endpoint. Mass on
/// an unbounded interval is never released.
pub fn curve_from_masses(intervals: &[(f64, f64)], masses: &[f64]) -> StepSurvival {
    // Suffix sums keep S(t) equal to the mass still to come.
    let mut suffix = vec![0.0; masses.len() + 1];
    for j in (0..masses.len()).rev() {
        suffix[j] = suffix[j + 1] + masses[j];
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (j, &(_, p)) in intervals.iter().enumerate() {
        if masses[j] > 0.0 && p.is_finite() {
            times.push(p);
            values.push(suffix[j + 1]);
        }
    }
    StepSurvival::from_sorted_unchecked(times, values, None)
}

/// Replaces the tail beyond the last mass-bearing interval `(a, ·]` by an
/// exponential `S(t) = p^(t/a)` for `t ≥ a`, where `p` is that interval's mass.
///
/// Applies only when some observation is right-censored. When `a ≤ 0` the
/// anchor is unusable and the tail falls back to rate `1/τ`.
pub fn tail_correct(fit: &NpmleFit, has_unbounded: bool, tau: f64) -> StepSurvival {
    if !has_unbounded {
        return fit.curve.clone();
    }
    let Some(last) = fit.masses.iter().rposition(|&p| p > 0.0) else {
        return fit.curve.clone();
    };
    let anchor = fit.intervals[last].0;
    let p_last = fit.masses[last];
    let rate = if anchor > 0.0 { -p_last.ln() / anchor } else { 1.0 / tau };
    let mut times: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (&t, &v) in fit.curve.times().iter().zip(fit.curve.values()) {
        if t < anchor {
            times.push(t);
            values.push(v);
        }
    }
    times.push(anchor);
    values.push(p_last);
    StepSurvival::from_sorted_unchecked(times, values, Some(rate.max(0.0)))
}

/// Unit-weight NPMLE with default tolerances, optionally tail-corrected.
pub fn npmle_curve(observations: &[IntervalObservation], tau: f64, correct_tail: bool) -> Result<(NpmleFit, StepSurvival)> {
    let weights = vec![1.0; observations.len()];
    let fit = npmle_fit(observations, &weights, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let curve = if correct_tail {
        tail_correct(&fit, observations.iter().any(|o| o.is_right_censored()), tau)
    } else {
        fit.curve.clone()
    };
    Ok((fit, curve))
}

/// Unit-weight NPMLE with default tolerances, tail-corrected.
pub fn marginal_curve(observations: &[IntervalObservation], tau: f64) -> Result<(NpmleFit, StepSurvival)> {
    npmle_curve(observations, tau, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(pairs: &[(f64, f64)]) -> Vec<IntervalObservation> {
        pairs.iter().map(|&(l, r)| IntervalObservation::new(l, r, vec![]).unwrap()).collect()
    }

    #[test]
    fn turnbull_examples() {
        let tb = turnbull_intervals(&obs(&[(1.0, 2.0)])).unwrap();
        assert_eq!(tb.intervals, vec![(1.0, 2.0)]);
        assert_eq!(tb.members_of(0), 0..1);

        let tb = turnbull_intervals(&obs(&[(1.0, 2.0), (1.5, 3.0)])).unwrap();
        assert_eq!(tb.intervals, vec![(1.5, 2.0)]);

        let tb = turnbull_intervals(&obs(&[(0.0, 1.0), (2.0, 3.0)])).unwrap();
        assert_eq!(tb.intervals, vec![(0.0, 1.0), (2.0, 3.0)]);
        assert_eq!(tb.members_of(1), 1..2);

        assert!(matches!(turnbull_intervals(&[]), Err(IcrfError::EmptyInput)));
    }

    #[test]
    fn touching_intervals_do_not_intersect() {
        let tb = turnbull_intervals(&obs(&[(0.0, 1.0), (1.0, 2.0)])).unwrap();
        assert_eq!(tb.intervals, vec![(0.0, 1.0), (1.0, 2.0)]);
    }

    #[test]
    fn overlapping_pair_puts_all_mass_on_intersection() {
        let o = obs(&[(1.0, 2.0), (1.5, 3.0)]);
        let fit = npmle_fit(&o, &[1.0, 1.0], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(fit.masses, vec![1.0]);
        assert_eq!(fit.curve.eval(1.5), 1.0);
        assert_eq!(fit.curve.eval(2.0), 0.0);
    }

    #[test]
    fn exact_data_gives_empirical_survival() {
        let times = [0.7, 1.3, 2.2, 3.1, 4.9];
        let o: Vec<_> = times.iter().map(|&t| IntervalObservation::exact(t, 1e-9, vec![]).unwrap()).collect();
        let fit = npmle_fit(&o, &[1.0; 5], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(fit.converged);
        for (i, &t) in times.iter().enumerate() {
            let expected = 1.0 - (i + 1) as f64 / 5.0;
            assert!((fit.curve.eval(t) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_fit_uses_weights() {
        let o: Vec<_> = [1.0, 2.0].iter().map(|&t| IntervalObservation::exact(t, 1e-9, vec![]).unwrap()).collect();
        let fit = npmle_fit(&o, &[3.0, 1.0], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!((fit.curve.eval(1.0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_is_reported_not_fatal() {
        let o = obs(&[(0.0, 2.0), (1.0, 3.0), (2.5, 4.0), (0.5, 1.5)]);
        let fit = npmle_fit(&o, &[1.0; 4], 1e-300, 3).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 3);
    }

    #[test]
    fn tail_correction() {
        let o = obs(&[(0.0, 2.0), (2.0, 3.0)]);
        let fit = npmle_fit(&o, &[1.0, 1.0], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(tail_correct(&fit, false, 5.0), fit.curve);
        let c = tail_correct(&fit, true, 5.0);
        assert!((c.eval(2.0) - 0.5).abs() < 1e-12);
        assert!((c.eval(4.0) - 0.25).abs() < 1e-12);
        // A last mass near one gives an essentially flat tail.
        let near_one = NpmleFit {
            intervals: vec![(0.0, 1.0), (2.0, 3.0)],
            masses: vec![1e-9, 1.0 - 1e-9],
            curve: curve_from_masses(&[(0.0, 1.0), (2.0, 3.0)], &[1e-9, 1.0 - 1e-9]),
            iterations: 0,
            converged: true,
            log_likelihood: 0.0,
        };
        let c = tail_correct(&near_one, true, 5.0);
        assert!(c.eval(50.0) > 0.999);
    }

    #[test]
    fn tail_anchor_at_zero_falls_back() {
        let o = obs(&[(0.0, 2.0), (0.0, f64::INFINITY)]);
        let fit = npmle_fit(&o, &[1.0, 1.0], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let c = tail_correct(&fit, true, 5.0);
        assert_eq!(c.tail_rate(), Some(0.2));
        assert!((c.eval(5.0) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn unbounded_last_interval_gets_exponential_tail() {
        let o = obs(&[(0.0, 1.0), (2.0, f64::INFINITY)]);
        let fit = npmle_fit(&o, &[1.0, 1.0], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(fit.curve.eval(100.0), 0.5);
        let c = tail_correct(&fit, true, 5.0);
        assert!((c.eval(4.0) - 0.25).abs() < 1e-12);
    }
}
