//! Survival-curve data model.
//!
//! [`StepSurvival`] is the knot-based representation used throughout the
//! crate: a right-continuous, non-increasing step function with an optional
//! exponential tail beyond its last knot. [`LinearSurvival`] is a
//! piecewise-linear tabulation, used for kernel-smoothed curves evaluated on a
//! fixed time grid. Both implement [`SurvivalFunction`], which exposes the
//! exact integrals needed by the error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{IcrfError, Result};

/// Mass threshold below which an interval is treated as carrying no
/// probability under a curve.
pub const EPS_MASS: f64 = 1e-12;

/// One subject: failure time known to lie in `(left, right]`, plus covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalObservation {
    pub left: f64,
    pub right: f64,
    pub covariates: Vec<f64>,
}

impl IntervalObservation {
    pub fn new(left: f64, right: f64, covariates: Vec<f64>) -> Result<Self> {
        if !(left >= 0.0) || !left.is_finite() {
            return Err(IcrfError::InvariantViolation(format!(
                "left endpoint must be finite and non-negative, got {left}"
            )));
        }
        if !(left < right) {
            return Err(IcrfError::InvariantViolation(format!(
                "left endpoint {left} must be strictly below right endpoint {right}"
            )));
        }
        Ok(Self { left, right, covariates })
    }

    /// Encodes an exactly observed time `t` as `(t·(1 − eps), t]`.
    pub fn exact(t: f64, eps: f64, covariates: Vec<f64>) -> Result<Self> {
        Self::new(t * (1.0 - eps), t, covariates)
    }

    pub fn is_right_censored(&self) -> bool {
        self.right.is_infinite()
    }
}

/// Integral of `exp(-rate·s)` for `s` in `[0, len]`.
pub(crate) fn exp_integral(rate: f64, len: f64) -> f64 {
    if rate == 0.0 {
        len
    } else {
        -(-rate * len).exp_m1() / rate
    }
}

/// A right-continuous, non-increasing step survival function.
///
/// The value before the first knot is 1. Beyond the last knot the curve is
/// constant, or decays as `values.last · exp(-tail_rate·(t − times.last))`
/// when a tail rate is present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSurvival {
    times: Vec<f64>,
    values: Vec<f64>,
    tail_rate: Option<f64>,
}

impl StepSurvival {
    pub fn new(times: Vec<f64>, values: Vec<f64>, tail_rate: Option<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(IcrfError::InvalidCurve("times and values differ in length".into()));
        }
        let mut prev_t = f64::NEG_INFINITY;
        let mut prev_v = 1.0;
        for (&t, &v) in times.iter().zip(&values) {
            if !t.is_finite() || t < 0.0 {
                return Err(IcrfError::InvalidCurve(format!("invalid knot time {t}")));
            }
            if t <= prev_t {
                return Err(IcrfError::InvalidCurve("knot times must increase strictly".into()));
            }
            if !(0.0..=1.0).contains(&v) || v > prev_v {
                return Err(IcrfError::InvalidCurve(format!(
                    "value {v} at {t} breaks monotonicity or [0,1] bounds"
                )));
            }
            prev_t = t;
            prev_v = v;
        }
        if let Some(rate) = tail_rate {
            if !(rate >= 0.0) || !rate.is_finite() {
                return Err(IcrfError::InvalidCurve(format!("invalid tail rate {rate}")));
            }
            if times.is_empty() {
                return Err(IcrfError::InvalidCurve("a tail needs an anchor knot".into()));
            }
        }
        Ok(Self { times, values, tail_rate })
    }

    /// Builds a curve from knots that are already known to be valid, clamping
    /// round-off so the invariants hold exactly.
    pub(crate) fn from_sorted_unchecked(times: Vec<f64>, mut values: Vec<f64>, tail_rate: Option<f64>) -> Self {
        let mut prev = 1.0f64;
        for v in values.iter_mut() {
            *v = v.clamp(0.0, prev);
            prev = *v;
        }
        Self { times, values, tail_rate }
    }

    /// The survival function that is 1 everywhere.
    pub fn one() -> Self {
        Self { times: Vec::new(), values: Vec::new(), tail_rate: None }
    }

    /// A single drop from 1 to 0 at `t`.
    pub fn point_mass(t: f64) -> Self {
        Self { times: vec![t], values: vec![0.0], tail_rate: None }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail_rate(&self) -> Option<f64> {
        self.tail_rate
    }

    /// Value after the last knot (mass not yet released by the step part).
    pub fn last_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(1.0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            return 1.0;
        }
        let v = self.values[idx - 1];
        match self.tail_rate {
            Some(rate) if idx == self.times.len() && rate > 0.0 => {
                let last = self.times[idx - 1];
                v * (-rate * (t - last)).exp()
            }
            _ => v,
        }
    }

    /// Left limit `S(t−)`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x < t);
        if idx == 0 {
            return 1.0;
        }
        if idx == self.times.len() {
            // The tail is continuous, so the left limit is the value itself.
            return self.eval(t);
        }
        self.values[idx - 1]
    }

    /// `Š(t) = ½S(t) + ½S(t−)`.
    pub fn eval_check(&self, t: f64) -> f64 {
        0.5 * self.eval(t) + 0.5 * self.eval_left(t)
    }

    /// Jump masses `(time, S(t−) − S(t))` at each knot, zeros included.
    pub fn jumps(&self) -> Vec<(f64, f64)> {
        let mut prev = 1.0;
        self.times
            .iter()
            .zip(&self.values)
            .map(|(&t, &v)| {
                let m = prev - v;
                prev = v;
                (t, m)
            })
            .collect()
    }

    /// Value and exponential rate of the piece that starts at `x` and runs
    /// to the next knot.
    fn piece_at(&self, x: f64) -> (f64, f64) {
        let idx = self.times.partition_point(|&k| k <= x);
        if idx == self.times.len() {
            if let Some(rate) = self.tail_rate {
                return (self.eval(x), rate);
            }
        }
        (self.eval(x), 0.0)
    }

    /// Knots strictly inside `(a, b)`.
    fn knots_between(&self, a: f64, b: f64) -> &[f64] {
        let lo = self.times.partition_point(|&k| k <= a);
        let hi = self.times.partition_point(|&k| k < b);
        if lo >= hi {
            &[]
        } else {
            &self.times[lo..hi]
        }
    }

    /// Smallest `t` with `S(t) ≤ q`, or `None` if the curve never gets there.
    pub fn quantile(&self, q: f64) -> Option<f64> {
        if q >= 1.0 {
            return Some(0.0);
        }
        let idx = self.values.partition_point(|&v| v > q);
        if idx < self.values.len() {
            return Some(self.times[idx]);
        }
        match self.tail_rate {
            Some(rate) if rate > 0.0 && q > 0.0 => {
                let last_t = *self.times.last()?;
                let last_v = self.last_value();
                Some(last_t + (last_v / q).ln() / rate)
            }
            _ => None,
        }
    }

    /// Removes knots that do not change the value.
    pub fn compress(&self) -> Self {
        let mut times = Vec::with_capacity(self.times.len());
        let mut values = Vec::with_capacity(self.values.len());
        let mut prev = 1.0;
        let n = self.times.len();
        for i in 0..n {
            let keep_anchor = i + 1 == n && self.tail_rate.is_some();
            if self.values[i] != prev || keep_anchor {
                times.push(self.times[i]);
                values.push(self.values[i]);
                prev = self.values[i];
            }
        }
        Self { times, values, tail_rate: self.tail_rate }
    }

    /// Values on a sorted grid.
    pub fn eval_grid(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&t| self.eval(t)).collect()
    }
}

/// Piecewise-linear survival curve, flat outside its knot range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSurvival {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl LinearSurvival {
    /// `times` must be strictly increasing; values are clamped to be
    /// non-increasing in `[0, 1]`.
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(IcrfError::InvalidCurve("tabulated curve needs matching, non-empty knots".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(IcrfError::InvalidCurve("knot times must increase strictly".into()));
        }
        Ok(Self::from_sorted_unchecked(times, values))
    }

    pub(crate) fn from_sorted_unchecked(times: Vec<f64>, mut values: Vec<f64>) -> Self {
        let mut prev = 1.0f64;
        for v in values.iter_mut() {
            *v = v.clamp(0.0, prev);
            prev = *v;
        }
        Self { times, values }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            return self.values[0];
        }
        if idx == self.times.len() {
            return self.values[idx - 1];
        }
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let (v0, v1) = (self.values[idx - 1], self.values[idx]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    fn knots_between(&self, a: f64, b: f64) -> &[f64] {
        let lo = self.times.partition_point(|&k| k <= a);
        let hi = self.times.partition_point(|&k| k < b);
        if lo >= hi {
            &[]
        } else {
            &self.times[lo..hi]
        }
    }

    /// Full-conditional projection onto `(left, right]`: 1 up to `left`,
    /// 0 from `right` on, and the renormalised curve in between.
    pub fn conditional_project(&self, obs: &IntervalObservation) -> Result<Self> {
        let (l, r) = (obs.left, obs.right);
        let s_l = self.eval(l);
        let s_r = if r.is_finite() { self.eval(r) } else { 0.0 };
        if s_l - s_r <= EPS_MASS {
            return Err(IcrfError::DegenerateInterval { left: l, right: r });
        }
        let mut times = Vec::with_capacity(self.times.len() + 3);
        let mut values = Vec::with_capacity(self.times.len() + 3);
        if l > 0.0 {
            times.push(0.0);
            values.push(1.0);
        }
        times.push(l);
        values.push(1.0);
        let upper = if r.is_finite() { r } else { f64::INFINITY };
        for &t in self.knots_between(l, upper) {
            let v = if r.is_finite() {
                (self.eval(t) - s_r) / (s_l - s_r)
            } else {
                self.eval(t) / s_l
            };
            times.push(t);
            values.push(v.clamp(0.0, 1.0));
        }
        if r.is_finite() {
            times.push(r);
            values.push(0.0);
        }
        Ok(Self::from_sorted_unchecked(times, values))
    }
}

/// Probability mass on an interval `(left, right]`; `right` may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassInterval {
    pub left: f64,
    pub right: f64,
    pub mass: f64,
}

/// Survival on `grid` assuming a uniform density inside each bounded mass
/// interval and an exponential density `S(t) = p^(t/a)` on a final unbounded
/// interval `(a, ∞)` holding mass `p`.
pub fn interpolate_uniform(masses: &[MassInterval], grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&t| {
            let mut s = 1.0;
            for m in masses {
                if t >= m.right {
                    s -= m.mass;
                } else if t > m.left {
                    if m.right.is_finite() {
                        s -= m.mass * (t - m.left) / (m.right - m.left);
                    } else if m.left > 0.0 && m.mass > 0.0 {
                        // Remaining survival at the anchor is exactly this mass.
                        s = s - m.mass + m.mass.powf(t / m.left);
                    }
                }
            }
            s.clamp(0.0, 1.0)
        })
        .collect()
}

/// Full-conditional curve `S(t | X, I)` obtained from a covariate-conditional
/// curve `S(t | X)` and the interval `I = (L, R]`.
///
/// Knots are those of `s_x` inside `(L, R)` plus `L` and `R`. Fails with
/// [`IcrfError::DegenerateInterval`] when `S(L|X) − S(R|X) ≤ EPS_MASS`.
pub fn conditional_project(s_x: &StepSurvival, obs: &IntervalObservation) -> Result<StepSurvival> {
    let (l, r) = (obs.left, obs.right);
    let s_l = s_x.eval(l);
    let s_r = if r.is_finite() { s_x.eval(r) } else { 0.0 };
    if s_l - s_r <= EPS_MASS {
        return Err(IcrfError::DegenerateInterval { left: l, right: r });
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    times.push(l);
    values.push(1.0);
    if r.is_finite() {
        for &t in s_x.knots_between(l, r) {
            times.push(t);
            values.push(((s_x.eval(t) - s_r) / (s_l - s_r)).clamp(0.0, 1.0));
        }
        times.push(r);
        values.push(0.0);
        Ok(StepSurvival::from_sorted_unchecked(times, values, None))
    } else {
        for &t in s_x.knots_between(l, f64::INFINITY) {
            times.push(t);
            values.push((s_x.eval(t) / s_l).min(1.0));
        }
        Ok(StepSurvival::from_sorted_unchecked(times, values, s_x.tail_rate()))
    }
}

/// Fallback full-conditional curve for an interval that carries no mass:
/// uniform on `(L, R∧τ]` (stepped at the grid points inside), or exponential
/// with rate `1/τ` on `(L, ∞)`.
pub fn uniform_fallback(obs: &IntervalObservation, tau: f64, grid: &[f64]) -> StepSurvival {
    let l = obs.left;
    if obs.right.is_infinite() {
        return StepSurvival::from_sorted_unchecked(vec![l], vec![1.0], Some(1.0 / tau));
    }
    let upper = if l < tau { obs.right.min(tau) } else { obs.right };
    let mut times = vec![l];
    let mut values = vec![1.0];
    let lo = grid.partition_point(|&g| g <= l);
    let hi = grid.partition_point(|&g| g < upper);
    for &g in grid.get(lo..hi.max(lo)).unwrap_or(&[]) {
        times.push(g);
        values.push(1.0 - (g - l) / (upper - l));
    }
    times.push(upper);
    values.push(0.0);
    StepSurvival::from_sorted_unchecked(times, values, None)
}

/// [`conditional_project`] with the degenerate-interval fallback applied.
pub fn project_or_fallback(s_x: &StepSurvival, obs: &IntervalObservation, tau: f64, grid: &[f64]) -> StepSurvival {
    conditional_project(s_x, obs).unwrap_or_else(|_| uniform_fallback(obs, tau, grid))
}

/// Survival curves whose squared deviations can be integrated over time.
pub trait SurvivalFunction {
    fn survival(&self, t: f64) -> f64;

    /// `∫_a^b S(t)² dt`.
    fn integral_sq(&self, a: f64, b: f64) -> f64 {
        simpson(|t| self.survival(t).powi(2), a, b)
    }

    /// `∫_a^b (1 − S(t))² dt`.
    fn integral_complement_sq(&self, a: f64, b: f64) -> f64 {
        simpson(|t| (1.0 - self.survival(t)).powi(2), a, b)
    }
}

/// Curves that can be projected onto an interval and compared with another
/// curve of the same kind in integrated squared distance.
pub trait ProjectableSurvival: SurvivalFunction + Sized {
    fn project(&self, obs: &IntervalObservation, tau: f64) -> Self;

    /// `∫_a^b (S(t) − other(t))² dt`.
    fn integrated_sq_gap(&self, other: &Self, a: f64, b: f64) -> f64;
}

const SIMPSON_PANELS: usize = 2000;

pub(crate) fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let n = SIMPSON_PANELS;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

fn breakpoints(a: f64, b: f64, first: &[f64], second: &[f64]) -> Vec<f64> {
    let mut pts = Vec::with_capacity(first.len() + second.len() + 2);
    pts.push(a);
    let (mut i, mut j) = (0, 0);
    while i < first.len() || j < second.len() {
        let next = match (first.get(i), second.get(j)) {
            (Some(&x), Some(&y)) if x <= y => {
                i += 1;
                if x == y {
                    j += 1;
                }
                x
            }
            (Some(_), Some(&y)) => {
                j += 1;
                y
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        if next > *pts.last().unwrap() {
            pts.push(next);
        }
    }
    if b > *pts.last().unwrap() {
        pts.push(b);
    }
    pts
}

impl SurvivalFunction for StepSurvival {
    fn survival(&self, t: f64) -> f64 {
        self.eval(t)
    }

    fn integral_sq(&self, a: f64, b: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        breakpoints(a, b, self.knots_between(a, b), &[])
            .windows(2)
            .map(|w| {
                let (v, rate) = self.piece_at(w[0]);
                v * v * exp_integral(2.0 * rate, w[1] - w[0])
            })
            .sum()
    }

    fn integral_complement_sq(&self, a: f64, b: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        breakpoints(a, b, self.knots_between(a, b), &[])
            .windows(2)
            .map(|w| {
                let (v, rate) = self.piece_at(w[0]);
                let d = w[1] - w[0];
                d - 2.0 * v * exp_integral(rate, d) + v * v * exp_integral(2.0 * rate, d)
            })
            .sum()
    }
}

impl ProjectableSurvival for StepSurvival {
    fn project(&self, obs: &IntervalObservation, tau: f64) -> Self {
        project_or_fallback(self, obs, tau, self.times())
    }

    fn integrated_sq_gap(&self, other: &Self, a: f64, b: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        breakpoints(a, b, self.knots_between(a, b), other.knots_between(a, b))
            .windows(2)
            .map(|w| {
                let d = w[1] - w[0];
                let (v1, r1) = self.piece_at(w[0]);
                let (v2, r2) = other.piece_at(w[0]);
                v1 * v1 * exp_integral(2.0 * r1, d) - 2.0 * v1 * v2 * exp_integral(r1 + r2, d)
                    + v2 * v2 * exp_integral(2.0 * r2, d)
            })
            .sum::<f64>()
            .max(0.0)
    }
}

/// Piecewise-linear analogue of [`uniform_fallback`].
fn linear_fallback(obs: &IntervalObservation, tau: f64) -> LinearSurvival {
    let l = obs.left;
    let mut times = Vec::new();
    let mut values = Vec::new();
    if l > 0.0 {
        times.push(0.0);
        values.push(1.0);
    }
    times.push(l);
    values.push(1.0);
    if obs.right.is_finite() {
        times.push(if l < tau { obs.right.min(tau) } else { obs.right });
        values.push(0.0);
    } else {
        for k in 1..=16 {
            let t = l + k as f64 * tau / 4.0;
            times.push(t);
            values.push((-(t - l) / tau).exp());
        }
    }
    LinearSurvival::from_sorted_unchecked(times, values)
}

/// `∫_0^d (p + (q − p)s/d)² ds`.
fn linear_sq(p: f64, q: f64, d: f64) -> f64 {
    d * (p * p + p * q + q * q) / 3.0
}

impl SurvivalFunction for LinearSurvival {
    fn survival(&self, t: f64) -> f64 {
        self.eval(t)
    }

    fn integral_sq(&self, a: f64, b: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        breakpoints(a, b, self.knots_between(a, b), &[])
            .windows(2)
            .map(|w| linear_sq(self.eval(w[0]), self.eval(w[1]), w[1] - w[0]))
            .sum()
    }

    fn integral_complement_sq(&self, a: f64, b: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        breakpoints(a, b, self.knots_between(a, b), &[])
            .windows(2)
            .map(|w| linear_sq(1.0 - self.eval(w[0]), 1.0 - self.eval(w[1]), w[1] - w[0]))
            .sum()
    }
}

impl ProjectableSurvival for LinearSurvival {
    fn project(&self, obs: &IntervalObservation, tau: f64) -> Self {
        self.conditional_project(obs).unwrap_or_else(|_| linear_fallback(obs, tau))
    }

    fn integrated_sq_gap(&self, other: &Self, a: f64, b: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        breakpoints(a, b, self.knots_between(a, b), other.knots_between(a, b))
            .windows(2)
            .map(|w| {
                let p = self.eval(w[0]) - other.eval(w[0]);
                let q = self.eval(w[1]) - other.eval(w[1]);
                linear_sq(p, q, w[1] - w[0])
            })
            .sum()
    }
}
