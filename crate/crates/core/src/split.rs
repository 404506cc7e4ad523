//! Two-sample splitting statistics computed from full-conditional curves.
//!
//! GWRS and GLR work on the group-mean curves `S̄_l(t) = mean_i S_i(t)`,
//! which is exact for GWRS because the pairwise ζ average is bilinear in the
//! two groups' curves. All time integrals are Stieltjes sums over a common
//! knot grid ending at τ. SWRS and SLR only need each subject's
//! covariate-conditional survival at its interval endpoints.

use serde::{Deserialize, Serialize};

use crate::error::{IcrfError, Result};
use crate::survcurve::{IntervalObservation, StepSurvival, EPS_MASS};

/// Floor applied to `S(L|X)` in the log-rank score.
pub const SLR_FLOOR: f64 = 1e-12;

/// Points used to discretise a continuous tail inside `[0, τ]`.
const TAIL_GRID_POINTS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SplitKind {
    Gwrs,
    Glr,
    Swrs,
    Slr,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Gwrs => "GWRS",
            SplitKind::Glr => "GLR",
            SplitKind::Swrs => "SWRS",
            SplitKind::Slr => "SLR",
        }
    }
}

impl std::str::FromStr for SplitKind {
    type Err = IcrfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GWRS" => Ok(SplitKind::Gwrs),
            "GLR" => Ok(SplitKind::Glr),
            "SWRS" => Ok(SplitKind::Swrs),
            "SLR" => Ok(SplitKind::Slr),
            other => Err(IcrfError::Config(format!("unknown split rule {other:?}"))),
        }
    }
}

/// Sign between the two terms of the GLR numerator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlrSign {
    /// `Y₂dN₁ − Y₁dN₂`: reduces to the log-rank numerator without censoring.
    #[default]
    Difference,
    /// `Y₂dN₁ + Y₁dN₂`, as the statistic is sometimes printed.
    PrintedSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitRule {
    pub kind: SplitKind,
    #[serde(default)]
    pub glr_sign: GlrSign,
}

impl SplitRule {
    pub fn new(kind: SplitKind) -> Self {
        Self { kind, glr_sign: GlrSign::Difference }
    }
}

impl Default for SplitRule {
    fn default() -> Self {
        Self::new(SplitKind::Gwrs)
    }
}

/// GWRS from group-mean curves tabulated on a common grid `t_1 < … < t_G = τ`
/// (all knots of both groups, each curve 1 before `t_1`).
pub fn gwrs_on_grid(s1: &[f64], s2: &[f64]) -> f64 {
    debug_assert_eq!(s1.len(), s2.len());
    let mut w = 1.0;
    let (mut prev1, mut prev2) = (1.0, 1.0);
    for (&a, &b) in s1.iter().zip(s2) {
        w += 0.5 * (a + prev1) * (b - prev2);
        prev1 = a;
        prev2 = b;
    }
    w - 0.5 * prev1 * prev2
}

/// Generalized log-rank statistic from group-mean curves on a common grid.
pub fn glr_on_grid(s1: &[f64], s2: &[f64], n1: usize, n2: usize, sign: GlrSign) -> Result<f64> {
    if n1 == 0 || n2 == 0 {
        return Err(IcrfError::EmptyGroup);
    }
    let n = (n1 + n2) as f64;
    let (l1, l2) = (n1 as f64 / n, n2 as f64 / n);
    let sgn = match sign {
        GlrSign::Difference => -1.0,
        GlrSign::PrintedSum => 1.0,
    };
    let (mut prev1, mut prev2) = (1.0, 1.0);
    let (mut num, mut var) = (0.0, 0.0);
    for (&a, &b) in s1.iter().zip(s2) {
        let (y1, y2) = (prev1, prev2);
        let (dn1, dn2) = (prev1 - a, prev2 - b);
        prev1 = a;
        prev2 = b;
        let y = l1 * y1 + l2 * y2;
        if y <= EPS_MASS {
            break;
        }
        let dn = l1 * dn1 + l2 * dn2;
        num += (y2 * dn1 + sgn * y1 * dn2) / y;
        var += y1 * y2 * dn * (y - dn) / (y * y * y);
    }
    if !(var > 0.0) {
        return Err(IcrfError::ZeroRisk);
    }
    Ok(num / var.sqrt())
}

/// Covariate-conditional survival at a subject's interval endpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EndpointSurvival {
    pub at_left: f64,
    pub at_right: f64,
}

impl EndpointSurvival {
    pub fn from_curve(cov: &StepSurvival, obs: &IntervalObservation) -> Self {
        let at_right = if obs.right.is_finite() { cov.eval(obs.right) } else { 0.0 };
        Self { at_left: cov.eval(obs.left), at_right }
    }

    /// `S(L|X) + S(R|X) − 1`.
    pub fn wilcoxon_score(self) -> f64 {
        self.at_left + self.at_right - 1.0
    }

    /// `(S(L) log S(L) − S(R) log S(R)) / (S(L) − S(R))`, or `log S(L) + 1`
    /// when the two values coincide.
    pub fn logrank_score(self) -> f64 {
        let sl = self.at_left.max(SLR_FLOOR);
        let sr = self.at_right;
        if sl - sr <= EPS_MASS {
            return sl.ln() + 1.0;
        }
        let xlogx = |s: f64| if s > 0.0 { s * s.ln() } else { 0.0 };
        (xlogx(sl) - xlogx(sr)) / (sl - sr)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn swrs(g1: &[EndpointSurvival], g2: &[EndpointSurvival]) -> Result<f64> {
    let m1 = mean(g1.iter().map(|e| e.wilcoxon_score())).ok_or(IcrfError::EmptyGroup)?;
    let m2 = mean(g2.iter().map(|e| e.wilcoxon_score())).ok_or(IcrfError::EmptyGroup)?;
    Ok(m1 - m2)
}

pub fn slr(g1: &[EndpointSurvival], g2: &[EndpointSurvival]) -> Result<f64> {
    let m1 = mean(g1.iter().map(|e| e.logrank_score())).ok_or(IcrfError::EmptyGroup)?;
    let m2 = mean(g2.iter().map(|e| e.logrank_score())).ok_or(IcrfError::EmptyGroup)?;
    Ok(m1 - m2)
}

/// Full-conditional curves of one group's members.
#[derive(Clone, Debug)]
pub struct GroupCurves {
    pub curves: Vec<StepSurvival>,
    pub tau: f64,
}

impl GroupCurves {
    pub fn new(curves: Vec<StepSurvival>, tau: f64) -> Result<Self> {
        if curves.is_empty() {
            return Err(IcrfError::EmptyGroup);
        }
        Ok(Self { curves, tau })
    }

    fn mean_on(&self, grid: &[f64]) -> Vec<f64> {
        let n = self.curves.len() as f64;
        let mut acc = vec![0.0; grid.len()];
        for c in &self.curves {
            for (a, &t) in acc.iter_mut().zip(grid) {
                *a += c.eval(t);
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// Union of all knots in `(0, τ]`, plus τ. Continuous tails that start before
/// τ are discretised on an equispaced sub-grid.
pub fn common_grid(groups: &[&GroupCurves], tau: f64) -> Vec<f64> {
    let mut grid = vec![tau];
    for g in groups {
        for c in &g.curves {
            grid.extend(c.times().iter().copied().filter(|&t| t > 0.0 && t < tau));
            if let (Some(r), Some(&anchor)) = (c.tail_rate(), c.times().last()) {
                if r > 0.0 && anchor < tau {
                    let step = (tau - anchor) / TAIL_GRID_POINTS as f64;
                    grid.extend((1..TAIL_GRID_POINTS).map(|k| anchor + k as f64 * step));
                }
            }
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

fn group_means(g1: &GroupCurves, g2: &GroupCurves) -> (Vec<f64>, Vec<f64>) {
    let grid = common_grid(&[g1, g2], g1.tau);
    (g1.mean_on(&grid), g2.mean_on(&grid))
}

/// Generalized Wilcoxon rank-sum statistic `W ∈ [0, 1]`.
pub fn gwrs(g1: &GroupCurves, g2: &GroupCurves) -> Result<f64> {
    let (s1, s2) = group_means(g1, g2);
    Ok(gwrs_on_grid(&s1, &s2))
}

/// Generalized log-rank statistic.
pub fn glr(g1: &GroupCurves, g2: &GroupCurves, sign: GlrSign) -> Result<f64> {
    let (s1, s2) = group_means(g1, g2);
    glr_on_grid(&s1, &s2, g1.curves.len(), g2.curves.len(), sign)
}

/// The non-negative score maximised over candidate splits. A statistic that
/// cannot be computed scores 0, which rejects the split.
pub fn split_score(
    rule: SplitRule,
    g1: &GroupCurves,
    g2: &GroupCurves,
    ends1: &[EndpointSurvival],
    ends2: &[EndpointSurvival],
) -> f64 {
    let stat = match rule.kind {
        SplitKind::Gwrs => gwrs(g1, g2).map(|w| w - 0.5),
        SplitKind::Glr => glr(g1, g2, rule.glr_sign),
        SplitKind::Swrs => swrs(ends1, ends2),
        SplitKind::Slr => slr(ends1, ends2),
    };
    stat.map(|s| if s.is_finite() { s.abs() } else { 0.0 }).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_group(times: &[f64], tau: f64) -> GroupCurves {
        let curves = times
            .iter()
            .map(|&t| StepSurvival::new(vec![t * (1.0 - 1e-9), t], vec![1.0, 0.0], None).unwrap())
            .collect();
        GroupCurves::new(curves, tau).unwrap()
    }

    #[test]
    fn gwrs_degenerate_examples() {
        let w = gwrs(&exact_group(&[1.0], 5.0), &exact_group(&[2.0], 5.0)).unwrap();
        assert_eq!(w, 1.0);
        let tie = gwrs(&exact_group(&[1.0], 5.0), &exact_group(&[1.0], 5.0)).unwrap();
        assert_eq!(tie, 0.5);
    }

    #[test]
    fn gwrs_matches_pair_counting() {
        let a = [0.5, 1.5, 3.0];
        let b = [1.5, 2.0, 4.0];
        let w = gwrs(&exact_group(&a, 5.0), &exact_group(&b, 5.0)).unwrap();
        let mut count = 0.0;
        for x in a {
            for y in b {
                count += if x < y { 1.0 } else if x == y { 0.5 } else { 0.0 };
            }
        }
        assert!((w - count / 9.0).abs() < 1e-12);
    }

    #[test]
    fn survivors_past_tau_tie() {
        let w = gwrs(&exact_group(&[6.0], 5.0), &exact_group(&[7.0], 5.0)).unwrap();
        assert!((w - 0.5).abs() < 1e-15);
    }

    #[test]
    fn glr_identical_groups_is_zero() {
        let g = exact_group(&[1.0, 2.0, 3.0], 5.0);
        assert_eq!(glr(&g, &g, GlrSign::Difference).unwrap(), 0.0);
    }

    #[test]
    fn glr_two_subject_hand_calculation() {
        // One event in each group, at 1 and at 2.
        // t=1: Y1=Y2=1, dN1=1, dN2=0, Y=1, dN=½ → num 1, var ¼.
        // t=2: Y1=0, Y2=1, dN2=1, Y=½ → num −0, var 0.
        let lr = glr(&exact_group(&[1.0], 5.0), &exact_group(&[2.0], 5.0), GlrSign::Difference).unwrap();
        assert!((lr - 2.0).abs() < 1e-12);
    }

    #[test]
    fn glr_without_events_is_zero_risk() {
        let g = exact_group(&[6.0], 5.0);
        assert!(matches!(glr(&g, &g, GlrSign::Difference), Err(IcrfError::ZeroRisk)));
    }

    #[test]
    fn score_statistics() {
        let uninformative = EndpointSurvival { at_left: 1.0, at_right: 0.0 };
        assert_eq!(uninformative.wilcoxon_score(), 0.0);
        assert_eq!(uninformative.logrank_score(), 0.0);
        let g1 = [EndpointSurvival { at_left: 0.9, at_right: 0.5 }];
        let g2 = [EndpointSurvival { at_left: 0.5, at_right: 0.1 }];
        assert!((swrs(&g1, &g2).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(swrs(&g1, &g1).unwrap(), 0.0);
        let e = (-1.0f64).exp();
        assert!(EndpointSurvival { at_left: e, at_right: e }.logrank_score().abs() < 1e-15);
        let v = EndpointSurvival { at_left: 0.8, at_right: 0.2 }.logrank_score();
        let expected = (0.8 * 0.8f64.ln() - 0.2 * 0.2f64.ln()) / 0.6;
        assert!((v - expected).abs() < 1e-12 && (v - 0.2391).abs() < 5e-4);
        let floored = EndpointSurvival { at_left: 0.0, at_right: 0.0 }.logrank_score();
        assert!((floored - (SLR_FLOOR.ln() + 1.0)).abs() < 1e-12);
        assert!(matches!(swrs(&[], &g2), Err(IcrfError::EmptyGroup)));
    }

    #[test]
    fn split_score_examples() {
        let g = exact_group(&[1.0, 2.0], 5.0);
        let ends: Vec<_> = vec![EndpointSurvival { at_left: 1.0, at_right: 0.0 }; 2];
        assert_eq!(split_score(SplitRule::new(SplitKind::Gwrs), &g, &g, &ends, &ends), 0.0);
        let sep1 = exact_group(&[1.0, 1.5], 5.0);
        let sep2 = exact_group(&[3.0, 4.0], 5.0);
        assert_eq!(split_score(SplitRule::new(SplitKind::Gwrs), &sep1, &sep2, &ends, &ends), 0.5);
        assert_eq!(split_score(SplitRule::new(SplitKind::Gwrs), &sep2, &sep1, &ends, &ends), 0.5);
    }

    #[test]
    fn empty_group_is_rejected() {
        assert!(GroupCurves::new(vec![], 5.0).is_err());
        assert!(matches!(glr_on_grid(&[], &[], 0, 1, GlrSign::Difference), Err(IcrfError::EmptyGroup)));
    }
}
