//! Extremely randomized survival trees.
//!
//! Each node draws `mtry` distinct features and one uniform cut-off per
//! feature, scores the induced partitions with the configured split rule and
//! keeps the best valid one. Leaves hold either the NPMLE of the members' raw
//! intervals (quasi-honest) or the mean of their carried full-conditional
//! curves (exploitative), kernel-smoothed with the forest bandwidth.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IcrfError, Result};
use crate::forest::ConditionalCurveSet;
use crate::npmle::npmle_curve;
use crate::smooth::SmoothedSurvival;
use crate::split::{glr_on_grid, gwrs_on_grid, slr, swrs, EndpointSurvival, SplitKind, SplitRule};
use crate::survcurve::{IntervalObservation, LinearSurvival, StepSurvival};

pub const DEFAULT_N_MIN: usize = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionRule {
    #[default]
    QuasiHonest,
    Exploitative,
}

impl PredictionRule {
    pub fn name(self) -> &'static str {
        match self {
            PredictionRule::QuasiHonest => "quasi_honest",
            PredictionRule::Exploitative => "exploitative",
        }
    }
}

impl std::str::FromStr for PredictionRule {
    type Err = IcrfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "quasi_honest" | "honest" => Ok(PredictionRule::QuasiHonest),
            "exploitative" => Ok(PredictionRule::Exploitative),
            other => Err(IcrfError::Config(format!("unknown prediction rule {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Candidate features per node; `None` means `⌈√p⌉`.
    pub mtry: Option<usize>,
    pub n_min: usize,
    pub rule: SplitRule,
    pub prediction: PredictionRule,
    /// Replace the NPMLE tail beyond the last mass by an exponential, both in
    /// quasi-honest leaves and in the forest's initial marginal curve.
    #[serde(default)]
    pub tail_correction: bool,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            mtry: None,
            n_min: DEFAULT_N_MIN,
            rule: SplitRule::default(),
            prediction: PredictionRule::default(),
            tail_correction: false,
        }
    }
}

impl TreeParams {
    pub fn mtry_for(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize).clamp(1, p.max(1))
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.n_min < 2 {
            return Err(IcrfError::Config(format!("n_min must be at least 2, got {}", self.n_min)));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > p {
                return Err(IcrfError::Config(format!("mtry must lie in 1..={p}, got {m}")));
            }
        }
        Ok(())
    }
}

/// Everything a tree needs from the enclosing forest fold.
pub struct GrowContext<'a> {
    pub observations: &'a [IntervalObservation],
    pub carried: &'a ConditionalCurveSet,
    /// Covariate-conditional endpoint survivals, used by the score rules.
    pub endpoints: &'a [EndpointSurvival],
    pub tau: f64,
    pub bandwidth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { var: usize, cutoff: f64, left: usize, right: usize },
    Leaf(usize),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Leaf {
    smoothed: SmoothedSurvival,
    members: Vec<usize>,
    #[serde(skip)]
    tabulated: Option<LinearSurvival>,
}

impl Leaf {
    pub fn new(curve: StepSurvival, bandwidth: f64, members: Vec<usize>) -> Result<Self> {
        Ok(Self { smoothed: SmoothedSurvival::new(curve, bandwidth)?, members, tabulated: None })
    }

    pub fn curve(&self) -> &StepSurvival {
        self.smoothed.base()
    }

    pub fn smoothed(&self) -> &SmoothedSurvival {
        &self.smoothed
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Smoothed curve tabulated on the model grid (with a leading knot at 0).
    pub fn tabulated(&self) -> Option<&LinearSurvival> {
        self.tabulated.as_ref()
    }

    pub fn tabulate(&mut self, grid: &[f64]) {
        self.tabulated = Some(self.smoothed.tabulate(grid));
    }
}

impl PartialEq for Leaf {
    fn eq(&self, other: &Self) -> bool {
        self.smoothed == other.smoothed && self.members == other.members
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    leaves: Vec<Leaf>,
    inbag: Vec<usize>,
    n_features: usize,
}

/// Either view of a leaf curve.
#[derive(Clone, Copy, Debug)]
pub enum LeafCurve<'a> {
    Raw(&'a StepSurvival),
    Smoothed(&'a SmoothedSurvival),
}

impl LeafCurve<'_> {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            LeafCurve::Raw(c) => c.eval(t),
            LeafCurve::Smoothed(c) => c.eval(t),
        }
    }
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    pub fn inbag(&self) -> &[usize] {
        &self.inbag
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn leaf_index(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.n_features {
            return Err(IcrfError::DimensionMismatch { expected: self.n_features, got: x.len() });
        }
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(l) => return Ok(l),
                Node::Split { var, cutoff, left, right } => at = if x[var] <= cutoff { left } else { right },
            }
        }
    }

    pub fn leaf_for(&self, x: &[f64]) -> Result<&Leaf> {
        Ok(&self.leaves[self.leaf_index(x)?])
    }

    pub fn tabulate(&mut self, grid: &[f64]) {
        self.leaves.iter_mut().for_each(|l| l.tabulate(grid));
    }

    /// Features used by at least one split.
    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { var, .. } => Some(*var),
            Node::Leaf(_) => None,
        })
    }
}

/// Routes `x` to its leaf and returns the raw or smoothed leaf curve.
pub fn tree_predict<'a>(tree: &'a Tree, x: &[f64], smoothed: bool) -> Result<LeafCurve<'a>> {
    let leaf = tree.leaf_for(x)?;
    Ok(if smoothed { LeafCurve::Smoothed(leaf.smoothed()) } else { LeafCurve::Raw(leaf.curve()) })
}

/// NPMLE of the members' raw intervals, optionally tail-corrected.
pub fn terminal_predict_quasi_honest(members: &[IntervalObservation], tau: f64, correct_tail: bool) -> Result<StepSurvival> {
    if members.is_empty() {
        return Err(IcrfError::EmptyInput);
    }
    Ok(npmle_curve(members, tau, correct_tail)?.1)
}

/// Knot-wise mean of the members' carried curves.
pub fn terminal_predict_exploitative(carried: &ConditionalCurveSet, members: &[usize]) -> Result<StepSurvival> {
    if members.is_empty() {
        return Err(IcrfError::EmptyInput);
    }
    let mean = carried.mean_row(members);
    // Column 0 is t = 0, where every carried curve equals 1.
    let times = carried.times()[1..].to_vec();
    Ok(StepSurvival::from_sorted_unchecked(times, mean[1..].to_vec(), None))
}

struct Grower<'a, 'c, R: Rng> {
    ctx: &'a GrowContext<'c>,
    params: &'a TreeParams,
    mtry: usize,
    rng: &'a mut R,
    nodes: Vec<Node>,
    leaves: Vec<Leaf>,
    /// Number of carried-curve columns up to and including τ.
    score_cols: usize,
}

impl<R: Rng> Grower<'_, '_, R> {
    fn grow(&mut self, members: Vec<usize>) -> Result<usize> {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(usize::MAX));
        match self.best_split(&members) {
            Some((var, cutoff)) => {
                let x = |i: usize| self.ctx.observations[i].covariates[var];
                let (lm, rm): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| x(i) <= cutoff);
                let left = self.grow(lm)?;
                let right = self.grow(rm)?;
                self.nodes[id] = Node::Split { var, cutoff, left, right };
            }
            None => {
                let leaf = self.make_leaf(members)?;
                self.nodes[id] = Node::Leaf(self.leaves.len());
                self.leaves.push(leaf);
            }
        }
        Ok(id)
    }

    fn make_leaf(&self, members: Vec<usize>) -> Result<Leaf> {
        let curve = match self.params.prediction {
            PredictionRule::QuasiHonest => {
                let raw: Vec<IntervalObservation> = members
                    .iter()
                    .map(|&i| {
                        let o = &self.ctx.observations[i];
                        IntervalObservation { left: o.left, right: o.right, covariates: Vec::new() }
                    })
                    .collect();
                terminal_predict_quasi_honest(&raw, self.ctx.tau, self.params.tail_correction)?
            }
            PredictionRule::Exploitative => terminal_predict_exploitative(self.ctx.carried, &members)?,
        };
        Leaf::new(curve, self.ctx.bandwidth, members)
    }

    /// Draws the candidates and returns the best valid `(feature, cutoff)`.
    fn best_split(&mut self, members: &[usize]) -> Option<(usize, f64)> {
        let n_min = self.params.n_min;
        if members.len() < 2 * n_min {
            return None;
        }
        let p = self.ctx.carried_features();
        let features = sample(self.rng, p, self.mtry).into_vec();
        let mut best: Option<(f64, usize, f64)> = None;
        for var in features {
            let (lo, hi) = members.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = self.ctx.observations[i].covariates[var];
                (lo.min(v), hi.max(v))
            });
            if !(lo < hi) {
                continue;
            }
            let cutoff = loop {
                let c = lo + (hi - lo) * self.rng.random::<f64>();
                if c > lo && c < hi {
                    break c;
                }
            };
            let (left, right): (Vec<usize>, Vec<usize>) =
                members.iter().partition(|&&i| self.ctx.observations[i].covariates[var] <= cutoff);
            if left.len() < n_min || right.len() < n_min {
                continue;
            }
            let score = self.score(&left, &right);
            if score > 0.0 && best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, var, cutoff));
            }
        }
        best.map(|(_, v, c)| (v, c))
    }

    fn score(&self, left: &[usize], right: &[usize]) -> f64 {
        let rule = self.params.rule;
        let stat = match rule.kind {
            SplitKind::Gwrs | SplitKind::Glr => {
                let cols = 1..=self.score_cols;
                let m1 = self.ctx.carried.mean_row(left);
                let m2 = self.ctx.carried.mean_row(right);
                let (s1, s2) = (&m1[cols.clone()], &m2[cols]);
                if rule.kind == SplitKind::Gwrs {
                    Ok(gwrs_on_grid(s1, s2) - 0.5)
                } else {
                    glr_on_grid(s1, s2, left.len(), right.len(), rule.glr_sign)
                }
            }
            SplitKind::Swrs | SplitKind::Slr => {
                let e1: Vec<EndpointSurvival> = left.iter().map(|&i| self.ctx.endpoints[i]).collect();
                let e2: Vec<EndpointSurvival> = right.iter().map(|&i| self.ctx.endpoints[i]).collect();
                if rule.kind == SplitKind::Swrs {
                    swrs(&e1, &e2)
                } else {
                    slr(&e1, &e2)
                }
            }
        };
        stat.map(|s| if s.is_finite() { s.abs() } else { 0.0 }).unwrap_or(0.0)
    }
}

impl GrowContext<'_> {
    fn carried_features(&self) -> usize {
        self.observations.first().map_or(0, |o| o.covariates.len())
    }
}

/// Grows one tree on the in-bag subjects. Leaves are smoothed but not yet
/// tabulated; call [`Tree::tabulate`] to attach grid caches.
pub fn grow_tree<R: Rng>(ctx: &GrowContext<'_>, inbag: &[usize], params: &TreeParams, rng: &mut R) -> Result<Tree> {
    if inbag.len() < params.n_min || inbag.is_empty() {
        return Err(IcrfError::InsufficientData(format!(
            "tree needs at least {} in-bag subjects, got {}",
            params.n_min,
            inbag.len()
        )));
    }
    let p = ctx.carried_features();
    params.validate(p)?;
    let score_cols = ctx.carried.times().partition_point(|&t| t <= ctx.tau).saturating_sub(1);
    let mut grower = Grower {
        ctx,
        params,
        mtry: params.mtry_for(p),
        rng,
        nodes: Vec::new(),
        leaves: Vec::new(),
        score_cols,
    };
    grower.grow(inbag.to_vec())?;
    Ok(Tree { nodes: grower.nodes, leaves: grower.leaves, inbag: inbag.to_vec(), n_features: p })
}
