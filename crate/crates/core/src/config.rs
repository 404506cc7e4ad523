//! Flat key-value run configuration (TOML syntax).
//!
//! Keys mirror the tuning-parameter names: `n_tree`, `mtry`, `s`, `replace`,
//! `n_min`, `n_fold`, plus the split rule, prediction rule and monitoring
//! metric. Omitted keys take the defaults below.
//!
//! ```toml
//! n_fold = 10
//! n_tree = 300
//! s = 0.95
//! replace = false
//! n_min = 6
//! split_rule = "GWRS"
//! prediction = "quasi_honest"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IcrfError, Result};
use crate::forest::ForestParams;
use crate::metrics::Metric;
use crate::split::{GlrSign, SplitKind, SplitRule};
use crate::tree::{PredictionRule, TreeParams, DEFAULT_N_MIN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_tree: usize,
    pub n_fold: usize,
    pub mtry: Option<usize>,
    /// In-bag fraction per tree.
    pub s: f64,
    pub replace: bool,
    pub n_min: usize,
    pub split_rule: SplitKind,
    pub glr_sign: GlrSign,
    pub prediction: PredictionRule,
    pub initial_smooth: bool,
    pub monitor: Metric,
    pub bandwidth_c: Option<f64>,
    pub carry_oob_only: bool,
    pub tail_correction: bool,
    pub seed: u64,
    pub tau: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let f = ForestParams::default();
        Self {
            n_tree: f.n_tree,
            n_fold: f.n_fold,
            mtry: None,
            s: f.subsample,
            replace: false,
            n_min: DEFAULT_N_MIN,
            split_rule: SplitKind::Gwrs,
            glr_sign: GlrSign::default(),
            prediction: PredictionRule::default(),
            initial_smooth: f.initial_smooth,
            monitor: f.monitor,
            bandwidth_c: None,
            carry_oob_only: false,
            tail_correction: false,
            seed: 0,
            tau: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| IcrfError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<()> {
        if self.replace {
            return Err(IcrfError::Config("replace = true is not supported; trees subsample without replacement".into()));
        }
        Ok(())
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            n_tree: self.n_tree,
            n_fold: self.n_fold,
            subsample: self.s,
            tree: TreeParams {
                mtry: self.mtry,
                n_min: self.n_min,
                rule: SplitRule { kind: self.split_rule, glr_sign: self.glr_sign },
                prediction: self.prediction,
                tail_correction: self.tail_correction,
            },
            initial_smooth: self.initial_smooth,
            monitor: self.monitor,
            seed: self.seed,
            bandwidth_c: self.bandwidth_c,
            carry_oob_only: self.carry_oob_only,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.forest_params(), ForestParams::default());
    }

    #[test]
    fn parses_table_names() {
        let cfg = RunConfig::from_toml_str(
            "n_tree = 50\nn_fold = 5\nmtry = 3\ns = 0.9\nn_min = 8\nsplit_rule = \"SLR\"\nprediction = \"exploitative\"\nmonitor = \"imse2\"\n",
        )
        .unwrap();
        let p = cfg.forest_params();
        assert_eq!((p.n_tree, p.n_fold, p.tree.mtry, p.subsample, p.tree.n_min), (50, 5, Some(3), 0.9, 8));
        assert_eq!(p.tree.rule.kind, SplitKind::Slr);
        assert_eq!(p.tree.prediction, PredictionRule::Exploitative);
        assert_eq!(p.monitor, Metric::Imse2);
    }

    #[test]
    fn rejects_unknown_keys_and_replacement() {
        assert!(matches!(RunConfig::from_toml_str("ntree = 3"), Err(IcrfError::Config(_))));
        assert!(matches!(RunConfig::from_toml_str("replace = true"), Err(IcrfError::Config(_))));
    }
}
