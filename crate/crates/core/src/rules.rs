//! Per-group failure-mode generation.
//!
//! For one grouping: compute the base error rate, rank features by mutual
//! information with the failure flag, induce a shallow tree over the top `k`,
//! keep leaves with `ER > BER + rho` and `EC > tau`, and order them by
//! importance value.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetBundle, FeatureMatrix, Grouping};
use crate::error::{Error, Result};
use crate::metrics::{self, count_failures, ClusterStats};
use crate::selection::{self, FeatureScore, DEFAULT_TOP_K};
use crate::tree::{self, DecisionTree, Induction, LeafView, Side, SplitPredicate, TreeNode, TreeParams};

pub const MAX_TREE_DEPTH: usize = 3;
pub const MAX_EXAMPLE_ROWS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub k: usize,
    pub max_depth: usize,
    /// Error-rate margin above BER a leaf must exceed.
    pub rho: f64,
    /// Error-coverage threshold a leaf must exceed.
    pub tau: f64,
    pub disabled: BTreeSet<usize>,
    pub min_samples_split: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            max_depth: 1,
            rho: 0.1,
            tau: 0.2,
            disabled: BTreeSet::new(),
            min_samples_split: 2,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.max_depth > MAX_TREE_DEPTH {
            return bad(format!(
                "depth {} exceeds the maximum of {MAX_TREE_DEPTH}",
                self.max_depth
            ));
        }
        if !self.rho.is_finite() || self.rho < 0.0 {
            return bad(format!("rho must be a finite value >= 0, got {}", self.rho));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if self.min_samples_split < 2 {
            return bad("min_samples_split must be at least 2".into());
        }
        if let Some(&f) = self.disabled.iter().find(|&&f| f >= n_features) {
            return Err(Error::InvalidFeature { index: f, n_features });
        }
        Ok(())
    }

    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
        }
    }

    pub fn is_valid_leaf(&self, stats: &ClusterStats, base_error_rate: f64) -> bool {
        stats.error_rate() > base_error_rate + self.rho && stats.error_coverage() > self.tau
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FailureMode {
    pub path: Vec<(SplitPredicate, Side)>,
    pub leaf_path: Vec<Side>,
    pub rule: String,
    pub stats: ClusterStats,
    pub iv: f64,
    pub base_error_rate: f64,
    pub aler_of_tree: f64,
    /// Lowest-index failing rows of the leaf, at most [`MAX_EXAMPLE_ROWS`].
    pub example_rows: Vec<usize>,
}

/// Everything computed for one group; `modes` is the reported output.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupAnalysis {
    pub group_stats: ClusterStats,
    pub base_error_rate: f64,
    pub selected: Vec<FeatureScore>,
    pub induction: Induction,
    pub aler: f64,
    pub modes: Vec<FailureMode>,
}

impl GroupAnalysis {
    pub fn tree(&self) -> &DecisionTree {
        &self.induction.tree
    }

    pub fn aler_gain(&self) -> f64 {
        self.aler - self.base_error_rate
    }

    pub fn top_leaf(&self) -> Option<LeafView> {
        top_iv_leaf(self.tree())
    }
}

pub fn analyze_grouping(bundle: &DatasetBundle, grouping: &Grouping, config: &AnalysisConfig) -> Result<GroupAnalysis> {
    analyze_rows(bundle.features(), bundle.failures(), &grouping.rows, config)
}

/// Failure-mode generation over an arbitrary cluster of rows.
pub fn analyze_rows(
    matrix: &FeatureMatrix,
    failures: &[bool],
    rows: &[usize],
    config: &AnalysisConfig,
) -> Result<GroupAnalysis> {
    config.validate(matrix.n_features())?;
    if rows.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let errors = count_failures(rows, failures);
    let group_stats = ClusterStats::new(rows.len() as u64, errors, errors);
    let base_error_rate = group_stats.error_rate();

    if errors == 0 {
        let tree = DecisionTree {
            group_size: group_stats.size,
            group_errors: 0,
            root: TreeNode::Leaf(group_stats),
        };
        return Ok(GroupAnalysis {
            group_stats,
            base_error_rate,
            selected: Vec::new(),
            induction: Induction {
                tree,
                leaf_rows: vec![rows.to_vec()],
            },
            aler: 0.0,
            modes: Vec::new(),
        });
    }

    let selected = selection::select_top_k_rows(matrix, failures, rows, config.k, &config.disabled)?;
    let subset: Vec<usize> = selected.iter().map(|s| s.feature_index).collect();
    let induction = tree::induce(matrix, failures, rows, &subset, config.tree_params())?;
    let aler = metrics::aler(&induction.tree)?;

    let mut modes: Vec<FailureMode> = induction
        .tree
        .leaves()
        .into_iter()
        .zip(&induction.leaf_rows)
        .filter(|(leaf, _)| config.is_valid_leaf(&leaf.stats, base_error_rate))
        .map(|(leaf, leaf_rows)| FailureMode {
            rule: leaf.rule(),
            iv: leaf.stats.importance_value(),
            stats: leaf.stats,
            leaf_path: leaf.path,
            path: leaf.predicates,
            base_error_rate,
            aler_of_tree: aler,
            example_rows: leaf_rows
                .iter()
                .copied()
                .filter(|&r| failures[r])
                .take(MAX_EXAMPLE_ROWS)
                .collect(),
        })
        .collect();
    modes.sort_by(|a, b| b.iv.total_cmp(&a.iv).then_with(|| a.leaf_path.cmp(&b.leaf_path)));

    Ok(GroupAnalysis {
        group_stats,
        base_error_rate,
        selected,
        induction,
        aler,
        modes,
    })
}

/// Valid leaves of the group's tree, highest importance value first.
pub fn generate_failure_modes(
    bundle: &DatasetBundle,
    grouping: &Grouping,
    config: &AnalysisConfig,
) -> Result<Vec<FailureMode>> {
    Ok(analyze_grouping(bundle, grouping, config)?.modes)
}

pub fn rule_path(tree: &DecisionTree, leaf_path: &[Side]) -> Result<String> {
    tree.rule_path(leaf_path)
}

/// Leaf with the highest importance value; the earliest leaf wins ties.
pub fn top_iv_leaf(tree: &DecisionTree) -> Option<LeafView> {
    tree.leaves()
        .into_iter()
        .fold(None, |best: Option<LeafView>, leaf| match best {
            Some(b) if b.stats.importance_value() >= leaf.stats.importance_value() => Some(b),
            _ => Some(leaf),
        })
}

/// Fraction of analyses whose top-IV leaf is valid. `None` for no analyses.
pub fn valid_leaf_fraction<'a>(
    analyses: impl IntoIterator<Item = &'a GroupAnalysis>,
    config: &AnalysisConfig,
) -> Option<f64> {
    let (mut total, mut valid) = (0usize, 0usize);
    for a in analyses {
        total += 1;
        if a.top_leaf()
            .is_some_and(|l| config.is_valid_leaf(&l.stats, a.base_error_rate))
        {
            valid += 1;
        }
    }
    (total > 0).then(|| valid as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_leaf_is_valid_under_defaults() {
        let config = AnalysisConfig::default();
        assert_eq!((config.k, config.max_depth, config.rho, config.tau), (20, 1, 0.1, 0.2));
        let (ber, er, ec) = (0.3085_f64, 0.4179_f64, 0.6409_f64);
        assert!(er > ber + config.rho && ec > config.tau);
    }

    #[test]
    fn config_validation() {
        let ok = AnalysisConfig::default();
        assert!(ok.validate(10).is_ok());
        for bad in [
            AnalysisConfig { k: 0, ..ok.clone() },
            AnalysisConfig {
                max_depth: 4,
                ..ok.clone()
            },
            AnalysisConfig {
                rho: -0.1,
                ..ok.clone()
            },
            AnalysisConfig {
                rho: f64::NAN,
                ..ok.clone()
            },
            AnalysisConfig { tau: 1.5, ..ok.clone() },
            AnalysisConfig {
                min_samples_split: 1,
                ..ok.clone()
            },
            AnalysisConfig {
                disabled: [10].into(),
                ..ok.clone()
            },
        ] {
            assert!(bad.validate(10).is_err(), "{bad:?}");
        }
    }

    fn toy() -> (FeatureMatrix, Vec<bool>) {
        // feature 0 < 5 fails 8/10, otherwise 1/10
        let mut data = Vec::new();
        let mut fails = Vec::new();
        for i in 0..20 {
            data.push(i as f32);
            data.push(((i * 7) % 5) as f32);
            fails.push(if i < 10 { i % 5 != 0 } else { i == 15 });
        }
        (FeatureMatrix::new(20, 2, data).unwrap(), fails)
    }

    #[test]
    fn modes_are_valid_and_sorted() {
        let (m, fails) = toy();
        let rows: Vec<usize> = (0..20).collect();
        for depth in 0..=3 {
            let config = AnalysisConfig {
                max_depth: depth,
                ..Default::default()
            };
            let a = analyze_rows(&m, &fails, &rows, &config).unwrap();
            if depth == 0 {
                assert!(a.modes.is_empty());
            }
            for mode in &a.modes {
                assert!(config.is_valid_leaf(&mode.stats, a.base_error_rate));
                assert!(mode.example_rows.iter().all(|&r| fails[r]));
                assert_eq!(mode.rule, rule_path(a.tree(), &mode.leaf_path).unwrap());
            }
            assert!(a.modes.windows(2).all(|w| w[0].iv >= w[1].iv));
        }
        let a = analyze_rows(&m, &fails, &rows, &AnalysisConfig::default()).unwrap();
        assert_eq!(a.modes.len(), 1);
        assert_eq!(a.modes[0].rule, "feature[0] < 9.5000");
    }

    #[test]
    fn zero_failure_group_has_no_modes() {
        let (m, _) = toy();
        let rows: Vec<usize> = (0..20).collect();
        let a = analyze_rows(&m, &[false; 20], &rows, &AnalysisConfig::default()).unwrap();
        assert!(a.modes.is_empty());
        assert_eq!(a.aler, 0.0);
        assert_eq!(a.base_error_rate, 0.0);
        assert_eq!(valid_leaf_fraction([&a], &AnalysisConfig::default()), Some(0.0));
        assert!(matches!(
            analyze_rows(&m, &[false; 20], &[], &AnalysisConfig::default()),
            Err(Error::EmptyCluster)
        ));
    }

    #[test]
    fn disabling_top_feature_removes_it() {
        let (m, fails) = toy();
        let rows: Vec<usize> = (0..20).collect();
        let config = AnalysisConfig {
            max_depth: 2,
            ..Default::default()
        };
        let a = analyze_rows(&m, &fails, &rows, &config).unwrap();
        let top = a.modes[0].path[0].0.feature;
        let config = AnalysisConfig {
            disabled: [top].into(),
            ..config
        };
        let b = analyze_rows(&m, &fails, &rows, &config).unwrap();
        assert!(!b.tree().features_used().contains(&top));
        assert!(b
            .modes
            .iter()
            .all(|mode| mode.path.iter().all(|(p, _)| p.feature != top)));
    }

    #[test]
    fn valid_fraction_saturates() {
        let (m, fails) = toy();
        let rows: Vec<usize> = (0..20).collect();
        let config = AnalysisConfig::default();
        let a = analyze_rows(&m, &fails, &rows, &config).unwrap();
        assert_eq!(valid_leaf_fraction([&a, &a], &config), Some(1.0));
        assert_eq!(valid_leaf_fraction(std::iter::empty(), &config), None);
    }
}
