//! Synthetic bundles with a planted failure rule, and brute-force oracles.
//!
//! Generation uses ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`) as
//! the 64-bit portable generator. Draw order is fixed: for each class, for
//! each row, one `Uniform<f32>` sample per feature (rand 0.9
//! `random_range`) followed by one `f64` in [0, 1) for the failure flag.
//!
//! The oracles here deliberately share no code with `split`, `tree` or
//! `metrics`; they enumerate every candidate with naive arithmetic.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassIndex, DatasetBundle, EvalRecord, FeatureMatrix};
use crate::error::{Error, Result};
use crate::tree::{DecisionTree, TreeNode};

pub const ORACLE_MAX_ROWS: usize = 200;
pub const ORACLE_MAX_FEATURES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// Every feature uniform on `[low, high)`.
    Uniform { low: f32, high: f32 },
    /// One `[low, high)` range per feature.
    PerFeatureUniform { ranges: Vec<(f32, f32)> },
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::Uniform { low: 0.0, high: 4.0 }
    }
}

impl NoiseModel {
    fn range(&self, feature: usize) -> (f32, f32) {
        match self {
            NoiseModel::Uniform { low, high } => (*low, *high),
            NoiseModel::PerFeatureUniform { ranges } => ranges[feature],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Rows per class.
    pub n: usize,
    pub n_features: usize,
    pub planted_feature: usize,
    pub planted_threshold: f32,
    /// Failure probability when `feature < threshold`.
    pub p_fail_low_side: f64,
    /// Failure probability when `feature >= threshold`.
    pub p_fail_high_side: f64,
    #[serde(default)]
    pub noise_model: NoiseModel,
    pub seed: u64,
    #[serde(default = "one")]
    pub n_classes: usize,
    /// Classes that carry the planted rule; `None` plants it in every class.
    /// Other classes fail at the flat rate [`SyntheticSpec::expected_ber`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted_classes: Option<Vec<ClassIndex>>,
}

fn one() -> usize {
    1
}

impl SyntheticSpec {
    pub fn new(n: usize, n_features: usize, seed: u64) -> Self {
        Self {
            n,
            n_features,
            planted_feature: 0,
            planted_threshold: 2.0,
            p_fail_low_side: 0.1,
            p_fail_high_side: 0.6,
            noise_model: NoiseModel::default(),
            seed,
            n_classes: 1,
            planted_classes: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::DegenerateSpec(m));
        if self.n < 2 {
            return bad(format!("n = {} (need at least 2 rows per class)", self.n));
        }
        if self.n_features < 1 {
            return bad("n_features must be at least 1".into());
        }
        if self.n_classes < 1 {
            return bad("n_classes must be at least 1".into());
        }
        if self.planted_feature >= self.n_features {
            return bad(format!(
                "planted_feature {} >= n_features {}",
                self.planted_feature, self.n_features
            ));
        }
        for p in [self.p_fail_low_side, self.p_fail_high_side] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability {p} outside [0, 1]"));
            }
        }
        if !self.planted_threshold.is_finite() {
            return bad("planted_threshold must be finite".into());
        }
        if let NoiseModel::PerFeatureUniform { ranges } = &self.noise_model {
            if ranges.len() != self.n_features {
                return bad(format!(
                    "{} noise ranges for {} features",
                    ranges.len(),
                    self.n_features
                ));
            }
        }
        for f in 0..self.n_features {
            let (low, high) = self.noise_model.range(f);
            if !(low.is_finite() && high.is_finite() && low < high) {
                return bad(format!("feature {f}: empty noise range [{low}, {high})"));
            }
        }
        if let Some(classes) = &self.planted_classes {
            if let Some(c) = classes.iter().find(|&&c| c as usize >= self.n_classes) {
                return bad(format!("planted class {c} >= n_classes {}", self.n_classes));
            }
        }
        Ok(())
    }

    /// Probability that the planted feature falls below the threshold.
    pub fn low_side_probability(&self) -> f64 {
        let (low, high) = self.noise_model.range(self.planted_feature);
        ((self.planted_threshold as f64 - low as f64) / (high as f64 - low as f64)).clamp(0.0, 1.0)
    }

    /// Expected error rate of a planted class.
    pub fn expected_ber(&self) -> f64 {
        let q = self.low_side_probability();
        q * self.p_fail_low_side + (1.0 - q) * self.p_fail_high_side
    }

    /// Expected ER − BER of the high-side leaf of a planted class.
    pub fn expected_high_side_lift(&self) -> f64 {
        self.p_fail_high_side - self.expected_ber()
    }

    pub fn is_planted(&self, class: ClassIndex) -> bool {
        self.planted_classes
            .as_ref()
            .is_none_or(|classes| classes.contains(&class))
    }
}

/// Draws a bundle; identical specs give identical bundles.
pub fn generate(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_rows = spec.n * spec.n_classes;
    let d = spec.n_features;
    let ranges: Vec<(f32, f32)> = (0..d).map(|f| spec.noise_model.range(f)).collect();
    let flat_rate = spec.expected_ber();

    let mut data = Vec::with_capacity(n_rows * d);
    let mut records = Vec::with_capacity(n_rows);
    let wrong_class = |c: ClassIndex| -> ClassIndex {
        if spec.n_classes == 1 {
            1
        } else {
            (c + 1) % spec.n_classes as ClassIndex
        }
    };

    for c in 0..spec.n_classes as ClassIndex {
        let planted = spec.is_planted(c);
        for i in 0..spec.n {
            let start = data.len();
            for &(low, high) in &ranges {
                data.push(rng.random_range(low..high));
            }
            let rate = if !planted {
                flat_rate
            } else if data[start + spec.planted_feature] < spec.planted_threshold {
                spec.p_fail_low_side
            } else {
                spec.p_fail_high_side
            };
            let fail = rng.random::<f64>() < rate;
            records.push(EvalRecord {
                image_id: format!("c{c:04}_{i:05}"),
                true_label: c,
                predicted_label: if fail { wrong_class(c) } else { c },
            });
        }
    }

    let mut classes: BTreeMap<ClassIndex, String> = (0..spec.n_classes as ClassIndex)
        .map(|c| (c, format!("class_{c}")))
        .collect();
    if spec.n_classes == 1 {
        classes.insert(1, "other".into());
    }
    DatasetBundle::new(FeatureMatrix::new(n_rows, d, data)?, records, classes)
}

fn naive_entropy(labels: &[bool]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let pos = labels.iter().filter(|&&b| b).count() as f64;
    let total = labels.len() as f64;
    let mut h = 0.0;
    for count in [pos, total - pos] {
        if count > 0.0 {
            let p = count / total;
            h -= p * p.ln() / std::f64::consts::LN_2;
        }
    }
    h
}

fn naive_gain(values: &[f32], failures: &[bool], threshold: f64) -> f64 {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (&v, &fail) in values.iter().zip(failures) {
        if (v as f64) < threshold {
            left.push(fail);
        } else {
            right.push(fail);
        }
    }
    let n = values.len() as f64;
    naive_entropy(failures)
        - (left.len() as f64 / n) * naive_entropy(&left)
        - (right.len() as f64 / n) * naive_entropy(&right)
}

fn candidate_thresholds(values: &[f32]) -> Vec<f64> {
    let mut distinct = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    distinct.dedup_by(|a, b| a == b);
    distinct.windows(2).map(|w| (w[0] as f64 + w[1] as f64) / 2.0).collect()
}

/// Exhaustive best (threshold, gain) for one column, first-wins within 1e-12.
fn oracle_column(values: &[f32], failures: &[bool]) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for t in candidate_thresholds(values) {
        let gain = naive_gain(values, failures, t);
        if best.is_none_or(|(_, g)| gain > g + 1e-12) {
            best = Some((t, gain));
        }
    }
    best
}

/// Brute-force mutual information of one column with the failure flag.
pub fn oracle_mi(column: &[f32], failures: &[bool]) -> f64 {
    oracle_column(column, failures).map_or(0.0, |(_, g)| g.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleSplit {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Enumerates every (feature, midpoint) pair of a small row-major instance.
pub fn oracle_best_split(rows: &[Vec<f32>], failures: &[bool]) -> Result<Option<OracleSplit>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.len() > ORACLE_MAX_ROWS || d > ORACLE_MAX_FEATURES {
        return Err(Error::OracleTooLarge { n: rows.len(), d });
    }
    let mut best: Option<OracleSplit> = None;
    for feature in 0..d {
        let column: Vec<f32> = rows.iter().map(|r| r[feature]).collect();
        if let Some((threshold, gain)) = oracle_column(&column, failures) {
            if best.is_none_or(|b| gain > b.gain + 1e-12) {
                best = Some(OracleSplit {
                    feature,
                    threshold,
                    gain,
                });
            }
        }
    }
    Ok(best.filter(|b| b.gain > 1e-12))
}

/// Tree shape produced by recursing [`oracle_best_split`].
#[derive(Clone, Debug, PartialEq)]
pub enum OracleNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<OracleNode>,
        right: Box<OracleNode>,
    },
    Leaf {
        size: usize,
        errors: usize,
    },
}

impl OracleNode {
    /// Same splits and same leaf counts as an induced tree node.
    pub fn matches(&self, node: &TreeNode) -> bool {
        match (self, node) {
            (OracleNode::Leaf { size, errors }, TreeNode::Leaf(s)) => {
                *size as u64 == s.size && *errors as u64 == s.error_count
            }
            (
                OracleNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                },
                TreeNode::Internal {
                    split,
                    left: l,
                    right: r,
                },
            ) => {
                *feature == split.feature
                    && threshold.to_bits() == split.threshold.to_bits()
                    && left.matches(l)
                    && right.matches(r)
            }
            _ => false,
        }
    }
}

/// Greedy recursion of the exhaustive split oracle down to `max_depth`.
pub fn oracle_tree(
    rows: &[Vec<f32>],
    failures: &[bool],
    max_depth: usize,
    min_samples_split: usize,
) -> Result<OracleNode> {
    let errors = failures.iter().filter(|&&f| f).count();
    let leaf = OracleNode::Leaf {
        size: rows.len(),
        errors,
    };
    if max_depth == 0 || rows.len() < min_samples_split.max(2) {
        return Ok(leaf);
    }
    let Some(split) = oracle_best_split(rows, failures)? else {
        return Ok(leaf);
    };
    let (mut lr, mut lf, mut rr, mut rf) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, &fail) in rows.iter().zip(failures) {
        if (row[split.feature] as f64) < split.threshold {
            lr.push(row.clone());
            lf.push(fail);
        } else {
            rr.push(row.clone());
            rf.push(fail);
        }
    }
    Ok(OracleNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(oracle_tree(&lr, &lf, max_depth - 1, min_samples_split)?),
        right: Box::new(oracle_tree(&rr, &rf, max_depth - 1, min_samples_split)?),
    })
}

/// ALER recomputed by routing every row down the tree and counting.
pub fn oracle_aler(tree: &DecisionTree, rows: &[Vec<f32>], failures: &[bool]) -> Result<f64> {
    fn leaf_counts(node: &TreeNode, out: &mut Vec<(u64, u64)>) {
        match node {
            TreeNode::Leaf(s) => out.push((s.size, s.error_count)),
            TreeNode::Internal { left, right, .. } => {
                leaf_counts(left, out);
                leaf_counts(right, out);
            }
        }
    }
    fn route(node: &TreeNode, row: &[f32], offset: usize) -> Option<usize> {
        match node {
            TreeNode::Leaf(_) => Some(offset),
            TreeNode::Internal { split, left, right } => {
                let v = *row.get(split.feature)? as f64;
                if v.is_nan() {
                    None
                } else if v < split.threshold {
                    route(left, row, offset)
                } else {
                    let mut left_leaves = Vec::new();
                    leaf_counts(left, &mut left_leaves);
                    route(right, row, offset + left_leaves.len())
                }
            }
        }
    }

    let mut stored = Vec::new();
    leaf_counts(&tree.root, &mut stored);
    let mut routed = vec![(0u64, 0u64); stored.len()];
    for (i, (row, &fail)) in rows.iter().zip(failures).enumerate() {
        let leaf = route(&tree.root, row, 0).ok_or_else(|| Error::Routing(format!("row {i} reached no leaf")))?;
        routed[leaf].0 += 1;
        routed[leaf].1 += u64::from(fail);
    }
    if routed != stored {
        return Err(Error::Routing(format!(
            "routed leaf counts {routed:?} differ from stored {stored:?}"
        )));
    }
    let total_errors: u64 = routed.iter().map(|c| c.1).sum();
    if total_errors == 0 {
        return Ok(0.0);
    }
    Ok(routed
        .iter()
        .filter(|c| c.0 > 0)
        .map(|&(n, e)| (e as f64 / n as f64) * (e as f64 / total_errors as f64))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::GroupingKind;
    use crate::metrics::ClusterStats;
    use crate::tree::SplitPredicate;

    #[test]
    fn same_seed_same_bundle() {
        let spec = SyntheticSpec::new(50, 6, 7);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.records(), b.records());
        let c = generate(&SyntheticSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.features(), c.features());
    }

    #[test]
    fn degenerate_specs_rejected() {
        let ok = SyntheticSpec::new(10, 3, 1);
        for bad in [
            SyntheticSpec { n: 1, ..ok.clone() },
            SyntheticSpec {
                n_features: 0,
                ..ok.clone()
            },
            SyntheticSpec {
                planted_feature: 3,
                ..ok.clone()
            },
            SyntheticSpec {
                p_fail_low_side: 1.2,
                ..ok.clone()
            },
            SyntheticSpec {
                noise_model: NoiseModel::Uniform { low: 1.0, high: 1.0 },
                ..ok.clone()
            },
        ] {
            assert!(matches!(generate(&bad), Err(Error::DegenerateSpec(_))), "{bad:?}");
        }
    }

    #[test]
    fn ber_matches_mixture_expectation() {
        let spec = SyntheticSpec::new(1300, 4, 11);
        assert!((spec.expected_ber() - 0.35).abs() < 1e-12);
        let b = generate(&spec).unwrap();
        let g = b.group(GroupingKind::Label, 0).unwrap();
        let errors = g.rows.iter().filter(|&&r| b.failures()[r]).count() as f64;
        let ber = errors / 1300.0;
        let sd = (0.35_f64 * 0.65 / 1300.0).sqrt();
        assert!((ber - 0.35).abs() < 4.0 * sd, "{ber}");
    }

    #[test]
    fn equal_rates_carry_no_signal() {
        let spec = SyntheticSpec {
            p_fail_low_side: 0.3,
            p_fail_high_side: 0.3,
            ..SyntheticSpec::new(1300, 2, 5)
        };
        let b = generate(&spec).unwrap();
        let col = b.features().column(0);
        assert!(oracle_mi(&col, b.failures()) < 0.02);
    }

    #[test]
    fn oracle_edge_cases() {
        let rows = vec![vec![0.0], vec![1.0]];
        assert_eq!(oracle_best_split(&rows, &[true, true]).unwrap(), None);
        let s = oracle_best_split(&rows, &[true, false]).unwrap().unwrap();
        assert_eq!((s.feature, s.threshold), (0, 0.5));
        assert!((s.gain - 1.0).abs() < 1e-12);
        let big = vec![vec![0.0; 9]; 3];
        assert!(matches!(
            oracle_best_split(&big, &[true, false, true]),
            Err(Error::OracleTooLarge { .. })
        ));
    }

    #[test]
    fn oracle_aler_hand_built() {
        // counts (e=3, n=4) and (e=1, n=6)
        let tree = DecisionTree {
            group_size: 10,
            group_errors: 4,
            root: TreeNode::Internal {
                split: SplitPredicate::new(0, 0.5),
                left: Box::new(TreeNode::Leaf(ClusterStats::new(4, 3, 4))),
                right: Box::new(TreeNode::Leaf(ClusterStats::new(6, 1, 4))),
            },
        };
        let mut rows = vec![vec![0.0]; 4];
        rows.extend(vec![vec![1.0]; 6]);
        let fails = [true, true, true, false, true, false, false, false, false, false];
        let aler = oracle_aler(&tree, &rows, &fails).unwrap();
        assert!((aler - 0.604_166_666_666_666_6).abs() < 1e-12);

        let swapped = [false, true, true, false, true, true, false, false, false, false];
        assert!(matches!(oracle_aler(&tree, &rows, &swapped), Err(Error::Routing(_))));
    }

    #[test]
    fn spec_json_defaults() {
        let spec: SyntheticSpec = serde_json::from_str(
            r#"{"n":10,"n_features":3,"planted_feature":1,"planted_threshold":2.0,
                "p_fail_low_side":0.1,"p_fail_high_side":0.6,"seed":3}"#,
        )
        .unwrap();
        assert_eq!(spec.n_classes, 1);
        assert_eq!(spec.noise_model, NoiseModel::default());
        let b = generate(&spec).unwrap();
        assert_eq!(b.classes().len(), 2);
    }
}
