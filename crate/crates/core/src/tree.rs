//! Depth-limited binary decision trees that predict failure.
//!
//! Splits maximize information gain over `feature < threshold` predicates
//! with thresholds at midpoints of consecutive distinct values. Candidates
//! are ordered by (gain, lower feature index, lower threshold), which makes
//! induction a pure function of its inputs.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde_json::Value;

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::{count_failures, ClusterStats};
use crate::split::{scan_sorted, ThresholdScan, GAIN_TIE_EPS};

/// Below this many (row, feature) cells a node is scored sequentially.
const PARALLEL_SPLIT_CELLS: usize = 1 << 16;

/// `feature[i] < threshold` sends a row left, otherwise right.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitPredicate {
    pub feature: usize,
    pub threshold: f64,
}

impl SplitPredicate {
    pub fn new(feature: usize, threshold: f64) -> Self {
        Self { feature, threshold }
    }

    #[inline]
    pub fn goes_left(&self, value: f32) -> bool {
        (value as f64) < self.threshold
    }

    pub fn render(&self, side: Side) -> String {
        let op = match side {
            Side::Left => "<",
            Side::Right => ">=",
        };
        format!("feature[{}] {} {:.4}", self.feature, op, self.threshold)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode {
    Internal {
        split: SplitPredicate,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf(ClusterStats),
}

impl TreeNode {
    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

/// A tree over one group; leaf counts partition the group.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    pub group_size: u64,
    pub group_errors: u64,
    pub root: TreeNode,
}

/// A leaf together with the predicates leading to it.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafView {
    pub path: Vec<Side>,
    pub predicates: Vec<(SplitPredicate, Side)>,
    pub stats: ClusterStats,
}

impl LeafView {
    pub fn rule(&self) -> String {
        render_conjunction(&self.predicates)
    }
}

fn render_conjunction(predicates: &[(SplitPredicate, Side)]) -> String {
    if predicates.is_empty() {
        return "TRUE".to_string();
    }
    predicates
        .iter()
        .map(|(p, side)| p.render(*side))
        .collect::<Vec<_>>()
        .join(" ∧ ")
}

impl DecisionTree {
    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Leaves in pre-order (left before right).
    pub fn leaves(&self) -> Vec<LeafView> {
        fn walk(node: &TreeNode, trail: &mut Vec<(SplitPredicate, Side)>, out: &mut Vec<LeafView>) {
            match node {
                TreeNode::Leaf(stats) => out.push(LeafView {
                    path: trail.iter().map(|t| t.1).collect(),
                    predicates: trail.clone(),
                    stats: *stats,
                }),
                TreeNode::Internal { split, left, right } => {
                    trail.push((*split, Side::Left));
                    walk(left, trail, out);
                    trail.pop();
                    trail.push((*split, Side::Right));
                    walk(right, trail, out);
                    trail.pop();
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut Vec::new(), &mut out);
        out
    }

    /// Pre-order index of the leaf a row lands in.
    pub fn route(&self, row: &[f32]) -> usize {
        fn count_leaves(node: &TreeNode) -> usize {
            match node {
                TreeNode::Leaf(_) => 1,
                TreeNode::Internal { left, right, .. } => count_leaves(left) + count_leaves(right),
            }
        }
        let mut node = &self.root;
        let mut index = 0;
        loop {
            match node {
                TreeNode::Leaf(_) => return index,
                TreeNode::Internal { split, left, right } => {
                    if split.goes_left(row[split.feature]) {
                        node = left;
                    } else {
                        index += count_leaves(left);
                        node = right;
                    }
                }
            }
        }
    }

    /// Conjunction of predicates from the root to the leaf at `path`.
    pub fn rule_path(&self, path: &[Side]) -> Result<String> {
        let mut node = &self.root;
        let mut predicates = Vec::with_capacity(path.len());
        for &side in path {
            match node {
                TreeNode::Leaf(_) => return Err(Error::ForeignLeaf),
                TreeNode::Internal { split, left, right } => {
                    predicates.push((*split, side));
                    node = match side {
                        Side::Left => left,
                        Side::Right => right,
                    };
                }
            }
        }
        match node {
            TreeNode::Leaf(_) => Ok(render_conjunction(&predicates)),
            TreeNode::Internal { .. } => Err(Error::ForeignLeaf),
        }
    }

    pub fn features_used(&self) -> BTreeSet<usize> {
        fn walk(node: &TreeNode, out: &mut BTreeSet<usize>) {
            if let TreeNode::Internal { split, left, right } = node {
                out.insert(split.feature);
                walk(left, out);
                walk(right, out);
            }
        }
        let mut out = BTreeSet::new();
        walk(&self.root, &mut out);
        out
    }

    /// Canonical compact JSON; reals carry 17 significant digits.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        write!(
            out,
            "{{\"group_size\":{},\"group_errors\":{},\"root\":",
            self.group_size, self.group_errors
        )
        .unwrap();
        write_node(&self.root, &mut out);
        out.push('}');
        out
    }

    pub fn from_document(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::MalformedTree(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("document is not an object"))?;
        let group_size = get_u64(obj, "group_size")?;
        let group_errors = get_u64(obj, "group_errors")?;
        let root = obj.get("root").ok_or_else(|| malformed("missing root"))?;
        let root = parse_node(root, group_errors)?;
        Ok(Self {
            group_size,
            group_errors,
            root,
        })
    }
}

pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_node(node: &TreeNode, out: &mut String) {
    match node {
        TreeNode::Leaf(s) => {
            write!(
                out,
                "{{\"leaf\":{{\"size\":{},\"errors\":{},\"er\":{},\"ec\":{},\"iv\":{}}}}}",
                s.size,
                s.error_count,
                fmt_real(s.error_rate()),
                fmt_real(s.error_coverage()),
                fmt_real(s.importance_value())
            )
            .unwrap();
        }
        TreeNode::Internal { split, left, right } => {
            write!(
                out,
                "{{\"split\":{{\"feature\":{},\"threshold\":{}}},\"left\":",
                split.feature,
                fmt_real(split.threshold)
            )
            .unwrap();
            write_node(left, out);
            out.push_str(",\"right\":");
            write_node(right, out);
            out.push('}');
        }
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedTree(msg.into())
}

type Object = serde_json::Map<String, Value>;

fn get_u64(obj: &Object, key: &str) -> Result<u64> {
    obj.get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| malformed(format!("missing or non-integer `{key}`")))
}

fn get_f64(obj: &Object, key: &str) -> Result<f64> {
    obj.get(key)
        .and_then(Value::as_f64)
        .filter(|v| v.is_finite())
        .ok_or_else(|| malformed(format!("missing or non-numeric `{key}`")))
}

fn parse_node(value: &Value, group_errors: u64) -> Result<TreeNode> {
    let obj = value.as_object().ok_or_else(|| malformed("node is not an object"))?;
    if let Some(leaf) = obj.get("leaf") {
        let leaf = leaf.as_object().ok_or_else(|| malformed("leaf is not an object"))?;
        let size = get_u64(leaf, "size")?;
        let errors = get_u64(leaf, "errors")?;
        if errors > size || errors > group_errors {
            return Err(malformed("leaf errors exceed leaf size or group errors"));
        }
        let stats = ClusterStats::new(size, errors, group_errors);
        for (key, want) in [
            ("er", stats.error_rate()),
            ("ec", stats.error_coverage()),
            ("iv", stats.importance_value()),
        ] {
            if get_f64(leaf, key)?.to_bits() != want.to_bits() {
                return Err(malformed(format!("leaf `{key}` disagrees with its counts")));
            }
        }
        return Ok(TreeNode::Leaf(stats));
    }
    let split = obj
        .get("split")
        .and_then(Value::as_object)
        .ok_or_else(|| malformed("node has neither `leaf` nor `split`"))?;
    let feature = get_u64(split, "feature")? as usize;
    let threshold = get_f64(split, "threshold")?;
    let left = parse_node(obj.get("left").ok_or_else(|| malformed("missing left"))?, group_errors)?;
    let right = parse_node(
        obj.get("right").ok_or_else(|| malformed("missing right"))?,
        group_errors,
    )?;
    Ok(TreeNode::Internal {
        split: SplitPredicate::new(feature, threshold),
        left: Box::new(left),
        right: Box::new(right),
    })
}

/// Stopping parameters for induction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 1,
            min_samples_split: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub predicate: SplitPredicate,
    pub gain: f64,
}

/// Highest-gain split of `rows` over `subset`, or `None` when the node is
/// pure, too small, or no split has positive gain.
pub fn best_split(
    matrix: &FeatureMatrix,
    failures: &[bool],
    rows: &[usize],
    subset: &[usize],
    min_samples_split: usize,
) -> Result<Option<Split>> {
    if subset.is_empty() {
        return Err(Error::EmptyFeatureSubset);
    }
    for &f in subset {
        matrix.check_feature(f)?;
    }
    let n = rows.len();
    if n < min_samples_split.max(2) {
        return Ok(None);
    }
    let errors = count_failures(rows, failures) as usize;
    if errors == 0 || errors == n {
        return Ok(None);
    }

    let mut features = subset.to_vec();
    features.sort_unstable();
    features.dedup();

    let score = |&f: &usize| -> Option<ThresholdScan> {
        let mut pairs: Vec<(f32, bool)> = rows.iter().map(|&r| (matrix.value(r, f), failures[r])).collect();
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        scan_sorted(&pairs)
    };
    let scans: Vec<Option<ThresholdScan>> = if n * features.len() >= PARALLEL_SPLIT_CELLS {
        exec::map_slice(&features, score)
    } else {
        features.iter().map(score).collect()
    };

    let mut best: Option<Split> = None;
    for (&f, scan) in features.iter().zip(scans) {
        let Some(scan) = scan else { continue };
        let better = match best {
            None => true,
            Some(b) => scan.gain > b.gain + GAIN_TIE_EPS,
        };
        if better {
            best = Some(Split {
                predicate: SplitPredicate::new(f, scan.threshold),
                gain: scan.gain,
            });
        }
    }
    Ok(best.filter(|b| b.gain > GAIN_TIE_EPS))
}

/// An induced tree plus the rows that reached each leaf (pre-order).
#[derive(Clone, Debug, PartialEq)]
pub struct Induction {
    pub tree: DecisionTree,
    pub leaf_rows: Vec<Vec<usize>>,
}

/// Greedy top-down induction over `rows` restricted to `subset`.
pub fn induce(
    matrix: &FeatureMatrix,
    failures: &[bool],
    rows: &[usize],
    subset: &[usize],
    params: TreeParams,
) -> Result<Induction> {
    if rows.is_empty() {
        return Err(Error::EmptyCluster);
    }
    if subset.is_empty() && params.max_depth > 0 {
        return Err(Error::EmptyFeatureSubset);
    }
    let group_errors = count_failures(rows, failures);
    let mut leaf_rows = Vec::new();
    let root = grow(
        matrix,
        failures,
        rows.to_vec(),
        subset,
        params,
        0,
        group_errors,
        &mut leaf_rows,
    )?;
    Ok(Induction {
        tree: DecisionTree {
            group_size: rows.len() as u64,
            group_errors,
            root,
        },
        leaf_rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn grow(
    matrix: &FeatureMatrix,
    failures: &[bool],
    rows: Vec<usize>,
    subset: &[usize],
    params: TreeParams,
    depth: usize,
    group_errors: u64,
    leaf_rows: &mut Vec<Vec<usize>>,
) -> Result<TreeNode> {
    if depth < params.max_depth {
        if let Some(split) = best_split(matrix, failures, &rows, subset, params.min_samples_split)? {
            let p = split.predicate;
            let (left, right): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&r| p.goes_left(matrix.value(r, p.feature)));
            debug_assert!(!left.is_empty() && !right.is_empty());
            let left = grow(
                matrix,
                failures,
                left,
                subset,
                params,
                depth + 1,
                group_errors,
                leaf_rows,
            )?;
            let right = grow(
                matrix,
                failures,
                right,
                subset,
                params,
                depth + 1,
                group_errors,
                leaf_rows,
            )?;
            return Ok(TreeNode::Internal {
                split: p,
                left: Box::new(left),
                right: Box::new(right),
            });
        }
    }
    let stats = ClusterStats::new(rows.len() as u64, count_failures(&rows, failures), group_errors);
    leaf_rows.push(rows);
    Ok(TreeNode::Leaf(stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics;

    fn matrix(columns: &[&[f32]]) -> FeatureMatrix {
        let n = columns[0].len();
        let d = columns.len();
        let mut data = vec![0.0; n * d];
        for (f, col) in columns.iter().enumerate() {
            for (r, &v) in col.iter().enumerate() {
                data[r * d + f] = v;
            }
        }
        FeatureMatrix::new(n, d, data).unwrap()
    }

    #[test]
    fn pure_node_has_no_split() {
        let m = matrix(&[&[0.0, 1.0, 2.0]]);
        assert_eq!(best_split(&m, &[true; 3], &[0, 1, 2], &[0], 2).unwrap(), None);
    }

    #[test]
    fn perfect_single_feature_split() {
        let m = matrix(&[&[0.0, 0.0, 1.0, 1.0]]);
        let s = best_split(&m, &[true, true, false, false], &[0, 1, 2, 3], &[0], 2)
            .unwrap()
            .unwrap();
        assert_eq!(s.predicate, SplitPredicate::new(0, 0.5));
        assert!((s.gain - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_subset_is_an_error() {
        let m = matrix(&[&[0.0, 1.0]]);
        assert!(matches!(
            best_split(&m, &[true, false], &[0, 1], &[], 2),
            Err(Error::EmptyFeatureSubset)
        ));
    }

    #[test]
    fn ties_prefer_lower_feature() {
        // Feature 1 and feature 0 induce the same partition.
        let m = matrix(&[&[5.0, 5.0, 9.0, 9.0], &[0.0, 0.0, 1.0, 1.0]]);
        let s = best_split(&m, &[true, true, false, false], &[0, 1, 2, 3], &[1, 0], 2)
            .unwrap()
            .unwrap();
        assert_eq!(s.predicate.feature, 0);
        assert_eq!(s.predicate.threshold, 7.0);
    }

    #[test]
    fn depth_zero_is_single_leaf() {
        let m = matrix(&[&[0.0, 1.0, 2.0, 3.0]]);
        let fails = [true, false, true, false];
        let ind = induce(
            &m,
            &fails,
            &[0, 1, 2, 3],
            &[0],
            TreeParams {
                max_depth: 0,
                min_samples_split: 2,
            },
        )
        .unwrap();
        assert_eq!(ind.tree.depth(), 0);
        assert_eq!(metrics::aler(&ind.tree).unwrap(), metrics::base_error_rate(&ind.tree));
        assert_eq!(ind.leaf_rows, vec![vec![0, 1, 2, 3]]);
        assert_eq!(ind.tree.rule_path(&[]).unwrap(), "TRUE");
    }

    #[test]
    fn rule_paths_follow_structure() {
        let m = matrix(&[&[0.0, 0.0, 1.0, 1.0, 1.0, 1.0], &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]]);
        let fails = [false, false, true, true, false, false];
        let ind = induce(
            &m,
            &fails,
            &[0, 1, 2, 3, 4, 5],
            &[0, 1],
            TreeParams {
                max_depth: 2,
                min_samples_split: 2,
            },
        )
        .unwrap();
        let leaves = ind.tree.leaves();
        assert_eq!(leaves.len(), ind.leaf_rows.len());
        for (leaf, rows) in leaves.iter().zip(&ind.leaf_rows) {
            assert_eq!(leaf.stats.size as usize, rows.len());
            assert_eq!(ind.tree.rule_path(&leaf.path).unwrap(), leaf.rule());
            assert_eq!(leaf.rule().matches(" ∧ ").count() + 1, leaf.path.len().max(1));
        }
        assert!(leaves.iter().any(|l| l.path.len() == 2));
        assert!(matches!(
            ind.tree.rule_path(&[Side::Left, Side::Left, Side::Left]),
            Err(Error::ForeignLeaf)
        ));
        assert!(matches!(ind.tree.rule_path(&[]), Err(Error::ForeignLeaf)));
    }

    #[test]
    fn renders_predicate_with_four_decimals() {
        let p = SplitPredicate::new(1456, 0.3641);
        assert_eq!(p.render(Side::Left), "feature[1456] < 0.3641");
        assert_eq!(p.render(Side::Right), "feature[1456] >= 0.3641");
    }

    #[test]
    fn document_round_trip() {
        let tree = DecisionTree {
            group_size: 1300,
            group_errors: 401,
            root: TreeNode::Internal {
                split: SplitPredicate::new(1456, 0.3641),
                left: Box::new(TreeNode::Leaf(ClusterStats::new(615, 257, 401))),
                right: Box::new(TreeNode::Leaf(ClusterStats::new(685, 144, 401))),
            },
        };
        let doc = tree.to_document();
        assert!(
            doc.contains("\"split\":{\"feature\":1456,\"threshold\":3.6409999999999998e-1}"),
            "{doc}"
        );
        let back = DecisionTree::from_document(&doc).unwrap();
        assert_eq!(back, tree);
        assert_eq!(back.to_document(), doc);
    }

    #[test]
    fn malformed_documents_rejected() {
        for bad in [
            "",
            "[]",
            "{\"group_size\":1,\"group_errors\":0}",
            "{\"group_size\":1,\"group_errors\":0,\"root\":{\"nope\":1}}",
            "{\"group_size\":2,\"group_errors\":1,\"root\":{\"leaf\":{\"size\":2,\"errors\":1,\"er\":0.4,\"ec\":1,\"iv\":0.5}}}",
        ] {
            assert!(matches!(DecisionTree::from_document(bad), Err(Error::MalformedTree(_))), "{bad}");
        }
    }
}
