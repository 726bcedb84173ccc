//! Failure metrics: error rate (ER), error coverage (EC), base error rate
//! (BER), average leaf error rate (ALER) and importance value (IV).
//!
//! Everything is derived from integer counts; floating point appears only in
//! the accessor methods. EC is always relative to the errors of the analyzed
//! group; pass the whole benchmark as the group to get the global form.

use std::collections::HashSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::tree::DecisionTree;

/// Counts for a cluster inside an enclosing group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ClusterStats {
    pub size: u64,
    pub error_count: u64,
    /// Failures in the enclosing group (EC denominator).
    pub group_errors: u64,
}

impl ClusterStats {
    pub fn new(size: u64, error_count: u64, group_errors: u64) -> Self {
        debug_assert!(error_count <= size && error_count <= group_errors);
        Self {
            size,
            error_count,
            group_errors,
        }
    }

    /// `error_count / size`; 0 for an empty cluster.
    pub fn error_rate(&self) -> f64 {
        if self.size == 0 {
            0.0
        } else {
            self.error_count as f64 / self.size as f64
        }
    }

    /// `error_count / group_errors`; 0 when the group has no failures.
    pub fn error_coverage(&self) -> f64 {
        if self.group_errors == 0 {
            0.0
        } else {
            self.error_count as f64 / self.group_errors as f64
        }
    }

    pub fn importance_value(&self) -> f64 {
        importance_value(self)
    }

    pub fn error_rate_exact(&self) -> BigRational {
        ratio(self.error_count, self.size.max(1))
    }
}

fn ratio(num: u64, den: u64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn count_failures(rows: &[usize], failures: &[bool]) -> u64 {
    rows.iter().filter(|&&r| failures[r]).count() as u64
}

pub fn error_rate(cluster: &[usize], failures: &[bool]) -> Result<f64> {
    if cluster.is_empty() {
        return Err(Error::EmptyCluster);
    }
    Ok(count_failures(cluster, failures) as f64 / cluster.len() as f64)
}

pub fn error_coverage(cluster: &[usize], group: &[usize], failures: &[bool]) -> Result<f64> {
    let members: HashSet<usize> = group.iter().copied().collect();
    if cluster.iter().any(|r| !members.contains(r)) {
        return Err(Error::NotSubset);
    }
    let group_errors = count_failures(group, failures);
    if group_errors == 0 {
        return Ok(0.0);
    }
    Ok(count_failures(cluster, failures) as f64 / group_errors as f64)
}

pub fn importance_value(stats: &ClusterStats) -> f64 {
    stats.error_rate() * stats.error_coverage()
}

fn check_partition(tree: &DecisionTree) -> Result<Vec<ClusterStats>> {
    let leaves: Vec<ClusterStats> = tree.leaves().into_iter().map(|l| l.stats).collect();
    let size: u64 = leaves.iter().map(|s| s.size).sum();
    let errors: u64 = leaves.iter().map(|s| s.error_count).sum();
    if size != tree.group_size || errors != tree.group_errors {
        return Err(Error::Partition(format!(
            "leaves hold {size} rows / {errors} errors, group has {} / {}",
            tree.group_size, tree.group_errors
        )));
    }
    if let Some(s) = leaves.iter().find(|s| s.group_errors != tree.group_errors) {
        return Err(Error::Partition(format!(
            "leaf coverage denominator {} differs from group errors {}",
            s.group_errors, tree.group_errors
        )));
    }
    Ok(leaves)
}

/// Σ ER·EC over the leaves.
pub fn aler(tree: &DecisionTree) -> Result<f64> {
    let leaves = check_partition(tree)?;
    Ok(leaves.iter().map(importance_value).sum())
}

/// ALER as an exact rational (Σ e²/n over leaves, divided by group errors).
pub fn aler_exact(tree: &DecisionTree) -> Result<BigRational> {
    let leaves = check_partition(tree)?;
    if tree.group_errors == 0 {
        return Ok(BigRational::zero());
    }
    let total = leaves
        .iter()
        .filter(|s| s.size > 0)
        .fold(BigRational::zero(), |acc, s| {
            acc + ratio(s.error_count * s.error_count, s.size)
        });
    Ok(total / BigRational::from_integer(BigInt::from(tree.group_errors)))
}

/// Base error rate of the tree's root group.
pub fn base_error_rate(tree: &DecisionTree) -> f64 {
    ClusterStats::new(tree.group_size, tree.group_errors, tree.group_errors).error_rate()
}

/// ALER − BER.
pub fn aler_gain(tree: &DecisionTree) -> Result<f64> {
    Ok(aler(tree)? - base_error_rate(tree))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{SplitPredicate, TreeNode};

    fn leaf(n: u64, e: u64, total: u64) -> TreeNode {
        TreeNode::Leaf(ClusterStats::new(n, e, total))
    }

    fn two_leaf(a: (u64, u64), b: (u64, u64)) -> DecisionTree {
        let total = a.1 + b.1;
        DecisionTree {
            group_size: a.0 + b.0,
            group_errors: total,
            root: TreeNode::Internal {
                split: SplitPredicate::new(0, 0.5),
                left: Box::new(leaf(a.0, a.1, total)),
                right: Box::new(leaf(b.0, b.1, total)),
            },
        }
    }

    #[test]
    fn error_rate_examples() {
        let failures = [true, false, true, true];
        assert_eq!(error_rate(&[0, 1, 2, 3], &failures).unwrap(), 0.75);
        assert_eq!(error_rate(&[1], &failures).unwrap(), 0.0);
        assert!(matches!(error_rate(&[], &failures), Err(Error::EmptyCluster)));
    }

    #[test]
    fn error_coverage_examples() {
        let mut failures = vec![false; 20];
        for f in failures.iter_mut().take(10) {
            *f = true;
        }
        let group: Vec<usize> = (0..20).collect();
        assert!((error_coverage(&[0, 1, 2, 15], &group, &failures).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(error_coverage(&group, &group, &failures).unwrap(), 1.0);
        assert!(matches!(
            error_coverage(&[21], &group, &failures),
            Err(Error::NotSubset)
        ));
        let clean = vec![false; 20];
        assert_eq!(error_coverage(&[0], &group, &clean).unwrap(), 0.0);
    }

    #[test]
    fn single_leaf_aler_is_ber() {
        let tree = DecisionTree {
            group_size: 1300,
            group_errors: 401,
            root: leaf(1300, 401, 401),
        };
        assert_eq!(aler(&tree).unwrap(), base_error_rate(&tree));
        assert_eq!(aler_gain(&tree).unwrap(), 0.0);
    }

    #[test]
    fn hand_built_two_leaf() {
        let tree = two_leaf((4, 3), (6, 1));
        let expected = 0.75 * 0.75 + (1.0 / 6.0) * 0.25;
        assert!((aler(&tree).unwrap() - expected).abs() < 1e-15);
        assert_eq!(aler_exact(&tree).unwrap(), BigRational::new(29.into(), 48.into()));
    }

    #[test]
    fn importance_value_products() {
        let iv: f64 = 0.4179 * 0.6409;
        assert!((iv - 0.26783).abs() < 5e-5);
        let iv: f64 = 0.3184 * 0.4561;
        assert!((iv - 0.14522).abs() < 5e-5);
        assert_eq!(importance_value(&ClusterStats::new(10, 0, 5)), 0.0);
    }

    #[test]
    fn leaf_rate_solved_from_aler() {
        // 0.4179·0.6409 + x·0.3591 = 0.3433
        let x: f64 = (0.3433 - 0.4179 * 0.6409) / 0.3591;
        assert!((x - 0.2102).abs() < 1e-4, "{x}");
    }

    #[test]
    fn gain_of_two_leaf_example() {
        assert!((0.3433_f64 - 0.3085 - 0.0348).abs() < 1e-12);
        assert!((0.291_f64 - 0.2 - 0.091).abs() < 1e-12);
        // Counts whose rounded rates are ER 0.4179 / 0.2102, EC 0.6409 / 0.3591, BER 0.3085.
        let tree = two_leaf((615, 257), (685, 144));
        assert_eq!(format!("{:.4}", base_error_rate(&tree)), "0.3085");
        assert_eq!(format!("{:.4}", aler(&tree).unwrap()), "0.3433");
        assert!((aler_gain(&tree).unwrap() - 0.0348).abs() < 1e-4);
    }

    #[test]
    fn partition_violation_detected() {
        let mut tree = two_leaf((4, 3), (6, 1));
        tree.group_size = 11;
        assert!(matches!(aler(&tree), Err(Error::Partition(_))));
    }
}
