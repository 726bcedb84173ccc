//! Feature scoring against failure labels and most-activating rows.
//!
//! Mutual information between a continuous feature and the binary failure
//! flag is estimated as the information gain of the best binary split on
//! that feature, i.e. exactly the criterion the tree uses for its splits.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetBundle, FeatureMatrix, Grouping};
use crate::error::{Error, Result};
use crate::exec;
use crate::split::scan_column;

pub const DEFAULT_TOP_K: usize = 20;
pub const DEFAULT_TOP_ACTIVATING: usize = 6;

/// Estimated information (bits) a feature carries about failure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature_index: usize,
    pub mi_bits: f64,
    pub best_threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiScore {
    pub mi_bits: f64,
    pub best_threshold: f64,
}

/// Max-split information gain of `column` on `failures`.
///
/// A constant column scores 0 with the constant as its threshold.
pub fn mutual_information(column: &[f32], failures: &[bool]) -> Result<MiScore> {
    if column.len() < 2 {
        return Err(Error::TooFewRows {
            required: 2,
            actual: column.len(),
        });
    }
    Ok(score_column(column, failures))
}

fn score_column(column: &[f32], failures: &[bool]) -> MiScore {
    match scan_column(column, failures) {
        Some(scan) => MiScore {
            mi_bits: scan.gain,
            best_threshold: scan.threshold,
        },
        None => MiScore {
            mi_bits: 0.0,
            best_threshold: column.first().copied().unwrap_or(0.0) as f64,
        },
    }
}

/// Scores `features` over `rows` (parallel per feature, order preserved).
pub fn score_features(
    matrix: &FeatureMatrix,
    failures: &[bool],
    rows: &[usize],
    features: &[usize],
) -> Vec<FeatureScore> {
    let row_failures: Vec<bool> = rows.iter().map(|&r| failures[r]).collect();
    exec::map_slice(features, |&f| {
        let column = matrix.gather(f, rows);
        let s = score_column(&column, &row_failures);
        FeatureScore {
            feature_index: f,
            mi_bits: s.mi_bits,
            best_threshold: s.best_threshold,
        }
    })
}

/// Sorts by MI descending, ties by ascending feature index.
pub fn rank(scores: &mut [FeatureScore]) {
    scores.sort_by(|a, b| {
        b.mi_bits
            .total_cmp(&a.mi_bits)
            .then(a.feature_index.cmp(&b.feature_index))
    });
}

/// Up to `k` enabled features of the group ranked by mutual information.
pub fn select_top_k(
    bundle: &DatasetBundle,
    group: &Grouping,
    k: usize,
    disabled: &BTreeSet<usize>,
) -> Result<Vec<FeatureScore>> {
    select_top_k_rows(bundle.features(), bundle.failures(), &group.rows, k, disabled)
}

pub fn select_top_k_rows(
    matrix: &FeatureMatrix,
    failures: &[bool],
    rows: &[usize],
    k: usize,
    disabled: &BTreeSet<usize>,
) -> Result<Vec<FeatureScore>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let enabled: Vec<usize> = (0..matrix.n_features()).filter(|f| !disabled.contains(f)).collect();
    if enabled.is_empty() {
        return Err(Error::AllFeaturesDisabled);
    }
    let mut scores = score_features(matrix, failures, rows, &enabled);
    rank(&mut scores);
    scores.truncate(k);
    Ok(scores)
}

/// The `k` rows with the largest activation of `feature_index`.
pub fn top_activating(bundle: &DatasetBundle, feature_index: usize, k: usize) -> Result<Vec<usize>> {
    let rows: Vec<usize> = (0..bundle.n_images()).collect();
    top_activating_rows(bundle.features(), &rows, feature_index, k)
}

/// Like [`top_activating`] but restricted to `rows`. Ties go to the lower row.
pub fn top_activating_rows(
    matrix: &FeatureMatrix,
    rows: &[usize],
    feature_index: usize,
    k: usize,
) -> Result<Vec<usize>> {
    matrix.check_feature(feature_index)?;
    let mut ranked: Vec<(f32, usize)> = rows.iter().map(|&r| (matrix.value(r, feature_index), r)).collect();
    let order = |a: &(f32, usize), b: &(f32, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < ranked.len() && k > 0 {
        ranked.select_nth_unstable_by(k - 1, order);
        ranked.truncate(k);
    }
    ranked.sort_unstable_by(order);
    ranked.truncate(k);
    Ok(ranked.into_iter().map(|(_, r)| r).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    use crate::dataset::{EvalRecord, GroupingKind};
    use crate::synth::oracle_mi;

    fn bundle_from_columns(columns: &[Vec<f32>], failures: &[bool]) -> DatasetBundle {
        let n = failures.len();
        let d = columns.len();
        let mut data = vec![0.0; n * d];
        for (f, col) in columns.iter().enumerate() {
            for (r, &v) in col.iter().enumerate() {
                data[r * d + f] = v;
            }
        }
        let records = failures
            .iter()
            .enumerate()
            .map(|(i, &fail)| EvalRecord {
                image_id: i.to_string(),
                true_label: 0,
                predicted_label: u32::from(fail),
            })
            .collect();
        let classes: BTreeMap<u32, String> = [(0, "a".into()), (1, "b".into())].into();
        DatasetBundle::new(FeatureMatrix::new(n, d, data).unwrap(), records, classes).unwrap()
    }

    #[test]
    fn constant_column_scores_zero() {
        let s = mutual_information(&[2.5; 4], &[true, false, true, true]).unwrap();
        assert_eq!(s.mi_bits, 0.0);
        assert_eq!(s.best_threshold, 2.5);
    }

    #[test]
    fn perfect_predictor_is_one_bit() {
        let s = mutual_information(&[0.0, 0.0, 1.0, 1.0], &[true, true, false, false]).unwrap();
        assert!((s.mi_bits - 1.0).abs() < 1e-15);
        assert_eq!(s.best_threshold, 0.5);
        assert!((oracle_mi(&[0.0, 0.0, 1.0, 1.0], &[true, true, false, false]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn six_row_column_matches_oracle() {
        let col = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let fails = [true, true, true, false, false, true];
        let s = mutual_information(&col, &fails).unwrap();
        // Brute force over the 5 midpoints, frozen: best split is f < 3.5,
        // leaving (3 of 3) vs (1 of 3) failing.
        let frozen = 0.459_147_917_027_244_8;
        assert!((oracle_mi(&col, &fails) - frozen).abs() < 1e-12);
        assert!((s.mi_bits - frozen).abs() < 1e-12);
        assert_eq!(s.best_threshold, 3.5);
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(
            mutual_information(&[1.0], &[true]),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn selection_ranks_disables_and_saturates() {
        let fails = vec![true, true, false, false, true, false];
        let columns = vec![
            vec![0.3, 0.1, 0.2, 0.9, 0.5, 0.4], // noise
            vec![0.0, 0.0, 1.0, 1.0, 0.0, 1.0], // perfect
            vec![0.0, 0.1, 0.5, 0.6, 0.7, 0.8], // partial
        ];
        let b = bundle_from_columns(&columns, &fails);
        let g = b.group(GroupingKind::Label, 0).unwrap();
        let top = select_top_k(&b, &g, 2, &BTreeSet::new()).unwrap();
        assert_eq!(top[0].feature_index, 1);
        assert_eq!(top.len(), 2);

        let all = select_top_k(&b, &g, 10, &BTreeSet::new()).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all.windows(2).all(|w| w[0].mi_bits >= w[1].mi_bits));

        let disabled: BTreeSet<usize> = [1].into();
        let without = select_top_k(&b, &g, 10, &disabled).unwrap();
        assert_eq!(without[0].feature_index, all[1].feature_index);
        assert!(without.iter().all(|s| s.feature_index != 1));

        let everything: BTreeSet<usize> = [0, 1, 2].into();
        assert!(matches!(
            select_top_k(&b, &g, 3, &everything),
            Err(Error::AllFeaturesDisabled)
        ));
        assert!(matches!(
            select_top_k(&b, &g, 0, &BTreeSet::new()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn top_activating_examples() {
        let b = bundle_from_columns(&[vec![0.1, 0.9, 0.5]], &[false, true, false]);
        assert_eq!(top_activating(&b, 0, 2).unwrap(), vec![1, 2]);
        assert_eq!(top_activating(&b, 0, 10).unwrap(), vec![1, 2, 0]);
        assert!(matches!(
            top_activating(&b, 3, 2),
            Err(Error::InvalidFeature { index: 3, .. })
        ));
        let tied = bundle_from_columns(&[vec![1.0, 2.0, 2.0, 1.0]], &[false; 4]);
        assert_eq!(top_activating(&tied, 0, 3).unwrap(), vec![1, 2, 0]);
    }
}
