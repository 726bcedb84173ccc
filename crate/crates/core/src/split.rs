//! Information-gain kernel shared by feature selection and tree induction.
//!
//! Both consumers call [`scan_column`], so the mutual information reported
//! for a feature is bit-for-bit the gain of the best depth-1 split on it.

/// Gains closer than this are treated as tied; the earlier candidate in
/// (feature, threshold) order wins.
pub(crate) const GAIN_TIE_EPS: f64 = 1e-12;

/// Binary entropy in bits of `errors` failures among `n` rows (0·log 0 = 0).
pub(crate) fn binary_entropy(errors: u64, n: u64) -> f64 {
    if n == 0 || errors == 0 || errors == n {
        return 0.0;
    }
    let p = errors as f64 / n as f64;
    let q = (n - errors) as f64 / n as f64;
    -(p * p.log2() + q * q.log2())
}

/// Gain of splitting (n, errors) into a left part (n_left, e_left) and the rest.
pub(crate) fn split_gain(parent_entropy: f64, n: u64, errors: u64, n_left: u64, e_left: u64) -> f64 {
    let n_right = n - n_left;
    let e_right = errors - e_left;
    let weighted = (n_left as f64 / n as f64) * binary_entropy(e_left, n_left)
        + (n_right as f64 / n as f64) * binary_entropy(e_right, n_right);
    (parent_entropy - weighted).max(0.0)
}

#[inline]
pub(crate) fn midpoint(lo: f32, hi: f32) -> f64 {
    (lo as f64 + hi as f64) / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ThresholdScan {
    pub threshold: f64,
    pub gain: f64,
}

/// Best `value < threshold` split of one column. `None` when the column has
/// no two distinct values (no candidate threshold).
pub(crate) fn scan_column(values: &[f32], failures: &[bool]) -> Option<ThresholdScan> {
    debug_assert_eq!(values.len(), failures.len());
    let mut pairs: Vec<(f32, bool)> = values.iter().copied().zip(failures.iter().copied()).collect();
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    scan_sorted(&pairs)
}

pub(crate) fn scan_sorted(pairs: &[(f32, bool)]) -> Option<ThresholdScan> {
    let n = pairs.len() as u64;
    let errors = pairs.iter().filter(|p| p.1).count() as u64;
    let parent = binary_entropy(errors, n);

    let mut best: Option<ThresholdScan> = None;
    let mut e_left = 0u64;
    for (i, w) in pairs.windows(2).enumerate() {
        if w[0].1 {
            e_left += 1;
        }
        if w[0].0 == w[1].0 {
            continue;
        }
        let gain = split_gain(parent, n, errors, i as u64 + 1, e_left);
        let better = match best {
            None => true,
            Some(b) => gain > b.gain + GAIN_TIE_EPS,
        };
        if better {
            best = Some(ThresholdScan {
                threshold: midpoint(w[0].0, w[1].0),
                gain,
            });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_edges() {
        assert_eq!(binary_entropy(0, 10), 0.0);
        assert_eq!(binary_entropy(10, 10), 0.0);
        assert_eq!(binary_entropy(0, 0), 0.0);
        assert!((binary_entropy(5, 10) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_split() {
        let s = scan_column(&[0.0, 0.0, 1.0, 1.0], &[true, true, false, false]).unwrap();
        assert_eq!(s.threshold, 0.5);
        assert!((s.gain - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_column_has_no_candidate() {
        assert_eq!(scan_column(&[3.0; 5], &[true, false, true, false, true]), None);
    }

    #[test]
    fn signed_zero_is_one_value() {
        assert_eq!(scan_column(&[-0.0, 0.0], &[true, false]), None);
    }
}
