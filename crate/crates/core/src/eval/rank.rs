//! Retrieval rank metrics: R@K, median rank, mean rank.

use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Tie handling used by [`rank_metrics`], quoted verbatim in reports.
pub const TIE_RULE: &str =
    "rank = 1 + count of candidates with strictly greater similarity (ties optimistic)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    /// `R@K` in percent, keyed by K.
    pub recall: BTreeMap<usize, f64>,
    /// Median rank; the lower middle for an even batch.
    pub mdr: f64,
    /// Mean rank.
    pub mnr: f64,
}

/// Ranks of the ground-truth match for each row of a similarity matrix
/// (rows are queries, column `i` is the ground truth of row `i`).
pub fn ground_truth_ranks(s: &Array2<f64>) -> Result<Vec<usize>> {
    let (rows, cols) = s.dim();
    if rows != cols {
        return Err(Error::Shape(format!(
            "similarity matrix must be square, got {rows}x{cols}"
        )));
    }
    if rows == 0 {
        return Err(Error::Data("empty similarity matrix".into()));
    }
    Ok((0..rows)
        .map(|i| {
            let truth = s[(i, i)];
            1 + (0..cols).filter(|&j| s[(i, j)] > truth).count()
        })
        .collect())
}

pub fn rank_metrics(s: &Array2<f64>, ks: &[usize]) -> Result<RankMetrics> {
    let mut ranks = ground_truth_ranks(s)?;
    let b = ranks.len();
    let recall = ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            (k, 100.0 * hits as f64 / b as f64)
        })
        .collect();
    ranks.sort_unstable();
    let mdr = ranks[(b - 1) / 2] as f64;
    let mnr = ranks.iter().sum::<usize>() as f64 / b as f64;
    Ok(RankMetrics { recall, mdr, mnr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_dominant_matrix_is_perfect() {
        let s = Array2::from_shape_fn((5, 5), |(i, j)| if i == j { 1.0 } else { 0.0 });
        let m = rank_metrics(&s, &[1, 5]).unwrap();
        assert_eq!(m.recall[&1], 100.0);
        assert_eq!(m.mdr, 1.0);
        assert_eq!(m.mnr, 1.0);
    }

    #[test]
    fn ground_truth_last_on_4x4_fixture() {
        // Ground truth strictly below every other candidate in each row.
        let s = arr2(&[
            [0.0, 1.0, 2.0, 3.0],
            [1.0, 0.0, 2.0, 3.0],
            [1.0, 2.0, 0.0, 3.0],
            [1.0, 2.0, 3.0, 0.0],
        ]);
        let m = rank_metrics(&s, &[1, 5]).unwrap();
        assert_eq!(m.recall[&1], 0.0);
        assert_eq!(m.mnr, 4.0);
        assert_eq!(m.recall[&5], 100.0);
    }

    #[test]
    fn all_equal_matrix_ranks_first_under_tie_rule() {
        let s = Array2::from_elem((6, 6), 0.5);
        let m = rank_metrics(&s, &[1]).unwrap();
        assert_eq!(m.recall[&1], 100.0);
        assert_eq!(m.mdr, 1.0);
    }

    #[test]
    fn median_uses_lower_middle_for_even_batches() {
        // Row i has exactly i candidates above its truth: ranks 1, 2, 3, 4.
        let s = Array2::from_shape_fn((4, 4), |(i, j)| {
            if i == j {
                0.0
            } else if j < i {
                1.0
            } else {
                -1.0
            }
        });
        let m = rank_metrics(&s, &[2]).unwrap();
        assert_eq!(m.mdr, 2.0);
        assert_eq!(m.mnr, 2.5);
        assert_eq!(m.recall[&2], 50.0);
    }

    #[test]
    fn non_square_is_rejected() {
        let s = Array2::zeros((2, 3));
        assert!(rank_metrics(&s, &[1]).is_err());
    }

    /// Brute-force oracle: sort candidate similarities and locate the truth
    /// optimistically.
    fn brute_force_ranks(s: &Array2<f64>) -> Vec<usize> {
        let b = s.nrows();
        (0..b)
            .map(|i| {
                let mut sims: Vec<f64> = (0..b).map(|j| s[(i, j)]).collect();
                sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
                sims.iter().position(|&v| v == s[(i, i)]).unwrap() + 1
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..100 {
            let b = rng.gen_range(1..=50);
            // Quantized values force frequent ties.
            let s = Array2::from_shape_fn((b, b), |_| (rng.gen_range(-4i32..=4) as f64) / 4.0);
            let got = ground_truth_ranks(&s).unwrap();
            assert_eq!(got, brute_force_ranks(&s), "trial {trial}");
        }
    }
}
