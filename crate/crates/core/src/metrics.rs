//! Ranking metrics: Kendall's tau-b, Recall@k and best-of-top-K summaries.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The k values reported in result tables.
pub const RECALL_KS: [usize; 10] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

fn pairs(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

/// Sum of `t(t-1)/2` over runs of equal adjacent values under `eq`.
fn tied_pairs<T>(items: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let mut total = 0;
    let mut run = 1;
    for w in items.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += pairs(run);
            run = 1;
        }
    }
    total + pairs(run)
}

/// Sorts `v` and returns the number of inversions removed.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall's tau-b in O(n log n).
///
/// Returns 0 when either argument is constant (the coefficient is undefined
/// there). Inputs must not contain NaN.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("kendall tau needs equal-length inputs"));
    }
    if a.len() < 2 {
        return Err(Error::invalid("kendall tau needs at least 2 points"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::invalid("kendall tau input contains NaN"));
    }
    let mut idx: Vec<usize> = (0..a.len()).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));
    let tied_a = tied_pairs(&idx, |&i, &j| a[i] == a[j]);
    let tied_ab = tied_pairs(&idx, |&i, &j| a[i] == a[j] && b[i] == b[j]);
    let mut ys: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = merge_count(&mut ys, &mut buf);
    let tied_b = tied_pairs(&ys, |x, y| x == y);
    let total = pairs(a.len());
    let denom = ((total - tied_a) as f64 * (total - tied_b) as f64).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    let score = total as f64 - tied_a as f64 - tied_b as f64 + tied_ab as f64 - 2.0 * swaps as f64;
    Ok(score / denom)
}

/// Indices of the `k` largest scores, ties broken by ascending index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let by_score = |&i: &usize, &j: &usize| scores[j].total_cmp(&scores[i]).then(i.cmp(&j));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, by_score);
        idx.truncate(k);
    }
    idx.sort_by(by_score);
    idx
}

/// Fraction of the true top-k found in the predicted top-k.
pub fn recall_at_k(predicted: &[f64], truth: &[f64], k: usize) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid("recall needs equal-length inputs"));
    }
    if k == 0 || k > predicted.len() {
        return Err(Error::invalid(format!("k = {k} outside 1..={}", predicted.len())));
    }
    let mut hit = vec![false; truth.len()];
    for i in top_k(truth, k) {
        hit[i] = true;
    }
    let found = top_k(predicted, k).into_iter().filter(|&i| hit[i]).count();
    Ok(found as f64 / k as f64)
}

/// Validation accuracy of the validation-best of the candidates, and that
/// candidate's own test accuracy. Ties go to the earliest candidate.
pub fn best_of(val: &[f64], test: &[f64]) -> Option<(f64, f64)> {
    let best = (0..val.len()).max_by(|&i, &j| val[i].total_cmp(&val[j]).then(j.cmp(&i)))?;
    Some((val[best], test[best]))
}

/// Ordering of candidates by descending score with index tie-break.
pub fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| match scores[j].total_cmp(&scores[i]) {
        Ordering::Equal => i.cmp(&j),
        o => o,
    });
    idx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingEvaluation {
    pub kendall_tau: f64,
    pub recall_at_k: BTreeMap<usize, f64>,
    pub best_val: f64,
    pub best_test: f64,
}

impl RankingEvaluation {
    /// Tau and Recall@k (for every k in [`RECALL_KS`] not above n) of
    /// `predicted` against `truth`; best-of fields are left at NaN.
    pub fn of_scores(predicted: &[f64], truth: &[f64]) -> Result<Self> {
        let kendall_tau = kendall_tau(predicted, truth)?;
        let mut recall = BTreeMap::new();
        for k in RECALL_KS.into_iter().filter(|&k| k <= predicted.len()) {
            recall.insert(k, recall_at_k(predicted, truth, k)?);
        }
        Ok(Self {
            kendall_tau,
            recall_at_k: recall,
            best_val: f64::NAN,
            best_test: f64::NAN,
        })
    }

    /// `val_acc,test_acc,ktau,recall@10..recall@100` fields; missing recalls
    /// are left empty.
    pub fn csv_fields(&self) -> Vec<String> {
        let mut out = vec![
            format!("{}", self.best_val),
            format!("{}", self.best_test),
            format!("{}", self.kendall_tau),
        ];
        for k in RECALL_KS {
            out.push(self.recall_at_k.get(&k).map(|r| r.to_string()).unwrap_or_default());
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;

    pub(crate) fn brute_tau(a: &[f64], b: &[f64]) -> f64 {
        let (mut c, mut d, mut ta, mut tb) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                let s = (a[i] - a[j]).signum() * (b[i] - b[j]).signum();
                if a[i] == a[j] && b[i] == b[j] {
                    continue;
                } else if a[i] == a[j] {
                    ta += 1;
                } else if b[i] == b[j] {
                    tb += 1;
                } else if s > 0.0 {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
        ((c - d) as f64) / (((c + d + ta) * (c + d + tb)) as f64).sqrt()
    }

    #[test]
    fn tau_trivial_orders() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&x, &x).unwrap(), 1.0);
        assert_eq!(kendall_tau(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
        assert_eq!(kendall_tau(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn tau_matches_brute_force_with_ties() {
        let mut rng = crate::rng::rng(1);
        for n in [2, 3, 7, 50, 200] {
            for _ in 0..10 {
                let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
                let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
                let (fast, slow) = (kendall_tau(&a, &b).unwrap(), brute_tau(&a, &b));
                if slow.is_nan() {
                    assert_eq!(fast, 0.0);
                } else {
                    assert!((fast - slow).abs() < 1e-12, "n={n}: {fast} vs {slow}");
                }
            }
        }
    }

    #[test]
    fn recall_examples() {
        let t = [0.1, 0.9, 0.5, 0.3];
        assert_eq!(recall_at_k(&t, &t, 2).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[0.9, 0.1, 0.3, 0.5], &t, 2).unwrap(), 0.0);
        assert!(recall_at_k(&t, &t, 0).is_err());
        assert!(recall_at_k(&t, &t, 5).is_err());
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(top_k(&[0.5, 0.7, 0.5, 0.5], 3), vec![1, 0, 2]);
        assert_eq!(descending(&[0.5, 0.7, 0.5]), vec![1, 0, 2]);
    }

    #[test]
    fn best_of_uses_validation_winner() {
        assert_eq!(best_of(&[94.0, 95.0], &[93.0, 92.0]), Some((95.0, 92.0)));
        assert_eq!(best_of(&[90.0], &[89.0]), Some((90.0, 89.0)));
        assert_eq!(best_of(&[], &[]), None);
    }

    #[test]
    fn evaluation_fields() {
        let x: Vec<f64> = (0..35).map(f64::from).collect();
        let e = RankingEvaluation::of_scores(&x, &x).unwrap();
        assert_eq!(e.recall_at_k.keys().copied().collect::<Vec<_>>(), vec![10, 20, 30]);
        let fields = e.csv_fields();
        assert_eq!(fields.len(), 13);
        assert_eq!(fields[2], "1");
        assert_eq!(fields[12], "");
    }

    proptest! {
        #[test]
        fn tau_antisymmetric_under_reversal(v in prop::collection::hash_set(0u32..10_000, 2..60)) {
            let a: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let b: Vec<f64> = a.iter().map(|x| (x * 0.37).sin()).collect();
            let rev: Vec<f64> = b.iter().map(|x| -x).collect();
            let t = kendall_tau(&a, &b).unwrap();
            prop_assert!((kendall_tau(&a, &rev).unwrap() + t).abs() < 1e-12);
            prop_assert_eq!(kendall_tau(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn recall_invariant_to_monotone_maps(
            p in prop::collection::vec(-5.0f64..5.0, 20),
            t in prop::collection::vec(-5.0f64..5.0, 20),
            k in 1usize..=20,
        ) {
            let warped: Vec<f64> = p.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(recall_at_k(&p, &t, k).unwrap(), recall_at_k(&warped, &t, k).unwrap());
        }
    }
}
