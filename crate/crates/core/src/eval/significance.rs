//! Paired two-sided significance tests.

use super::special::{chi_square_sf, normal_two_sided, student_t_two_sided};
use crate::error::{Error, Result};

pub const ALPHA: f64 = 0.05;

/// Largest number of nonzero differences for which the Wilcoxon null
/// distribution is enumerated exactly rather than approximated.
pub const WILCOXON_EXACT_MAX: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
    /// The test is undefined on this input (no discordance or no variance).
    pub degenerate: bool,
    /// Effective sample size.
    pub n: usize,
}

impl TestResult {
    fn new(statistic: f64, p_value: f64, alpha: f64, n: usize) -> Self {
        Self {
            statistic,
            p_value,
            significant: p_value < alpha,
            degenerate: false,
            n,
        }
    }

    fn degenerate(statistic: f64, p_value: f64, n: usize) -> Self {
        Self {
            statistic,
            p_value,
            significant: false,
            degenerate: true,
            n,
        }
    }
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "paired samples differ in length ({a} vs {b})"
        )));
    }
    Ok(())
}

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Wilcoxon signed-rank test on `a - b`. Zero differences are dropped and
/// tied magnitudes share average ranks. The statistic is `min(W+, W-)`.
/// Up to [`WILCOXON_EXACT_MAX`] nonzero differences the two-sided p-value is
/// read from the exact permutation distribution of the (tied) ranks; above
/// that it uses the normal approximation with tie-corrected variance and a
/// continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alpha: f64) -> Result<TestResult> {
    same_len(a.len(), b.len())?;
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(TestResult::degenerate(0.0, 1.0, 0));
    }
    let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w = w_plus.min(total - w_plus);
    let p = if n <= WILCOXON_EXACT_MAX {
        exact_p(&ranks, w)
    } else {
        normal_p(&ranks, w)
    };
    Ok(TestResult::new(w, p, alpha, n))
}

/// `2·P(T ≤ w)` where `T` is the positive-rank sum under random signs.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    // Average ranks are multiples of 1/2, so doubled ranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * w).round() as usize;
    let tail: f64 = counts[..=limit.min(max)].iter().sum();
    (2.0 * tail / 2f64.powi(ranks.len() as i32)).min(1.0)
}

fn normal_p(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    normal_two_sided(z)
}

/// McNemar's test with continuity correction on paired correctness flags.
/// `b` counts pairs where only `a` is correct, `c` where only `b` is.
pub fn mcnemar_test(correct_a: &[bool], correct_b: &[bool], alpha: f64) -> Result<TestResult> {
    same_len(correct_a.len(), correct_b.len())?;
    let b = correct_a
        .iter()
        .zip(correct_b)
        .filter(|(x, y)| **x && !**y)
        .count();
    let c = correct_a
        .iter()
        .zip(correct_b)
        .filter(|(x, y)| !**x && **y)
        .count();
    Ok(mcnemar_from_counts(b, c, alpha))
}

pub fn mcnemar_from_counts(b: usize, c: usize, alpha: f64) -> TestResult {
    let n = b + c;
    if n == 0 {
        return TestResult::degenerate(0.0, 1.0, 0);
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let chi2 = diff * diff / n as f64;
    TestResult::new(chi2, chi_square_sf(chi2, 1.0), alpha, n)
}

/// Paired t-test on `a - b`. Zero-variance differences are degenerate: the
/// statistic is 0 (p = 1) when they are all zero and infinite (p = 0)
/// otherwise, and neither case is marked significant.
pub fn paired_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<TestResult> {
    same_len(a.len(), b.len())?;
    let n = a.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TestResult::degenerate(0.0, 1.0, n)
        } else {
            TestResult::degenerate(mean.signum() * f64::INFINITY, 0.0, n)
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(TestResult::new(
        t,
        student_t_two_sided(t, (n - 1) as f64),
        alpha,
        n,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Two-sided p by enumerating all 2^n sign assignments.
    fn enumerate_p(diffs: &[f64]) -> (f64, f64) {
        let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
        let ranks = average_ranks(&abs);
        let n = ranks.len();
        let total: f64 = ranks.iter().sum();
        let w_plus: f64 = (0..n).filter(|&i| diffs[i] > 0.0).map(|i| ranks[i]).sum();
        let w = w_plus.min(total - w_plus);
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let s: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if s.min(total - s) <= w + 1e-9 {
                hits += 1;
            }
        }
        (w, (hits as f64 / (1u64 << n) as f64).min(1.0))
    }

    #[test]
    fn textbook_sample_matches_enumeration() {
        let d = [1.5, 0.5, -1.0, 2.0, 3.0, -0.5, 1.0, 4.0, 2.5, 5.0];
        let zeros = [0.0; 10];
        let r = wilcoxon_signed_rank(&d, &zeros, ALPHA).unwrap();
        let (w, p) = enumerate_p(&d);
        assert_eq!(r.statistic, w);
        assert!((r.p_value - p).abs() < 0.01, "{} vs {}", r.p_value, p);
        assert!((r.p_value - p).abs() < 1e-12);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let a = [1.0, 2.0, 3.0];
        let r = wilcoxon_signed_rank(&a, &a, ALPHA).unwrap();
        assert!(r.degenerate && !r.significant && r.p_value == 1.0);
    }

    #[test]
    fn large_separation_is_significant() {
        let b: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let a: Vec<f64> = b.iter().map(|v| v + 100.0).collect();
        let r = wilcoxon_signed_rank(&a, &b, ALPHA).unwrap();
        assert!(r.p_value < 0.001);
        let small: Vec<f64> = b[..20].iter().map(|v| v + 100.0).collect();
        assert!(wilcoxon_signed_rank(&small, &b[..20], ALPHA).unwrap().p_value < 0.001);
    }

    #[test]
    fn normal_branch_tracks_exact_distribution() {
        let d: Vec<f64> = (0..WILCOXON_EXACT_MAX)
            .map(|i| ((i * 7919) % 101) as f64 - 45.0)
            .filter(|v| *v != 0.0)
            .collect();
        let ranks = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
        let w_plus: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
        let total: f64 = ranks.iter().sum();
        let w = w_plus.min(total - w_plus);
        assert!((exact_p(&ranks, w) - normal_p(&ranks, w)).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn wilcoxon_matches_enumeration_for_small_n(
            d in proptest::collection::vec(
                prop_oneof![(-8i32..=8).prop_map(|v| v as f64 * 0.5), -5.0f64..5.0],
                1..=12,
            ),
        ) {
            let zeros = vec![0.0; d.len()];
            let r = wilcoxon_signed_rank(&d, &zeros, ALPHA).unwrap();
            let nonzero: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
            if nonzero.is_empty() {
                prop_assert!(r.degenerate);
            } else {
                let (w, p) = enumerate_p(&nonzero);
                prop_assert_eq!(r.statistic, w);
                prop_assert!((r.p_value - p).abs() < 0.01, "{} vs {}", r.p_value, p);
            }
        }

        #[test]
        fn t_test_is_antisymmetric(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..30),
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let x = paired_t_test(&a, &b, ALPHA).unwrap();
            let y = paired_t_test(&b, &a, ALPHA).unwrap();
            prop_assert_eq!(x.statistic, -y.statistic);
            prop_assert_eq!(x.p_value, y.p_value);
        }
    }

    #[test]
    fn mcnemar_examples() {
        let r = mcnemar_from_counts(5, 15, ALPHA);
        assert_eq!(r.statistic, 4.05);
        assert!(r.significant);
        let even = mcnemar_from_counts(7, 7, ALPHA);
        assert!(even.statistic <= 1.0 / 14.0 + 1e-15 && !even.significant);
        let flags = [true, false, true];
        assert!(mcnemar_test(&flags, &flags, ALPHA).unwrap().degenerate);
    }

    #[test]
    fn mcnemar_counts_discordant_pairs() {
        let mut a = vec![true; 5];
        a.extend(vec![false; 15]);
        let b: Vec<bool> = a.iter().map(|v| !v).collect();
        assert_eq!(mcnemar_test(&a, &b, ALPHA).unwrap().statistic, 4.05);
    }

    #[test]
    fn t_test_examples() {
        let d = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_t_test(&d, &[0.0; 5], ALPHA).unwrap();
        assert!((r.statistic - 4.242_640_687_119_285).abs() < 1e-12);
        assert!((r.p_value - 0.0132).abs() < 0.002, "{}", r.p_value);
        let same = paired_t_test(&d, &d, ALPHA).unwrap();
        assert_eq!((same.statistic, same.p_value), (0.0, 1.0));
        assert!(same.degenerate);
        let shifted: Vec<f64> = d.iter().map(|v| v + 1.0).collect();
        assert!(paired_t_test(&shifted, &d, ALPHA).unwrap().degenerate);
    }
}
