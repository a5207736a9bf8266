//! Normality and paired-difference significance tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Largest sample (after dropping zero differences) for which the Wilcoxon
/// p-value is computed from the exact null distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatTest {
    ShapiroWilk,
    PairedT,
    WilcoxonSignedRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub test: StatTest,
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub alpha: f64,
    pub reject_null: bool,
}

impl StatTestResult {
    fn new(test: StatTest, statistic: f64, p_value: f64, n: usize) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        StatTestResult {
            test,
            statistic,
            p_value,
            n,
            alpha: DEFAULT_ALPHA,
            reject_null: p_value < DEFAULT_ALPHA,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self.reject_null = self.p_value < alpha;
        self
    }
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * x + v)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Shapiro–Wilk W with Royston's AS R94 coefficient and p-value
/// approximations. Valid for 3 ≤ n ≤ 5000.
pub fn shapiro_wilk(sample: &[f64]) -> Result<StatTestResult> {
    let n = sample.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::SampleSize { n, min: 3, max: 5000 });
    }
    let mut x = sample.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).expect("finite sample"));
    let range = x[n - 1] - x[0];
    if range < 1e-19 * x[n - 1].abs().max(1.0) {
        return Err(Error::Degenerate("zero variance"));
    }

    let nf = n as f64;
    let half = n / 2;
    // Upper-half coefficients; a[0] pairs with the extreme order statistics.
    let mut a = vec![0.0f64; half];
    if n == 3 {
        a[0] = 0.5f64.sqrt();
    } else {
        let norm = std_normal();
        let m: Vec<f64> = (1..=half)
            .map(|i| -norm.inverse_cdf((i as f64 - 0.375) / (nf + 0.25)))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / nf.sqrt();
        const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
        const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
        let a1 = m[0] / ssumm2 + poly(&C1, rsn);
        let (first_rest, fac) = if n > 5 {
            let a2 = m[1] / ssumm2 + poly(&C2, rsn);
            a[1] = a2;
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
            (2, fac)
        } else {
            let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            (1, fac)
        };
        a[0] = a1;
        for i in first_rest..half {
            a[i] = m[i] / fac;
        }
    }

    // Full antisymmetric coefficient vector matched to ascending order.
    let coef: Vec<f64> = (0..n)
        .map(|i| {
            let j = n - 1 - i;
            match i.cmp(&j) {
                std::cmp::Ordering::Less => -a[i],
                std::cmp::Ordering::Greater => a[j],
                std::cmp::Ordering::Equal => 0.0,
            }
        })
        .collect();
    let ca = coef.iter().sum::<f64>() / nf;
    let xs: Vec<f64> = x.iter().map(|v| v / range).collect();
    let cx = xs.iter().sum::<f64>() / nf;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (c, v) in coef.iter().zip(&xs) {
        let da = c - ca;
        let dx = v - cx;
        ssa += da * da;
        ssx += dx * dx;
        sax += da * dx;
    }
    let root = (ssa * ssx).sqrt();
    let w1 = (root - sax) * (root + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    let p = if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = std::f64::consts::PI / 3.0;
        (pi6 * (w.sqrt().asin() - stqr)).max(0.0)
    } else {
        let mut y = w1.ln();
        let lxx = nf.ln();
        let (mean, sd) = if n <= 11 {
            let gamma = poly(&[-2.273, 0.459], nf);
            if y >= gamma {
                return Ok(StatTestResult::new(StatTest::ShapiroWilk, w, 1e-99, n));
            }
            y = -(gamma - y).ln();
            (
                poly(&[0.544, -0.39978, 0.025054, -6.714e-4], nf),
                poly(&[1.3822, -0.77857, 0.062767, -0.0020322], nf).exp(),
            )
        } else {
            (
                poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], lxx),
                poly(&[-0.4803, -0.082676, 0.0030302], lxx).exp(),
            )
        };
        std_normal().sf((y - mean) / sd)
    };
    Ok(StatTestResult::new(StatTest::ShapiroWilk, w, p, n))
}

pub fn differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// Two-sided paired t-test on `a − b`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<StatTestResult> {
    let d = differences(a, b)?;
    let n = d.len();
    if n < 2 {
        return Err(Error::SampleSize { n, min: 2, max: usize::MAX });
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if var.sqrt() <= 1e-12 * scale {
        return Err(Error::Degenerate("zero-variance differences"));
    }
    let t = mean / (var.sqrt() / nf.sqrt());
    let dist = StudentsT::new(0.0, 1.0, nf - 1.0).expect("df >= 1");
    let p = 2.0 * dist.sf(t.abs());
    Ok(StatTestResult::new(StatTest::PairedT, t, p, n))
}

/// Average ranks (1-based) of `values`, ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Wilcoxon signed-rank statistic pieces after dropping zero differences:
/// the absolute-difference ranks and the positive-rank sum.
pub fn signed_ranks(d: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let nz: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    let abs: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
    (average_ranks(&abs), nz.iter().map(|v| *v > 0.0).collect())
}

/// Number of sign assignments whose positive-rank sum is ≤ `bound`, counted
/// over doubled (integral) ranks by dynamic programming.
fn exact_lower_count(ranks: &[f64], bound: f64) -> u64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let limit = (2.0 * bound).round() as usize;
    counts.iter().take(limit.min(total) + 1).sum()
}

/// Two-sided Wilcoxon signed-rank test on `a − b`, zero differences dropped.
///
/// `W = min(R⁺, R⁻)`. For up to [`WILCOXON_EXACT_MAX_N`] non-zero
/// differences the p-value is `min(1, 2·P(R⁺ ≤ W))` under the exact null;
/// above that the tie-corrected normal approximation is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<StatTestResult> {
    let d = differences(a, b)?;
    let (ranks, positive) = signed_ranks(&d);
    let n = ranks.len();
    if n == 0 {
        return Err(Error::Degenerate("all differences are zero"));
    }
    let r_plus: f64 = ranks.iter().zip(&positive).filter(|(_, p)| **p).map(|(r, _)| r).sum();
    let r_minus: f64 = ranks.iter().zip(&positive).filter(|(_, p)| !**p).map(|(r, _)| r).sum();
    let w = r_plus.min(r_minus);

    let p = if n <= WILCOXON_EXACT_MAX_N {
        let hits = exact_lower_count(&ranks, w);
        (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
        let mut sorted = ranks.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).expect("finite ranks"));
        for group in sorted.chunk_by(|x, y| x == y) {
            let t = group.len() as f64;
            var -= (t * t * t - t) / 48.0;
        }
        let z = (w - mean) / var.sqrt();
        (2.0 * std_normal().cdf(-z.abs())).min(1.0)
    };
    Ok(StatTestResult::new(StatTest::WilcoxonSignedRank, w, p, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn shapiro_rejects_bad_inputs() {
        assert!(matches!(shapiro_wilk(&[1.0, 2.0]), Err(Error::SampleSize { n: 2, .. })));
        assert!(matches!(shapiro_wilk(&[4.0; 6]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn shapiro_linear_sample() {
        let r = shapiro_wilk(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((0.95..=1.0).contains(&r.statistic), "{}", r.statistic);
        assert!(r.p_value > 0.5);
        assert!(!r.reject_null);
    }

    #[test]
    fn shapiro_three_points_exact_form() {
        // For n = 3, equally spaced points give W = 1 and p = 1.
        let r = shapiro_wilk(&[0.0, 1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(r.statistic, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p_value, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn paired_t_hand_fixture() {
        let r = paired_t(&[1.0, 2.0, 3.0], &[2.0, 4.0, 5.0]).unwrap();
        assert_abs_diff_eq!(r.statistic, -5.0, epsilon = 1e-9);
        // df = 2: F(t) = 0.5·(1 + t/√(2 + t²))
        let t: f64 = 5.0;
        let p = 2.0 * (1.0 - 0.5 * (1.0 + t / (2.0 + t * t).sqrt()));
        assert_abs_diff_eq!(r.p_value, p, epsilon = 1e-9);
        assert_abs_diff_eq!(r.p_value, 0.0377, epsilon = 1e-3);
    }

    #[test]
    fn paired_t_degenerate_and_symmetric() {
        assert!(matches!(paired_t(&[1.0, 2.0, 3.0], &[0.5, 1.5, 2.5]), Err(Error::Degenerate(_))));
        assert!(matches!(paired_t(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch(1, 2))));
        let b = [0.3, 0.7, 0.2, 0.9, 0.5, 0.6];
        let eps = 1e-3;
        let a: Vec<f64> = b.iter().enumerate().map(|(i, v)| if i % 2 == 0 { v + eps } else { v - eps }).collect();
        let r = paired_t(&a, &b).unwrap();
        assert!(r.statistic.abs() <= 1e-9);
        assert_abs_diff_eq!(r.p_value, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn wilcoxon_small_cases() {
        let r = wilcoxon_signed_rank(&[3.0, 4.0, 5.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_abs_diff_eq!(r.p_value, 0.25, epsilon = 1e-15);
        let swapped = wilcoxon_signed_rank(&[1.0, 2.0, 3.0], &[3.0, 4.0, 5.0]).unwrap();
        assert_eq!(swapped.statistic, r.statistic);
        assert_eq!(swapped.p_value, r.p_value);
        assert!(matches!(wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
