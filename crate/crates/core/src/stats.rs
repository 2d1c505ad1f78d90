//! Statistical primitives for ranking and certification.
//!
//! `erfc` comes from `libm`; the inverse error function and the regularized
//! incomplete beta and gamma functions from `statrs`. The tests themselves
//! are implemented here.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use serde::Serialize;
use statrs::function::{beta::beta_reg, erf, gamma::gamma_ur};

use crate::error::{check_len, Error, Result};

/// Sample sizes up to this use the exact Wilcoxon null distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method_note: String,
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `Φ^{-1}(p)`, refined with one Newton step on `Φ`.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("normal quantile needs 0 < p < 1, got {p}")));
    }
    let mut x = -SQRT_2 * erf::erfc_inv(2.0 * p);
    let pdf = std_normal_pdf(x);
    if pdf > 1e-300 {
        x -= (std_normal_cdf(x) - p) / pdf;
    }
    Ok(x)
}

/// One-sided exact (Clopper–Pearson) lower confidence bound for a binomial
/// proportion at level `1 − alpha`: the `alpha` quantile of
/// `Beta(k, n − k + 1)`.
pub fn clopper_pearson_lower(successes: u64, trials: u64, alpha: f64) -> Result<f64> {
    if trials == 0 || successes > trials {
        return Err(Error::Domain(format!(
            "need 0 <= k <= n and n >= 1, got k = {successes}, n = {trials}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if successes == 0 {
        return Ok(0.0);
    }
    let n = trials as f64;
    if successes == trials {
        return Ok(alpha.powf(1.0 / n));
    }
    let a = successes as f64;
    let b = n - a + 1.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
/// Also returns the tie group sizes.
fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WilcoxonMethod {
    /// Exact for `n_effective ≤ 25`, normal approximation above.
    Auto,
    Exact,
    Normal,
}

/// One-sided ("greater") Wilcoxon signed-rank test on `x − y`.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<TestResult> {
    wilcoxon_signed_rank_with(x, y, WilcoxonMethod::Auto)
}

pub fn wilcoxon_signed_rank_with(x: &[f64], y: &[f64], method: WilcoxonMethod) -> Result<TestResult> {
    check_len("wilcoxon paired samples", x.len(), y.len())?;
    if x.is_empty() {
        return Err(Error::InsufficientData("wilcoxon needs at least one pair".into()));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidValue("wilcoxon input must be finite".into()));
    }
    let n = diffs.len();
    if n == 0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            n_effective: 0,
            method_note: "degenerate: all-zero differences".into(),
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let exact = match method {
        WilcoxonMethod::Auto => n <= WILCOXON_EXACT_MAX,
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::Normal => false,
    };
    let tie_note = if ties.is_empty() { "" } else { ", ties averaged" };
    let (p_value, note) = if exact {
        (exact_upper_tail(&ranks, w_plus), format!("exact, zeros dropped{tie_note}"))
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_adj: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_adj;
        let z = (w_plus - mean - 0.5) / var.sqrt();
        (
            std_normal_cdf(-z),
            format!("normal-approx, continuity-corrected, ties-corrected, zeros dropped{tie_note}"),
        )
    };
    Ok(TestResult {
        statistic: w_plus,
        p_value: p_value.clamp(0.0, 1.0),
        n_effective: n,
        method_note: note,
    })
}

/// `P(W⁺ ≥ observed)` under the sign-flip null: counts, over all `2^n`
/// sign patterns, those whose positive-rank sum reaches `observed`.
/// Ranks are multiples of ½, so sums are tracked in half units.
fn exact_upper_tail(ranks: &[f64], observed: f64) -> f64 {
    let halves: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = halves.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &h in &halves {
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + h] += counts[s];
            }
        }
        reach += h;
    }
    let threshold = (observed * 2.0).round() as usize;
    let hits: u64 = counts[threshold.min(total + 1)..].iter().sum();
    hits as f64 / (2f64).powi(ranks.len() as i32)
}

/// Friedman test over an `n × k` matrix (rows are subjects, columns are
/// treatments), with the standard tie correction.
pub fn friedman_test(data: &[Vec<f64>]) -> Result<TestResult> {
    let n = data.len();
    let k = data.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(Error::InsufficientData(format!(
            "friedman needs at least 2 rows and 2 columns, got {n}x{k}"
        )));
    }
    let mut rank_sums = vec![0.0; k];
    let mut tie_sum = 0.0;
    for row in data {
        check_len("friedman row", k, row.len())?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("friedman input must be finite".into()));
        }
        let (ranks, ties) = average_ranks(row);
        for (s, r) in rank_sums.iter_mut().zip(&ranks) {
            *s += r;
        }
        tie_sum += ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    }
    let (nf, kf) = (n as f64, k as f64);
    let correction = 1.0 - tie_sum / (nf * (kf * kf * kf - kf));
    let note = "chi-square approx, ties-corrected".to_string();
    if correction <= 0.0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            n_effective: n,
            method_note: "degenerate: all rows constant".into(),
        });
    }
    let raw = 12.0 / (nf * kf * (kf + 1.0)) * rank_sums.iter().map(|s| s * s).sum::<f64>()
        - 3.0 * nf * (kf + 1.0);
    let statistic = (raw / correction).max(0.0);
    Ok(TestResult {
        statistic,
        p_value: chi_square_sf(statistic, kf - 1.0),
        n_effective: n,
        method_note: note,
    })
}

/// `P(X ≥ x)` for `X ~ χ²(df)`.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(df / 2.0, x / 2.0).clamp(0.0, 1.0)
    }
}
