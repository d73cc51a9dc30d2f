//! Two-sample Mann-Whitney U test.
//!
//! `U` is the statistic of the first sample: the number of cross-sample pairs
//! in which the first-sample value is larger, ties counting one half. It is
//! computed from pooled midranks as `R_a - n1 (n1 + 1) / 2`.
//!
//! The exact p-value is the permutation distribution of `U` over all
//! `C(n1 + n2, n1)` ways to split the observed pooled values, with ties kept.
//! Midranks are multiples of one half, so the distribution of the doubled
//! rank sum is counted exactly over the integers.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::StatsError;

/// Largest pooled size for which `Method::Auto` enumerates.
pub const DEFAULT_EXACT_CAP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    Normal,
    /// Exact when the pooled size is within the cap, otherwise normal.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    ExactEnumeration,
    NormalApproximation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UTestConfig {
    /// Subtract 0.5 from |U - mean| in the normal approximation.
    pub continuity_correction: bool,
    pub exact_cap: usize,
}

impl Default for UTestConfig {
    fn default() -> Self {
        UTestConfig {
            continuity_correction: true,
            exact_cap: DEFAULT_EXACT_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// U statistic of the first (experimental) sample.
    pub u: f64,
    /// Tie- and continuity-corrected normal deviate; absent for exact tests.
    pub z: Option<f64>,
    pub p_two_sided: f64,
    /// Rank-biserial correlation, positive when the first sample is larger.
    pub effect_size_r: f64,
    /// |z| / sqrt(n1 + n2); absent for exact tests.
    pub effect_size_rz: Option<f64>,
    pub method: TestMethod,
    pub n1: usize,
    pub n2: usize,
    /// All pooled values identical: p is 1 and r is 0 by definition.
    pub degenerate: bool,
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Sum of t^3 - t over tie groups.
fn tie_term(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end] == sorted[start] {
            end += 1;
        }
        let t = (end - start) as f64;
        total += t * t * t - t;
        start = end;
    }
    total
}

/// Rank-biserial correlation `1 - 2u / (n1 n2)`, where `u` counts the pairs in
/// which the *second* sample is larger (the U statistic of the second sample).
/// The result is positive when the first sample tends to be larger.
pub fn rank_biserial(u: f64, n1: usize, n2: usize) -> Result<f64, StatsError> {
    let max = (n1 * n2) as f64;
    if n1 == 0 || n2 == 0 {
        return Err(StatsError::EmptyGroup("rank_biserial"));
    }
    if !(0.0..=max).contains(&u) {
        return Err(StatsError::UOutOfRange { u, max });
    }
    Ok(1.0 - 2.0 * u / max)
}

pub fn mann_whitney_u(a: &[f64], b: &[f64], method: Method) -> Result<TestResult, StatsError> {
    mann_whitney_u_with(a, b, method, &UTestConfig::default())
}

pub fn mann_whitney_u_with(
    a: &[f64],
    b: &[f64],
    method: Method,
    config: &UTestConfig,
) -> Result<TestResult, StatsError> {
    if a.is_empty() {
        return Err(StatsError::EmptyGroup("a"));
    }
    if b.is_empty() {
        return Err(StatsError::EmptyGroup("b"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;
    let method = match method {
        Method::Exact if n > config.exact_cap => {
            return Err(StatsError::ExactTooLarge {
                n,
                cap: config.exact_cap,
            });
        }
        Method::Exact => TestMethod::ExactEnumeration,
        Method::Normal => TestMethod::NormalApproximation,
        Method::Auto if n <= config.exact_cap => TestMethod::ExactEnumeration,
        Method::Auto => TestMethod::NormalApproximation,
    };

    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..n1].iter().sum();
    let u = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;
    let product = (n1 * n2) as f64;
    let effect_size_r = rank_biserial(product - u, n1, n2)?;

    let degenerate = pooled.iter().all(|v| *v == pooled[0]);
    if degenerate {
        return Ok(TestResult {
            u,
            z: None,
            p_two_sided: 1.0,
            effect_size_r: 0.0,
            effect_size_rz: None,
            method,
            n1,
            n2,
            degenerate,
        });
    }

    let (z, p) = match method {
        TestMethod::ExactEnumeration => (None, exact_two_sided(&ranks, n1, rank_sum_a)),
        TestMethod::NormalApproximation => {
            let nf = n as f64;
            let variance = product / 12.0 * ((nf + 1.0) - tie_term(&pooled) / (nf * (nf - 1.0)));
            let diff = u - product / 2.0;
            let cc = if config.continuity_correction { 0.5 } else { 0.0 };
            let z = diff.signum() * (diff.abs() - cc).max(0.0) / variance.sqrt();
            let p = erfc(z.abs() / std::f64::consts::SQRT_2);
            (Some(z), p)
        }
    };
    let p_two_sided = p.clamp(f64::MIN_POSITIVE, 1.0);
    Ok(TestResult {
        u,
        z,
        p_two_sided,
        effect_size_r,
        effect_size_rz: z.map(|z| z.abs() / (n as f64).sqrt()),
        method,
        n1,
        n2,
        degenerate,
    })
}

/// Two-sided permutation p-value of the first sample's rank sum: the share of
/// splits whose doubled rank sum is at least as far from its mean as observed.
fn exact_two_sided(ranks: &[f64], n1: usize, rank_sum_a: f64) -> f64 {
    let n = ranks.len();
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[j][s]: subsets of size j with doubled rank sum s
    let mut ways = vec![vec![0u128; max_sum + 1]; n1 + 1];
    ways[0][0] = 1;
    for (i, &d) in doubled.iter().enumerate() {
        for j in (0..=n1.min(i)).rev() {
            if j == n1 {
                continue;
            }
            let (lo, hi) = ways.split_at_mut(j + 1);
            let from = &lo[j];
            let to = &mut hi[0];
            for s in (0..=max_sum - d).rev() {
                if from[s] != 0 {
                    to[s + d] += from[s];
                }
            }
        }
    }
    let mean = (n1 * (n + 1)) as i64; // doubled expected rank sum
    let observed = ((rank_sum_a * 2.0).round() as i64 - mean).abs();
    let (mut tail, mut total) = (0u128, 0u128);
    for (s, &w) in ways[n1].iter().enumerate() {
        total += w;
        if (s as i64 - mean).abs() >= observed {
            tail += w;
        }
    }
    tail as f64 / total as f64
}
