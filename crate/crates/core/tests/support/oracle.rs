//! Reference Mann-Whitney computations by direct enumeration.
//!
//! Nothing here uses ranks: U is counted pair by pair, and the two-sided
//! p-value is the share of all relabelings of the pooled sample whose U is at
//! least as far from `n1 n2 / 2` as the observed one.

#![allow(dead_code)]

/// Pairs with `a > b`, plus one half per tied pair.
pub fn pairwise_u(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in a {
        for y in b {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

/// Every way to choose `k` of `0..n`, in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

pub fn permutation_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (n1, n) = (a.len(), pooled.len());
    let center = (a.len() * b.len()) as f64 / 2.0;
    let observed = (pairwise_u(a, b) - center).abs();
    let splits = combinations(n, n1);
    let mut extreme = 0usize;
    for chosen in &splits {
        let mut in_a = vec![false; n];
        for &i in chosen {
            in_a[i] = true;
        }
        let xa: Vec<f64> = (0..n).filter(|&i| in_a[i]).map(|i| pooled[i]).collect();
        let xb: Vec<f64> = (0..n).filter(|&i| !in_a[i]).map(|i| pooled[i]).collect();
        // U takes values on a half-integer grid, so this tolerance only absorbs rounding
        if (pairwise_u(&xa, &xb) - center).abs() >= observed - 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / splits.len() as f64
}

/// (concordant - discordant) / (n1 n2), concordant meaning `a > b`.
pub fn pairwise_rank_biserial(a: &[f64], b: &[f64]) -> f64 {
    let mut score = 0.0;
    for x in a {
        for y in b {
            if x > y {
                score += 1.0;
            } else if x < y {
                score -= 1.0;
            }
        }
    }
    score / (a.len() * b.len()) as f64
}
