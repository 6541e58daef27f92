use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::AnalysisError;

/// Largest number of labelings enumerated exactly.
pub const EXACT_LIMIT: u64 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tier {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "95")]
    P95,
    #[serde(rename = "99")]
    P99,
    #[serde(rename = "99.9")]
    P999,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::None => "none",
            Tier::P95 => "95",
            Tier::P99 => "99",
            Tier::P999 => "99.9",
        }
    }
}

pub fn significance_tier(p: f64) -> Tier {
    if p < 0.001 {
        Tier::P999
    } else if p < 0.01 {
        Tier::P99
    } else if p < 0.05 {
        Tier::P95
    } else {
        Tier::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    #[serde(rename = "U")]
    pub u: f64,
    pub z: f64,
    pub p_two_sided: f64,
    pub method: Method,
    pub tier: Tier,
    pub m: usize,
    pub n: usize,
}

/// Binomial coefficient, saturating at `u64::MAX`.
pub fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Doubled midranks of the pooled sample (integers, so sums compare exactly).
fn doubled_midranks(pooled: &[f64]) -> (Vec<u64>, f64) {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pooled[idx[j + 1]] == pooled[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, doubled midrank = i + j + 2
        for &k in &idx[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    (ranks, tie_term)
}

/// Probability of each doubled rank sum for a random size-`m` subset.
fn rank_sum_distribution(ranks: &[u64], m: usize) -> Vec<f64> {
    let max_sum: u64 = ranks.iter().sum();
    let width = max_sum as usize + 1;
    // counts[k][s]: subsets of size k with doubled rank sum s
    let mut counts = vec![vec![0f64; width]; m + 1];
    counts[0][0] = 1.0;
    for &r in ranks {
        for k in (1..=m).rev() {
            let (lo, hi) = counts.split_at_mut(k);
            let prev = &lo[k - 1];
            let cur = &mut hi[0];
            for s in (r as usize..width).rev() {
                cur[s] += prev[s - r as usize];
            }
        }
    }
    let total: f64 = counts[m].iter().sum();
    counts[m].iter().map(|c| c / total).collect()
}

/// Two-sided Mann-Whitney U test. `U` counts pairs with `a < b`, ties counting one half.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult, AnalysisError> {
    let (m, n) = (a.len(), b.len());
    if m == 0 || n == 0 {
        return Err(AnalysisError::EmptySample);
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, tie_term) = doubled_midranks(&pooled);
    let ra2: u64 = ranks[..m].iter().sum();
    // U_a = pairs a<b = m*n + m(m+1)/2 - R_a; doubled to stay integral
    let mn = (m * n) as f64;
    let u2 = (2 * m * n + m * (m + 1)) as i64 - ra2 as i64;
    let u = u2 as f64 / 2.0;

    let nn = (m + n) as f64;
    let var = mn / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)).max(f64::MIN_POSITIVE));
    let sigma = var.max(0.0).sqrt();
    let diff = u - mn / 2.0;
    let z = if sigma > 0.0 {
        diff.signum() * (diff.abs() - 0.5).max(0.0) / sigma
    } else {
        0.0
    };

    let (p, method) = if binomial((m + n) as u64, m as u64) <= EXACT_LIMIT {
        let dist = rank_sum_distribution(&ranks, m);
        let (mut lower, mut upper) = (0.0, 0.0);
        for (s, pr) in dist.iter().enumerate() {
            if *pr == 0.0 {
                continue;
            }
            let us = (2 * m * n + m * (m + 1)) as i64 - s as i64;
            if us <= u2 {
                lower += pr;
            }
            if us >= u2 {
                upper += pr;
            }
        }
        ((2.0 * f64::min(lower, upper)).min(1.0), Method::Exact)
    } else {
        let p = if sigma > 0.0 {
            let normal = Normal::new(0.0, 1.0).expect("standard normal");
            2.0 * normal.cdf(-z.abs())
        } else {
            1.0
        };
        (p.min(1.0), Method::NormalApprox)
    };
    Ok(TestResult {
        u,
        z,
        p_two_sided: p,
        method,
        tier: significance_tier(p),
        m,
        n,
    })
}

/// Normal-approximation p-value regardless of sample size.
pub fn mann_whitney_normal_p(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    let r = mann_whitney_u(a, b)?;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(if r.z == 0.0 {
        1.0
    } else {
        (2.0 * normal.cdf(-r.z.abs())).min(1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Enumerates every relabeling of the pooled sample.
    fn oracle_p(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n_all = pooled.len();
        let m = a.len();
        let u_of = |mask: u32| {
            let mut u = 0.0;
            for i in 0..n_all {
                if mask >> i & 1 == 0 {
                    continue;
                }
                for j in 0..n_all {
                    if mask >> j & 1 == 1 {
                        continue;
                    }
                    if pooled[i] < pooled[j] {
                        u += 1.0;
                    } else if pooled[i] == pooled[j] {
                        u += 0.5;
                    }
                }
            }
            u
        };
        let observed = u_of((1u32 << m) - 1);
        let (mut total, mut lo, mut hi) = (0.0, 0.0, 0.0);
        for mask in 0u32..(1 << n_all) {
            if mask.count_ones() as usize != m {
                continue;
            }
            let u = u_of(mask);
            total += 1.0;
            if u <= observed + 1e-9 {
                lo += 1.0;
            }
            if u >= observed - 1e-9 {
                hi += 1.0;
            }
        }
        (2.0 * f64::min(lo, hi) / total).min(1.0)
    }

    #[test]
    fn identical_samples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.u, 4.5);
        assert_eq!(r.p_two_sided, 1.0);
        assert_eq!(r.z, 0.0);
    }

    #[test]
    fn separated_samples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 9.0);
        assert!((r.p_two_sided - 0.1).abs() < 1e-12);
        assert!((r.p_two_sided - oracle_p(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0])).abs() < 1e-12);
        assert_eq!(r.method, Method::Exact);
    }

    #[test]
    fn interleaved_samples() {
        let r = mann_whitney_u(&[1.0, 3.0], &[2.0, 4.0]).unwrap();
        assert_eq!(r.u, 3.0);
        assert!((r.p_two_sided - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn shift_reaches_minimum_p() {
        let a = [0.3, 1.7, 2.2, 4.0, 5.5];
        let b: Vec<f64> = a.iter().map(|x| x + 100.0).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert!((r.p_two_sided - 2.0 / 252.0).abs() < 1e-15);
    }

    #[test]
    fn large_samples_use_normal() {
        let a: Vec<f64> = (0..20).map(f64::from).collect();
        let b: Vec<f64> = (0..20).map(|x| f64::from(x) + 0.5).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.method, Method::NormalApprox);
        assert!(r.p_two_sided > 0.5 && r.p_two_sided <= 1.0);
    }

    #[test]
    fn empty_sample() {
        assert_eq!(mann_whitney_u(&[], &[1.0]).unwrap_err(), AnalysisError::EmptySample);
    }

    #[test]
    fn tiers() {
        assert_eq!(significance_tier(0.04), Tier::P95);
        assert_eq!(significance_tier(0.005), Tier::P99);
        assert_eq!(significance_tier(0.0005), Tier::P999);
        assert_eq!(significance_tier(0.2), Tier::None);
        assert_eq!(significance_tier(0.05), Tier::None);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(6, 3), 20);
        assert_eq!(binomial(10, 5), 252);
        assert_eq!(binomial(200, 100), u64::MAX);
    }

    fn sample(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec((0u8..6).prop_map(f64::from), 1..=max_len)
    }

    proptest! {
        #[test]
        fn matches_enumeration(a in sample(5), b in sample(5)) {
            let r = mann_whitney_u(&a, &b).unwrap();
            prop_assert!((r.p_two_sided - oracle_p(&a, &b)).abs() < 1e-9);
        }

        #[test]
        fn swap_symmetry(a in sample(8), b in sample(8)) {
            let ab = mann_whitney_u(&a, &b).unwrap();
            let ba = mann_whitney_u(&b, &a).unwrap();
            prop_assert_eq!(ab.u + ba.u, (a.len() * b.len()) as f64);
            prop_assert!((ab.p_two_sided - ba.p_two_sided).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab.p_two_sided));
        }
    }
}
