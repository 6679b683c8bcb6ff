//! Nonparametric tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    Less,
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Normal,
    ChiSquare,
}

/// Largest sample handled by exact enumeration.
pub const WILCOXON_EXACT_MAX: usize = 25;
/// Largest combined sample handled by the exact rank-sum distribution.
pub const MANN_WHITNEY_EXACT_MAX: usize = 60;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    1.0 - ChiSquared::new(df).unwrap().cdf(x)
}

/// Mid-ranks (1-based) of `xs`, doubled so ties stay integral.
fn doubled_ranks(xs: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, times two
        let r2 = (i + 1 + j + 1) as u64;
        for &k in &idx[i..=j] {
            out[k] = r2;
        }
        i = j + 1;
    }
    out
}

fn tie_sizes(xs: &[f64]) -> Vec<usize> {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let j = s[i..].iter().take_while(|x| **x == s[i]).count();
        out.push(j);
        i += j;
    }
    out
}

fn one_sided(alt: Alternative, p_greater: f64, p_less: f64) -> f64 {
    match alt {
        Alternative::Greater => p_greater,
        Alternative::Less => p_less,
        Alternative::TwoSided => (2.0 * p_greater.min(p_less)).min(1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub w_minus: f64,
    pub n: usize,
    pub p: f64,
    pub method: Method,
    /// Every difference was zero.
    pub degenerate: bool,
}

/// Signed-rank test on differences `a - b`; zero differences are dropped.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)], alt: Alternative) -> Result<WilcoxonResult, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty("wilcoxon_signed_rank"));
    }
    let d: Vec<f64> = pairs.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult { w_plus: 0.0, w_minus: 0.0, n: 0, p: 1.0, method: Method::Exact, degenerate: true });
    }
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let r2 = doubled_ranks(&abs);
    let w2_plus: u64 = d.iter().zip(&r2).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let total2: u64 = r2.iter().sum();
    let (w_plus, w_minus) = (w2_plus as f64 / 2.0, (total2 - w2_plus) as f64 / 2.0);

    if n <= WILCOXON_EXACT_MAX {
        // counts[s] = number of sign vectors with doubled W+ equal to s
        let mut counts = vec![0f64; total2 as usize + 1];
        counts[0] = 1.0;
        for &r in &r2 {
            for s in (r as usize..counts.len()).rev() {
                counts[s] += counts[s - r as usize];
            }
        }
        let all = 2f64.powi(n as i32);
        let ge: f64 = counts[w2_plus as usize..].iter().sum();
        let le: f64 = counts[..=w2_plus as usize].iter().sum();
        let p = one_sided(alt, ge / all, le / all);
        return Ok(WilcoxonResult { w_plus, w_minus, n, p, method: Method::Exact, degenerate: false });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let ties: f64 = tie_sizes(&abs).iter().map(|&t| (t * t * t - t) as f64).sum();
    let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0).sqrt();
    let z = std_normal();
    let p_greater = 1.0 - z.cdf((w_plus - mean - 0.5) / sd);
    let p_less = z.cdf((w_plus - mean + 0.5) / sd);
    let p = match alt {
        Alternative::TwoSided => (2.0 * (1.0 - z.cdf(((w_plus - mean).abs() - 0.5).max(0.0) / sd))).min(1.0),
        a => one_sided(a, p_greater, p_less),
    };
    Ok(WilcoxonResult { w_plus, w_minus, n, p, method: Method::Normal, degenerate: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MannWhitneyResult {
    /// U statistic of the first sample.
    pub u: f64,
    pub p: f64,
    pub method: Method,
}

/// Rank-sum test. Exact permutation distribution (ties included) up to
/// [`MANN_WHITNEY_EXACT_MAX`] observations, normal approximation beyond.
pub fn mann_whitney_u(a: &[f64], b: &[f64], alt: Alternative) -> Result<MannWhitneyResult, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::Empty("mann_whitney_u"));
    }
    let (n1, n2) = (a.len(), b.len());
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let r2 = doubled_ranks(&all);
    let r1_2: u64 = r2[..n1].iter().sum();
    let u = r1_2 as f64 / 2.0 - (n1 * (n1 + 1)) as f64 / 2.0;

    if n1 + n2 <= MANN_WHITNEY_EXACT_MAX {
        let total: usize = r2.iter().sum::<u64>() as usize;
        // dp[k][s]: subsets of size k with doubled rank sum s
        let mut dp = vec![vec![0f64; total + 1]; n1 + 1];
        dp[0][0] = 1.0;
        for &r in &r2 {
            let r = r as usize;
            for k in (1..=n1).rev() {
                for s in (r..=total).rev() {
                    dp[k][s] += dp[k - 1][s - r];
                }
            }
        }
        let row = &dp[n1];
        let all_count: f64 = row.iter().sum();
        let obs = r1_2 as usize;
        let ge: f64 = row[obs..].iter().sum::<f64>() / all_count;
        let le: f64 = row[..=obs].iter().sum::<f64>() / all_count;
        return Ok(MannWhitneyResult { u, p: one_sided(alt, ge, le), method: Method::Exact });
    }

    let (f1, f2) = (n1 as f64, n2 as f64);
    let nn = f1 + f2;
    let mean = f1 * f2 / 2.0;
    let ties: f64 = tie_sizes(&all).iter().map(|&t| (t * t * t - t) as f64).sum();
    let sd = (f1 * f2 / 12.0 * ((nn + 1.0) - ties / (nn * (nn - 1.0)))).sqrt();
    let z = std_normal();
    let p = match alt {
        Alternative::Greater => 1.0 - z.cdf((u - mean - 0.5) / sd),
        Alternative::Less => z.cdf((u - mean + 0.5) / sd),
        Alternative::TwoSided => (2.0 * (1.0 - z.cdf(((u - mean).abs() - 0.5).max(0.0) / sd))).min(1.0),
    };
    Ok(MannWhitneyResult { u, p, method: Method::Normal })
}

fn ln_choose(n: u64, k: u64) -> f64 {
    statrs::function::factorial::ln_binomial(n, k)
}

fn binom_pmf(k: u64, n: u64, p: f64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    (ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

/// Exact binomial test. The two-sided p sums outcomes no more likely than
/// the observed one.
pub fn binomial_test(k: u64, n: u64, p0: f64, alt: Alternative) -> Result<f64, EvalError> {
    if n == 0 {
        return Err(EvalError::Empty("binomial_test"));
    }
    if k > n || !(0.0..=1.0).contains(&p0) {
        return Err(EvalError::Shape(format!("binomial_test({k}, {n}, {p0})")));
    }
    let pmf: Vec<f64> = (0..=n).map(|i| binom_pmf(i, n, p0)).collect();
    let k = k as usize;
    let p = match alt {
        Alternative::Greater => pmf[k..].iter().sum(),
        Alternative::Less => pmf[..=k].iter().sum(),
        Alternative::TwoSided => {
            let cut = pmf[k] * (1.0 + 1e-7);
            pmf.iter().filter(|&&q| q <= cut).sum()
        }
    };
    Ok(f64::min(p, 1.0))
}

/// Exact McNemar test: two-sided binomial on the discordant counts.
pub fn mcnemar(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let lo = b.min(c);
    let tail: f64 = (0..=lo).map(|i| binom_pmf(i, n, 0.5)).sum();
    (2.0 * tail).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
}

fn check_table<T>(table: &[Vec<T>], name: &'static str) -> Result<usize, EvalError> {
    let Some(first) = table.first() else { return Err(EvalError::Empty(name)) };
    let k = first.len();
    if k < 2 || table.iter().any(|r| r.len() != k) {
        return Err(EvalError::Shape(format!("{name}: rows must share k >= 2 columns")));
    }
    Ok(k)
}

/// Cochran's Q over an n×k table of binary outcomes.
pub fn cochran_q(table: &[Vec<bool>]) -> Result<ChiSquareResult, EvalError> {
    let k = check_table(table, "cochran_q")?;
    let kf = k as f64;
    let cols: Vec<f64> = (0..k).map(|j| table.iter().filter(|r| r[j]).count() as f64).collect();
    let rows: Vec<f64> = table.iter().map(|r| r.iter().filter(|x| **x).count() as f64).collect();
    let total: f64 = rows.iter().sum();
    let num = (kf - 1.0) * (kf * cols.iter().map(|c| c * c).sum::<f64>() - total * total);
    let den = kf * total - rows.iter().map(|r| r * r).sum::<f64>();
    let q = if den == 0.0 { 0.0 } else { num / den };
    Ok(ChiSquareResult { statistic: q, df: k - 1, p: chi2_sf(q, kf - 1.0) })
}

/// Friedman test over an n×k table, ranking within rows with mid-ranks.
pub fn friedman(table: &[Vec<f64>]) -> Result<ChiSquareResult, EvalError> {
    let k = check_table(table, "friedman")?;
    let (n, kf) = (table.len() as f64, k as f64);
    let mut sums = vec![0.0; k];
    let mut ties = 0.0;
    for row in table {
        for (j, r) in doubled_ranks(row).into_iter().enumerate() {
            sums[j] += r as f64 / 2.0;
        }
        ties += tie_sizes(row).iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    }
    let raw = 12.0 / (n * kf * (kf + 1.0)) * sums.iter().map(|s| s * s).sum::<f64>() - 3.0 * n * (kf + 1.0);
    let correction = 1.0 - ties / (n * (kf * kf * kf - kf));
    let stat = if correction <= 0.0 { 0.0 } else { (raw / correction).max(0.0) };
    Ok(ChiSquareResult { statistic: stat, df: k - 1, p: chi2_sf(stat, kf - 1.0) })
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_correct(pvals: &[f64]) -> Vec<f64> {
    let m = pvals.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in idx.iter().enumerate() {
        running = running.max(((m - rank) as f64 * pvals[i]).min(1.0));
        out[i] = running;
    }
    out
}


#[cfg(test)]
mod proptests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn wilcoxon_one_sided_p_values_are_complementary(
            d in proptest::collection::vec(-5i32..=5, 1..=12),
        ) {
            let pairs: Vec<(f64, f64)> = d.iter().map(|x| (f64::from(*x), 0.0)).collect();
            let g = wilcoxon_signed_rank(&pairs, Alternative::Greater).unwrap();
            let l = wilcoxon_signed_rank(&pairs, Alternative::Less).unwrap();
            let t = wilcoxon_signed_rank(&pairs, Alternative::TwoSided).unwrap();
            prop_assert!((0.0..=1.0).contains(&t.p));
            // the observed statistic is counted in both tails
            prop_assert!(g.p + l.p >= 1.0 - 1e-12);
            prop_assert!(t.p + 1e-12 >= g.p.min(l.p));
        }

        #[test]
        fn mcnemar_is_symmetric(b in 0u64..60, c in 0u64..60) {
            prop_assert_eq!(mcnemar(b, c), mcnemar(c, b));
            prop_assert!((0.0..=1.0).contains(&mcnemar(b, c)));
        }

        #[test]
        fn holm_never_lowers_a_p_value(ps in proptest::collection::vec(0.0_f64..=1.0, 1..=15)) {
            for (p, a) in ps.iter().zip(holm_correct(&ps)) {
                prop_assert!(a >= *p && a <= 1.0);
            }
        }
    }
}
