//! Internal consistency, domain scores and rank-based tests.
//!
//! Rank tests use average ranks for ties. Small tie-free samples get exact
//! permutation p-values; everything else uses the usual large-sample
//! approximation. The branch taken is written into `method_note`.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, LazyLock, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::matrix::{Domain, ResponseMatrix};
use crate::SurveyError;

/// Largest tie-free sample that gets an exact p-value.
pub const EXACT_MAX_N: usize = 10;
const SPEARMAN_EXACT_MAX_N: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatisticName {
    #[serde(rename = "alpha")]
    Alpha,
    #[serde(rename = "rho")]
    Rho,
    U,
    H,
}

impl StatisticName {
    pub fn symbol(self) -> &'static str {
        match self {
            StatisticName::Alpha => "α",
            StatisticName::Rho => "ρ",
            StatisticName::U => "U",
            StatisticName::H => "H",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic_name: StatisticName,
    pub statistic_value: f64,
    pub p_value: Option<f64>,
    pub n_used: usize,
    pub method_note: String,
}

/// Drops pairs where either side is missing.
pub fn pairwise_complete(x: &[Option<f64>], y: &[Option<f64>]) -> (Vec<f64>, Vec<f64>) {
    x.iter()
        .zip(y)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .unzip()
}

pub fn present(values: &[Option<f64>]) -> Vec<f64> {
    values.iter().flatten().copied().collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Average ranks (1-based) and the sizes of tied runs longer than one.
pub fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
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
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

fn tie_sum(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t * t * t - t) as f64).sum()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Cronbach's α over item columns, listwise deletion across the columns.
pub fn cronbach_alpha(columns: &[Vec<Option<f64>>]) -> Result<TestResult, SurveyError> {
    let k = columns.len();
    if k < 2 {
        return Err(SurveyError::InsufficientData(format!("alpha needs at least 2 items, got {k}")));
    }
    let total = columns.iter().map(Vec::len).min().unwrap_or(0);
    let rows: Vec<Vec<f64>> = (0..total)
        .filter_map(|r| columns.iter().map(|c| c[r]).collect::<Option<Vec<f64>>>())
        .collect();
    let n = rows.len();
    if n < 2 {
        return Err(SurveyError::InsufficientData(format!(
            "alpha needs at least 2 complete respondents, got {n}"
        )));
    }
    let item_var: f64 = (0..k)
        .map(|j| sample_variance(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .sum();
    let sums: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
    let total_var = sample_variance(&sums);
    if total_var == 0.0 {
        return Err(SurveyError::ZeroVariance("respondent totals are constant; alpha is undefined".into()));
    }
    let kf = k as f64;
    Ok(TestResult {
        statistic_name: StatisticName::Alpha,
        statistic_value: kf / (kf - 1.0) * (1.0 - item_var / total_var),
        p_value: None,
        n_used: n,
        method_note: format!("{k} items; listwise deletion kept {n} of {total} respondents"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub label: String,
    pub items: usize,
    /// Mean of each respondent's answered items; `None` if none answered.
    pub per_respondent: Vec<Option<f64>>,
    pub mean: f64,
    /// n−1 denominator; absent with fewer than two scored respondents.
    pub sd: Option<f64>,
    pub n: usize,
}

fn score_columns(label: String, columns: &[Vec<Option<f64>>], respondents: usize) -> Result<DomainScore, SurveyError> {
    if columns.is_empty() {
        return Err(SurveyError::EmptyDomain(label));
    }
    let per_respondent: Vec<Option<f64>> = (0..respondents)
        .map(|r| {
            let answered: Vec<f64> = columns.iter().filter_map(|c| c[r]).collect();
            (!answered.is_empty()).then(|| mean(&answered))
        })
        .collect();
    let scored = present(&per_respondent);
    if scored.is_empty() {
        return Err(SurveyError::InsufficientData(format!("no respondent answered any {label} item")));
    }
    Ok(DomainScore {
        label,
        items: columns.len(),
        mean: mean(&scored),
        sd: (scored.len() >= 2).then(|| sample_variance(&scored).sqrt()),
        n: scored.len(),
        per_respondent,
    })
}

pub fn domain_score(matrix: &ResponseMatrix, domain: Domain) -> Result<DomainScore, SurveyError> {
    score_columns(domain.to_string(), &matrix.likert_columns(Some(domain)), matrix.n_respondents())
}

/// Mean over every Likert item in the questionnaire.
pub fn overall_score(matrix: &ResponseMatrix) -> Result<DomainScore, SurveyError> {
    score_columns("overall".into(), &matrix.likert_columns(None), matrix.n_respondents())
}

fn permutations(n: usize, mut visit: impl FnMut(&[usize])) {
    // Heap's algorithm
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    visit(&a);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            visit(&a);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Null counts of Σd² over all n! rank permutations.
fn spearman_null(n: usize) -> &'static [u64] {
    static CACHE: [OnceLock<Vec<u64>>; SPEARMAN_EXACT_MAX_N + 1] = [const { OnceLock::new() }; SPEARMAN_EXACT_MAX_N + 1];
    CACHE[n].get_or_init(|| {
        let max = (n * n * n - n) / 3;
        let mut counts = vec![0u64; max + 1];
        permutations(n, |p| {
            let s: usize = p.iter().enumerate().map(|(i, &j)| i.abs_diff(j).pow(2)).sum();
            counts[s] += 1;
        });
        counts
    })
}

/// Spearman's ρ after pairwise deletion has been applied by the caller.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<TestResult, SurveyError> {
    if x.len() != y.len() {
        return Err(SurveyError::InsufficientData("x and y differ in length".into()));
    }
    let n = x.len();
    if n < 3 {
        return Err(SurveyError::InsufficientData(format!("rho needs at least 3 pairs, got {n}")));
    }
    let (rx, tx) = average_ranks(x);
    let (ry, ty) = average_ranks(y);
    if tx.contains(&n) || ty.contains(&n) {
        return Err(SurveyError::ZeroVariance("a rank vector is constant".into()));
    }
    let rho = pearson(&rx, &ry).clamp(-1.0, 1.0);
    let tied = !tx.is_empty() || !ty.is_empty();
    let (p, note) = if !tied && n <= SPEARMAN_EXACT_MAX_N {
        let s: usize = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2) as usize).sum();
        let center = (n * n * n - n) as i64;
        let dev = |s: usize| (6 * s as i64 - center).abs();
        let observed = dev(s);
        let counts = spearman_null(n);
        let extreme: u64 = counts
            .iter()
            .enumerate()
            .filter(|(s, _)| dev(*s) >= observed)
            .map(|(_, c)| c)
            .sum();
        let total: u64 = counts.iter().sum();
        (extreme as f64 / total as f64, format!("exact permutation distribution over {n}! orderings"))
    } else {
        let df = (n - 2) as f64;
        let p = if rho.abs() >= 1.0 {
            0.0
        } else {
            let t = rho * (df / (1.0 - rho * rho)).sqrt();
            let dist = StudentsT::new(0.0, 1.0, df).expect("df positive");
            (2.0 * (1.0 - dist.cdf(t.abs()))).min(1.0)
        };
        let ties = if tied { "; average ranks for ties" } else { "" };
        (p, format!("t approximation with {} df{ties}", n - 2))
    };
    Ok(TestResult {
        statistic_name: StatisticName::Rho,
        statistic_value: rho,
        p_value: Some(p),
        n_used: n,
        method_note: note,
    })
}

/// Number of orderings giving each U for sample sizes (m, n).
fn mann_whitney_null(m: usize, n: usize) -> Vec<u64> {
    // f[i][j][u]: arrangements of i a's and j b's with U = u
    let mut f = vec![vec![Vec::<u64>::new(); n + 1]; m + 1];
    for i in 0..=m {
        for j in 0..=n {
            let mut row = vec![0u64; i * j + 1];
            if i == 0 || j == 0 {
                row[0] = 1;
            } else {
                // largest value belongs to a (beats all j b's) or to b
                for (u, c) in f[i - 1][j].iter().enumerate() {
                    row[u + j] += c;
                }
                for (u, c) in f[i][j - 1].iter().enumerate() {
                    row[u] += c;
                }
            }
            f[i][j] = row;
        }
    }
    std::mem::take(&mut f[m][n])
}

fn normal_sf(z: f64) -> f64 {
    1.0 - Normal::new(0.0, 1.0).expect("standard normal").cdf(z)
}

/// Mann–Whitney U for `a` against `b`.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult, SurveyError> {
    mann_whitney(a, b, true)
}

/// Same statistic, always using the normal approximation.
pub fn mann_whitney_u_approx(a: &[f64], b: &[f64]) -> Result<TestResult, SurveyError> {
    mann_whitney(a, b, false)
}

fn mann_whitney(a: &[f64], b: &[f64], allow_exact: bool) -> Result<TestResult, SurveyError> {
    if a.is_empty() {
        return Err(SurveyError::EmptyGroup(0));
    }
    if b.is_empty() {
        return Err(SurveyError::EmptyGroup(1));
    }
    let (na, nb) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = average_ranks(&pooled);
    let ra: f64 = ranks[..na].iter().sum();
    let u = ra - (na * (na + 1)) as f64 / 2.0;
    let total = na + nb;
    let (p, note) = if allow_exact && ties.is_empty() && total <= EXACT_MAX_N {
        let counts = mann_whitney_null(na, nb);
        let all: u64 = counts.iter().sum();
        let u_int = u.round() as usize;
        let lower: u64 = counts[..=u_int].iter().sum();
        let upper: u64 = counts[u_int..].iter().sum();
        let p = (2.0 * lower.min(upper) as f64 / all as f64).min(1.0);
        (p, format!("exact distribution over C({total},{na}) arrangements"))
    } else {
        let nn = total as f64;
        let mu = (na * nb) as f64 / 2.0;
        let var = (na * nb) as f64 / 12.0 * ((nn + 1.0) - tie_sum(&ties) / (nn * (nn - 1.0)));
        let p = if var <= 0.0 {
            1.0
        } else {
            let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
            (2.0 * normal_sf(z)).min(1.0)
        };
        let tie_note = if ties.is_empty() { "" } else { ", tie-corrected variance" };
        (p, format!("normal approximation with continuity correction{tie_note}"))
    };
    Ok(TestResult {
        statistic_name: StatisticName::U,
        statistic_value: u,
        p_value: Some(p),
        n_used: total,
        method_note: note,
    })
}

fn lcm(a: i128, b: i128) -> i128 {
    fn gcd(a: i128, b: i128) -> i128 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

/// Scaled Σ R²/n (times lcm of sizes), an integer for tie-free ranks.
fn kw_score(rank_sums: &[i128], sizes: &[usize], l: i128) -> i128 {
    rank_sums.iter().zip(sizes).map(|(r, &n)| r * r * (l / n as i128)).sum()
}

/// Sorted null values of the scaled score over all rank assignments.
fn kw_null(sizes: &[usize]) -> Arc<Vec<i128>> {
    static CACHE: LazyLock<Mutex<HashMap<Vec<usize>, Arc<Vec<i128>>>>> = LazyLock::new(Default::default);
    let mut key = sizes.to_vec();
    key.sort_unstable();
    if let Some(hit) = CACHE.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
        return hit.clone();
    }
    let l = key.iter().fold(1i128, |acc, &n| lcm(acc, n as i128));
    let total: usize = key.iter().sum();
    let mut out = Vec::new();
    let mut sums = vec![0i128; key.len()];
    let mut left = key.clone();
    fn rec(rank: usize, total: usize, sizes: &[usize], left: &mut [usize], sums: &mut [i128], l: i128, out: &mut Vec<i128>) {
        if rank > total {
            out.push(kw_score(sums, sizes, l));
            return;
        }
        for g in 0..sizes.len() {
            if left[g] > 0 {
                left[g] -= 1;
                sums[g] += rank as i128;
                rec(rank + 1, total, sizes, left, sums, l, out);
                sums[g] -= rank as i128;
                left[g] += 1;
            }
        }
    }
    rec(1, total, &key, &mut left, &mut sums, l, &mut out);
    out.sort_unstable();
    let out = Arc::new(out);
    CACHE.lock().unwrap_or_else(|e| e.into_inner()).insert(key, out.clone());
    out
}

/// Kruskal–Wallis H across two or more groups.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult, SurveyError> {
    if groups.len() < 2 {
        return Err(SurveyError::TooFewGroups(groups.len()));
    }
    if let Some(i) = groups.iter().position(Vec::is_empty) {
        return Err(SurveyError::EmptyGroup(i));
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let total = pooled.len();
    let nn = total as f64;
    let (ranks, ties) = average_ranks(&pooled);
    let mut rank_sums = Vec::with_capacity(groups.len());
    let mut start = 0;
    for &n in &sizes {
        rank_sums.push(ranks[start..start + n].iter().sum::<f64>());
        start += n;
    }
    let correction = 1.0 - tie_sum(&ties) / (nn * nn * nn - nn);
    if ties.contains(&total) || correction <= 0.0 {
        return Ok(TestResult {
            statistic_name: StatisticName::H,
            statistic_value: 0.0,
            p_value: Some(1.0),
            n_used: total,
            method_note: "all values identical; H defined as 0".into(),
        });
    }
    let raw: f64 = rank_sums.iter().zip(&sizes).map(|(r, &n)| r * r / n as f64).sum();
    let h = (12.0 / (nn * (nn + 1.0)) * raw - 3.0 * (nn + 1.0)) / correction;
    let df = groups.len() - 1;
    let (p, note) = if ties.is_empty() && total <= EXACT_MAX_N {
        let l = sizes.iter().fold(1i128, |acc, &n| lcm(acc, n as i128));
        let sums: Vec<i128> = rank_sums.iter().map(|r| r.round() as i128).collect();
        let observed = kw_score(&sums, &sizes, l);
        let null = kw_null(&sizes);
        let below = null.partition_point(|&v| v < observed);
        let p = (null.len() - below) as f64 / null.len() as f64;
        (p, format!("exact permutation distribution over {} rank assignments", null.len()))
    } else {
        let chi = ChiSquared::new(df as f64).expect("df positive");
        let p = (1.0 - chi.cdf(h.max(0.0))).clamp(0.0, 1.0);
        let tie_note = if ties.is_empty() { "" } else { ", tie correction applied" };
        (p, format!("chi-square approximation with {df} df{tie_note}"))
    };
    Ok(TestResult {
        statistic_name: StatisticName::H,
        statistic_value: h,
        p_value: Some(p),
        n_used: total,
        method_note: note,
    })
}

/// Σ count × midpoint in minutes per day. The midpoint map is always
/// supplied by the caller.
pub fn time_saved_total<S: AsRef<str>>(
    counts: impl IntoIterator<Item = (S, u64)>,
    midpoints: &BTreeMap<String, f64>,
) -> Result<f64, SurveyError> {
    let mut total = 0.0;
    for (category, count) in counts {
        let category = category.as_ref();
        let mid = midpoints
            .get(category)
            .ok_or_else(|| SurveyError::MissingMidpoint(category.to_string()))?;
        total += count as f64 * mid;
    }
    Ok(total)
}
