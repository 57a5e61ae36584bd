//! Summary statistics, log-slope regression and two-sample tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty selection")]
    Empty,
    #[error("need at least {needed} distinct x values, got {got}")]
    TooFewGroups { needed: usize, got: usize },
    #[error("x values must be positive for a log fit, got {0}")]
    NonPositive(f64),
    #[error("samples must contain finite values")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub var: f64,
    pub sd: f64,
    /// Standard error of the mean.
    pub se: f64,
    /// Standard error of the sample variance, from the fourth central moment.
    pub var_se: f64,
    pub min: f64,
    pub max: f64,
    /// `(p, quantile)` pairs for p in 0.05, 0.25, 0.5, 0.75, 0.95.
    pub quantiles: Vec<(f64, f64)>,
}

pub const SUMMARY_PROBS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<Summary, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m4) = values.iter().fold((0.0, 0.0), |(a, b), v| {
        let d = v - mean;
        (a + d * d, b + d * d * d * d)
    });
    let var = if values.len() > 1 { m2 / (n - 1.0) } else { 0.0 };
    let (m2n, m4n) = (m2 / n, m4 / n);
    let var_se = ((m4n - m2n * m2n).max(0.0) / n).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Summary {
        count: values.len(),
        mean,
        var,
        sd: var.sqrt(),
        se: (var / n).sqrt(),
        var_se,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        quantiles: SUMMARY_PROBS.iter().map(|&p| (p, quantile_sorted(&sorted, p))).collect(),
    })
}

/// Least-squares fit of `mean(y | x)` against `ln x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub r2: f64,
    /// 95% confidence interval of the slope.
    pub ci95: (f64, f64),
    pub groups: usize,
}

pub fn fit_log_slope(points: &[(f64, f64)]) -> Result<LogFit, StatsError> {
    if points.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut sorted: Vec<(f64, f64)> = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i].0;
        if !(x > 0.0) {
            return Err(StatsError::NonPositive(x));
        }
        let mut j = i;
        let mut sum = 0.0;
        while j < sorted.len() && sorted[j].0 == x {
            sum += sorted[j].1;
            j += 1;
        }
        groups.push((x.ln(), sum / (j - i) as f64));
        i = j;
    }
    let k = groups.len();
    if k < 3 {
        return Err(StatsError::TooFewGroups { needed: 3, got: k });
    }
    let kf = k as f64;
    let mx = groups.iter().map(|g| g.0).sum::<f64>() / kf;
    let my = groups.iter().map(|g| g.1).sum::<f64>() / kf;
    let sxx: f64 = groups.iter().map(|g| (g.0 - mx).powi(2)).sum();
    let sxy: f64 = groups.iter().map(|g| (g.0 - mx) * (g.1 - my)).sum();
    let syy: f64 = groups.iter().map(|g| (g.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = groups.iter().map(|g| (g.1 - intercept - slope * g.0).powi(2)).sum();
    let stderr = (sse / (kf - 2.0) / sxx).sqrt();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let t = StudentsT::new(0.0, 1.0, kf - 2.0).expect("valid dof").inverse_cdf(0.975);
    Ok(LogFit { slope, intercept, stderr, r2, ci95: (slope - t * stderr, slope + t * stderr), groups: k })
}

/// Two-sided binomial standard error at success probability `p`.
pub fn binomial_se(p: f64, trials: usize) -> f64 {
    let p = p.clamp(0.0, 1.0);
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (-1)^{k-1} exp(-2 k² λ²)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    if lambda < 1.18 {
        // small-λ form converges faster here
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let s: f64 = (0..50).map(|j| y.powi((2 * j + 1) * (2 * j + 1))).sum();
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * s;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Degrees of freedom for chi-square, effective sample size for KS.
    pub dof: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let sq = ne.sqrt();
    Ok(TestResult { statistic: d, p_value: kolmogorov_q((sq + 0.12 + 0.11 / sq) * d), dof: ne })
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<TestResult, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    let sq = n.sqrt();
    Ok(TestResult { statistic: d, p_value: kolmogorov_q((sq + 0.12 + 0.11 / sq) * d), dof: n })
}

/// Merges adjacent categories until every pooled expected count is at least `min_expected`.
fn pool_bins(expected: &[f64], min_expected: f64) -> Vec<std::ops::Range<usize>> {
    let mut bins = Vec::new();
    let mut start = 0;
    let mut acc = 0.0;
    for (i, e) in expected.iter().enumerate() {
        acc += e;
        if acc >= min_expected {
            bins.push(start..i + 1);
            start = i + 1;
            acc = 0.0;
        }
    }
    if start < expected.len() {
        match bins.last_mut() {
            Some(last) => last.end = expected.len(),
            None => bins.push(0..expected.len()),
        }
    }
    bins
}

fn chi2_p(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(stat)
}

/// Chi-square test of homogeneity for two count vectors over the same categories.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> Result<TestResult, StatsError> {
    let len = a.len().max(b.len());
    let get = |v: &[u64], i: usize| v.get(i).copied().unwrap_or(0) as f64;
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    if na == 0.0 || nb == 0.0 {
        return Err(StatsError::Empty);
    }
    let pooled: Vec<f64> = (0..len).map(|i| get(a, i) + get(b, i)).collect();
    let total = na + nb;
    // pool on the smaller sample's expected counts
    let scale = na.min(nb) / total;
    let bins = pool_bins(&pooled.iter().map(|c| c * scale).collect::<Vec<_>>(), 5.0);
    let mut stat = 0.0;
    for r in &bins {
        let oa: f64 = r.clone().map(|i| get(a, i)).sum();
        let ob: f64 = r.clone().map(|i| get(b, i)).sum();
        let col = oa + ob;
        let (ea, eb) = (col * na / total, col * nb / total);
        if ea > 0.0 {
            stat += (oa - ea).powi(2) / ea;
        }
        if eb > 0.0 {
            stat += (ob - eb).powi(2) / eb;
        }
    }
    let dof = bins.len().saturating_sub(1);
    Ok(TestResult { statistic: stat, p_value: chi2_p(stat, dof), dof: dof as f64 })
}

/// Chi-square goodness of fit of observed counts against category probabilities.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> Result<TestResult, StatsError> {
    let total = observed.iter().sum::<u64>() as f64;
    if total == 0.0 {
        return Err(StatsError::Empty);
    }
    let len = observed.len().max(probs.len());
    let expected: Vec<f64> = (0..len).map(|i| probs.get(i).copied().unwrap_or(0.0) * total).collect();
    let bins = pool_bins(&expected, 5.0);
    let mut stat = 0.0;
    for r in &bins {
        let o: f64 = r.clone().map(|i| observed.get(i).copied().unwrap_or(0) as f64).sum();
        let e: f64 = r.clone().map(|i| expected[i]).sum();
        if e > 0.0 {
            stat += (o - e).powi(2) / e;
        } else if o > 0.0 {
            stat = f64::INFINITY;
        }
    }
    let dof = bins.len().saturating_sub(1);
    Ok(TestResult { statistic: stat, p_value: chi2_p(stat, dof), dof: dof as f64 })
}

/// Histogram of non-negative integer samples.
pub fn counts(values: impl IntoIterator<Item = usize>) -> Vec<u64> {
    let mut out = Vec::new();
    for v in values {
        if v >= out.len() {
            out.resize(v + 1, 0);
        }
        out[v] += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn summarize_basic() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.count, 4);
        assert!((s.mean - 2.5).abs() < 1e-15);
        assert!((s.var - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.quantiles[2], (0.5, 2.5));
        assert_eq!(summarize(&[]), Err(StatsError::Empty));
    }

    #[test]
    fn log_slope_recovers_synthetic_slope() {
        let mut rng = crate::rng::rng_from_seed(5);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut pts = Vec::new();
        for k in 4..12 {
            let n = (1u64 << k) as f64;
            for _ in 0..20 {
                pts.push((n, 3.0 * n.ln() + 1.0 + noise.sample(&mut rng)));
            }
        }
        let fit = fit_log_slope(&pts).unwrap();
        assert!((fit.slope - 3.0).abs() < 0.05, "{fit:?}");
        assert!(fit.ci95.0 < 3.0 && 3.0 < fit.ci95.1);
        assert!(fit.r2 > 0.99);
    }

    #[test]
    fn log_slope_needs_three_groups() {
        let pts = [(2.0, 1.0), (2.0, 1.1), (4.0, 2.0)];
        assert_eq!(fit_log_slope(&pts), Err(StatsError::TooFewGroups { needed: 3, got: 2 }));
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // both series evaluated near the switch point
        let small = {
            let lambda: f64 = 1.18;
            let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
            let s: f64 = (0..50).map(|j| y.powi((2 * j + 1) * (2 * j + 1))).sum();
            1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
        };
        assert!((small - kolmogorov_q(1.18)).abs() < 1e-10);
        // tabulated critical values
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_q(1.628) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn ks_and_chi_square_accept_same_law() {
        let mut rng = crate::rng::rng_from_seed(1);
        let a: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_two_sample(&a, &b).unwrap().p_value > 0.01);
        assert!(ks_one_sample(&a, |x| x.clamp(0.0, 1.0)).unwrap().p_value > 0.01);
        let shifted: Vec<f64> = b.iter().map(|x| x * 0.9).collect();
        assert!(ks_two_sample(&a, &shifted).unwrap().p_value < 1e-6);

        let ca = counts((0..10000).map(|_| rng.random_range(0..6)));
        let cb = counts((0..10000).map(|_| rng.random_range(0..6)));
        let r = chi_square_two_sample(&ca, &cb).unwrap();
        assert_eq!(r.dof, 5.0);
        assert!(r.p_value > 0.01);
        assert!(chi_square_gof(&ca, &[1.0 / 6.0; 6]).unwrap().p_value > 0.01);
        assert!(chi_square_gof(&ca, &[0.2, 0.2, 0.2, 0.2, 0.1, 0.1]).unwrap().p_value < 1e-6);
    }

    #[test]
    fn pooling_merges_sparse_tails() {
        let bins = pool_bins(&[10.0, 1.0, 1.0, 8.0, 0.5, 0.2], 5.0);
        assert_eq!(bins, vec![0..1, 1..6]);
    }
}
