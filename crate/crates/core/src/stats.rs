//! Descriptive statistics and the hypothesis tests used by the checks.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Significance level shared by all hypothesis tests.
pub const SIGNIFICANCE: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - 1.96 * self.std_error, self.mean + 1.96 * self.std_error)
    }

    pub fn z_score(&self, expected: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.mean == expected {
                0.0
            } else {
                f64::INFINITY * (self.mean - expected).signum()
            }
        } else {
            (self.mean - expected) / self.std_error
        }
    }
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n == 0 {
        return MeanSe {
            mean: f64::NAN,
            std_error: f64::NAN,
            n,
        };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    MeanSe {
        mean,
        std_error: (var / n as f64).sqrt(),
        n,
    }
}

pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Binomial proportion with its standard error.
pub fn proportion(successes: u64, trials: u64) -> MeanSe {
    let p = successes as f64 / trials as f64;
    MeanSe {
        mean: p,
        std_error: (p * (1.0 - p) / trials as f64).sqrt(),
        n: trials as usize,
    }
}

/// `|a - b| < z * sqrt(se_a^2 + se_b^2)`.
pub fn within_joint_se(a: MeanSe, b: MeanSe, z: f64) -> bool {
    (a.mean - b.mean).abs() < z * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_regression(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Value ranges `[lo, hi]` of the pooled bins.
    pub bins: Vec<(usize, usize)>,
}

/// Two-sample chi-square test on histograms indexed by value.
///
/// Adjacent values are pooled left to right until every bin has expected
/// count at least 5 in both samples; a short remainder joins the last bin.
/// With `max_bins`, the pooled bins are further merged into at most that many
/// groups of roughly equal combined mass.
pub fn two_sample_chi_square(a: &[u64], b: &[u64], max_bins: Option<usize>) -> ChiSquareResult {
    let len = a.len().max(b.len());
    let get = |h: &[u64], i: usize| h.get(i).copied().unwrap_or(0) as f64;
    let na: f64 = a.iter().map(|&x| x as f64).sum();
    let nb: f64 = b.iter().map(|&x| x as f64).sum();
    let total = na + nb;
    let min_expected = 5.0;
    let ready = |sa: f64, sb: f64| {
        let m = sa + sb;
        m * na / total >= min_expected && m * nb / total >= min_expected
    };

    let mut bins: Vec<(usize, usize, f64, f64)> = Vec::new();
    let (mut lo, mut sa, mut sb) = (0usize, 0.0, 0.0);
    for i in 0..len {
        sa += get(a, i);
        sb += get(b, i);
        if ready(sa, sb) {
            bins.push((lo, i, sa, sb));
            lo = i + 1;
            sa = 0.0;
            sb = 0.0;
        }
    }
    if sa + sb > 0.0 || bins.is_empty() {
        match bins.last_mut() {
            Some(last) => {
                last.1 = len.saturating_sub(1);
                last.2 += sa;
                last.3 += sb;
            }
            None => bins.push((0, len.saturating_sub(1), sa, sb)),
        }
    }

    if let Some(maxb) = max_bins {
        if bins.len() > maxb {
            let target = total / maxb as f64;
            let mut merged: Vec<(usize, usize, f64, f64)> = Vec::new();
            let mut cur: Option<(usize, usize, f64, f64)> = None;
            for bin in bins {
                cur = Some(match cur {
                    None => bin,
                    Some(c) => (c.0, bin.1, c.2 + bin.2, c.3 + bin.3),
                });
                let c = cur.unwrap();
                let remaining_groups = maxb - merged.len();
                if c.2 + c.3 >= target && remaining_groups > 1 {
                    merged.push(c);
                    cur = None;
                }
            }
            if let Some(c) = cur {
                merged.push(c);
            }
            bins = merged;
        }
    }

    let ka = (nb / na).sqrt();
    let kb = (na / nb).sqrt();
    let statistic: f64 = bins
        .iter()
        .map(|&(_, _, x, y)| (ka * x - kb * y).powi(2) / (x + y))
        .sum();
    let df = bins.len().saturating_sub(1);
    let p_value = if df == 0 {
        1.0
    } else {
        ChiSquared::new(df as f64).unwrap().sf(statistic)
    };
    ChiSquareResult {
        statistic,
        df,
        p_value,
        bins: bins.iter().map(|b| (b.0, b.1)).collect(),
    }
}

/// Histogram of nonnegative integer observations, indexed by value.
pub fn histogram<I: IntoIterator<Item = u64>>(values: I) -> Vec<u64> {
    let mut h = Vec::new();
    for v in values {
        let v = v as usize;
        if v >= h.len() {
            h.resize(v + 1, 0);
        }
        h[v] += 1;
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub critical_1pct: f64,
    pub n: usize,
}

impl KsResult {
    pub fn passes(&self) -> bool {
        self.statistic < self.critical_1pct
    }
}

/// Kolmogorov–Smirnov distance of a sample to the standard normal, with the
/// asymptotic 1% critical value `1.628 / (sqrt(n) + 0.12 + 0.11/sqrt(n))`.
pub fn ks_standard_normal(sample: &[f64]) -> KsResult {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let nf = n as f64;
    let normal = Normal::standard();
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = normal.cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    let sq = nf.sqrt();
    KsResult {
        statistic: d,
        critical_1pct: 1.628 / (sq + 0.12 + 0.11 / sq),
        n,
    }
}

/// Empirical quantile by linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < n {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[n - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand::Rng;

    #[test]
    fn mean_se_of_constant_sample() {
        let m = mean_se(&[2.0; 10]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std_error, 0.0);
        assert_eq!(m.z_score(2.0), 0.0);
    }

    #[test]
    fn regression_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
        let fit = linear_regression(&x, &y);
        assert!((fit.slope - 3.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_identical_histograms() {
        let h = vec![100, 50, 25, 12, 6, 3, 1];
        let r = two_sample_chi_square(&h, &h, None);
        assert!(r.statistic.abs() < 1e-12);
        assert!(r.p_value > 0.999);
        let covered: usize = r.bins.iter().map(|b| b.1 - b.0 + 1).sum();
        assert_eq!(covered, h.len());
    }

    #[test]
    fn chi_square_detects_shift() {
        let a = vec![1000, 1000, 0, 0];
        let b = vec![0, 1000, 1000, 0];
        assert!(two_sample_chi_square(&a, &b, None).p_value < 1e-10);
    }

    #[test]
    fn chi_square_max_bins() {
        let a: Vec<u64> = (0..100).map(|_| 100).collect();
        let r = two_sample_chi_square(&a, &a, Some(20));
        assert!(r.bins.len() <= 20);
        assert_eq!(r.df + 1, r.bins.len());
    }

    #[test]
    fn chi_square_p_values_are_roughly_uniform_under_null() {
        let mut small = 0;
        let trials = 200;
        for t in 0..trials {
            let mut rng = RngStream::new(31, t).rng();
            let mut draw = |n: usize| histogram((0..n).map(|_| rng.random_range(0..6u64)));
            let a = draw(3000);
            let b = draw(2000);
            if two_sample_chi_square(&a, &b, None).p_value < 0.05 {
                small += 1;
            }
        }
        // 5% rejection rate; binomial sd ~ 3 over 200 trials
        assert!(small < 25, "{small} rejections");
    }

    #[test]
    fn ks_accepts_normal_and_rejects_shifted() {
        let normal = Normal::standard();
        let n = 500;
        let xs: Vec<f64> = (0..n).map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64)).collect();
        assert!(ks_standard_normal(&xs).passes());
        let shifted: Vec<f64> = xs.iter().map(|x| x + 0.5).collect();
        assert!(!ks_standard_normal(&shifted).passes());
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.5), 2.0);
        assert_eq!(quantile_sorted(&xs, 0.125), 0.5);
        assert_eq!(quantile_sorted(&xs, 1.0), 4.0);
    }
}
