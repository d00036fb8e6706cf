//! Model parameters: the bias toward the root and the leaf-count distribution.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::zeta;

/// Largest value a single leaf-count draw may take. Heavy-tailed draws are
/// clamped here so child counts stay exactly representable as `f64`.
pub const MAX_SAMPLE: u64 = 1 << 52;

/// Default tabulation cap for [`OffspringSpec::PowerTail`].
pub const DEFAULT_POWER_TAIL_CAP: u64 = 10_000;

/// Normalization tolerance for finite pmf tables.
const PMF_TOLERANCE: f64 = 1e-12;

/// Poisson means above this underflow `exp(-mean)`.
const MAX_POISSON_MEAN: f64 = 700.0;

/// A real number that may be the explicit `INFINITE` sentinel.
///
/// Deliberately has no arithmetic: callers must match on it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtendedReal {
    Finite(f64),
    Infinite,
}

impl ExtendedReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(x) => Some(x),
            ExtendedReal::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, ExtendedReal::Infinite)
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(x) => write!(f, "{x}"),
            ExtendedReal::Infinite => f.write_str("INFINITE"),
        }
    }
}

/// Config-level description of a leaf-count distribution, as a tagged record
/// such as `{"type":"point_mass","m":1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OffspringSpec {
    PointMass {
        m: u64,
    },
    Bernoulli {
        p: f64,
    },
    /// `P(k) = q (1-q)^k` on `{0, 1, ...}`.
    Geometric {
        q: f64,
    },
    Poisson {
        mean: f64,
    },
    FinitePmf {
        table: Vec<(u64, f64)>,
    },
    /// `P(k) ∝ k^(-a-1)` on `{1, 2, ...}`; the mean is infinite for `a <= 1`.
    PowerTail {
        a: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cap: Option<u64>,
    },
}

#[derive(Clone, Debug)]
enum Sampler {
    PointMass(u64),
    Bernoulli(f64),
    Geometric { ln_fail: f64 },
    Poisson(f64),
    /// Sorted support and cumulative probabilities (last entry forced to 1).
    Table { support: Vec<u64>, cdf: Vec<f64> },
    PowerTail(PowerTailSampler),
}

#[derive(Clone, Debug)]
struct PowerTailSampler {
    a: f64,
    /// `cdf[k-1] = P(X <= k)` for `k = 1..=cap`.
    cdf: Vec<f64>,
    /// `P(X > cap)`.
    tail_mass: f64,
}

impl PowerTailSampler {
    fn new(a: f64, cap: u64) -> Self {
        let z = zeta(a + 1.0);
        let mut cdf = Vec::with_capacity(cap as usize);
        let mut acc = 0.0;
        for k in 1..=cap {
            acc += (k as f64).powf(-a - 1.0) / z;
            cdf.push(acc);
        }
        let tail_mass = (1.0 - acc).max(0.0);
        Self { a, cdf, tail_mass }
    }

    fn cap(&self) -> u64 {
        self.cdf.len() as u64
    }

    fn quantile(&self, u: f64) -> u64 {
        let cap = self.cap();
        let idx = self.cdf.partition_point(|&c| c <= u);
        if (idx as u64) < cap {
            return idx as u64 + 1;
        }
        // Continuous survival approximation beyond the table, pinned to the
        // exact tail mass at the cap: P(X > k) ≈ T ((k + 1/2)/(cap + 1/2))^(-a).
        let t = 1.0 - u;
        if t <= 0.0 || self.tail_mass <= 0.0 {
            return MAX_SAMPLE;
        }
        let ratio = (t / self.tail_mass).min(1.0);
        let k = (cap as f64 + 0.5) * ratio.powf(-1.0 / self.a) - 0.5;
        let k = k.floor().max(cap as f64) + 1.0;
        if k >= MAX_SAMPLE as f64 {
            MAX_SAMPLE
        } else {
            k as u64
        }
    }

    fn cdf(&self, k: u64) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let cap = self.cap();
        if k <= cap {
            return self.cdf[k as usize - 1];
        }
        let ratio = (k as f64 + 0.5) / (cap as f64 + 0.5);
        1.0 - self.tail_mass * ratio.powf(-self.a)
    }
}

/// A validated leaf-count distribution ν on the nonnegative integers.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "OffspringSpec", into = "OffspringSpec")]
pub struct OffspringDistribution {
    spec: OffspringSpec,
    sampler: Sampler,
}

impl PartialEq for OffspringDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl From<OffspringDistribution> for OffspringSpec {
    fn from(d: OffspringDistribution) -> Self {
        d.spec
    }
}

impl TryFrom<OffspringSpec> for OffspringDistribution {
    type Error = Error;

    fn try_from(spec: OffspringSpec) -> Result<Self> {
        Self::new(spec)
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::InvalidDistribution(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

impl OffspringDistribution {
    pub fn new(spec: OffspringSpec) -> Result<Self> {
        let sampler = match &spec {
            OffspringSpec::PointMass { m } => Sampler::PointMass(*m),
            OffspringSpec::Bernoulli { p } => {
                check_probability("p", *p)?;
                Sampler::Bernoulli(*p)
            }
            OffspringSpec::Geometric { q } => {
                check_probability("q", *q)?;
                if *q == 0.0 {
                    return Err(Error::InvalidDistribution("geometric q must be positive".into()));
                }
                Sampler::Geometric { ln_fail: (1.0 - q).ln() }
            }
            OffspringSpec::Poisson { mean } => {
                if !(*mean > 0.0 && *mean <= MAX_POISSON_MEAN) {
                    return Err(Error::InvalidDistribution(format!(
                        "poisson mean {mean} must lie in (0, {MAX_POISSON_MEAN}]"
                    )));
                }
                Sampler::Poisson(*mean)
            }
            OffspringSpec::FinitePmf { table } => Self::build_table(table)?,
            OffspringSpec::PowerTail { a, cap } => {
                if !(*a > 0.0 && *a <= 2.0) {
                    return Err(Error::InvalidDistribution(format!(
                        "power tail exponent a = {a} must lie in (0, 2]"
                    )));
                }
                let cap = cap.unwrap_or(DEFAULT_POWER_TAIL_CAP);
                if cap == 0 || cap > 10_000_000 {
                    return Err(Error::InvalidDistribution(format!("power tail cap {cap} out of range")));
                }
                Sampler::PowerTail(PowerTailSampler::new(*a, cap))
            }
        };
        let dist = Self { spec, sampler };
        if dist.pmf(0) >= 1.0 {
            return Err(Error::InvalidDistribution(
                "nu(0) must be < 1 (a walk that never adds leaves is trivial)".into(),
            ));
        }
        Ok(dist)
    }

    fn build_table(table: &[(u64, f64)]) -> Result<Sampler> {
        if table.is_empty() {
            return Err(Error::InvalidDistribution("finite pmf table is empty".into()));
        }
        let mut entries = table.to_vec();
        entries.sort_by_key(|&(k, _)| k);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidDistribution("finite pmf table has duplicate atoms".into()));
        }
        for &(k, p) in &entries {
            check_probability(&format!("pmf({k})"), p)?;
        }
        let total: f64 = entries.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > PMF_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "finite pmf sums to {total}, not 1 within {PMF_TOLERANCE:e}"
            )));
        }
        if entries.iter().any(|&(k, _)| k > MAX_SAMPLE) {
            return Err(Error::InvalidDistribution("finite pmf atom exceeds 2^52".into()));
        }
        let mut acc = 0.0;
        let mut support = Vec::with_capacity(entries.len());
        let mut cdf = Vec::with_capacity(entries.len());
        for (k, p) in entries {
            acc += p;
            support.push(k);
            cdf.push(acc);
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Sampler::Table { support, cdf })
    }

    pub fn point_mass(m: u64) -> Result<Self> {
        Self::new(OffspringSpec::PointMass { m })
    }

    pub fn bernoulli(p: f64) -> Result<Self> {
        Self::new(OffspringSpec::Bernoulli { p })
    }

    pub fn geometric(q: f64) -> Result<Self> {
        Self::new(OffspringSpec::Geometric { q })
    }

    pub fn poisson(mean: f64) -> Result<Self> {
        Self::new(OffspringSpec::Poisson { mean })
    }

    pub fn finite_pmf(table: Vec<(u64, f64)>) -> Result<Self> {
        Self::new(OffspringSpec::FinitePmf { table })
    }

    pub fn power_tail(a: f64) -> Result<Self> {
        Self::new(OffspringSpec::PowerTail { a, cap: None })
    }

    pub fn spec(&self) -> &OffspringSpec {
        &self.spec
    }

    /// The mean ν̄, or `Infinite` for the heavy power tails.
    pub fn mean(&self) -> ExtendedReal {
        match &self.spec {
            OffspringSpec::PointMass { m } => ExtendedReal::Finite(*m as f64),
            OffspringSpec::Bernoulli { p } => ExtendedReal::Finite(*p),
            OffspringSpec::Geometric { q } => ExtendedReal::Finite((1.0 - q) / q),
            OffspringSpec::Poisson { mean } => ExtendedReal::Finite(*mean),
            OffspringSpec::FinitePmf { table } => {
                ExtendedReal::Finite(table.iter().map(|&(k, p)| k as f64 * p).sum())
            }
            OffspringSpec::PowerTail { a, .. } => {
                if *a <= 1.0 {
                    ExtendedReal::Infinite
                } else {
                    ExtendedReal::Finite(zeta(*a) / zeta(a + 1.0))
                }
            }
        }
    }

    /// The mean as an exact rational, for variants whose mean is an exact
    /// function of the `f64` inputs.
    pub fn mean_exact(&self) -> Option<BigRational> {
        match &self.spec {
            OffspringSpec::PointMass { m } => Some(BigRational::from_integer(BigInt::from(*m))),
            OffspringSpec::Bernoulli { p } => BigRational::from_f64(*p),
            OffspringSpec::Poisson { mean } => BigRational::from_f64(*mean),
            OffspringSpec::FinitePmf { table } => {
                let mut acc = BigRational::zero();
                for &(k, p) in table {
                    acc += BigRational::from_integer(BigInt::from(k)) * BigRational::from_f64(p)?;
                }
                Some(acc)
            }
            OffspringSpec::Geometric { .. } | OffspringSpec::PowerTail { .. } => None,
        }
    }

    pub fn pmf(&self, k: u64) -> f64 {
        let below = if k == 0 { 0.0 } else { self.cdf(k - 1) };
        (self.cdf(k) - below).max(0.0)
    }

    /// `P(X <= k)`.
    pub fn cdf(&self, k: u64) -> f64 {
        match &self.sampler {
            Sampler::PointMass(m) => {
                if k >= *m {
                    1.0
                } else {
                    0.0
                }
            }
            Sampler::Bernoulli(p) => {
                if k >= 1 {
                    1.0
                } else {
                    1.0 - p
                }
            }
            Sampler::Geometric { ln_fail } => 1.0 - ((k as f64 + 1.0) * ln_fail).exp(),
            Sampler::Poisson(mean) => {
                let mut term = (-mean).exp();
                let mut acc = term;
                for j in 1..=k {
                    term *= mean / j as f64;
                    acc += term;
                    if term < 1e-300 && j as f64 > *mean {
                        break;
                    }
                }
                acc.min(1.0)
            }
            Sampler::Table { support, cdf } => {
                let idx = support.partition_point(|&s| s <= k);
                if idx == 0 {
                    0.0
                } else {
                    cdf[idx - 1]
                }
            }
            Sampler::PowerTail(pt) => pt.cdf(k),
        }
    }

    /// Generalized inverse `min{k : F(k) > u}` for `u` in `[0, 1)`.
    ///
    /// Nondecreasing in `u`; feeding the same uniform to two distributions
    /// ordered stochastically yields ordered draws.
    pub fn quantile(&self, u: f64) -> u64 {
        match &self.sampler {
            Sampler::PointMass(m) => *m,
            Sampler::Bernoulli(p) => u64::from(u >= 1.0 - p),
            Sampler::Geometric { ln_fail } => {
                if *ln_fail == f64::NEG_INFINITY {
                    return 0;
                }
                let x = ((1.0 - u).ln() / ln_fail).floor();
                if x >= MAX_SAMPLE as f64 {
                    MAX_SAMPLE
                } else {
                    x.max(0.0) as u64
                }
            }
            Sampler::Poisson(mean) => {
                let mut k = 0u64;
                let mut term = (-mean).exp();
                let mut acc = term;
                while acc <= u {
                    k += 1;
                    term *= mean / k as f64;
                    acc += term;
                    if term == 0.0 && k as f64 > *mean {
                        break;
                    }
                }
                k
            }
            Sampler::Table { support, cdf } => {
                let idx = cdf.partition_point(|&c| c <= u).min(support.len() - 1);
                support[idx]
            }
            Sampler::PowerTail(pt) => pt.quantile(u),
        }
    }

    /// Draws one leaf count.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.sampler {
            Sampler::PointMass(m) => *m,
            Sampler::Bernoulli(p) => u64::from(rng.random::<f64>() < *p),
            _ => self.quantile(rng.random::<f64>()),
        }
    }

    /// Upper end of the support when it is finite.
    pub fn support_max(&self) -> Option<u64> {
        match &self.sampler {
            Sampler::PointMass(m) => Some(*m),
            Sampler::Bernoulli(_) => Some(1),
            Sampler::Table { support, .. } => support.last().copied(),
            _ => None,
        }
    }

    /// Whether `self ≺ other` in the stochastic order, i.e.
    /// `other([k,∞)) >= self([k,∞))` for all `k`.
    ///
    /// Finite supports are compared exactly; otherwise the CDFs are compared on
    /// `0..=grid_cap` (both CDFs are monotone, and beyond the grid the
    /// parametric families keep their ordering).
    pub fn is_dominated_by(&self, other: &OffspringDistribution, grid_cap: u64) -> bool {
        let top = match (self.support_max(), other.support_max()) {
            (Some(a), Some(b)) => a.max(b),
            _ => grid_cap,
        };
        (0..=top).all(|k| other.cdf(k) <= self.cdf(k) + 1e-12)
    }
}

impl fmt::Display for OffspringDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.spec {
            OffspringSpec::PointMass { m } => write!(f, "PointMass({m})"),
            OffspringSpec::Bernoulli { p } => write!(f, "Bernoulli({p})"),
            OffspringSpec::Geometric { q } => write!(f, "Geometric({q})"),
            OffspringSpec::Poisson { mean } => write!(f, "Poisson({mean})"),
            OffspringSpec::FinitePmf { table } => write!(f, "FinitePmf({table:?})"),
            OffspringSpec::PowerTail { a, .. } => write!(f, "PowerTail({a})"),
        }
    }
}

/// The pair (ρ, ν).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    rho: f64,
    nu: OffspringDistribution,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    rho: f64,
    nu: OffspringDistribution,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ModelParams::new(raw.rho, raw.nu)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams { rho: p.rho, nu: p.nu }
    }
}

impl ModelParams {
    pub fn new(rho: f64, nu: OffspringDistribution) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidParams(format!("rho = {rho} must be a positive real")));
        }
        Ok(Self { rho, nu })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn nu(&self) -> &OffspringDistribution {
        &self.nu
    }

    pub fn nu_bar(&self) -> ExtendedReal {
        self.nu.mean()
    }

    pub fn nu_zero(&self) -> f64 {
        self.nu.pmf(0)
    }

    /// ν̄ when finite, else an error naming the operation that needs it.
    pub fn finite_nu_bar(&self, operation: &'static str) -> Result<f64> {
        self.nu_bar().finite().ok_or(Error::InfiniteMean(operation))
    }

    /// Sign of `rho - (offset + slope * nu_bar)`, exactly when ρ and ν̄ are
    /// exact rationals; otherwise in floating point with a relative
    /// tolerance of 1e-12 counted as equality. `None` when ν̄ is infinite.
    pub fn compare_rho_to_affine(&self, offset: i64, slope: i64) -> Option<Ordering> {
        let nu_bar = self.nu_bar().finite()?;
        if let (Some(rho), Some(mean)) = (BigRational::from_f64(self.rho), self.nu.mean_exact()) {
            let threshold = BigRational::from_integer(BigInt::from(offset))
                + BigRational::from_integer(BigInt::from(slope)) * mean;
            return Some(rho.cmp(&threshold));
        }
        let threshold = offset as f64 + slope as f64 * nu_bar;
        let diff = self.rho - threshold;
        if diff.abs() <= 1e-12 * threshold.abs().max(1.0) {
            Some(Ordering::Equal)
        } else if diff < 0.0 {
            Some(Ordering::Less)
        } else {
            Some(Ordering::Greater)
        }
    }
}

/// The recurrence threshold `1 + 2ν̄`, or `Infinite` (always transient).
pub fn critical_rho(params: &ModelParams) -> ExtendedReal {
    match params.nu_bar() {
        ExtendedReal::Finite(m) => ExtendedReal::Finite(1.0 + 2.0 * m),
        ExtendedReal::Infinite => ExtendedReal::Infinite,
    }
}
