use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::ln_negbin_pmf;
use crate::urn::require_rho_gt_nubar;

/// Truncated mean matrix, `entries[(i-1) * l + (j-1)] = M_{i,j}` for types
/// `i, j` in `1..=l`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanMatrix {
    pub l: usize,
    pub entries: Vec<f64>,
}

impl MeanMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i - 1) * self.l + (j - 1)]
    }

    pub fn scaled(&self, c: f64) -> MeanMatrix {
        MeanMatrix {
            l: self.l,
            entries: self.entries.iter().map(|x| x * c).collect(),
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "j", "m_ij"])?;
        for i in 1..=self.l {
            for j in 1..=self.l {
                w.write_record([i.to_string(), j.to_string(), format!("{:e}", self.get(i, j))])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `ln M_{i,j}` for a single entry, by log-sum-exp over `m = 1..=i`.
fn ln_entry(ln_nu_bar: f64, ln_r: f64, p: f64, i: usize, j: usize) -> f64 {
    let terms: Vec<f64> = (1..=i)
        .map(|m| ln_negbin_pmf(j as u64, m as u64, p) + (i + 1 - m) as f64 * ln_r)
        .collect();
    ln_nu_bar + log_sum_exp(&terms)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `M_{i,j} = ν̄ Σ_{m=1}^{i} NB(j; m, ρ/(1+ρ)) (ρ/(ρ-ν̄))^{i+1-m}`.
pub fn mean_matrix_closed_form(params: &ModelParams, l: usize) -> Result<MeanMatrix> {
    let (rho, nu_bar) = require_rho_gt_nubar(params)?;
    if l == 0 {
        return Err(Error::InvalidParams("truncation level must be >= 1".into()));
    }
    let p = rho / (1.0 + rho);
    let ln_r = (rho / (rho - nu_bar)).ln();
    let ln_nu_bar = nu_bar.ln();
    // ln NB(j; m) for j, m in 1..=l
    let mut ln_nb = vec![0.0; l * l];
    for m in 1..=l {
        for j in 1..=l {
            ln_nb[(m - 1) * l + (j - 1)] = ln_negbin_pmf(j as u64, m as u64, p);
        }
    }
    let mut entries = vec![0.0; l * l];
    let mut terms = Vec::with_capacity(l);
    for i in 1..=l {
        for j in 1..=l {
            terms.clear();
            terms.extend((1..=i).map(|m| ln_nb[(m - 1) * l + (j - 1)] + (i + 1 - m) as f64 * ln_r));
            entries[(i - 1) * l + (j - 1)] = (ln_nu_bar + log_sum_exp(&terms)).exp();
        }
    }
    Ok(MeanMatrix { l, entries })
}

/// `λ = ν̄ / (ρ - ν̄ - 1)`, defined for `ρ > 1 + ν̄`.
pub fn eigenvalue(params: &ModelParams) -> Result<f64> {
    let nu_bar = params.finite_nu_bar("the eigenvector identity")?;
    let rho = params.rho();
    if params.compare_rho_to_affine(1, 1) != Some(Ordering::Greater) {
        return Err(Error::RequiresRhoGtOnePlusNubar { rho, nu_bar });
    }
    Ok(nu_bar / (rho - nu_bar - 1.0))
}

/// Smallest truncation `L` with `ρ^{-L} < 1e-12` whose neglected tail
/// `Σ_{i>L} ρ^{-i} M_{i,k} ≤ ρ q^{L+1} / (1-q)`, `q = 1/(ρ-ν̄)`, is also below
/// `rel_tol · λ ρ^{-k_max}`.
pub fn eigen_truncation_level(params: &ModelParams, k_max: usize, rel_tol: f64) -> Result<usize> {
    let lambda = eigenvalue(params)?;
    let rho = params.rho();
    let nu_bar = params.finite_nu_bar("the eigenvector identity")?;
    let q = 1.0 / (rho - nu_bar);
    let by_weight = (12.0 * std::f64::consts::LN_10 / rho.ln()).floor() as usize + 1;
    let target = rel_tol * lambda * rho.powi(-(k_max as i32));
    // ρ q^{L+1}/(1-q) ≤ target
    let by_tail = ((target * (1.0 - q) / rho).ln() / q.ln() - 1.0).ceil().max(1.0) as usize;
    Ok(by_weight.max(by_tail).max(k_max))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenCheck {
    pub l: usize,
    pub k_max: usize,
    pub lambda: f64,
    /// Max over `k ≤ k_max` of `|Σ_i f(i) M_{i,k} - λ f(k)| / (λ f(k))`.
    pub residual: f64,
    pub residuals: Vec<f64>,
}

/// Checks that `f(i) = ρ^{-i}` is a left eigenvector of `M` with eigenvalue λ.
pub fn eigen_check(params: &ModelParams, l: usize, k_max: usize) -> Result<EigenCheck> {
    let lambda = eigenvalue(params)?;
    if k_max == 0 || k_max > l {
        return Err(Error::InvalidParams(format!("need 1 <= k_max <= L, got k_max = {k_max}, L = {l}")));
    }
    let rho = params.rho();
    let m = mean_matrix_closed_form(params, l)?;
    let residuals: Vec<f64> = (1..=k_max)
        .map(|k| {
            // scale by ρ^k so both sides are O(λ)
            let lhs: f64 = (1..=l).map(|i| rho.powi(k as i32 - i as i32) * m.get(i, k)).sum();
            (lhs - lambda).abs() / lambda
        })
        .collect();
    Ok(EigenCheck {
        l,
        k_max,
        lambda,
        residual: residuals.iter().copied().fold(0.0, f64::max),
        residuals,
    })
}

pub const DEFAULT_POWER_ITERATIONS: usize = 100_000;

/// Dominant eigenvalue of a nonnegative matrix by power iteration from the
/// uniform vector.
pub fn spectral_radius(m: &MeanMatrix, tol: f64) -> Result<f64> {
    let l = m.l;
    let mut x = vec![1.0 / l as f64; l];
    let mut y = vec![0.0; l];
    let mut estimate = 0.0;
    let mut residual = f64::INFINITY;
    for _ in 0..DEFAULT_POWER_ITERATIONS {
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &m.entries[i * l..(i + 1) * l];
            *yi = row.iter().zip(&x).map(|(a, b)| a * b).sum();
        }
        let norm: f64 = y.iter().sum();
        if norm == 0.0 {
            return Ok(0.0);
        }
        // x has unit l1 norm, so the l1 growth factor estimates the eigenvalue
        let next = norm;
        residual = (next - estimate).abs() / next;
        estimate = next;
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / norm;
        }
        if residual < tol {
            return Ok(estimate);
        }
    }
    Err(Error::NotConverged {
        iterations: DEFAULT_POWER_ITERATIONS,
        residual,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratingCheck {
    pub k: usize,
    pub s: f64,
    pub n_max: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// Upper bound on the neglected tail `Σ_{n > n_max} s^n M_{n,k}`.
    pub tail_bound: f64,
    pub relative_error: f64,
}

/// `ν̄ρ²s / ((ρ-ν̄-ρs)(ρ+1-ρs)) · (ρ+1-ρs)^{-k}`.
pub fn generating_rhs(params: &ModelParams, k: usize, s: f64) -> Result<f64> {
    let (rho, nu_bar) = require_rho_gt_nubar(params)?;
    let a = rho + 1.0 - rho * s;
    Ok(nu_bar * rho * rho * s / ((rho - nu_bar - rho * s) * a) * a.powi(-(k as i32)))
}

/// Compares `Σ_{n=1}^{n_max} s^n M_{n,k}` with its closed form. Without an
/// explicit `n_max`, the smallest one whose tail bound
/// `ρ (sr)^{n+1} / (1 - sr)`, `r = ρ/(ρ-ν̄)`, is below `1e-12 · rhs` and
/// `(sr)^n < 1e-12`.
pub fn generating_identity_check(params: &ModelParams, k: usize, s: f64, n_max: Option<usize>) -> Result<GeneratingCheck> {
    let (rho, nu_bar) = require_rho_gt_nubar(params)?;
    let upper = (rho - nu_bar) / rho;
    if !(s > 0.0 && s < upper) {
        return Err(Error::SOutOfRange { s, upper });
    }
    if k == 0 {
        return Err(Error::InvalidParams("the generating identity needs k >= 1".into()));
    }
    let rhs = generating_rhs(params, k, s)?;
    let r = rho / (rho - nu_bar);
    let sr = s * r;
    let tail = |n: usize| rho * sr.powi(n as i32 + 1) / (1.0 - sr);
    let n_max = n_max.unwrap_or_else(|| {
        let mut n = 1;
        while tail(n) > 1e-12 * rhs || sr.powi(n as i32) >= 1e-12 {
            n += 1;
        }
        n
    });
    let p = rho / (1.0 + rho);
    let (ln_nu_bar, ln_r, ln_s) = (nu_bar.ln(), r.ln(), s.ln());
    let lhs: f64 = (1..=n_max)
        .map(|n| (n as f64 * ln_s + ln_entry(ln_nu_bar, ln_r, p, n, k)).exp())
        .sum();
    Ok(GeneratingCheck {
        k,
        s,
        n_max,
        lhs,
        rhs,
        tail_bound: tail(n_max),
        relative_error: (lhs - rhs).abs() / rhs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Supercritical,
    Critical,
    Subcritical,
    /// `ρ ≤ 1 + ν̄`: the eigenvector formula does not apply; the walk is
    /// transient by comparison with a less biased walk.
    Undefined,
}

/// Branching regime of Z from the position of ρ relative to `1 + ν̄` and
/// `1 + 2ν̄`.
pub fn classify_regime(params: &ModelParams) -> Result<Regime> {
    params.finite_nu_bar("regime classification")?;
    if params.compare_rho_to_affine(1, 1) != Some(Ordering::Greater) {
        return Ok(Regime::Undefined);
    }
    Ok(match params.compare_rho_to_affine(1, 2).unwrap() {
        Ordering::Less => Regime::Supercritical,
        Ordering::Equal => Regime::Critical,
        Ordering::Greater => Regime::Subcritical,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub params: ModelParams,
    #[serde(rename = "L")]
    pub l: usize,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}
