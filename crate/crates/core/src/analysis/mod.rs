//! Estimators and tests tying simulations to the phase diagram: phase
//! classification, speed and CLT, logarithmic height growth, τ_k growth,
//! cut-time tails, the no-return probability α and the Ray–Knight comparison.

mod ray_knight;

use std::cmp::Ordering;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

pub use ray_knight::{ray_knight_compare, RayKnightReport};

use crate::bmc::SurvivalEstimate;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::RngStream;
use crate::stats::{self, ks_standard_normal, linear_regression, mean_se, proportion, quantile_sorted, KsResult, MeanSe};
use crate::walker::{detect_cut_times, run, run_with, CutTimeOptions, Observers, RunSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Transient,
    NullRecurrent,
    PositiveRecurrent,
}

impl Phase {
    pub fn short(&self) -> &'static str {
        match self {
            Phase::Transient => "T",
            Phase::NullRecurrent => "NR",
            Phase::PositiveRecurrent => "PR",
        }
    }
}

/// Phase from the position of ρ relative to `1 + 2ν̄` (infinite ν̄: transient).
pub fn classify_phase(params: &ModelParams) -> Phase {
    match params.compare_rho_to_affine(1, 2) {
        None | Some(Ordering::Less) => Phase::Transient,
        Some(Ordering::Equal) => Phase::NullRecurrent,
        Some(Ordering::Greater) => Phase::PositiveRecurrent,
    }
}

fn warn_unless(params: &ModelParams, expected: &[Phase], op: &str) -> bool {
    let phase = classify_phase(params);
    let ok = expected.contains(&phase);
    if !ok {
        warn!("{op}: parameters rho = {} nu = {} are {phase:?}", params.rho(), params.nu());
    }
    ok
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpeedEstimate {
    pub v_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub std_error: f64,
    pub n: u64,
    pub reps: u64,
}

/// Replicate mean of `|S_n|/n` with a 95% normal confidence interval.
pub fn estimate_speed(params: &ModelParams, n: u64, reps: u64, master: RngStream) -> Result<SpeedEstimate> {
    if n == 0 || reps < 2 {
        return Err(Error::InvalidParams("speed estimation needs n >= 1 and reps >= 2".into()));
    }
    warn_unless(params, &[Phase::Transient], "estimate_speed");
    let speeds: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let t = run(params, n, &Observers::default(), &mut master.substream(rep).rng());
            t.final_height as f64 / n as f64
        })
        .collect();
    let m = mean_se(&speeds);
    let (lo, hi) = m.ci95();
    Ok(SpeedEstimate {
        v_hat: m.mean,
        ci_low: lo,
        ci_high: hi,
        std_error: m.std_error,
        n,
        reps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CltReport {
    pub n_grid: Vec<u64>,
    pub variances: Vec<f64>,
    pub means: Vec<f64>,
    /// Slope of the regression of `Var|S_n|` on `n`.
    pub variance_slope: f64,
    pub r_squared: f64,
    /// KS distance of `(|S_N| - N v̂)/(σ̂ √N)` at the largest `N` to N(0,1).
    pub ks_statistic: f64,
    pub ks_critical_1pct: f64,
    pub ks: KsResult,
    pub reps: u64,
}

/// Linear-variance and normality checks for `|S_n|` centered at `n v̂`.
pub fn clt_check(params: &ModelParams, n_grid: &[u64], reps: u64, master: RngStream) -> Result<CltReport> {
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.len() < 3 {
        return Err(Error::NeedGridPoints(grid.len()));
    }
    warn_unless(params, &[Phase::Transient], "clt_check");
    let horizon = *grid.last().unwrap();
    let obs = Observers::default().with_checkpoints(grid.clone());
    let heights: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let t = run(params, horizon, &obs, &mut master.substream(rep).rng());
            t.curve.iter().map(|c| c.height as f64).collect()
        })
        .collect();
    let column = |i: usize| -> Vec<f64> { heights.iter().map(|h| h[i]).collect() };
    let mut variances = Vec::with_capacity(grid.len());
    let mut means = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let col = column(i);
        means.push(mean_se(&col).mean);
        variances.push(stats::variance(&col));
    }
    let x: Vec<f64> = grid.iter().map(|&n| n as f64).collect();
    let fit = linear_regression(&x, &variances);
    let last = column(grid.len() - 1);
    let mean = means[grid.len() - 1];
    let sd = variances[grid.len() - 1].sqrt();
    let z: Vec<f64> = last.iter().map(|h| (h - mean) / sd).collect();
    let ks = ks_standard_normal(&z);
    Ok(CltReport {
        n_grid: grid,
        variances,
        means,
        variance_slope: fit.slope,
        r_squared: fit.r_squared,
        ks_statistic: ks.statistic,
        ks_critical_1pct: ks.critical_1pct,
        ks,
        reps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogGrowthFit {
    pub c1_hat: f64,
    pub c2_hat: f64,
    pub window: (u64, u64),
    /// `|T_n|` at the end of each replicate.
    pub final_tree_heights: Vec<u32>,
    /// False when the parameters are not positive recurrent.
    pub accepted: bool,
}

/// Bounds of `|T_n| / log n` over the tail window `[√n_max, n_max]`, taken
/// over all replicates.
pub fn height_growth_fit(params: &ModelParams, n_max: u64, reps: u64, master: RngStream) -> Result<LogGrowthFit> {
    if n_max < 16 {
        return Err(Error::InvalidParams("height growth fit needs n_max >= 16".into()));
    }
    let accepted = warn_unless(params, &[Phase::PositiveRecurrent], "height_growth_fit");
    let n_min = (n_max as f64).sqrt().ceil() as u64;
    let checkpoints: Vec<u64> = Observers::log_checkpoints(n_max, 10).into_iter().filter(|&n| n >= n_min).collect();
    let obs = Observers::default().with_checkpoints(checkpoints);
    let runs: Vec<(f64, f64, u32)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let t = run(params, n_max, &obs, &mut master.substream(rep).rng());
            let ratios = t.curve.iter().map(|c| c.max_height as f64 / (c.step as f64).ln());
            let (lo, hi) = ratios.fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
            (lo, hi, t.tree_height)
        })
        .collect();
    Ok(LogGrowthFit {
        c1_hat: runs.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        c2_hat: runs.iter().map(|r| r.1).fold(0.0, f64::max),
        window: (n_min, n_max),
        final_tree_heights: runs.iter().map(|r| r.2).collect(),
        accepted,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TauGrowth {
    /// Slope of the mean of `log τ_k` against `k` over `k_window`.
    pub delta_hat: f64,
    pub k_window: (usize, usize),
    pub mean_log_tau: Vec<f64>,
    /// Runs that did not reach τ_{k_max} within the step cap; excluded.
    pub censored_runs: u64,
    /// Fraction of included runs whose own slope over the window is positive.
    pub growing_fraction: f64,
    pub reps: u64,
}

/// Exponential growth rate of the root-loop crossing times.
pub fn tau_growth(params: &ModelParams, k_max: usize, reps: u64, step_cap: u64, master: RngStream) -> Result<TauGrowth> {
    if k_max < 5 {
        return Err(Error::NeedCrossings(k_max));
    }
    warn_unless(params, &[Phase::PositiveRecurrent, Phase::NullRecurrent], "tau_growth");
    let spec = RunSpec {
        horizon: step_cap,
        observers: Observers {
            tau: true,
            ..Default::default()
        },
        reflect_height: None,
        stop_at_tau: Some(k_max),
    };
    let runs: Vec<Option<Vec<f64>>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let t = run_with(params, &spec, &mut master.substream(rep).rng());
            (!t.censored).then(|| t.root_loop_times.iter().map(|&x| (x as f64).ln()).collect())
        })
        .collect();
    let complete: Vec<&Vec<f64>> = runs.iter().flatten().collect();
    let censored_runs = reps - complete.len() as u64;
    if complete.is_empty() {
        return Err(Error::TauNotObserved { k: k_max });
    }
    let k_lo = k_max / 2 + 1;
    let ks: Vec<f64> = (k_lo..=k_max).map(|k| k as f64).collect();
    let mean_log_tau: Vec<f64> = (0..k_max)
        .map(|i| complete.iter().map(|r| r[i]).sum::<f64>() / complete.len() as f64)
        .collect();
    let fit = linear_regression(&ks, &mean_log_tau[k_lo - 1..]);
    let growing = complete
        .iter()
        .filter(|r| linear_regression(&ks, &r[k_lo - 1..]).slope > 0.0)
        .count();
    Ok(TauGrowth {
        delta_hat: fit.slope,
        k_window: (k_lo, k_max),
        mean_log_tau,
        censored_runs,
        growing_fraction: growing as f64 / complete.len() as f64,
        reps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CutTimeTail {
    pub horizon: u64,
    pub reps: u64,
    pub window: u64,
    /// `(n, P(C_1 > n))`, with runs lacking a confirmed cut counted as `> n`.
    pub tail: Vec<(u64, f64)>,
    pub confirmed_fraction: f64,
    /// Mean of `C_1` over runs with a confirmed cut.
    pub mean_c1: Option<MeanSe>,
    pub mean_theta: Option<f64>,
    /// Slope of `log(-log P(C_1 > n))` on `log n`; exploratory.
    pub stretched_exponent: Option<f64>,
}

/// Empirical tail of the first cut time.
pub fn cut_time_tail(params: &ModelParams, horizon: u64, reps: u64, window: u64, master: RngStream) -> Result<CutTimeTail> {
    warn_unless(params, &[Phase::Transient], "cut_time_tail");
    let obs = Observers {
        heights: true,
        ..Default::default()
    };
    let firsts: Vec<(Option<u64>, Option<u64>)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let t = run(params, horizon, &obs, &mut master.substream(rep).rng());
            let r = detect_cut_times(&t, CutTimeOptions { window })?;
            Ok((r.first(), r.theta))
        })
        .collect::<Result<_>>()?;
    let confirmed: Vec<f64> = firsts.iter().filter_map(|f| f.0).map(|c| c as f64).collect();
    let thetas: Vec<f64> = firsts.iter().filter_map(|f| f.1).map(|c| c as f64).collect();
    let grid: Vec<u64> = Observers::log_checkpoints(horizon.saturating_sub(window).max(1), 4);
    let tail: Vec<(u64, f64)> = grid
        .iter()
        .map(|&n| {
            let above = firsts.iter().filter(|f| f.0.is_none_or(|c| c > n)).count();
            (n, above as f64 / reps as f64)
        })
        .collect();
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .filter(|&&(n, p)| n >= 2 && p > 0.0 && p < 1.0)
        .map(|&(n, p)| ((n as f64).ln(), (-p.ln()).ln()))
        .collect();
    let stretched_exponent = (pts.len() >= 3).then(|| {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        linear_regression(&x, &y).slope
    });
    Ok(CutTimeTail {
        horizon,
        reps,
        window,
        tail,
        confirmed_fraction: confirmed.len() as f64 / reps as f64,
        mean_c1: (!confirmed.is_empty()).then(|| mean_se(&confirmed)),
        mean_theta: (!thetas.is_empty()).then(|| thetas.iter().sum::<f64>() / thetas.len() as f64),
        stretched_exponent,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMethod {
    LongHorizonNoReturn,
    BmcSurvival,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaEstimate {
    pub alpha_hat: f64,
    pub std_error: f64,
    pub method: AlphaMethod,
    pub reps: u64,
}

impl AlphaEstimate {
    pub fn as_mean_se(&self) -> MeanSe {
        MeanSe {
            mean: self.alpha_hat,
            std_error: self.std_error,
            n: self.reps as usize,
        }
    }

    pub fn from_survival(s: &SurvivalEstimate) -> Self {
        AlphaEstimate {
            alpha_hat: s.p_survive,
            std_error: s.std_error,
            method: AlphaMethod::BmcSurvival,
            reps: s.extinct + s.survived,
        }
    }
}

/// Fraction of runs without a root-loop crossing by `horizon`; biased upward
/// by runs whose first crossing comes later.
pub fn estimate_alpha(params: &ModelParams, horizon: u64, reps: u64, master: RngStream) -> Result<AlphaEstimate> {
    let spec = RunSpec {
        horizon,
        observers: Observers {
            tau: true,
            ..Default::default()
        },
        reflect_height: None,
        stop_at_tau: Some(1),
    };
    let escaped = (0..reps)
        .into_par_iter()
        .filter(|&rep| run_with(params, &spec, &mut master.substream(rep).rng()).censored)
        .count() as u64;
    let p = proportion(escaped, reps);
    Ok(AlphaEstimate {
        alpha_hat: p.mean,
        std_error: p.std_error,
        method: AlphaMethod::LongHorizonNoReturn,
        reps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuantileRow {
    pub n: u64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticalExploration {
    /// Quantiles of `|S_n| / √n`.
    pub walker: Vec<QuantileRow>,
    /// Quantiles of `|T_n| / √n`.
    pub tree: Vec<QuantileRow>,
}

/// Quantile curves of the scaled walker and tree heights at the critical
/// bias. Exploratory; no pass/fail.
pub fn critical_exploration(params: &ModelParams, n_max: u64, reps: u64, master: RngStream) -> Result<CriticalExploration> {
    if params.compare_rho_to_affine(1, 2) != Some(Ordering::Equal) {
        return Err(Error::RequiresCriticalParams { rho: params.rho() });
    }
    let checkpoints = Observers::log_checkpoints(n_max, 8);
    let obs = Observers::default().with_checkpoints(checkpoints.clone());
    let curves: Vec<Vec<(f64, f64)>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let t = run(params, n_max, &obs, &mut master.substream(rep).rng());
            t.curve
                .iter()
                .map(|c| {
                    let s = (c.step as f64).sqrt();
                    (c.height as f64 / s, c.max_height as f64 / s)
                })
                .collect()
        })
        .collect();
    let rows = |pick: fn(&(f64, f64)) -> f64| -> Vec<QuantileRow> {
        checkpoints
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let mut xs: Vec<f64> = curves.iter().map(|c| pick(&c[i])).collect();
                xs.sort_by(f64::total_cmp);
                QuantileRow {
                    n,
                    q05: quantile_sorted(&xs, 0.05),
                    q25: quantile_sorted(&xs, 0.25),
                    q50: quantile_sorted(&xs, 0.50),
                    q75: quantile_sorted(&xs, 0.75),
                    q95: quantile_sorted(&xs, 0.95),
                }
            })
            .collect()
    };
    Ok(CriticalExploration {
        walker: rows(|p| p.0),
        tree: rows(|p| p.1),
    })
}

pub fn write_quantile_csv<W: std::io::Write>(rows: &[QuantileRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReturnTimeEvidence {
    /// Running means of the gaps `τ_k - τ_{k-1}` at `k = k_max/4, k_max/2, k_max`.
    pub running_means: Vec<(usize, f64)>,
    pub censored_runs: u64,
}

/// Sample means of return times; they stabilize in the positive recurrent
/// phase and keep growing at criticality. Reported as evidence only.
pub fn return_time_evidence(params: &ModelParams, k_max: usize, reps: u64, step_cap: u64, master: RngStream) -> ReturnTimeEvidence {
    let spec = RunSpec {
        horizon: step_cap,
        observers: Observers {
            tau: true,
            ..Default::default()
        },
        reflect_height: None,
        stop_at_tau: Some(k_max),
    };
    let runs: Vec<Option<Vec<u64>>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let t = run_with(params, &spec, &mut master.substream(rep).rng());
            (!t.censored).then_some(t.root_loop_times)
        })
        .collect();
    let complete: Vec<&Vec<u64>> = runs.iter().flatten().collect();
    let running_means = [k_max / 4, k_max / 2, k_max]
        .into_iter()
        .filter(|&k| k >= 1)
        .map(|k| {
            let m = complete.iter().map(|r| r[k - 1] as f64 / k as f64).sum::<f64>() / complete.len().max(1) as f64;
            (k, m)
        })
        .collect();
    ReturnTimeEvidence {
        running_means,
        censored_runs: reps - complete.len() as u64,
    }
}
