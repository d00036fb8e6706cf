//! The urn describing the walk's dynamics at a fixed vertex.
//!
//! Color 0 carries weight ρ; every other color is a single ball, created in
//! batches of ξ ~ ν before each draw. Colors are identified by creation rank.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::negbin_pmf;
use crate::rng::RngStream;
use crate::stats::{mean_se, MeanSe};

pub const DEFAULT_URN_STEP_CAP: u64 = 1_000_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct UrnState {
    pub zero_weight: f64,
    pub nonzero_colors: u64,
    /// `draw_counts[j - 1]` is the number of draws of color `j`.
    pub draw_counts: Vec<u64>,
    pub step: u64,
    pub zero_draws: u64,
}

impl UrnState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            zero_weight: params.rho(),
            nonzero_colors: 0,
            draw_counts: Vec::new(),
            step: 0,
            zero_draws: 0,
        }
    }
}

/// One urn step: add ξ new colors, then draw. Returns the drawn color.
#[inline]
pub fn urn_step<R: Rng + ?Sized>(state: &mut UrnState, params: &ModelParams, rng: &mut R) -> u64 {
    let xi = params.nu().sample(rng);
    state.nonzero_colors += xi;
    state.step += 1;
    let c = state.nonzero_colors;
    if c == 0 || rng.random::<f64>() * (state.zero_weight + c as f64) < state.zero_weight {
        state.zero_draws += 1;
        return 0;
    }
    let j = rng.random_range(1..=c);
    let idx = (j - 1) as usize;
    if idx >= state.draw_counts.len() {
        state.draw_counts.resize(c as usize, 0);
    }
    state.draw_counts[idx] += 1;
    j
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UrnObservation {
    pub k: usize,
    pub theta_k: u64,
    pub n_k: u64,
    /// `y[j - 1] = Y_k^j`, including colors never drawn.
    pub y: Vec<u64>,
    /// `N_1, ..., N_k` along this run.
    pub n_history: Vec<u64>,
}

/// Termination limits for a single urn run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UrnCaps {
    pub step_cap: u64,
    /// Stop early once this many nonzero colors exist. Since `N_k` is at least
    /// the current color count, this bounds the offspring list length.
    pub color_cap: Option<u64>,
}

impl Default for UrnCaps {
    fn default() -> Self {
        Self {
            step_cap: DEFAULT_URN_STEP_CAP,
            color_cap: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UrnRun {
    Completed(UrnObservation),
    ColorCapReached { colors: u64, step: u64 },
}

pub fn run_urn<R: Rng + ?Sized>(params: &ModelParams, k: usize, caps: UrnCaps, rng: &mut R) -> Result<UrnRun> {
    if k == 0 {
        return Err(Error::InvalidParams("urn runs need k >= 1".into()));
    }
    params.finite_nu_bar("the urn run")?;
    let mut state = UrnState::new(params);
    let mut n_history = Vec::with_capacity(k);
    while state.zero_draws < k as u64 {
        if state.step >= caps.step_cap {
            return Err(Error::UrnCapExceeded { cap: caps.step_cap });
        }
        if urn_step(&mut state, params, rng) == 0 {
            n_history.push(state.nonzero_colors);
        }
        if let Some(cap) = caps.color_cap {
            if state.nonzero_colors >= cap {
                return Ok(UrnRun::ColorCapReached {
                    colors: state.nonzero_colors,
                    step: state.step,
                });
            }
        }
    }
    let mut y = state.draw_counts;
    y.resize(state.nonzero_colors as usize, 0);
    Ok(UrnRun::Completed(UrnObservation {
        k,
        theta_k: state.step,
        n_k: state.nonzero_colors,
        y,
        n_history,
    }))
}

/// Runs the urn until color 0 has been drawn `k` times.
pub fn run_until_kth_zero<R: Rng + ?Sized>(
    params: &ModelParams,
    k: usize,
    step_cap: u64,
    rng: &mut R,
) -> Result<UrnObservation> {
    let caps = UrnCaps {
        step_cap,
        color_cap: None,
    };
    match run_urn(params, k, caps, rng)? {
        UrnRun::Completed(obs) => Ok(obs),
        UrnRun::ColorCapReached { .. } => unreachable!("no color cap set"),
    }
}

/// The modified urn: starts with r ~ ν colors and adds ξ ~ ν new colors only
/// after nonzero draws. Returns the color count at the `k`-th zero draw.
pub fn modified_urn_run<R: Rng + ?Sized>(params: &ModelParams, k: usize, step_cap: u64, rng: &mut R) -> Result<u64> {
    if k == 0 {
        return Err(Error::InvalidParams("urn runs need k >= 1".into()));
    }
    let rho = params.rho();
    let mut colors = params.nu().sample(rng);
    let mut zeros = 0usize;
    let mut steps = 0u64;
    while zeros < k {
        if steps >= step_cap {
            return Err(Error::UrnCapExceeded { cap: step_cap });
        }
        steps += 1;
        if colors == 0 || rng.random::<f64>() * (rho + colors as f64) < rho {
            zeros += 1;
        } else {
            colors += params.nu().sample(rng);
        }
    }
    Ok(colors)
}

/// `ν̄ (ρ / (ρ - ν̄))^k`.
pub fn en_closed_form(params: &ModelParams, k: usize) -> Result<f64> {
    let (rho, nu_bar) = require_rho_gt_nubar(params)?;
    Ok(nu_bar * (rho / (rho - nu_bar)).powi(k as i32))
}

pub(crate) fn require_rho_gt_nubar(params: &ModelParams) -> Result<(f64, f64)> {
    let nu_bar = params.finite_nu_bar("this closed form")?;
    let rho = params.rho();
    if rho <= nu_bar {
        return Err(Error::RequiresRhoGtNubar { rho, nu_bar });
    }
    Ok((rho, nu_bar))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnRow {
    pub k: usize,
    pub mc_estimate: f64,
    pub std_error: f64,
    pub closed_form: f64,
    pub z_score: f64,
}

/// Monte Carlo estimates of `E[N_k - N_{k-1}]` for `k = 1..=k_max` against
/// the closed form. Each `k` uses its own `reps` independent runs drawn from
/// `master.substream(k)`.
pub fn en_increment_check(params: &ModelParams, k_max: usize, reps: u64, master: RngStream) -> Result<Vec<EnRow>> {
    require_rho_gt_nubar(params)?;
    (1..=k_max)
        .map(|k| {
            let base = master.substream(k as u64);
            let incs: Vec<f64> = (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = base.substream(rep).rng();
                    let obs = run_until_kth_zero(params, k, DEFAULT_URN_STEP_CAP, &mut rng)?;
                    let prev = if k >= 2 { obs.n_history[k - 2] } else { 0 };
                    Ok((obs.n_k - prev) as f64)
                })
                .collect::<Result<_>>()?;
            let est = mean_se(&incs);
            let closed_form = en_closed_form(params, k)?;
            Ok(EnRow {
                k,
                mc_estimate: est.mean,
                std_error: est.std_error,
                closed_form,
                z_score: est.z_score(closed_form),
            })
        })
        .collect()
}

pub fn write_en_report<W: std::io::Write>(rows: &[EnRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FunctionalEstimate {
    pub mc: MeanSe,
    pub closed_form: f64,
}

/// `ν̄ Σ_{j=1}^k E[f(ζ_1 + ... + ζ_j)] (ρ/(ρ-ν̄))^{k+1-j}` with ζ geometric,
/// `P(ζ = y) = p (1-p)^y`, `p = ρ/(1+ρ)`. `f` is zero beyond its table.
pub fn offspring_functional_closed_form(params: &ModelParams, f: &[f64], k: usize) -> Result<f64> {
    let (rho, nu_bar) = require_rho_gt_nubar(params)?;
    let p = rho / (1.0 + rho);
    let r = rho / (rho - nu_bar);
    let mut total = 0.0;
    for j in 1..=k {
        let expectation: f64 = f
            .iter()
            .enumerate()
            .map(|(y, &fy)| if fy == 0.0 { 0.0 } else { fy * negbin_pmf(y as u64, j as u64, p) })
            .sum();
        total += expectation * r.powi((k + 1 - j) as i32);
    }
    Ok(nu_bar * total)
}

/// Monte Carlo estimate of `E[Σ_{i=1}^{N_k} f(Y_k^i)]` next to its closed form.
pub fn mean_offspring_functional(
    params: &ModelParams,
    f: &[f64],
    k: usize,
    reps: u64,
    master: RngStream,
) -> Result<FunctionalEstimate> {
    let closed_form = offspring_functional_closed_form(params, f, k)?;
    let values: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = master.substream(rep).rng();
            let obs = run_until_kth_zero(params, k, DEFAULT_URN_STEP_CAP, &mut rng)?;
            Ok(obs.y.iter().map(|&y| f.get(y as usize).copied().unwrap_or(0.0)).sum())
        })
        .collect::<Result<_>>()?;
    Ok(FunctionalEstimate {
        mc: mean_se(&values),
        closed_form,
    })
}

/// Indicator table of `{· = j}`.
pub fn indicator(j: usize) -> Vec<f64> {
    let mut f = vec![0.0; j + 1];
    f[j] = 1.0;
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OffspringDistribution;

    fn delta1(rho: f64) -> ModelParams {
        ModelParams::new(rho, OffspringDistribution::point_mass(1).unwrap()).unwrap()
    }

    #[test]
    fn closed_form_values() {
        let p = delta1(3.0);
        assert!((en_closed_form(&p, 1).unwrap() - 1.5).abs() < 1e-15);
        assert!((en_closed_form(&p, 3).unwrap() - 27.0 / 8.0).abs() < 1e-15);
        let b = ModelParams::new(2.0, OffspringDistribution::bernoulli(0.5).unwrap()).unwrap();
        assert!((en_closed_form(&b, 2).unwrap() - 8.0 / 9.0).abs() < 1e-15);
        assert!(matches!(en_closed_form(&delta1(1.0), 1), Err(Error::RequiresRhoGtNubar { .. })));
    }

    #[test]
    fn functional_closed_form_values() {
        let p = delta1(3.0);
        assert!((offspring_functional_closed_form(&p, &indicator(0), 1).unwrap() - 9.0 / 8.0).abs() < 1e-15);
        assert!((offspring_functional_closed_form(&p, &indicator(1), 1).unwrap() - 9.0 / 32.0).abs() < 1e-15);
        assert_eq!(offspring_functional_closed_form(&p, &[0.0; 5], 3).unwrap(), 0.0);
    }

    #[test]
    fn zero_weight_draw_probability() {
        // rho = 3 with one color present: P(color 0) = 3/4
        let p = ModelParams::new(3.0, OffspringDistribution::bernoulli(1e-12).unwrap()).unwrap();
        let n = 200_000;
        let mut zeros = 0;
        let mut rng = RngStream::new(5, 0).rng();
        for _ in 0..n {
            let mut s = UrnState::new(&p);
            s.nonzero_colors = 1;
            if urn_step(&mut s, &p, &mut rng) == 0 {
                zeros += 1;
            }
        }
        let f = zeros as f64 / n as f64;
        assert!((f - 0.75).abs() < 4.0 * (0.75f64 * 0.25 / n as f64).sqrt());
    }

    #[test]
    fn empty_urn_draws_zero() {
        let p = ModelParams::new(2.0, OffspringDistribution::bernoulli(1e-12).unwrap()).unwrap();
        let obs = run_until_kth_zero(&p, 1, 10, &mut RngStream::new(0, 0).rng()).unwrap();
        assert_eq!((obs.theta_k, obs.n_k), (1, 0));
        assert!(obs.y.is_empty());
    }

    #[test]
    fn counting_identities() {
        let p = ModelParams::new(2.5, OffspringDistribution::geometric(0.5).unwrap()).unwrap();
        for rep in 0..500 {
            let obs = run_until_kth_zero(&p, 4, DEFAULT_URN_STEP_CAP, &mut RngStream::new(1, rep).rng()).unwrap();
            assert_eq!(obs.y.iter().sum::<u64>() + 4, obs.theta_k);
            assert_eq!(obs.y.len() as u64, obs.n_k);
            assert!(obs.n_history.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(*obs.n_history.last().unwrap(), obs.n_k);
        }
    }

    #[test]
    fn ball_count_matches_leaf_sum_for_point_mass() {
        // with ν = δ_2 exactly two colors are created per step
        let p = ModelParams::new(5.0, OffspringDistribution::point_mass(2).unwrap()).unwrap();
        let obs = run_until_kth_zero(&p, 3, DEFAULT_URN_STEP_CAP, &mut RngStream::new(2, 0).rng()).unwrap();
        assert_eq!(obs.n_k, 2 * obs.theta_k);
    }

    #[test]
    fn conditional_zero_frequency_by_color_count() {
        let rho = 3.0;
        let p = delta1(rho);
        let mut rng = RngStream::new(6, 0).rng();
        let mut zeros = [0u64; 21];
        let mut totals = [0u64; 21];
        // fresh urns keep the color count small, so every stratum is populated
        let mut steps = 0;
        while steps < 1_000_000 {
            let mut s = UrnState::new(&p);
            for _ in 0..20 {
                let drawn = urn_step(&mut s, &p, &mut rng);
                let c = s.nonzero_colors as usize;
                totals[c] += 1;
                if drawn == 0 {
                    zeros[c] += 1;
                }
                steps += 1;
            }
        }
        for c in 1..=20 {
            let expected = rho / (rho + c as f64);
            let n = totals[c] as f64;
            let f = zeros[c] as f64 / n;
            let se = (expected * (1.0 - expected) / n).sqrt();
            assert!((f - expected).abs() < 4.0 * se, "c = {c}: {f} vs {expected}");
        }
    }

    #[test]
    fn modified_urn_means() {
        let p = delta1(3.0);
        for (k, expected) in [(1, 1.5), (2, 2.25)] {
            let xs: Vec<f64> = (0..100_000)
                .map(|rep| modified_urn_run(&p, k, DEFAULT_URN_STEP_CAP, &mut RngStream::new(40 + k as u64, rep).rng()).unwrap() as f64)
                .collect();
            let m = mean_se(&xs);
            assert!(m.z_score(expected).abs() < 4.0, "k = {k}: {m:?}");
        }
    }

    #[test]
    fn mean_first_color_count() {
        let p = delta1(3.0);
        let xs: Vec<f64> = (0..100_000)
            .map(|rep| run_until_kth_zero(&p, 1, DEFAULT_URN_STEP_CAP, &mut RngStream::new(8, rep).rng()).unwrap().n_k as f64)
            .collect();
        assert!(mean_se(&xs).z_score(1.5).abs() < 4.0);
    }

    #[test]
    fn original_increment_matches_modified_urn() {
        let p = ModelParams::new(2.0, OffspringDistribution::bernoulli(0.5).unwrap()).unwrap();
        let rows = en_increment_check(&p, 2, 50_000, RngStream::new(9, 0)).unwrap();
        let modified: Vec<f64> = (0..50_000)
            .map(|rep| modified_urn_run(&p, 2, DEFAULT_URN_STEP_CAP, &mut RngStream::new(10, rep).rng()).unwrap() as f64)
            .collect();
        let m = mean_se(&modified);
        let diff = rows[1].mc_estimate - m.mean;
        let se = (rows[1].std_error.powi(2) + m.std_error.powi(2)).sqrt();
        assert!(diff.abs() < 4.0 * se);
        assert!(rows.iter().all(|r| r.z_score.abs() < 4.0));
    }

    #[test]
    fn color_cap_stops_early() {
        let p = delta1(0.5);
        let caps = UrnCaps {
            step_cap: DEFAULT_URN_STEP_CAP,
            color_cap: Some(50),
        };
        let out = run_urn(&p, 10, caps, &mut RngStream::new(3, 0).rng()).unwrap();
        assert!(matches!(out, UrnRun::ColorCapReached { colors: 50, .. }));
    }

    #[test]
    fn step_cap_is_an_error() {
        let p = delta1(0.5);
        let err = run_until_kth_zero(&p, 50, 100, &mut RngStream::new(3, 0).rng()).unwrap_err();
        assert!(matches!(err, Error::UrnCapExceeded { cap: 100 }));
    }

    #[test]
    fn report_csv_columns() {
        let rows = vec![EnRow {
            k: 1,
            mc_estimate: 1.5,
            std_error: 0.01,
            closed_form: 1.5,
            z_score: 0.0,
        }];
        let mut buf = Vec::new();
        write_en_report(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,mc_estimate,std_error,closed_form,z_score\n"));
    }
}
