use rayon::prelude::*;
use serde::Serialize;

use crate::bmc::sample_offspring;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::RngStream;
use crate::stats::{histogram, two_sample_chi_square, ChiSquareResult};
use crate::walker::{local_time_profile, run_reflected, DEFAULT_STEP_CAP, ROOT};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RayKnightReport {
    pub d: u32,
    pub k: usize,
    pub reps: u64,
    /// Runs in which `τ_k = k + 2 Σ_v L(v, k)` held exactly.
    pub identity_passed: u64,
    pub identity_failures: Vec<u64>,
    /// Histograms indexed by value: local times of the height-1 vertices
    /// (unvisited children included) and first-generation types of Z.
    pub walker_gen1: Vec<u64>,
    pub bmc_gen1: Vec<u64>,
    pub gen1_test: ChiSquareResult,
    /// Same comparison one level deeper.
    pub walker_gen2: Vec<u64>,
    pub bmc_gen2: Vec<u64>,
    pub gen2_test: Option<ChiSquareResult>,
}

impl RayKnightReport {
    pub fn identity_holds(&self) -> bool {
        self.identity_passed == self.reps
    }
}

struct WalkerSide {
    identity: bool,
    gen1: Vec<u64>,
    gen2: Vec<u64>,
}

fn walker_side(params: &ModelParams, d: u32, k: usize, stream: RngStream) -> Result<WalkerSide> {
    let trace = run_reflected(params, d, k, DEFAULT_STEP_CAP, &mut stream.rng())?;
    let profile = local_time_profile(&trace, k)?;
    let arena = trace.arena.as_ref().ok_or(Error::LocalTimesNotRecorded)?;
    let identity = profile.tau_k == k as u64 + 2 * profile.total();
    let local = |v: Option<u32>| v.map_or(0, |v| profile.get(v));
    let mut gen1 = Vec::new();
    let mut gen2 = Vec::new();
    for i in 0..arena.vertex(ROOT).child_count {
        let child = arena.child(ROOT, i);
        gen1.push(local(child));
        if let Some(u) = child {
            for j in 0..arena.vertex(u).child_count {
                gen2.push(local(arena.child(u, j)));
            }
        }
    }
    Ok(WalkerSide { identity, gen1, gen2 })
}

fn bmc_side(params: &ModelParams, k: usize, stream: RngStream) -> Result<(Vec<u64>, Vec<u64>)> {
    let mut rng = stream.rng();
    let gen1 = sample_offspring(k as u64, params, &mut rng)?;
    let mut gen2 = Vec::new();
    for &y in &gen1 {
        gen2.extend(sample_offspring(y, params, &mut rng)?);
    }
    Ok((gen1, gen2))
}

/// Compares local times of walks reflected at height `d` with the branching
/// Markov chain started from one type-`k` particle.
pub fn ray_knight_compare(params: &ModelParams, d: u32, k: usize, reps: u64, master: RngStream) -> Result<RayKnightReport> {
    if !(2..=3).contains(&d) {
        return Err(Error::InvalidParams(format!("reflection height d = {d} must be 2 or 3")));
    }
    if k == 0 || k > 3 {
        return Err(Error::InvalidParams(format!("k = {k} must lie in 1..=3")));
    }
    params.finite_nu_bar("ray_knight_compare")?;
    let walks = master.substream(0);
    let chains = master.substream(1);
    let walker: Vec<WalkerSide> = (0..reps)
        .into_par_iter()
        .map(|rep| walker_side(params, d, k, walks.substream(rep)))
        .collect::<Result<_>>()?;
    let bmc: Vec<(Vec<u64>, Vec<u64>)> = (0..reps)
        .into_par_iter()
        .map(|rep| bmc_side(params, k, chains.substream(rep)))
        .collect::<Result<_>>()?;

    let identity_failures: Vec<u64> = walker
        .iter()
        .enumerate()
        .filter(|(_, w)| !w.identity)
        .map(|(i, _)| i as u64)
        .collect();
    let walker_gen1 = histogram(walker.iter().flat_map(|w| w.gen1.iter().copied()));
    let walker_gen2 = histogram(walker.iter().flat_map(|w| w.gen2.iter().copied()));
    let bmc_gen1 = histogram(bmc.iter().flat_map(|b| b.0.iter().copied()));
    let bmc_gen2 = histogram(bmc.iter().flat_map(|b| b.1.iter().copied()));
    let gen1_test = two_sample_chi_square(&walker_gen1, &bmc_gen1, None);
    let nonempty = |h: &[u64]| h.iter().any(|&c| c > 0);
    let gen2_test = (nonempty(&walker_gen2) && nonempty(&bmc_gen2)).then(|| two_sample_chi_square(&walker_gen2, &bmc_gen2, None));
    Ok(RayKnightReport {
        d,
        k,
        reps,
        identity_passed: reps - identity_failures.len() as u64,
        identity_failures,
        walker_gen1,
        bmc_gen1,
        gen1_test,
        walker_gen2,
        bmc_gen2,
        gen2_test,
    })
}
