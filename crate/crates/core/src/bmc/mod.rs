//! The branching Markov chain of local times.
//!
//! A particle of type k has as children the list `(Y_k^1, ..., Y_k^{N_k})`
//! of one urn run stopped at the k-th zero draw. Type 0 has no children.

mod matrix;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use matrix::{
    classify_regime, eigen_check, eigen_truncation_level, eigenvalue, generating_identity_check, generating_rhs,
    mean_matrix_closed_form, spectral_radius, EigenCheck, GeneratingCheck, IdentityReport, MeanMatrix, Regime,
    DEFAULT_POWER_ITERATIONS,
};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::{RngStream, SimRng};
use crate::stats::{proportion, MeanSe};
use crate::urn::{run_urn, UrnCaps, UrnRun, DEFAULT_URN_STEP_CAP};
use crate::walker::{local_time_profile, WalkTrace, ROOT};

/// Particles of one generation are processed in chunks of this size; the
/// population cap is checked between chunks.
const CHUNK: usize = 1024;

/// Offspring list of a type-`k` particle, zeros included.
pub fn sample_offspring(k: u64, params: &ModelParams, rng: &mut SimRng) -> Result<Vec<u64>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    match run_urn(params, k as usize, UrnCaps::default(), rng)? {
        UrnRun::Completed(obs) => Ok(obs.y),
        UrnRun::ColorCapReached { .. } => unreachable!("no color cap set"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BmcCaps {
    pub max_generations: usize,
    pub max_population: u64,
}

impl Default for BmcCaps {
    fn default() -> Self {
        Self {
            max_generations: 200,
            max_population: 1_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BmcOutcome {
    Extinct,
    SurvivedPopulationCap,
    SurvivedGenerationCap,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BmcRun {
    /// Generation 0 holds the initial particle. When the population cap is
    /// hit, the last generation is partial.
    pub generations: Vec<Vec<u64>>,
    pub outcome: BmcOutcome,
    /// Sum of types over all particles except the initial one.
    pub total_type_sum: u128,
    /// All particles ever created, including the initial one.
    pub total_particles: u64,
}

enum Generation {
    Complete(Vec<u64>),
    Overflow(Vec<u64>),
}

/// Offspring of `parents`, deterministic for a given `stream`: particle `i`
/// uses `stream.substream(i)`.
fn next_generation(parents: &[u64], params: &ModelParams, cap: u64, stream: RngStream) -> Result<Generation> {
    let mut next: Vec<u64> = Vec::new();
    for (c, chunk) in parents.chunks(CHUNK).enumerate() {
        let room = cap.saturating_sub(next.len() as u64);
        let urn_caps = UrnCaps {
            step_cap: DEFAULT_URN_STEP_CAP,
            color_cap: Some(room.saturating_add(1)),
        };
        let lists: Vec<Option<Vec<u64>>> = chunk
            .par_iter()
            .enumerate()
            .map(|(i, &k)| {
                if k == 0 {
                    return Ok(Some(Vec::new()));
                }
                let mut rng = stream.substream((c * CHUNK + i) as u64).rng();
                Ok(match run_urn(params, k as usize, urn_caps, &mut rng)? {
                    UrnRun::Completed(obs) => Some(obs.y),
                    UrnRun::ColorCapReached { .. } => None,
                })
            })
            .collect::<Result<_>>()?;
        let mut overflow = false;
        for list in lists {
            match list {
                Some(l) => next.extend(l),
                None => overflow = true,
            }
        }
        if overflow || next.len() as u64 > cap {
            return Ok(Generation::Overflow(next));
        }
    }
    Ok(Generation::Complete(next))
}

/// Simulates Z from one particle of type `initial` until extinction or a cap.
pub fn simulate(initial: u64, params: &ModelParams, caps: BmcCaps, stream: RngStream) -> Result<BmcRun> {
    run_bmc(initial, params, caps, stream, true)
}

fn run_bmc(initial: u64, params: &ModelParams, caps: BmcCaps, stream: RngStream, keep: bool) -> Result<BmcRun> {
    let mut generations = Vec::new();
    let mut current = vec![initial];
    let mut total_type_sum: u128 = 0;
    let mut total_particles: u64 = 1;
    let mut outcome = BmcOutcome::SurvivedGenerationCap;
    for g in 1..=caps.max_generations {
        let next = next_generation(&current, params, caps.max_population, stream.substream(g as u64))?;
        let (next, overflow) = match next {
            Generation::Complete(v) => (v, false),
            Generation::Overflow(v) => (v, true),
        };
        total_particles += next.len() as u64;
        total_type_sum += next.iter().map(|&t| t as u128).sum::<u128>();
        if keep {
            generations.push(std::mem::replace(&mut current, next));
        } else {
            current = next;
        }
        if overflow {
            outcome = BmcOutcome::SurvivedPopulationCap;
            break;
        }
        if current.is_empty() {
            outcome = BmcOutcome::Extinct;
            break;
        }
    }
    if keep {
        generations.push(current);
    }
    Ok(BmcRun {
        generations,
        outcome,
        total_type_sum,
        total_particles,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurvivalEstimate {
    pub k: u64,
    pub reps: u64,
    pub extinct: u64,
    pub survived: u64,
    pub undecided: u64,
    /// Survivors over decided runs.
    pub p_survive: f64,
    pub std_error: f64,
    pub ci: (f64, f64),
    pub undecided_fraction: f64,
}

impl SurvivalEstimate {
    pub fn as_mean_se(&self) -> MeanSe {
        MeanSe {
            mean: self.p_survive,
            std_error: self.std_error,
            n: (self.extinct + self.survived) as usize,
        }
    }
}

/// Fraction of runs from type `k` that reach the population cap. Runs that
/// stop at the generation cap are undecided and excluded from the ratio.
pub fn survival_probability(k: u64, params: &ModelParams, reps: u64, caps: BmcCaps, master: RngStream) -> Result<SurvivalEstimate> {
    let outcomes: Vec<BmcOutcome> = (0..reps)
        .into_par_iter()
        .map(|rep| Ok(run_bmc(k, params, caps, master.substream(rep), false)?.outcome))
        .collect::<Result<_>>()?;
    let count = |o: BmcOutcome| outcomes.iter().filter(|&&x| x == o).count() as u64;
    let extinct = count(BmcOutcome::Extinct);
    let survived = count(BmcOutcome::SurvivedPopulationCap);
    let undecided = count(BmcOutcome::SurvivedGenerationCap);
    let decided = extinct + survived;
    let est = if decided > 0 {
        proportion(survived, decided)
    } else {
        MeanSe {
            mean: f64::NAN,
            std_error: f64::NAN,
            n: 0,
        }
    };
    Ok(SurvivalEstimate {
        k,
        reps,
        extinct,
        survived,
        undecided,
        p_survive: est.mean,
        std_error: est.std_error,
        ci: est.ci95(),
        undecided_fraction: undecided as f64 / reps as f64,
    })
}

/// The realization of Z read off a walk stopped at τ_k: each vertex carries
/// type `L(v, k)` (root: `k`) and its children are all its leaves at τ_k,
/// visited or not.
pub fn bmc_from_local_times(trace: &WalkTrace, k: usize) -> Result<BmcRun> {
    let profile = local_time_profile(trace, k)?;
    if trace.steps != profile.tau_k {
        return Err(Error::InvalidParams(
            "the trace must stop at tau_k so that child counts are those at tau_k".into(),
        ));
    }
    let arena = trace.arena.as_ref().ok_or(Error::LocalTimesNotRecorded)?;
    let mut generations = vec![vec![k as u64]];
    let mut frontier: Vec<Option<u32>> = vec![Some(ROOT)];
    let mut total_type_sum: u128 = 0;
    let mut total_particles: u64 = 1;
    loop {
        let mut types = Vec::new();
        let mut next = Vec::new();
        for v in frontier.iter().flatten() {
            for index in 1..=arena.vertex(*v).child_count {
                let child = arena.child(*v, index);
                types.push(child.map_or(0, |c| profile.get(c)));
                next.push(child);
            }
        }
        if types.is_empty() {
            generations.push(types);
            break;
        }
        total_particles += types.len() as u64;
        total_type_sum += types.iter().map(|&t| t as u128).sum::<u128>();
        generations.push(types);
        frontier = next;
    }
    Ok(BmcRun {
        generations,
        outcome: BmcOutcome::Extinct,
        total_type_sum,
        total_particles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OffspringDistribution;
    use crate::stats::mean_se;
    use crate::urn::run_until_kth_zero;
    use crate::walker::{run_reflected, DEFAULT_STEP_CAP};

    fn delta1(rho: f64) -> ModelParams {
        ModelParams::new(rho, OffspringDistribution::point_mass(1).unwrap()).unwrap()
    }

    #[test]
    fn type_zero_has_no_children() {
        let mut rng = RngStream::new(0, 0).rng();
        assert!(sample_offspring(0, &delta1(3.0), &mut rng).unwrap().is_empty());
        let run = simulate(0, &delta1(3.0), BmcCaps::default(), RngStream::new(0, 0)).unwrap();
        assert_eq!(run.outcome, BmcOutcome::Extinct);
        assert_eq!(run.total_type_sum, 0);
        assert_eq!(run.generations.len(), 2);
    }

    #[test]
    fn offspring_equals_urn_lists_for_equal_seeds() {
        let p = delta1(3.0);
        for rep in 0..100 {
            let a = sample_offspring(2, &p, &mut RngStream::new(4, rep).rng()).unwrap();
            let b = run_until_kth_zero(&p, 2, DEFAULT_URN_STEP_CAP, &mut RngStream::new(4, rep).rng()).unwrap();
            assert_eq!(a, b.y);
        }
    }

    #[test]
    fn type_one_irreducibility_bound_and_mean_length() {
        let p = delta1(3.0);
        let n = 100_000;
        let mut with_one = 0u64;
        let mut lengths = Vec::with_capacity(n);
        for rep in 0..n as u64 {
            let list = sample_offspring(1, &p, &mut RngStream::new(5, rep).rng()).unwrap();
            if list.contains(&1) {
                with_one += 1;
            }
            lengths.push(list.len() as f64);
        }
        let f = proportion(with_one, n as u64);
        assert!(f.mean + 4.0 * f.std_error >= 3.0 / 16.0);
        assert!(mean_se(&lengths).z_score(1.5).abs() < 4.0);
    }

    #[test]
    fn monte_carlo_matches_mean_matrix() {
        let p = delta1(3.0);
        let m = mean_matrix_closed_form(&p, 5).unwrap();
        let reps = 100_000u64;
        for i in 1..=5u64 {
            let lists: Vec<Vec<u64>> = (0..reps)
                .into_par_iter()
                .map(|rep| sample_offspring(i, &p, &mut RngStream::new(6 + i, rep).rng()).unwrap())
                .collect();
            for j in 1..=5u64 {
                let xs: Vec<f64> = lists.iter().map(|l| l.iter().filter(|&&y| y == j).count() as f64).collect();
                let est = mean_se(&xs);
                let z = est.z_score(m.get(i as usize, j as usize));
                assert!(z.abs() < 4.0, "M[{i},{j}]: {est:?} vs {}", m.get(i as usize, j as usize));
            }
        }
    }

    #[test]
    fn subcritical_runs_die_out() {
        let est = survival_probability(1, &delta1(4.0), 2_000, BmcCaps::default(), RngStream::new(7, 0)).unwrap();
        assert_eq!(est.survived, 0);
        assert_eq!(est.undecided, 0);
    }

    #[test]
    fn supercritical_runs_survive_with_positive_probability() {
        let caps = BmcCaps {
            max_generations: 200,
            max_population: 10_000,
        };
        let est = survival_probability(1, &delta1(2.5), 4_000, caps, RngStream::new(8, 0)).unwrap();
        assert!(est.p_survive - 4.0 * est.std_error > 0.0, "{est:?}");
    }

    #[test]
    fn simulation_is_deterministic() {
        let caps = BmcCaps {
            max_generations: 50,
            max_population: 5_000,
        };
        let a = simulate(2, &delta1(2.8), caps, RngStream::new(9, 3)).unwrap();
        let b = simulate(2, &delta1(2.8), caps, RngStream::new(9, 3)).unwrap();
        assert_eq!(a, b);
        let counted: u64 = a.generations.iter().map(|g| g.len() as u64).sum();
        assert_eq!(counted, a.total_particles);
    }

    #[test]
    fn walk_realization_links_tau_to_total_type_sum() {
        let p = delta1(3.0);
        for rep in 0..300 {
            let t = run_reflected(&p, 3, 2, DEFAULT_STEP_CAP, &mut RngStream::new(11, rep).rng()).unwrap();
            let z = bmc_from_local_times(&t, 2).unwrap();
            assert_eq!(z.generations[0], vec![2]);
            assert_eq!(z.generations[1].len() as u64, t.root_degree_at_tau[1]);
            assert_eq!(t.tau(2).unwrap() as u128, 2 + 2 * z.total_type_sum);
            // reflected at height 3: particles live in generations 0..=3
            assert!(z.generations.len() <= 5);
        }
    }
}
