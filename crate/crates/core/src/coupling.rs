//! Monotone coupling of a (ρ,ν)-walk S with a (ρ̃,ν̃)-walk S̃ for ρ ≥ ρ̃ and
//! ν ≺ ν̃.
//!
//! S̃ evolves freely. S waits at its position v until S̃ sits at v and moves
//! either to the parent or to a child of v that already exists in S's tree;
//! S then copies the move, except that a copied child move is turned into a
//! parent move with probability `(ρ-ρ̃)/(ρ+x)`, where `x` is S's child count
//! at v. Both walks draw their k-th leaf batch at v from one shared uniform.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, OffspringDistribution};
use crate::rng::RngStream;
use crate::stats::{histogram, two_sample_chi_square, ChiSquareResult};
use crate::walker::{run, Observers, TreeArena, VertexId, ROOT};

/// Grid used to compare CDFs of distributions with unbounded support.
pub const DOMINANCE_GRID_CAP: u64 = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoupledConfig {
    pub dominant: ModelParams,
    pub dominated: ModelParams,
}

impl CoupledConfig {
    /// `dominant = (ρ, ν)` is the more recurrent walk S; `dominated = (ρ̃, ν̃)`
    /// is S̃.
    pub fn new(dominant: ModelParams, dominated: ModelParams) -> Result<Self> {
        if dominant.rho() < dominated.rho() {
            return Err(Error::DominanceViolated(format!(
                "rho = {} is smaller than rho_tilde = {}",
                dominant.rho(),
                dominated.rho()
            )));
        }
        if !dominant.nu().is_dominated_by(dominated.nu(), DOMINANCE_GRID_CAP) {
            return Err(Error::DominanceViolated(format!(
                "{} is not stochastically below {}",
                dominant.nu(),
                dominated.nu()
            )));
        }
        Ok(Self { dominant, dominated })
    }
}

/// `(F_ν^{-1}(U), F_ν̃^{-1}(U))` for one uniform `U`.
pub fn coupled_leaf_samples<R: Rng + ?Sized>(nu: &OffspringDistribution, nu_tilde: &OffspringDistribution, rng: &mut R) -> (u64, u64) {
    let u: f64 = rng.random();
    (nu.quantile(u), nu_tilde.quantile(u))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ContainmentCheck {
    pub vertex: VertexId,
    /// Children of the vertex in S's tree.
    pub x: u64,
    /// Children of the vertex in S̃'s tree.
    pub x_tilde: u64,
}

#[derive(Clone, Debug)]
pub struct CoupledTrace {
    /// Positions `S_0..S_n`, as ids in S̃'s arena.
    pub s_path: Vec<VertexId>,
    /// Positions `S̃_0..S̃_t`.
    pub s_tilde_path: Vec<VertexId>,
    /// S̃'s tree; S's tree is the subtree given by `s_child_counts`.
    pub arena: TreeArena,
    pub s_child_counts: Vec<u64>,
    /// Leaf pairs `(ξ_{k,v}, ξ̃_{k,v})` per vertex, by visit number.
    pub leaf_pairs: Vec<Vec<(u64, u64)>>,
    /// Pairs `(n, t_n)` at which S moved.
    pub sync_times: Vec<(u64, u64)>,
    /// Root-loop crossings of `(S_j)_{j ≤ n}` at each sync.
    pub root_crossings_s: Vec<u64>,
    /// Root-loop crossings of `(S̃_j)_{j ≤ t_n}` at each sync.
    pub root_crossings_s_tilde: Vec<u64>,
    pub containment: Vec<ContainmentCheck>,
    /// Maximal windows `[t_a, t_b]` of S̃ steps during which S stayed put.
    pub frozen_intervals: Vec<(u64, u64)>,
    /// S was waiting for S̃ when the run ended.
    pub frozen_at_horizon: bool,
    /// The run ended because S reached its step target.
    pub reached_s_target: bool,
}

impl CoupledTrace {
    pub fn s_steps(&self) -> u64 {
        self.s_path.len() as u64 - 1
    }

    pub fn s_tilde_steps(&self) -> u64 {
        self.s_tilde_path.len() as u64 - 1
    }

    pub fn s_height(&self, n: usize) -> Option<u32> {
        self.s_path.get(n).map(|&v| self.arena.height(v))
    }
}

struct Side {
    visits: Vec<u64>,
}

/// Runs the coupling for at most `horizon` steps of S̃, stopping early once S
/// has made `s_target` steps.
pub fn coupled_run<R: Rng + ?Sized>(config: &CoupledConfig, horizon: u64, s_target: Option<u64>, rng: &mut R) -> CoupledTrace {
    let (rho, rho_t) = (config.dominant.rho(), config.dominated.rho());
    let (nu, nu_t) = (config.dominant.nu(), config.dominated.nu());

    let mut arena = TreeArena::new();
    let mut leaf_pairs: Vec<Vec<(u64, u64)>> = vec![Vec::new()];
    let mut s_children: Vec<u64> = vec![0];
    let mut s_side = Side { visits: vec![0] };
    let mut t_side = Side { visits: vec![0] };

    let leaf = |pairs: &mut Vec<Vec<(u64, u64)>>, v: VertexId, k: u64, rng: &mut R| -> (u64, u64) {
        let list = &mut pairs[v as usize];
        while (list.len() as u64) < k {
            let pair = coupled_leaf_samples(nu, nu_t, rng);
            list.push(pair);
        }
        list[k as usize - 1]
    };

    let mut s_path = vec![ROOT];
    let mut t_path = vec![ROOT];
    let mut s_pos = ROOT;
    let mut t_pos = ROOT;
    let (mut s_root, mut t_root) = (0u64, 0u64);

    // S_0 = S̃_0 = o: both make their first visit and S draws its first batch
    s_side.visits[0] = 1;
    t_side.visits[0] = 1;
    s_children[0] += leaf(&mut leaf_pairs, ROOT, 1, rng).0;

    let mut trace_sync = Vec::new();
    let mut root_s = Vec::new();
    let mut root_t = Vec::new();
    let mut containment = Vec::new();
    let mut frozen = Vec::new();
    let mut frozen_since: Option<u64> = None;
    let mut reached = s_target == Some(0);

    let mut t = 0u64;
    while t < horizon && !reached {
        // S̃ adds its leaves at its current visit, then picks a move
        let k_t = t_side.visits[t_pos as usize];
        let xi_t = leaf(&mut leaf_pairs, t_pos, k_t, rng).1;
        arena.add_leaves(t_pos, xi_t);
        let x_t = arena.vertex(t_pos).child_count;
        let up = x_t == 0 || rng.random::<f64>() * (x_t as f64 + rho_t) < rho_t;
        let index = if up { 0 } else { rng.random_range(1..=x_t) };

        let sync = s_pos == t_pos && (up || index <= s_children[s_pos as usize]);
        let n = s_path.len() as u64 - 1;
        let mut s_up = false;
        if sync {
            if let Some(start) = frozen_since.take() {
                frozen.push((start, t - 1));
            }
            trace_sync.push((n, t));
            root_s.push(s_root);
            root_t.push(t_root);
            containment.push(ContainmentCheck {
                vertex: s_pos,
                x: s_children[s_pos as usize],
                x_tilde: x_t,
            });
            s_up = up || {
                let x = s_children[s_pos as usize] as f64;
                rng.random::<f64>() * (rho + x) < rho - rho_t
            };
        } else if frozen_since.is_none() {
            frozen_since = Some(t);
        }

        // move S̃
        let from = t_pos;
        t_pos = if up {
            arena.parent(from)
        } else {
            let before = arena.materialized();
            let c = arena.child_or_materialize(from, index, t + 1);
            if arena.materialized() > before {
                leaf_pairs.push(Vec::new());
                s_children.push(0);
                s_side.visits.push(0);
                t_side.visits.push(0);
            }
            c
        };
        if up {
            arena.vertex_mut(from).up_crossings += 1;
        }
        t_side.visits[t_pos as usize] += 1;
        arena.vertex_mut(t_pos).visits += 1;
        if from == ROOT && t_pos == ROOT {
            t_root += 1;
        }
        t_path.push(t_pos);
        t += 1;

        // move S
        if sync {
            let s_from = s_pos;
            s_pos = if s_up { arena.parent(from) } else { t_pos };
            s_side.visits[s_pos as usize] += 1;
            let k = s_side.visits[s_pos as usize];
            s_children[s_pos as usize] += leaf(&mut leaf_pairs, s_pos, k, rng).0;
            if s_from == ROOT && s_pos == ROOT {
                s_root += 1;
            }
            s_path.push(s_pos);
            if Some(s_path.len() as u64 - 1) == s_target {
                reached = true;
            }
        }
    }
    let frozen_at_horizon = !reached && frozen_since.is_some();
    if let Some(start) = frozen_since {
        frozen.push((start, t - 1));
    }

    CoupledTrace {
        s_path,
        s_tilde_path: t_path,
        arena,
        s_child_counts: s_children,
        leaf_pairs,
        sync_times: trace_sync,
        root_crossings_s: root_s,
        root_crossings_s_tilde: root_t,
        containment,
        frozen_intervals: frozen,
        frozen_at_horizon,
        reached_s_target: reached,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DominationReport {
    pub sync_checks: u64,
    pub ancestor_checks: u64,
    pub leaf_pairs_checked: u64,
    pub s_steps: u64,
    pub s_tilde_steps: u64,
    pub frozen_at_horizon: bool,
}

/// Recomputes every domination invariant from the raw paths and fails on the
/// first violation.
pub fn verify_domination(trace: &CoupledTrace) -> Result<DominationReport> {
    let fail = |msg: String| Err(Error::InvariantViolation(msg));
    let arena = &trace.arena;
    let mut leaf_pairs_checked = 0;
    for (v, pairs) in trace.leaf_pairs.iter().enumerate() {
        for (k, &(a, b)) in pairs.iter().enumerate() {
            if a > b {
                return fail(format!("leaf pair at vertex {v}, visit {}: {a} > {b}", k + 1));
            }
            leaf_pairs_checked += 1;
        }
    }

    // root-loop crossings recomputed from the paths
    let prefix_roots = |path: &[VertexId]| -> Vec<u64> {
        let mut acc = 0;
        let mut out = vec![0];
        for w in path.windows(2) {
            acc += u64::from(w[0] == ROOT && w[1] == ROOT);
            out.push(acc);
        }
        out
    };
    let s_roots = prefix_roots(&trace.s_path);
    let t_roots = prefix_roots(&trace.s_tilde_path);

    let mut ancestor_checks = 0;
    let mut prev_t: Option<u64> = None;
    for (i, &(n, t)) in trace.sync_times.iter().enumerate() {
        let (n, tu) = (n as usize, t as usize);
        let sv = trace.s_path[n];
        if sv != trace.s_tilde_path[tu] {
            return fail(format!("sync ({n}, {t}): S at {sv}, S̃ at {}", trace.s_tilde_path[tu]));
        }
        if s_roots[n] < t_roots[tu] {
            return fail(format!(
                "sync ({n}, {t}): S crossed the root loop {} times, S̃ {} times",
                s_roots[n], t_roots[tu]
            ));
        }
        if s_roots[n] != trace.root_crossings_s[i] || t_roots[tu] != trace.root_crossings_s_tilde[i] {
            return fail(format!("sync ({n}, {t}): recorded root counts disagree with the paths"));
        }
        let c = trace.containment[i];
        if c.vertex != sv || c.x > c.x_tilde {
            return fail(format!("sync ({n}, {t}): S has {} children at {sv}, S̃ has {}", c.x, c.x_tilde));
        }
        let start = prev_t.map_or(0, |p| p + 1);
        if let Some(s) = first_escape(arena, sv, &trace.s_tilde_path[start as usize..=tu]) {
            return fail(format!("sync ({n}, {t}): S_{n} is not an ancestor of S̃_{}", start + s as u64));
        }
        ancestor_checks += t + 1 - start;
        prev_t = Some(t);
    }
    // after the last sync S sits at its final position and still lies below S̃
    let last = *trace.s_path.last().unwrap();
    let start = prev_t.map_or(0, |p| p + 1) as usize;
    if start < trace.s_tilde_path.len() {
        if let Some(s) = first_escape(arena, last, &trace.s_tilde_path[start..]) {
            return fail(format!("after the last sync: S is not an ancestor of S̃_{}", start + s));
        }
        ancestor_checks += (trace.s_tilde_path.len() - start) as u64;
    }

    Ok(DominationReport {
        sync_checks: trace.sync_times.len() as u64,
        ancestor_checks,
        leaf_pairs_checked,
        s_steps: trace.s_steps(),
        s_tilde_steps: trace.s_tilde_steps(),
        frozen_at_horizon: trace.frozen_at_horizon,
    })
}

/// First index of the nearest-neighbor `window` outside the subtree of `v`.
/// The first entry is checked directly; afterwards the walk can only leave
/// the subtree by dropping below the height of `v`.
fn first_escape(arena: &TreeArena, v: VertexId, window: &[VertexId]) -> Option<usize> {
    if !arena.is_ancestor(v, window[0]) {
        return Some(0);
    }
    let h = arena.height(v);
    window.iter().position(|&u| arena.height(u) < h)
}

/// Comparison of `|S_n|` under the coupling with `|S_n|` of independent
/// walks at the dominant parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginalSpec {
    pub n: u64,
    pub coupled_runs: u64,
    pub direct_runs: u64,
    /// Cap on S̃ steps while waiting for S to reach `n`.
    pub s_tilde_cap: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalCheck {
    pub coupled_histogram: Vec<u64>,
    pub direct_histogram: Vec<u64>,
    pub spec: MarginalSpec,
    /// Coupled runs in which S did not reach `n` within the cap; excluded.
    pub censored: u64,
    pub chi_square: ChiSquareResult,
}

#[derive(Clone, Debug, Serialize)]
pub struct CouplingReport {
    pub config: CoupledConfig,
    pub runs: u64,
    pub horizon: u64,
    pub sync_checks: u64,
    pub runs_passed: u64,
    pub frozen_at_horizon: u64,
    pub first_failure: Option<(u64, String)>,
    pub marginal: Option<MarginalCheck>,
}

impl CouplingReport {
    pub fn all_dominated(&self) -> bool {
        self.runs_passed == self.runs
    }
}

/// Runs `runs` coupled trajectories of `horizon` S̃ steps, verifies each, and
/// optionally checks S's marginal law at a fixed step.
pub fn coupling_check(
    config: &CoupledConfig,
    runs: u64,
    horizon: u64,
    marginal: Option<MarginalSpec>,
    master: RngStream,
) -> CouplingReport {
    let dom = master.substream(0);
    let checks: Vec<std::result::Result<DominationReport, String>> = (0..runs)
        .into_par_iter()
        .map(|rep| {
            let trace = coupled_run(config, horizon, None, &mut dom.substream(rep).rng());
            verify_domination(&trace).map_err(|e| e.to_string())
        })
        .collect();
    let passed: Vec<&DominationReport> = checks.iter().filter_map(|c| c.as_ref().ok()).collect();
    let first_failure = checks
        .iter()
        .enumerate()
        .find_map(|(i, c)| c.as_ref().err().map(|m| (i as u64, m.clone())));
    let marginal = marginal.map(|spec| marginal_check(config, spec, master.substream(1), master.substream(2)));
    CouplingReport {
        config: config.clone(),
        runs,
        horizon,
        sync_checks: passed.iter().map(|r| r.sync_checks).sum(),
        runs_passed: passed.len() as u64,
        frozen_at_horizon: passed.iter().filter(|r| r.frozen_at_horizon).count() as u64,
        first_failure,
        marginal,
    }
}

fn marginal_check(config: &CoupledConfig, spec: MarginalSpec, coupled: RngStream, direct: RngStream) -> MarginalCheck {
    let n = spec.n;
    let coupled_heights: Vec<Option<u64>> = (0..spec.coupled_runs)
        .into_par_iter()
        .map(|rep| {
            let trace = coupled_run(config, spec.s_tilde_cap, Some(n), &mut coupled.substream(rep).rng());
            trace.s_height(n as usize).map(u64::from)
        })
        .collect();
    let direct_heights: Vec<u64> = (0..spec.direct_runs)
        .into_par_iter()
        .map(|rep| run(&config.dominant, n, &Observers::default(), &mut direct.substream(rep).rng()).final_height as u64)
        .collect();
    let censored = coupled_heights.iter().filter(|h| h.is_none()).count() as u64;
    let a = histogram(coupled_heights.into_iter().flatten());
    let b = histogram(direct_heights);
    let chi_square = two_sample_chi_square(&a, &b, None);
    MarginalCheck {
        spec,
        censored,
        chi_square,
        coupled_histogram: a,
        direct_histogram: b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(rho: f64, nu: OffspringDistribution) -> ModelParams {
        ModelParams::new(rho, nu).unwrap()
    }

    fn delta(m: u64) -> OffspringDistribution {
        OffspringDistribution::point_mass(m).unwrap()
    }

    #[test]
    fn leaf_samples_are_ordered() {
        let a = OffspringDistribution::bernoulli(0.3).unwrap();
        let b = OffspringDistribution::bernoulli(0.7).unwrap();
        let mut rng = RngStream::new(1, 0).rng();
        let mut sums = (0u64, 0u64);
        for _ in 0..1_000_000 {
            let (x, y) = coupled_leaf_samples(&a, &b, &mut rng);
            assert!(x <= y);
            sums.0 += x;
            sums.1 += y;
        }
        assert!((sums.0 as f64 / 1e6 - 0.3).abs() < 4.0 * (0.21f64 / 1e6).sqrt());
        assert!((sums.1 as f64 / 1e6 - 0.7).abs() < 4.0 * (0.21f64 / 1e6).sqrt());
        assert_eq!(coupled_leaf_samples(&delta(1), &delta(2), &mut rng), (1, 2));
        for _ in 0..1000 {
            let (x, y) = coupled_leaf_samples(&a, &a, &mut rng);
            assert_eq!(x, y);
        }
    }

    #[test]
    fn config_rejects_wrong_order() {
        let err = CoupledConfig::new(params(3.0, delta(1)), params(4.0, delta(1))).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("dominance precondition violated"));
        assert!(CoupledConfig::new(params(4.0, delta(2)), params(3.0, delta(1))).is_err());
        assert!(CoupledConfig::new(params(4.0, delta(1)), params(3.0, delta(2))).is_ok());
    }

    #[test]
    fn identical_parameters_move_together() {
        let p = params(2.0, OffspringDistribution::geometric(0.4).unwrap());
        let cfg = CoupledConfig::new(p.clone(), p).unwrap();
        let tr = coupled_run(&cfg, 5_000, None, &mut RngStream::new(2, 0).rng());
        assert_eq!(tr.s_path, tr.s_tilde_path);
        assert_eq!(tr.sync_times.len(), 5_000);
        assert!(tr.frozen_intervals.is_empty());
        assert!(tr.root_crossings_s.iter().zip(&tr.root_crossings_s_tilde).all(|(a, b)| a == b));
        verify_domination(&tr).unwrap();
    }

    #[test]
    fn domination_holds_for_bias_gap() {
        let cfg = CoupledConfig::new(params(4.0, delta(1)), params(3.0, delta(1))).unwrap();
        for rep in 0..50 {
            let tr = coupled_run(&cfg, 20_000, None, &mut RngStream::new(3, rep).rng());
            let report = verify_domination(&tr).unwrap();
            assert!(report.sync_checks > 0);
        }
    }

    #[test]
    fn domination_holds_for_leaf_gap() {
        let nu_t = OffspringDistribution::finite_pmf(vec![(2, 0.5), (4, 0.5)]).unwrap();
        let cfg = CoupledConfig::new(params(3.0, delta(2)), params(3.0, nu_t)).unwrap();
        for rep in 0..50 {
            let tr = coupled_run(&cfg, 20_000, None, &mut RngStream::new(4, rep).rng());
            verify_domination(&tr).unwrap();
        }
    }

    #[test]
    fn tampered_trace_is_rejected() {
        let cfg = CoupledConfig::new(params(4.0, delta(1)), params(3.0, delta(1))).unwrap();
        let mut tr = coupled_run(&cfg, 2_000, None, &mut RngStream::new(5, 0).rng());
        tr.containment[0].x = tr.containment[0].x_tilde + 1;
        let err = verify_domination(&tr).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn s_target_stops_the_run() {
        let cfg = CoupledConfig::new(params(4.0, delta(1)), params(3.0, delta(1))).unwrap();
        let tr = coupled_run(&cfg, 10_000_000, Some(100), &mut RngStream::new(6, 0).rng());
        assert!(tr.reached_s_target);
        assert_eq!(tr.s_steps(), 100);
        assert!(!tr.frozen_at_horizon);
    }

    #[test]
    fn coupling_check_reports_domination_and_marginal() {
        let cfg = CoupledConfig::new(params(4.0, delta(1)), params(3.0, delta(1))).unwrap();
        let spec = MarginalSpec {
            n: 100,
            coupled_runs: 1000,
            direct_runs: 4000,
            s_tilde_cap: 1_000_000,
        };
        let r = coupling_check(&cfg, 20, 10_000, Some(spec), RngStream::new(5, 0));
        assert!(r.all_dominated() && r.first_failure.is_none());
        let m = r.marginal.unwrap();
        assert!(m.censored < 20);
        assert!(m.chi_square.p_value > crate::stats::SIGNIFICANCE, "{:?}", m.chi_square);
    }
}
