//! The biased tree builder random walk on a lazily materialized tree.
//!
//! At each step the walker first attaches ξ ~ ν leaves to its position, then
//! moves to the parent with probability ρ/(k+ρ) or to each of the k children
//! with probability 1/(k+ρ). At the root the parent move is the root loop.

mod arena;
mod cuts;

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

pub use arena::{TreeArena, VertexId, VertexRecord, ROOT};
pub use cuts::{detect_cut_times, detect_cut_times_in, CutTimeOptions, CutTimeRecord};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Default step budget for walks that run until a root-loop crossing.
pub const DEFAULT_STEP_CAP: u64 = 1_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepOutcome {
    pub to: VertexId,
    /// The move went to the parent (the root loop when taken at the root).
    pub up: bool,
    /// The destination was materialized by this move.
    pub new_vertex: bool,
    pub leaves_added: u64,
}

/// Performs one step from `position`: attach leaves, then move.
///
/// `step_index` is the time `n + 1` reached by this move and is stored as the
/// creation step of a newly materialized child.
#[inline]
pub fn step<R: Rng + ?Sized>(
    arena: &mut TreeArena,
    position: VertexId,
    params: &ModelParams,
    step_index: u64,
    rng: &mut R,
) -> StepOutcome {
    let xi = params.nu().sample(rng);
    arena.add_leaves(position, xi);
    let k = arena.vertex(position).child_count;
    let rho = params.rho();
    let total = k as f64 + rho;
    debug_assert!((rho / total + k as f64 * (1.0 / total) - 1.0).abs() < 1e-12);
    if k == 0 || rng.random::<f64>() * total < rho {
        return StepOutcome {
            to: arena.parent(position),
            up: true,
            new_vertex: false,
            leaves_added: xi,
        };
    }
    let index = rng.random_range(1..=k);
    let before = arena.materialized();
    let to = arena.child_or_materialize(position, index, step_index);
    StepOutcome {
        to,
        up: false,
        new_vertex: arena.materialized() > before,
        leaves_added: xi,
    }
}

/// Which observables a run records. Checkpoint samples always carry the
/// height, the tree height `|T_n|` and the range `R_n`.
#[derive(Clone, Debug, Default)]
pub struct Observers {
    /// Per-step heights `|S_n|` together with first-visit flags.
    pub heights: bool,
    /// Root-loop crossing times τ_k.
    pub tau: bool,
    /// Root degree at each τ_k (implies `tau`).
    pub root_degree: bool,
    /// Full position path and the final arena, for local-time queries.
    pub local_times: bool,
    /// Steps at which to record a [`CheckpointSample`]; need not be sorted.
    pub checkpoints: Vec<u64>,
}

impl Observers {
    pub fn with_checkpoints(mut self, checkpoints: Vec<u64>) -> Self {
        self.checkpoints = checkpoints;
        self
    }

    /// Checkpoints every `stride` steps up to `horizon`, always including 0
    /// and `horizon`.
    pub fn stride_checkpoints(stride: u64, horizon: u64) -> Vec<u64> {
        let stride = stride.max(1);
        let mut v: Vec<u64> = (0..=horizon / stride).map(|i| i * stride).collect();
        if *v.last().unwrap() != horizon {
            v.push(horizon);
        }
        v
    }

    /// Roughly `per_decade` log-spaced checkpoints in `[1, horizon]`.
    pub fn log_checkpoints(horizon: u64, per_decade: u32) -> Vec<u64> {
        let mut v = Vec::new();
        if horizon == 0 {
            return vec![0];
        }
        let decades = (horizon as f64).log10();
        let count = (decades * per_decade as f64).ceil() as u32;
        for i in 0..=count {
            let x = 10f64.powf(i as f64 / per_decade as f64).round() as u64;
            if x <= horizon {
                v.push(x);
            }
        }
        v.push(horizon);
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CheckpointSample {
    pub step: u64,
    pub height: u32,
    /// `|T_n|`, the height of the whole tree including unvisited leaves.
    pub max_height: u32,
    /// `R_n`, the number of distinct visited vertices.
    pub range: u64,
}

#[derive(Clone, Debug)]
pub struct WalkTrace {
    pub horizon: u64,
    /// Steps actually performed.
    pub steps: u64,
    /// The run ended by exhausting its step budget instead of reaching its
    /// stopping target; τ-dependent quantities beyond `steps` are unknown.
    pub censored: bool,
    pub reflect_height: Option<u32>,
    pub heights: Option<Vec<u32>>,
    pub first_visit: Option<Vec<bool>>,
    pub root_loop_times: Vec<u64>,
    pub root_degree_at_tau: Vec<u64>,
    pub curve: Vec<CheckpointSample>,
    pub path: Option<Vec<VertexId>>,
    pub arena: Option<TreeArena>,
    pub final_height: u32,
    pub tree_height: u32,
    pub range: u64,
    pub total_vertices: u64,
    pub root_visits: u64,
}

impl WalkTrace {
    pub fn tau(&self, k: usize) -> Option<u64> {
        if k == 0 {
            return Some(0);
        }
        self.root_loop_times.get(k - 1).copied()
    }

    /// Edge up-crossing counters `v -> parent(v)` at the end of the run.
    pub fn edge_up_crossings(&self) -> Option<Vec<(VertexId, u64)>> {
        let arena = self.arena.as_ref()?;
        Some(
            arena
                .vertices()
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, r)| (i as VertexId, r.up_crossings))
                .collect(),
        )
    }
}

/// Settings shared by plain and reflected runs.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub horizon: u64,
    pub observers: Observers,
    /// Reflect at this height: the walker steps to the parent without adding
    /// leaves.
    pub reflect_height: Option<u32>,
    /// Stop right after this root-loop crossing.
    pub stop_at_tau: Option<usize>,
}

struct Walker<'a> {
    params: &'a ModelParams,
    arena: TreeArena,
    position: VertexId,
    tree_height: u32,
}

/// Runs the walk for `horizon` steps from a single root.
pub fn run<R: Rng + ?Sized>(params: &ModelParams, horizon: u64, observers: &Observers, rng: &mut R) -> WalkTrace {
    run_with(
        params,
        &RunSpec {
            horizon,
            observers: observers.clone(),
            reflect_height: None,
            stop_at_tau: None,
        },
        rng,
    )
}

/// Runs the walk reflected at height `d` until the `k_target`-th root-loop
/// crossing. Records heights, τ_k, root degrees, the path and the arena.
pub fn run_reflected<R: Rng + ?Sized>(
    params: &ModelParams,
    d: u32,
    k_target: usize,
    step_cap: u64,
    rng: &mut R,
) -> Result<WalkTrace> {
    if d == 0 || k_target == 0 {
        return Err(Error::InvalidParams("reflection needs d >= 1 and k >= 1".into()));
    }
    let spec = RunSpec {
        horizon: step_cap,
        observers: Observers {
            heights: true,
            tau: true,
            root_degree: true,
            local_times: true,
            checkpoints: Vec::new(),
        },
        reflect_height: Some(d),
        stop_at_tau: Some(k_target),
    };
    let trace = run_with(params, &spec, rng);
    if trace.censored {
        return Err(Error::StepCapExceeded { cap: step_cap, k: k_target });
    }
    Ok(trace)
}

pub fn run_with<R: Rng + ?Sized>(params: &ModelParams, spec: &RunSpec, rng: &mut R) -> WalkTrace {
    let obs = &spec.observers;
    let mut checkpoints = obs.checkpoints.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    checkpoints.retain(|&c| c <= spec.horizon);
    let mut next_cp = 0usize;

    let record_tau = obs.tau || obs.root_degree || spec.stop_at_tau.is_some();
    let prealloc = spec.horizon.min(1 << 24) as usize + 1;
    let mut heights = obs.heights.then(|| Vec::with_capacity(prealloc));
    let mut first_visit = obs.heights.then(|| Vec::with_capacity(prealloc));
    let mut path = obs.local_times.then(|| Vec::with_capacity(prealloc));

    let mut w = Walker {
        params,
        arena: TreeArena::new(),
        position: ROOT,
        tree_height: 0,
    };
    w.arena.vertex_mut(ROOT).visits = 1;

    let mut trace = WalkTrace {
        horizon: spec.horizon,
        steps: 0,
        censored: false,
        reflect_height: spec.reflect_height,
        heights: None,
        first_visit: None,
        root_loop_times: Vec::new(),
        root_degree_at_tau: Vec::new(),
        curve: Vec::with_capacity(checkpoints.len()),
        path: None,
        arena: None,
        final_height: 0,
        tree_height: 0,
        range: 1,
        total_vertices: 1,
        root_visits: 1,
    };

    if let Some(h) = heights.as_mut() {
        h.push(0);
    }
    if let Some(f) = first_visit.as_mut() {
        f.push(true);
    }
    if let Some(p) = path.as_mut() {
        p.push(ROOT);
    }
    let sample = |w: &Walker, n: u64| CheckpointSample {
        step: n,
        height: w.arena.height(w.position),
        max_height: w.tree_height,
        range: w.arena.materialized() as u64,
    };
    if checkpoints.first() == Some(&0) {
        trace.curve.push(sample(&w, 0));
        next_cp = 1;
    }

    let mut stopped = false;
    let mut n = 0u64;
    while n < spec.horizon {
        let from = w.position;
        let from_height = w.arena.height(from);
        let outcome = if spec.reflect_height == Some(from_height) {
            StepOutcome {
                to: w.arena.parent(from),
                up: true,
                new_vertex: false,
                leaves_added: 0,
            }
        } else {
            step(&mut w.arena, from, w.params, n + 1, rng)
        };
        n += 1;
        if outcome.leaves_added > 0 {
            w.tree_height = w.tree_height.max(from_height + 1);
        }
        if outcome.up {
            w.arena.vertex_mut(from).up_crossings += 1;
        }
        w.position = outcome.to;
        w.arena.vertex_mut(outcome.to).visits += 1;
        if outcome.to == ROOT {
            trace.root_visits += 1;
        }
        if let Some(h) = heights.as_mut() {
            h.push(w.arena.height(outcome.to));
        }
        if let Some(f) = first_visit.as_mut() {
            f.push(outcome.new_vertex);
        }
        if let Some(p) = path.as_mut() {
            p.push(outcome.to);
        }
        if next_cp < checkpoints.len() && checkpoints[next_cp] == n {
            trace.curve.push(sample(&w, n));
            next_cp += 1;
        }
        if outcome.up && from == ROOT && record_tau {
            trace.root_loop_times.push(n);
            if obs.root_degree || spec.stop_at_tau.is_some() {
                trace.root_degree_at_tau.push(w.arena.vertex(ROOT).child_count);
            }
            if spec.stop_at_tau == Some(trace.root_loop_times.len()) {
                stopped = true;
                break;
            }
        }
    }

    trace.steps = n;
    trace.censored = !stopped;
    trace.final_height = w.arena.height(w.position);
    trace.tree_height = w.tree_height;
    trace.range = w.arena.materialized() as u64;
    trace.total_vertices = w.arena.total_vertices();
    trace.heights = heights;
    trace.first_visit = first_visit;
    trace.path = path;
    if obs.local_times {
        trace.arena = Some(w.arena);
    }
    trace
}

/// Local times `L(v, k)`: jumps `v -> parent(v)` for `v != root` up to τ_k.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalTimeProfile {
    pub k: usize,
    pub tau_k: u64,
    /// Nonzero local times only.
    pub counts: BTreeMap<VertexId, u64>,
}

impl LocalTimeProfile {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn get(&self, v: VertexId) -> u64 {
        self.counts.get(&v).copied().unwrap_or(0)
    }
}

pub fn local_time_profile(trace: &WalkTrace, k: usize) -> Result<LocalTimeProfile> {
    let tau_k = trace.tau(k).ok_or(Error::TauNotObserved { k })?;
    let path = trace.path.as_ref().ok_or(Error::LocalTimesNotRecorded)?;
    let arena = trace.arena.as_ref().ok_or(Error::LocalTimesNotRecorded)?;
    let mut counts = BTreeMap::new();
    for n in 1..=tau_k as usize {
        let (from, to) = (path[n - 1], path[n]);
        if from != ROOT && to == arena.parent(from) {
            *counts.entry(from).or_insert(0) += 1;
        }
    }
    Ok(LocalTimeProfile { k, tau_k, counts })
}
