//! Experiment orchestration behind the `tbrw` binary: runs a subcommand over
//! the configured parameter points inside a fixed-size worker pool and writes
//! `summary.json`, `report.csv` and per-command extras to the output directory.
//!
//! Every replicate draws from `RngStream::new(seed, point).substream(rep)` and
//! results are reduced in replicate order, so CSV output does not depend on
//! the worker count.

mod config;

use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

pub use config::{
    BmcSection, Command, CoupleSection, ExperimentConfig, PhaseScanSection, RayKnightSection, SpectralSection, UrnSection,
};

use crate::analysis::{classify_phase, ray_knight_compare};
use crate::bmc::{
    classify_regime, eigen_check, eigen_truncation_level, generating_identity_check, mean_matrix_closed_form,
    spectral_radius, survival_probability,
};
use crate::coupling::{coupling_check, CoupledConfig};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::RngStream;
use crate::stats::{mean_se, proportion};
use crate::urn::{en_increment_check, indicator, mean_offspring_functional};
use crate::walker::{run, Observers};

pub const SCHEMA_VERSION: u32 = 1;

const SPECTRAL_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct Metrics {
    pub wall_clock_seconds: f64,
    pub workers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub walker_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps_per_second: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResultBundle {
    pub schema_version: u32,
    pub command: Command,
    pub config: ExperimentConfig,
    pub replicates: Vec<Value>,
    pub aggregate: Value,
    /// Set when a verified invariant failed; the CLI exits with code 4.
    pub violation: Option<String>,
    pub metrics: Metrics,
}

impl ResultBundle {
    pub fn exit_code(&self) -> i32 {
        if self.violation.is_some() {
            4
        } else {
            0
        }
    }
}

struct Output {
    replicates: Vec<Value>,
    aggregate: Value,
    violation: Option<String>,
    walker_steps: Option<u64>,
}

/// Runs `command` with `workers` threads and writes its outputs under `out`.
pub fn run_experiment(command: Command, cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<ResultBundle> {
    if let Some(c) = cfg.command {
        if c != command {
            return Err(Error::Config {
                path: "command".into(),
                message: format!("config is for `{}`, not `{}`", c.name(), command.name()),
            });
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParams(format!("cannot start worker pool: {e}")))?;
    fs::create_dir_all(out)?;
    let start = Instant::now();
    let output = pool.install(|| match command {
        Command::Simulate => simulate(cfg, out),
        Command::Urn => urn(cfg, out),
        Command::Bmc => bmc(cfg, out),
        Command::Spectral => spectral(cfg, out),
        Command::Couple => couple(cfg, out),
        Command::Rayknight => rayknight(cfg, out),
        Command::PhaseScan => phase_scan(cfg, out),
    })?;
    let elapsed = start.elapsed().as_secs_f64();
    let steps_per_second = output.walker_steps.map(|s| s as f64 / elapsed.max(1e-9));
    if let Some(rate) = steps_per_second {
        info!("{} walker steps in {elapsed:.2}s ({rate:.3e} steps/s)", output.walker_steps.unwrap());
    }
    let bundle = ResultBundle {
        schema_version: SCHEMA_VERSION,
        command,
        config: cfg.clone(),
        replicates: output.replicates,
        aggregate: output.aggregate,
        violation: output.violation,
        metrics: Metrics {
            wall_clock_seconds: elapsed,
            workers: workers.max(1),
            walker_steps: output.walker_steps,
            steps_per_second,
        },
    };
    let file = fs::File::create(out.join("summary.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &bundle)?;
    Ok(bundle)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn master(cfg: &ExperimentConfig, point: usize) -> RngStream {
    RngStream::new(cfg.seed, point as u64)
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable")
}

#[derive(Serialize)]
struct CurveRow {
    step: u64,
    height: u32,
    max_height: u32,
}

#[derive(Serialize)]
struct SimulateRow {
    point: usize,
    rho: f64,
    nu: String,
    rep: u64,
    steps: u64,
    final_height: u32,
    tree_height: u32,
    range: u64,
    root_loops: usize,
    total_vertices: u64,
}

fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Output> {
    let points = cfg.points()?;
    let horizon = ExperimentConfig::require(cfg.horizon, "horizon")?;
    let reps = cfg.reps.unwrap_or(1);
    let stride = if cfg.raw_traces { 1 } else { cfg.checkpoint_stride };
    let curves_dir = out.join("curves");
    fs::create_dir_all(&curves_dir)?;
    let obs = Observers {
        tau: true,
        ..Default::default()
    }
    .with_checkpoints(Observers::stride_checkpoints(stride, horizon));

    let mut rows = Vec::new();
    let mut aggregate = Vec::new();
    for (i, params) in points.iter().enumerate() {
        let m = master(cfg, i);
        let results: Vec<Result<SimulateRow>> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let trace = run(params, horizon, &obs, &mut m.substream(rep).rng());
                let curve: Vec<CurveRow> = trace
                    .curve
                    .iter()
                    .map(|c| CurveRow {
                        step: c.step,
                        height: c.height,
                        max_height: c.max_height,
                    })
                    .collect();
                write_csv(&curves_dir.join(format!("p{i}_rho{}_rep{rep}.csv", params.rho())), &curve)?;
                Ok(SimulateRow {
                    point: i,
                    rho: params.rho(),
                    nu: params.nu().to_string(),
                    rep,
                    steps: trace.steps,
                    final_height: trace.final_height,
                    tree_height: trace.tree_height,
                    range: trace.range,
                    root_loops: trace.root_loop_times.len(),
                    total_vertices: trace.total_vertices,
                })
            })
            .collect();
        let point_rows = results.into_iter().collect::<Result<Vec<_>>>()?;
        let heights: Vec<f64> = point_rows.iter().map(|r| r.final_height as f64).collect();
        aggregate.push(json!({
            "point": i,
            "params": params,
            "phase": classify_phase(params),
            "mean_final_height": mean_se(&heights),
            "max_tree_height": point_rows.iter().map(|r| r.tree_height).max(),
        }));
        rows.extend(point_rows);
    }
    write_csv(&out.join("report.csv"), &rows)?;
    let walker_steps = rows.iter().map(|r| r.steps).sum();
    Ok(Output {
        replicates: rows.iter().map(to_value).collect(),
        aggregate: Value::Array(aggregate),
        violation: None,
        walker_steps: Some(walker_steps),
    })
}

#[derive(Serialize)]
struct EnReportRow {
    point: usize,
    rho: f64,
    k: usize,
    mc_estimate: f64,
    std_error: f64,
    closed_form: f64,
    z_score: f64,
}

#[derive(Serialize)]
struct FunctionalRow {
    point: usize,
    rho: f64,
    j: usize,
    k: usize,
    mc_estimate: f64,
    std_error: f64,
    closed_form: f64,
    z_score: f64,
}

fn urn(cfg: &ExperimentConfig, out: &Path) -> Result<Output> {
    let points = cfg.points()?;
    let reps = cfg.reps.unwrap_or(100_000);
    let sec = &cfg.urn;
    let mut en_rows = Vec::new();
    let mut f_rows = Vec::new();
    for (i, params) in points.iter().enumerate() {
        let m = master(cfg, i);
        for row in en_increment_check(params, sec.k_max, reps, m.substream(0))? {
            en_rows.push(EnReportRow {
                point: i,
                rho: params.rho(),
                k: row.k,
                mc_estimate: row.mc_estimate,
                std_error: row.std_error,
                closed_form: row.closed_form,
                z_score: row.z_score,
            });
        }
        let fm = m.substream(1);
        for j in 0..=sec.functional_j_max {
            for k in 1..=sec.functional_k_max {
                let stream = fm.substream((j * 1000 + k) as u64);
                let est = mean_offspring_functional(params, &indicator(j), k, reps, stream)?;
                f_rows.push(FunctionalRow {
                    point: i,
                    rho: params.rho(),
                    j,
                    k,
                    mc_estimate: est.mc.mean,
                    std_error: est.mc.std_error,
                    closed_form: est.closed_form,
                    z_score: est.mc.z_score(est.closed_form),
                });
            }
        }
    }
    write_csv(&out.join("report.csv"), &en_rows)?;
    write_csv(&out.join("functional.csv"), &f_rows)?;
    let max_z = en_rows.iter().map(|r| r.z_score.abs()).fold(0.0, f64::max);
    let max_fz = f_rows.iter().map(|r| r.z_score.abs()).fold(0.0, f64::max);
    Ok(Output {
        replicates: Vec::new(),
        aggregate: json!({ "reps": reps, "max_abs_z_en": max_z, "max_abs_z_functional": max_fz }),
        violation: None,
        walker_steps: None,
    })
}

#[derive(Serialize)]
struct BmcRow {
    point: usize,
    rho: f64,
    k: u64,
    reps: u64,
    extinct: u64,
    survived: u64,
    undecided: u64,
    p_survive: f64,
    std_error: f64,
}

fn bmc(cfg: &ExperimentConfig, out: &Path) -> Result<Output> {
    let points = cfg.points()?;
    let reps = cfg.reps.unwrap_or(10_000);
    let mut rows = Vec::new();
    let mut aggregate = Vec::new();
    for (i, params) in points.iter().enumerate() {
        let m = master(cfg, i);
        for &k in &cfg.bmc.initial_types {
            let est = survival_probability(k, params, reps, cfg.bmc.caps, m.substream(k))?;
            aggregate.push(json!({ "point": i, "regime": classify_regime(params).ok(), "estimate": est }));
            rows.push(BmcRow {
                point: i,
                rho: params.rho(),
                k,
                reps: est.reps,
                extinct: est.extinct,
                survived: est.survived,
                undecided: est.undecided,
                p_survive: est.p_survive,
                std_error: est.std_error,
            });
        }
    }
    write_csv(&out.join("report.csv"), &rows)?;
    Ok(Output {
        replicates: Vec::new(),
        aggregate: Value::Array(aggregate),
        violation: None,
        walker_steps: None,
    })
}

#[derive(Serialize)]
struct SpectralRow {
    point: usize,
    rho: f64,
    #[serde(rename = "L")]
    l: usize,
    lambda: f64,
    eigen_residual: f64,
    eigen_pass: bool,
    spectral_radius: f64,
}

#[derive(Serialize)]
struct GeneratingRow {
    point: usize,
    rho: f64,
    k: usize,
    s: f64,
    n_max: usize,
    lhs: f64,
    rhs: f64,
    relative_error: f64,
}

fn spectral(cfg: &ExperimentConfig, out: &Path) -> Result<Output> {
    let points = cfg.points()?;
    let sec = &cfg.spectral;
    let mut rows = Vec::new();
    let mut g_rows = Vec::new();
    let mut aggregate = Vec::new();
    for (i, params) in points.iter().enumerate() {
        let auto = eigen_truncation_level(params, sec.k_max, sec.tolerance * 1e-3)?;
        let mut levels: Vec<usize> = sec.l.iter().copied().filter(|&l| l >= sec.k_max).collect();
        levels.push(auto);
        levels.sort_unstable();
        levels.dedup();
        for &l in &levels {
            let check = eigen_check(params, l, sec.k_max)?;
            let radius = spectral_radius(&mean_matrix_closed_form(params, l)?, SPECTRAL_TOLERANCE)?;
            rows.push(SpectralRow {
                point: i,
                rho: params.rho(),
                l,
                lambda: check.lambda,
                eigen_residual: check.residual,
                eigen_pass: check.residual < sec.tolerance,
                spectral_radius: radius,
            });
        }
        for &(k, s) in &sec.generating {
            let g = generating_identity_check(params, k, s, None)?;
            g_rows.push(GeneratingRow {
                point: i,
                rho: params.rho(),
                k,
                s,
                n_max: g.n_max,
                lhs: g.lhs,
                rhs: g.rhs,
                relative_error: g.relative_error,
            });
        }
        aggregate.push(json!({
            "point": i,
            "params": params,
            "regime": classify_regime(params)?,
            "auto_L": auto,
        }));
    }
    write_csv(&out.join("report.csv"), &rows)?;
    if !g_rows.is_empty() {
        write_csv(&out.join("generating.csv"), &g_rows)?;
    }
    Ok(Output {
        replicates: rows.iter().map(to_value).collect(),
        aggregate: Value::Array(aggregate),
        violation: None,
        walker_steps: None,
    })
}

fn couple(cfg: &ExperimentConfig, out: &Path) -> Result<Output> {
    let dominant = single_point(cfg)?;
    let sec = cfg.couple.as_ref().ok_or_else(|| Error::Config {
        path: "couple".into(),
        message: "missing field `couple`".into(),
    })?;
    let config = CoupledConfig::new(dominant, sec.dominated.clone())?;
    let runs = cfg.reps.unwrap_or(1000);
    let horizon = cfg.horizon.unwrap_or(100_000);
    let report = coupling_check(&config, runs, horizon, sec.marginal, master(cfg, 0));
    #[derive(Serialize)]
    struct Row {
        runs: u64,
        horizon: u64,
        runs_passed: u64,
        sync_checks: u64,
        frozen_at_horizon: u64,
        marginal_n: Option<u64>,
        marginal_censored: Option<u64>,
        marginal_chi_square: Option<f64>,
        marginal_df: Option<usize>,
        marginal_p_value: Option<f64>,
    }
    let m = report.marginal.as_ref();
    let row = Row {
        runs,
        horizon,
        runs_passed: report.runs_passed,
        sync_checks: report.sync_checks,
        frozen_at_horizon: report.frozen_at_horizon,
        marginal_n: m.map(|m| m.spec.n),
        marginal_censored: m.map(|m| m.censored),
        marginal_chi_square: m.map(|m| m.chi_square.statistic),
        marginal_df: m.map(|m| m.chi_square.df),
        marginal_p_value: m.map(|m| m.chi_square.p_value),
    };
    write_csv(&out.join("report.csv"), &[row])?;
    let violation = report
        .first_failure
        .as_ref()
        .map(|(rep, msg)| format!("run {rep} (seed {}, point 0): {msg}", cfg.seed));
    Ok(Output {
        replicates: Vec::new(),
        aggregate: to_value(&report),
        violation,
        walker_steps: None,
    })
}

fn single_point(cfg: &ExperimentConfig) -> Result<ModelParams> {
    let mut points = cfg.points()?;
    if points.len() != 1 {
        return Err(Error::Config {
            path: "params".into(),
            message: "this subcommand takes a single parameter point".into(),
        });
    }
    Ok(points.remove(0))
}

#[derive(Serialize)]
struct HistogramRow {
    point: usize,
    value: usize,
    walker_gen1: u64,
    bmc_gen1: u64,
    walker_gen2: u64,
    bmc_gen2: u64,
}

fn rayknight(cfg: &ExperimentConfig, out: &Path) -> Result<Output> {
    let points = cfg.points()?;
    let reps = cfg.reps.unwrap_or(100_000);
    let sec = &cfg.rayknight;
    let mut rows = Vec::new();
    let mut aggregate = Vec::new();
    let mut violation = None;
    for (i, params) in points.iter().enumerate() {
        let r = ray_knight_compare(params, sec.d, sec.k, reps, master(cfg, i))?;
        let get = |h: &[u64], v: usize| h.get(v).copied().unwrap_or(0);
        let len = [&r.walker_gen1, &r.bmc_gen1, &r.walker_gen2, &r.bmc_gen2]
            .iter()
            .map(|h| h.len())
            .max()
            .unwrap_or(0);
        for v in 0..len {
            rows.push(HistogramRow {
                point: i,
                value: v,
                walker_gen1: get(&r.walker_gen1, v),
                bmc_gen1: get(&r.bmc_gen1, v),
                walker_gen2: get(&r.walker_gen2, v),
                bmc_gen2: get(&r.bmc_gen2, v),
            });
        }
        if !r.identity_holds() && violation.is_none() {
            violation = Some(format!(
                "local-time identity failed at point {i}, replicates {:?} (seed {})",
                r.identity_failures, cfg.seed
            ));
        }
        aggregate.push(json!({
            "point": i,
            "params": params,
            "identity_passed": r.identity_passed,
            "reps": r.reps,
            "gen1_test": r.gen1_test,
            "gen2_test": r.gen2_test,
        }));
    }
    write_csv(&out.join("report.csv"), &rows)?;
    Ok(Output {
        replicates: Vec::new(),
        aggregate: Value::Array(aggregate),
        violation,
        walker_steps: None,
    })
}

#[derive(Serialize)]
struct PhaseRow {
    rho: f64,
    phase: &'static str,
    regime: Option<String>,
    v_hat: f64,
    v_ci_low: f64,
    v_ci_high: f64,
    no_return_fraction: f64,
    no_return_se: f64,
    mean_height_over_log_n: f64,
}

/// Closed-form classification next to simulated evidence: speed,
/// fraction of runs without a root-loop crossing by `n`, and `|T_n|/log n`.
fn phase_scan(cfg: &ExperimentConfig, out: &Path) -> Result<Output> {
    let points = cfg.points()?;
    let reps = cfg.reps.unwrap_or(20);
    let n = cfg.phase_scan.n.max(2);
    let obs = Observers {
        tau: true,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for (i, params) in points.iter().enumerate() {
        let m = master(cfg, i);
        let runs: Vec<(f64, bool, f64)> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let t = run(params, n, &obs, &mut m.substream(rep).rng());
                (
                    t.final_height as f64 / n as f64,
                    t.root_loop_times.is_empty(),
                    t.tree_height as f64 / (n as f64).ln(),
                )
            })
            .collect();
        let speeds: Vec<f64> = runs.iter().map(|r| r.0).collect();
        let v = mean_se(&speeds);
        let (lo, hi) = v.ci95();
        let alpha = proportion(runs.iter().filter(|r| r.1).count() as u64, reps);
        let ratio: Vec<f64> = runs.iter().map(|r| r.2).collect();
        let regime = classify_regime(params).ok().map(|r| to_value(&r).as_str().unwrap().to_string());
        rows.push(PhaseRow {
            rho: params.rho(),
            phase: classify_phase(params).short(),
            regime,
            v_hat: v.mean,
            v_ci_low: lo,
            v_ci_high: hi,
            no_return_fraction: alpha.mean,
            no_return_se: alpha.std_error,
            mean_height_over_log_n: mean_se(&ratio).mean,
        });
    }
    write_csv(&out.join("report.csv"), &rows)?;
    Ok(Output {
        replicates: rows.iter().map(to_value).collect(),
        aggregate: json!({ "n": n, "reps": reps, "points": points.len() }),
        violation: None,
        walker_steps: Some(n * reps * points.len() as u64),
    })
}
