//! JSON experiment configuration.
//!
//! Every field is optional except where a subcommand needs it; unknown fields
//! are rejected. Errors carry the JSON path of the offending field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bmc::BmcCaps;
use crate::coupling::MarginalSpec;
use crate::error::{Error, Result};
use crate::model::{ModelParams, OffspringDistribution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Urn,
    Bmc,
    Spectral,
    Couple,
    Rayknight,
    PhaseScan,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Urn => "urn",
            Command::Bmc => "bmc",
            Command::Spectral => "spectral",
            Command::Couple => "couple",
            Command::Rayknight => "rayknight",
            Command::PhaseScan => "phase_scan",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ModelParams>,
    /// Several parameter points; takes precedence over `params`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_grid: Option<Vec<ModelParams>>,
    /// Shorthand grid: these ρ values with the ν of `params`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_stride")]
    pub checkpoint_stride: u64,
    /// Write every step of each simulated walk instead of strided curves.
    #[serde(default)]
    pub raw_traces: bool,
    #[serde(default)]
    pub urn: UrnSection,
    #[serde(default)]
    pub bmc: BmcSection,
    #[serde(default)]
    pub spectral: SpectralSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub couple: Option<CoupleSection>,
    #[serde(default)]
    pub rayknight: RayKnightSection,
    #[serde(default)]
    pub phase_scan: PhaseScanSection,
}

fn default_stride() -> u64 {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UrnSection {
    pub k_max: usize,
    /// Indicator functionals `1{· = j}` for `j ≤ functional_j_max`, `k ≤ functional_k_max`.
    pub functional_j_max: usize,
    pub functional_k_max: usize,
}

impl Default for UrnSection {
    fn default() -> Self {
        Self {
            k_max: 5,
            functional_j_max: 4,
            functional_k_max: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BmcSection {
    pub initial_types: Vec<u64>,
    pub caps: BmcCaps,
}

impl Default for BmcSection {
    fn default() -> Self {
        Self {
            initial_types: vec![1],
            caps: BmcCaps::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralSection {
    /// Truncation levels; the eigen check also runs at its own automatic level.
    #[serde(rename = "L")]
    pub l: Vec<usize>,
    pub k_max: usize,
    pub tolerance: f64,
    /// `(k, s)` pairs for the generating-function identity.
    pub generating: Vec<(usize, f64)>,
}

impl Default for SpectralSection {
    fn default() -> Self {
        Self {
            l: vec![20, 40, 80],
            k_max: 20,
            tolerance: 1e-9,
            generating: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleSection {
    /// The walk with the smaller bias and heavier leaf law.
    pub dominated: ModelParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marginal: Option<MarginalSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RayKnightSection {
    pub d: u32,
    pub k: usize,
}

impl Default for RayKnightSection {
    fn default() -> Self {
        Self { d: 2, k: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseScanSection {
    /// Steps per walk for the speed, no-return and height estimates.
    pub n: u64,
}

impl Default for PhaseScanSection {
    fn default() -> Self {
        Self { n: 100_000 }
    }
}

impl ExperimentConfig {
    pub fn empty() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.into_inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: ".".into(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }

    /// The figure preset: ν = δ_1, ρ ∈ {2.95, 3, 3.05}, 10^7 steps, curves
    /// downsampled every 10^3 steps.
    pub fn figure1() -> Self {
        let nu = OffspringDistribution::point_mass(1).expect("valid");
        let grid = [2.95, 3.0, 3.05]
            .into_iter()
            .map(|rho| ModelParams::new(rho, nu.clone()).expect("valid"))
            .collect();
        Self {
            command: Some(Command::Simulate),
            param_grid: Some(grid),
            horizon: Some(10_000_000),
            reps: Some(1),
            ..Self::empty()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| {
            Err(Error::Config {
                path: path.into(),
                message: message.into(),
            })
        };
        if self.checkpoint_stride == 0 {
            return bad("checkpoint_stride", "must be positive");
        }
        if self.workers == Some(0) {
            return bad("workers", "must be positive");
        }
        if self.rho_grid.is_some() && self.params.is_none() {
            return bad("rho_grid", "needs `params` to supply nu");
        }
        if let Some(grid) = &self.rho_grid {
            if let Some(i) = grid.iter().position(|r| !(*r > 0.0 && r.is_finite())) {
                return bad(&format!("rho_grid[{i}]"), "rho must be a positive real");
            }
        }
        Ok(())
    }

    /// Parameter points in order: `param_grid`, else `rho_grid` with the ν of
    /// `params`, else `params` alone.
    pub fn points(&self) -> Result<Vec<ModelParams>> {
        if let Some(grid) = &self.param_grid {
            if grid.is_empty() {
                return Err(Error::Config {
                    path: "param_grid".into(),
                    message: "must not be empty".into(),
                });
            }
            return Ok(grid.clone());
        }
        let base = self.params.as_ref().ok_or_else(|| Error::Config {
            path: "params".into(),
            message: "missing field `params`".into(),
        })?;
        match &self.rho_grid {
            Some(grid) => grid.iter().map(|&rho| ModelParams::new(rho, base.nu().clone())).collect(),
            None => Ok(vec![base.clone()]),
        }
    }

    pub fn require<T: Copy>(value: Option<T>, path: &str) -> Result<T> {
        value.ok_or_else(|| Error::Config {
            path: path.into(),
            message: format!("missing field `{path}`"),
        })
    }
}
