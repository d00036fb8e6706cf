//! Simulation and numerical verification of the biased tree builder random walk.

pub mod analysis;
pub mod bmc;
pub mod coupling;
pub mod error;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod stats;
pub mod urn;
pub mod walker;

pub use error::{Error, Result};
pub use model::{critical_rho, ExtendedReal, ModelParams, OffspringDistribution, OffspringSpec};
pub use rng::{RngStream, SimRng};
