//! Monte Carlo laboratory for the noisy KPP equation
//! `∂u = Δu + θu − u² + √u Ẇ` and its generalisations: lattice fields and
//! markers, an explicit stochastic integrator, monotone couplings, the
//! long-range contact process approximation, front-speed estimators and
//! duality checks.

pub mod coupling;
pub mod duality;
pub mod engine;
pub mod error;
pub mod field;
pub mod fronts;
pub mod initial;
pub mod noise;
pub mod particle;
pub mod spde;
pub mod stats;

pub use engine::{Component, CoupledSystem, SystemRun};
pub use error::{Error, Result};
pub use field::{ExtendedReal, Field};
pub use initial::{render, InitialCondition};
pub use noise::NoiseStream;
pub use spde::{simulate, Coefficient, FrontSide, GridSpec, NoiseScheme, SpdeParams, Trajectory, WindowPolicy};
pub use stats::Estimate;

/// Seed of replica `r` in a batch seeded with `seed`.
pub fn replica_seed(seed: u64, replica: usize) -> u64 {
    seed.wrapping_add(replica as u64)
}
