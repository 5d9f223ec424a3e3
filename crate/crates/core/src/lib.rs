//! Behavioral simulation of 6T SRAM power-up and reliability metrics for
//! SRAM-PUF cell selection.
//!
//! The crate is organised bottom-up:
//!
//! * [`device`] – smoothed square-law transistor model, inverter transfer
//!   curves and static equilibrium analysis of the cross-coupled latch.
//! * [`variability`] – Monte Carlo threshold-voltage populations.
//! * [`dynamics`] – RK4 power-up integration with optional kT/C noise.
//! * [`metrics`] – mismatch factor (MF), weight-factor fitting, overlap
//!   threshold, separatrix intersection distance (SID), skew stability test.
//! * [`experiments`] – repeatability trials, temperature sweeps, reliable-cell
//!   classification and selection studies.
//! * [`report`] and [`pipeline`] – table/figure emission and the end-to-end
//!   run used by the CLI.

pub mod device;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod rng;
mod roots;
pub mod svg;
pub mod variability;

pub use device::{
    drain_current, find_equilibria, inverter_vtc, EquilibriumSet, InverterSide, TechnologyProfile,
    TransistorKind, TransistorParams,
};
pub use dynamics::{
    derivative, sample_noise, simulate_from_initial, simulate_powerup, NoiseModel, PowerUpConfig,
    StateVector, Suv, SuvOutcome, Trajectory,
};
pub use error::{Error, Result};
pub use variability::{delta_n, delta_p, sample_population, CellSample, Population};

/// Boltzmann constant in J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Converts degrees Celsius to kelvin.
pub fn celsius_to_kelvin(c: f64) -> f64 {
    c + 273.15
}
