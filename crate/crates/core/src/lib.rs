//! Quantum Rabi model as the working substance of a quantum Stirling engine.
//!
//! Truncated-Fock spectra, thermal states, the four-stroke cycle with its
//! efficiency decomposition, and sweeps/fits near the critical coupling.

pub mod cli;
pub mod cycle;
pub mod eigen;
pub mod model;
pub mod output;
pub mod scan;
pub mod thermo;

pub use cycle::{run_cycle, CycleBackend, CycleResult, CycleSpec};
pub use eigen::{converged_spectrum, ConvergenceSettings, Spectrum};
pub use model::{ModelParams, Phase, Truncation, G_CRITICAL};
pub use thermo::ThermoState;
