//! Compiler, verifier and brute-force simulator for NMR pulse-sequence
//! modules on coupled spin-1/2 systems.
//!
//! The crate builds pulse schedules that let chosen Hamiltonian terms (one
//! chemical shift, one scalar coupling, or nothing at all) evolve while
//! every other term is refocused by patterns of spin-echo pi pulses, then
//! assembles those modules into quantum-logic gates. Every compiled
//! schedule is checked two independent ways: a toggling-frame sign
//! analysis of which terms survive, and dense unitary simulation against
//! the declared target.
//!
//! Module map:
//!
//! * [`algebra`] - dense operator algebra: Hamiltonians, propagators,
//!   pulses, phase-invariant fidelity;
//! * [`schedule`] - the pulse-schedule IR, its text format, validation and
//!   the toggling-frame oracle;
//! * [`compiler`] - O1/O2/O3 and do-nothing module generation plus CNOT /
//!   CCNOT-correction assembly;
//! * [`sim`] - ideal-pulse and finite-pulse (time-sliced) simulation,
//!   density states, spectator checks;
//! * [`spectra`] - FID synthesis, spectra, and the phase-step sweeps;
//! * [`config`] - structured-text project configuration.

pub mod algebra;
pub mod compiler;
pub mod config;
pub mod error;
pub mod scalar;
pub mod schedule;
pub mod sim;
pub mod spectra;

pub use error::{Error, Result};
pub use scalar::Real;

/// Concrete `f64` aliases for the generic core types.
pub type SpinSystem64 = algebra::SpinSystem<f64>;
pub type Operator64 = algebra::Operator<f64>;
pub type Schedule64 = schedule::Schedule<f64>;
pub type PulseProgram64 = schedule::PulseProgram<f64>;
pub type CompiledModule64 = compiler::CompiledModule<f64>;
pub type DensityState64 = sim::DensityState<f64>;
pub type SimOptions64 = sim::SimOptions<f64>;
