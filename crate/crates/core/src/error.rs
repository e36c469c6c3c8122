//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spin system: {0}")]
    InvalidSystem(String),

    #[error("spin index {spin} out of range for {n_spins}-spin system")]
    SpinOutOfRange { spin: usize, n_spins: usize },

    #[error("unknown spin label `{0}`")]
    UnknownLabel(String),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("operator is not hermitian (max entry deviation {0:e})")]
    NotHermitian(f64),

    #[error("operator is not unitary (max entry deviation {0:e})")]
    NotUnitary(f64),

    #[error("malformed product-operator term: {0}")]
    MalformedTerm(String),

    #[error("phase list length must be even, got {0}")]
    OddPhaseCount(usize),

    #[error("toggling analysis requires all hard pulses to be pi rotations (found {angle_deg} deg at t={time}tau); use brute-force simulation instead")]
    AnalyzerInapplicable { angle_deg: f64, time: String },

    #[error("cannot compile {module} for spin `{label}`: {reason}")]
    Unsatisfiable {
        module: &'static str,
        label: String,
        reason: String,
    },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("schedule parse error at line {line}: {msg}")]
    ScheduleParse { line: usize, msg: String },

    #[error("invalid shaped pulse: {0}")]
    InvalidPulse(String),

    #[error("invalid simulation options: {0}")]
    InvalidSimOptions(String),

    #[error("compiled module rejected: fidelity {fidelity} below gate {gate}")]
    FidelityGate { fidelity: f64, gate: f64 },

    #[error("invalid density state: {0}")]
    InvalidState(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty FID requested (n_points = 0)")]
    EmptyFid,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
