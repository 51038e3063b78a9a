//! Exact and high-precision evolution of the max-type recursion
//! `X' = (X_1 + ... + X_m - 1)^+`, with generating-function diagnostics,
//! criticality tools, and a harness for the conjectured critical asymptotics.

pub mod asymptotics;
pub mod convolution;
pub mod criticality;
pub mod error;
pub mod evolution;
pub mod genfun;
pub mod montecarlo;
pub mod pmf;
pub mod scalar;
pub mod snapshot;

pub use criticality::Class;
pub use error::{DrError, Result};
pub use evolution::{EvolutionTrace, EvolveOptions, StepRecord};
pub use genfun::{GenStats, SPoint};
pub use pmf::{ModelParams, Pmf};
pub use scalar::{NumericMode, Scalar};
