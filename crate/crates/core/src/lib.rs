//! Semidefinite-relaxation state estimation for single-phase and multiphase
//! power networks.
//!
//! The crate builds the lifted measurement model of a network, solves the
//! relaxed weighted least-squares problem over the PSD cone, and recovers the
//! voltage phasors. Around that core it provides measurement synthesis,
//! observability diagnosis and repair, radial-network partitioning for
//! decoupled estimation, and redundancy-based bad-data detection.
//!
//! The lifted-matrix algebra and the solver are generic over [`Scalar`]; the
//! aliases below fix them to `f64`, which is what the network-facing parts of
//! the crate use.

pub mod bad_data;
pub mod error;
pub mod estimate;
pub mod measurements;
pub mod network;
pub mod observability;
pub mod partition;
pub mod rng;
pub mod scalar;
pub mod sdp;
pub mod solver;
pub mod stats;
pub mod synthetic;

pub use error::{Error, ErrorCategory, Result};
pub use scalar::Scalar;

pub type SymSparse = sdp::SymSparse<f64>;
pub type MeasurementMatrixSet = sdp::MeasurementMatrixSet<f64>;
pub type StateVector = sdp::StateVector<f64>;
pub type LiftedState = sdp::LiftedState<f64>;
pub type SdpProblem = sdp::SdpProblem<f64>;
pub type SolverConfig = solver::SolverConfig<f64>;
pub type SolveReport = solver::SolveReport<f64>;
