//! Accelerated optimization over 2D diffeomorphisms.
//!
//! The crate evolves a forward map `φ`, its inverse `ψ`, an Eulerian velocity
//! `v` and a mass density `ρ` with explicit finite-difference schemes so that
//! the map minimizes a registration energy such as the Horn–Schunck potential.
//! Plain gradient descent and a second-order wave formulation are provided
//! for comparison.

pub mod error;
pub mod evolution;
pub mod experiment;
pub mod field;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod potential;
pub mod synth;

pub use error::{Error, Result};
pub use evolution::{
    run, run_with, RunError, RunOutcome, Runner, Scheme, SolverConfig, SolverState, StepError,
    TraceRecord,
};
pub use field::{GridSpec, MapField, ScalarField, VectorField};
pub use potential::{HsPotential, Potential};
