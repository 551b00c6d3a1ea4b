//! f-divergence minimal equivalent martingale measures for d-dimensional
//! exponential Lévy models.
//!
//! * [`levy_model`]: triplets, Lévy measures, characteristic exponent
//! * [`divergence`]: the power-family divergence generators
//! * [`mmm_solver`]: Girsanov parameters of the minimal measure, existence
//!   conditions, closed-form divergences
//! * [`verifier`]: fundamental-equation, support, minimality and invariance checks
//! * [`montecarlo`]: exact finite-activity simulation and estimators
//! * [`cli_io`]: configuration files, reports and the command implementations

pub mod cli_io;
pub mod divergence;
pub mod error;
pub mod levy_model;
pub mod mmm_solver;
pub mod montecarlo;
mod quadrature;
pub mod verifier;
pub mod worked_example;

pub use divergence::{DivergenceSpec, PowerTerm};
pub use error::{Error, Result};
pub use levy_model::{Atom, LevyMeasure, LevyTriplet, TruncationRule};
pub use mmm_solver::{solve, GirsanovParams, MinimalMeasureSolution, SolverConfig};
