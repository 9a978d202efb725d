//! Parameterized PDE solvers, snapshot datasets, POD and convolutional
//! autoencoder reduction, memory-aware latent time stepping and the
//! offline/online pipeline built on them.

pub mod error;
pub mod field;
pub mod io;
pub mod pipeline;
pub mod reduction;
pub mod snapshots;
pub mod solvers;
pub mod stepper;

pub use error::{CoreError, Result};
pub use field::{Field, ParameterVector, ProblemTag, Real, Trajectory};

pub type Field64 = Field<f64>;
pub type Trajectory64 = Trajectory<f64>;
