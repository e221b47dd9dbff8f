//! Averaging of interacting particle systems in a fast ergodic environment.
//!
//! The crate has two halves that meet on lattice instances:
//!
//! * [`sim`] simulates the coupled system/environment jump process exactly,
//!   event by event, in continuum or on a site lattice;
//! * [`fp`] builds the corresponding rate matrices on a truncated lattice
//!   configuration space and solves the forward equation.
//!
//! [`config_space`], [`logistic`] and [`environment`] hold the shared model
//! pieces; [`semigroup`] and [`stats`] are supporting numerics.

pub mod config_space;
pub mod environment;
pub mod error;
pub mod fp;
pub mod logistic;
pub mod semigroup;
pub mod sim;
pub mod stats;

pub use config_space::{Configuration, Domain, Point};
pub use environment::{EnvKind, EnvSpec, EnvState};
pub use error::{Error, Result};
pub use fp::{DensityVector, EnvChain, Generator, SiteLattice, TruncatedSpace};
pub use logistic::{KernelFunction, KernelShape, ModelParams};
pub use sim::{SimConfig, Trajectory};
