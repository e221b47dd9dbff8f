//! Finite-state projection of the forward equation on lattice configurations.

mod build;
mod env_chain;
mod evolve;
mod experiments;
mod generator;
mod lattice;

pub use build::{
    build_averaged_generator, build_joint_generator, build_system_generator, lattice_averaged_intensities, EnvAverage,
    LatticeKernels,
};
pub use env_chain::EnvChain;
pub use evolve::{evolve, evolve_grid, propagate, DensityVector, Method, RK_STEP_CAP, UNIFORMIZATION_CAP};
pub use experiments::{
    averaging_error, delta_error, moment_bound_check, operator_norm_check, ErrorRow, MomentReport, MomentRow,
    NormReport, Solver, SweepTable, BOUNDARY_GUARD,
};
pub use generator::{Generator, Orientation};
pub use lattice::{enumerate_space, SiteLattice, TruncatedSpace, MAX_SITES, MAX_STATES};

/// The sparse rate-matrix type under its descriptive name.
pub type SparseGenerator = Generator;
