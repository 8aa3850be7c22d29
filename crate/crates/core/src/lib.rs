//! Finite-volume simulation of LWR traffic constrained by a slow vehicle whose
//! speed depends on a weighted average of the density ahead of it.
//!
//! The computation runs in the vehicle frame: the vehicle sits at `x = 0`,
//! the traffic flux is `F(s, rho) = f(rho) - s rho`, and the flux through
//! `x = 0` is capped by `Q(s)`.

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod model;
pub mod numflux;
pub mod solver;

pub mod cli;

pub use error::{Error, Result};
pub use grid::Grid;
pub use model::{
    calibrate_rational_omega, discretize_weight, ConstraintLaw, FluxModel, FundamentalDiagram,
    PiecewiseConstantProfile, SpeedLaw, WeightProfile,
};
pub use numflux::NumericalFluxKind;
pub use solver::{
    run, run_coupled, run_frozen, run_local, run_splitting, CouplingMode, DensityRange, RunConfig, Simulation,
    StepRecord, Trajectory,
};
