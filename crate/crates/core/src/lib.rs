//! Numerical core for stochastic homogenization of random axon bundles.
//!
//! The crate is `no_std` (with `alloc`) and purely algorithmic:
//!
//! * [`geometry`] samples stationary ergodic disk processes on the unit lattice
//!   and manipulates realizations (shifts, membership, rescaling).
//! * [`ergodics`] estimates volume fractions and Palm (perimeter) intensities and
//!   checks the radius identity and the Campbell formula.
//! * [`conductivity`] holds the scalar conductivity laws, their potentials and the
//!   monotonicity certificate.
//! * [`cell_problem`] computes the effective extracellular conductivity by solving
//!   the nonlinear corrector problem on periodized representative volumes.
//! * [`membrane`] is the FitzHugh-Nagumo membrane kinetics and the exponential
//!   factorization that makes the evolution monotone.
//! * [`macro_solver`] integrates the homogenized multidomain system.
//! * [`micro_reference`] solves the stationary decoupled microscopic problems used
//!   to check the homogenization limit.
//!
//! IO, configuration and the command line live in the `fascicle` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]
#![forbid(unsafe_code)]

extern crate alloc;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod cell_problem;
pub mod conductivity;
pub mod ergodics;
pub mod geometry;
pub mod linalg;
pub mod macro_solver;
pub mod membrane;
pub mod micro_reference;
pub mod numeric;
pub mod optimize;

pub use cell_problem::{CellProblem, CorrectorField, EffectiveLawTable};
pub use conductivity::{ConductivityLaw, H5Report, LawKind};
pub use ergodics::{DensityEstimate, IdentityReport, PalmEstimate};
pub use geometry::{GeometryModel, Location, Realization, Rect, ScaledFascicle};
pub use macro_solver::{MacroConfig, MacroState, TimeSeries};
pub use membrane::{ClassField, FhnParams};
pub use micro_reference::{ConvergenceReport, ExtracellularMicro, IntracellularMicro, MicroSweepSpec};
