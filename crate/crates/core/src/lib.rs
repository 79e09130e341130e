//! Simulator and numerical verification laboratory for the binary contact
//! path process (BCPP) on `d`-dimensional tori.

// `!(x > 0)` is the NaN-rejecting form used by every range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hydro;
pub mod kernels;
pub mod lattice;
pub mod linalg;
pub mod moments;
pub mod pde;
pub mod process;
pub mod scalar;
pub mod seeding;
pub mod shell;

pub use error::{Error, Result};
pub use lattice::{CenteredBall, SiteCoord, TorusGeometry};
pub use scalar::Real;

pub type ScaledFieldF64 = process::ScaledField<f64>;
pub type ProcessStateF64 = process::ProcessState<f64>;
pub type DensityProfileF64 = process::DensityProfile<f64>;
pub type TestFunctionF64 = process::TestFunction<f64>;
pub type KernelTableF64 = kernels::KernelTable<f64>;
pub type HeatSolutionF64 = pde::HeatSolution<f64>;
pub type FdGridF64 = pde::FdGrid<f64>;
