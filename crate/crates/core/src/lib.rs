//! Stable size distribution of the equal-mitosis cell-division equation and
//! stable recovery of the division rate from noisy observations of it.

pub mod direct;
pub mod entropy;
pub mod error;
pub mod grid;
pub mod inverse;
pub mod noise;
pub mod rate;
pub mod stats;
pub mod study;
pub mod toy;

pub use direct::{
    check_invariants, constant_b_series, solve_adjoint, solve_direct, solve_pair, EigenPair,
    InvariantReport, SolveOptions,
};
pub use error::{Error, Result};
pub use grid::{Grid, GridFunction, LebesgueOrder, SobolevOrder, WeightSpec};
pub use rate::{RateBounds, RateSpec};
