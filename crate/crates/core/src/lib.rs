//! Spline projections onto nested interval filtrations, their duals, and
//! the maximal-function machinery built on them.

pub mod banded;
pub mod bspline;
pub mod error;
pub mod filtration;
pub mod martingale;
pub mod maximal;
pub mod measures;
pub mod nondense;
pub mod projector;
pub mod quadrature;

pub use error::{Error, Result};
