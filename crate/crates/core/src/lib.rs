//! rondo: possession-based plus-minus ratings for football.
//!
//! The pipeline turns raw event streams into possessions, builds a sparse
//! involvement/on-field design matrix, fits binomial regressions under four
//! penalty structures (ridge, group lasso, exclusive lasso, generalized
//! lasso), converts coefficient pairs into player ratings, and validates the
//! ratings by forecasting match outcomes under proper scoring rules.

pub mod design;
pub mod error;
pub mod ingest;
pub mod objective;
pub mod possession;
pub mod sparse;

pub use error::{Error, Result};
