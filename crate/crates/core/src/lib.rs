//! Partition-function estimation for discrete graphical models with
//! bounded-size clique tree forests.
//!
//! The estimator adds factors incrementally to a forest of clique trees
//! while every clique stays within a size bound, calibrates it, shrinks the
//! cliques by exact and local marginalization once the bound is reached, and
//! carries on with the factors that did not fit. The normalization constant
//! of the last tree of each connected component gives the estimate.

pub mod approx;
pub mod build;
pub mod calibration;
pub mod ctf;
pub mod driver;
pub mod error;
pub mod factor;
pub mod harness;
pub mod model;
pub mod triangulation;

pub use error::{IbiaError, Result};
pub use factor::{Factor, VarId};
pub use model::{Evidence, Model};
