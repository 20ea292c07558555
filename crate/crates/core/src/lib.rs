//! Approximately randomized experiments on directed marketplace graphs.
//!
//! The crate covers the whole pipeline: graph generation and I/O ([`graph`]),
//! the allocation design that matches producer-side exposure ([`design`]), the
//! quadratic programs behind it ([`qp`]), importance-sampling estimation of
//! treatment effects with bootstrap intervals ([`estimator`]) and a Monte Carlo
//! harness comparing against a cluster-randomized baseline ([`sim`]).

pub mod design;
pub mod error;
pub mod estimator;
pub mod graph;
pub mod qp;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
