//! Minimax robust hypothesis testing on discretized densities.
//!
//! The crate computes least favorable density pairs (LFDs) and the
//! associated robust likelihood ratio functions for several uncertainty
//! classes around two nominal densities:
//!
//! * total-variation balls ([`tv`]),
//! * lower and upper contamination ([`contamination`]),
//! * general density bands ([`band`]),
//! * arbitrary convex classes described by linear constraints ([`convex`]).
//!
//! [`verify`] checks the resulting tests: stochastic ordering, error
//! exponents, Monte Carlo error rates and f-divergence minimality.

pub mod band;
pub mod contamination;
pub mod convex;
pub mod divergence;
pub mod error;
pub mod exec;
pub mod grid;
pub mod roots;
pub mod tv;
pub mod verify;

pub use error::{LfdError, Result};
pub use exec::Execution;
pub use grid::{Grid, GridDensity, GridFunction};
