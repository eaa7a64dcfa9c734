//! Truncated sweeping dynamics and the time-optimal bilevel sweeping control problem.
//!
//! A disk `Q1 + y(t)` of radius `R1` is steered inside a larger disk `Q` by the
//! upper-level control `v`. A point `x` driven by the lower-level control `u` is
//! swept by the moving disk through a normal cone truncated at level `M`. The
//! upper level minimizes the exit time; the lower level minimizes its control effort.
//!
//! Modules, bottom up:
//! - [`geometry`]: scenario data, constraint functions, projections, assumption checks.
//! - [`dynamics`]: exact and smoothed sweeping fields, integrators, feasibility monitor.
//! - [`transcription`]: decision vectors and the discretized lower/penalized programs.
//! - [`solver`]: lower solve, adjoints, value-function subgradients, bilevel continuation.
//! - [`certificate`]: multiplier extraction and maximum-principle residuals.
//! - [`oracle`]: brute-force and finite-difference references.
//!
//! The crate is `no_std` (with `alloc`); IO lives in the `sweepctl` crate.

#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop, clippy::type_complexity)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod certificate;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod math;
pub mod oracle;
pub mod solver;
pub mod transcription;

pub use error::{Error, Result};
pub use math::{Mat2, Vec2};
