//! Gradient descent in the interpolation regime.
//!
//! Interpolating linear problems ([`problem`]), GD and Bernoulli-minibatch SGD
//! ([`solvers`]), closed-form rate predictions and their Monte-Carlo check
//! ([`theory`]), and distributed GD over a communication graph with a
//! Laplacian penalty ([`distributed`]). [`experiment`] wires these into
//! reproducible file-based runs; the `igd` binary is a thin front end to it.
//!
//! ```
//! use interp_gd::problem::{gen_dataset, DatasetKind};
//! use interp_gd::solvers::{run_gd, SolverConfig};
//!
//! let ds = gen_dataset(8, 8, DatasetKind::Orthonormal, false, 1).unwrap();
//! // every eigenvalue of H is 1/8, so eta = 4 halves the error each step
//! let trace = run_gd(&ds, &SolverConfig::gd(4.0, 10)).unwrap();
//! let r = trace.records[5].err_sq_range / trace.records[4].err_sq_range;
//! assert!((r - 0.25).abs() < 1e-10);
//! ```

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributed;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod presets;
pub mod problem;
pub mod seed;
pub mod solvers;
pub mod theory;

pub use error::{Error, Result};
