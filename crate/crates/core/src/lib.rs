//! Universal marginaliser engine.
//!
//! One feed-forward network per bounded probabilistic program is trained on
//! prior samples with randomly masked inputs, so that a single forward pass
//! approximates `P(X_i | Y)` for every site and every evidence set. The same
//! network doubles as a sequential importance-sampling proposal.
//!
//! Module map:
//! - [`program`]: program representation, ancestral sampling, log joint,
//!   benchmark graph families and the exact enumeration oracle.
//! - [`masking`]: input layout, prior statistics, random masks, encoding.
//! - [`neural`]: shared-trunk multi-head network, losses, backprop, ADAM.
//! - [`training`]: standard and flexible training loops.
//! - [`inference`]: direct marginals, guided proposals, importance sampling.
//! - [`evaluation`]: test sets, ground truth, correlation metric, benchmark.

pub mod error;
pub mod evaluation;
pub mod inference;
pub mod marginals;
pub mod masking;
pub mod neural;
pub mod program;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use program::{Assignment, Evidence, ProgramSpec, Value};
