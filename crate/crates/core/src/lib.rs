//! Sequence-transducer lattice losses with latency regularisation.
//!
//! The crate computes the transducer loss by log-space forward-backward on
//! the `(t, u)` lattice and offers three ways of pushing a model towards
//! earlier emissions:
//!
//! - [`constraint`]: alignment-restricted training (band masks around
//!   reference times) and FastEmit (uniform label-gradient boost);
//! - [`latency`]: minimum-latency training, which augments the loss with the
//!   expected delay on each lattice diagonal and rescales every gradient entry
//!   by how late its successor cell is relative to that expectation.
//!
//! [`oracle`] enumerates alignments exhaustively and is the ground truth for
//! every test. [`model`], [`decode`] and [`experiment`] provide toy trainable
//! transducers, decoders with latency metrics and reproducible sweeps.

pub mod constraint;
pub mod decode;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod latency;
pub mod lattice;
pub mod logspace;
pub mod model;
pub mod oracle;

pub use error::{Error, Result};
