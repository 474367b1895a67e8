//! Distillation of labeled 3D point-cloud datasets into small synthetic sets.
//!
//! The pipeline optimizes synthetic point coordinates together with per-object
//! rotation angles against a distribution-matching loss computed on
//! channel-sorted features of a randomly initialized point network, then
//! evaluates the distilled set by training a small classifier on it.

pub mod coreset;
pub mod diffgraph;
pub mod distill;
pub mod error;
pub mod evalh;
pub mod featnet;
pub mod optim;
pub mod pcdata;
pub mod rotator;
pub mod sadmloss;
pub mod seeds;

pub use error::{Error, Result};
