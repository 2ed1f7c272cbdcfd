//! Complete-to-partial non-rigid registration of labelled point clouds.
//!
//! The crate provides a procedural generator of deformed, partially visible
//! middle-ear point clouds with ground-truth displacement fields, a two-stage
//! registration pipeline (descriptor-based rigid alignment followed by a
//! neural deformation pyramid), rigid ICP, non-rigid ICP and coherent point
//! drift baselines, and an evaluation harness.

pub mod baselines;
pub mod cli;
pub mod coarse;
pub mod error;
pub mod eval;
pub mod geom;
pub mod ndp;
pub mod synth;

pub use error::{Error, Result};
