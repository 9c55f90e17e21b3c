//! Feature selection with false discovery rate control after clustering or
//! trajectory inference.
//!
//! Samples are split in two halves. Each half estimates the latent structure
//! on its own and tests every feature against it; the two signed statistic
//! vectors are combined into mirror statistics whose sign symmetry under the
//! null gives a data-driven cutoff. Repeating over many splits and
//! aggregating inclusion rates stabilises the selection.

pub mod assoc;
pub mod bench;
pub mod cli;
pub mod cluster;
pub mod data;
pub mod dist;
pub mod error;
pub mod mds;
pub mod mirror;
pub mod rng;
pub mod simgen;
pub mod theory;

pub use error::{Error, Result};
