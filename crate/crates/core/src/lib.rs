//! Gradual transfer learning between structural-dynamics domains.
//!
//! Source, intermediate and target structures form a chain of domains. Each
//! hop aligns the domains statistically, fits PCA subspaces, optionally builds
//! a geodesic flow kernel between them, and pseudo-labels the next domain with
//! a linear SVM. A parametric beam model supplies the structure family.

pub mod align;
pub mod chain;
pub mod classify;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gfk;
pub mod harness;
pub mod seed;
pub mod structfam;
pub mod subspace;

pub use error::{Error, Result};
