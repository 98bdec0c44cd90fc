//! Location-aware app usage prediction by temporal collective matrix
//! factorization over app usage, POI profiles and shared-user correlation.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod ingestion;
pub mod model;
pub mod numerics;
pub mod preprocessing;
pub mod synth;

pub use error::{Error, Result};
