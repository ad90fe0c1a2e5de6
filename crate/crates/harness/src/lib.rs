//! Synthetic generators, baselines, metrics, evaluation protocols and report
//! emission for the weakly supervised soft-max relaxation.

pub mod crossval;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod report;
pub mod synthetic;

pub use error::{HarnessError, Result};
