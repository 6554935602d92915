//! Solar irradiance nowcasting and forecasting from sky-image embeddings and
//! clear-sky physics.

pub mod baselines;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod forecaster;
pub mod gbdt;
pub mod harness;
pub mod metrics;
pub mod solar;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};
