//! Fairness-aware origin–destination flow prediction.
//!
//! A three-stage hurdle network (presence classifier, magnitude regressor,
//! product) trained with a mean-absolute-error objective plus a weighted
//! demographic-parity penalty over income-difference groups.

pub mod dataset;
pub mod error;
pub mod explain;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod par;
pub mod report;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
