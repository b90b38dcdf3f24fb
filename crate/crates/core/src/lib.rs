//! Differentially private teacher ensembles: privacy accounting, noise
//! mechanisms, sampling, softmax learners and an experiment pipeline that
//! compares PATE, PSN, DP-SGD and a non-private baseline.

pub mod accountant;
pub mod ensemble;
pub mod error;
pub mod mechanisms;
pub mod models;
pub mod pipeline;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
pub use rng::RngStream;
