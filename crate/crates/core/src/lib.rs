//! Coronary-calcium mortality-risk pipeline.
//!
//! * [`imaging`]: CT volumes, patch extraction, augmentation, normalization
//! * [`scoring`]: calcium detection and Agatston / volume scores
//! * [`phantom`]: synthetic cardiac patches with known ground truth
//! * [`net`]: residual risk networks, two-stage training, gradient checks
//! * [`eval`]: ROC / AUC, k-fold cross-validation, method comparison
//! * [`config`] and [`pipeline`]: flat run configuration and end-to-end runs

pub mod config;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod net;
pub mod phantom;
pub mod pipeline;
pub mod scoring;
pub mod seed;
pub mod subject;

pub use error::{Error, Result};
pub use subject::Subject;
