//! Fair post-processing of multi-class classifiers trained by federated averaging.
//!
//! A score model is trained across clients, each client reports a small table
//! of statistics about the model's argmax predictions, the server solves one
//! linear program that enforces group fairness both globally and inside every
//! client, and each client then randomizes its own predictions to reach the
//! server's target operating point.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod fair;
pub mod lp;
pub mod oracle;
pub mod protocol;
pub mod rng;
pub mod score;
pub mod spec;
pub mod stats;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use spec::{FairnessSpec, Metric};
