//! Knowledge tracing with counterfactual answer-bias removal.
//!
//! [`corpus`] reads interaction logs and computes per-question answer
//! statistics, [`synthgen`] simulates biased logs, [`backbone`] and
//! [`debias`] hold the recurrent model and its counterfactual training, and
//! [`eval`] scores predictions on the original and the class-balanced test
//! sets. [`ndmath`] is the small autodiff engine underneath.

pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod debias;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod ndmath;
pub mod params;
pub mod synthgen;

pub use error::{Error, Result};
