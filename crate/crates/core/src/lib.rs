//! Spatio-temporal air-quality forecasting: a graph-convolutional encoder of
//! the monitoring network feeding per-station support vector regressors, with
//! probabilistic evaluation and conformal prediction intervals.

pub mod cli;
pub mod conformal;
pub mod config;
pub mod error;
pub mod forecast;
pub mod gcn;
pub mod graph;
pub mod io;
pub mod mcb;
pub mod metrics;
pub mod numeric;
pub mod panel;
pub mod pipeline;
pub mod schedule;
pub mod svr;
pub mod synth;

pub use error::{Error, Result};
