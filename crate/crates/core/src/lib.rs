//! Frame delivery ratio forecasting for Wi-Fi links.
//!
//! Binary frame-outcome traces are run through a bank of 41 exponential
//! moving average filters whose smoothing factors are spread geometrically
//! around a calibrated optimum. The filter outputs feed a small feed-forward
//! network that predicts the delivery ratio of the next 30 minutes. A single
//! optimally tuned EMA is the baseline.
//!
//! Module map:
//!
//! - [`trace`]: outcome traces, future-window targets, trace files, and a
//!   Gilbert-Elliott generator for synthetic channels.
//! - [`ema`]: the EMA recursion, the smoothing-factor grid, feature
//!   matrices, and grid-search calibration.
//! - [`nn`]: the MLP, backpropagation, Adam, training, model files.
//! - [`metrics`]: the error-statistics panel.
//! - [`pipeline`]: experiment configuration, scenarios, and reports.

pub mod ema;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod trace;

pub use error::{Error, ErrorClass, Result};
