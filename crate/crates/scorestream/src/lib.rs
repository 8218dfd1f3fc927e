//! scorestream: an end-to-end pipeline that learns vector representations
//! of scored text documents, fits score regressors on them, and serves
//! real-time score predictions for unlabeled documents streamed through an
//! embedded broker, persisting every prediction to an embedded time-series
//! store with rolling statistics and threshold alerts.
//!
//! The numeric substance (embedding training, regression, series math)
//! lives in the `scorestream-core` crate; this crate adds everything with
//! a side effect: corpus IO, model persistence, the broker, the store and
//! its HTTP facade, the online engine, alert delivery, orchestration and
//! the CLI.

pub mod alerts;
pub mod broker;
pub mod config;
pub mod corpus;
pub mod error;
pub mod model_io;
pub mod pipeline;
pub mod stream;
pub mod synth;
pub mod tsdb;
pub mod tsdb_http;

pub use config::PipelineConfig;
pub use error::{Error, Result};
