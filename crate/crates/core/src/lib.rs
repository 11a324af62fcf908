//! Portfolio allocation with an encoder-decoder attention network trained
//! directly on a transaction-cost-adjusted Sharpe ratio.
//!
//! The crate contains the autodiff engine ([`tensor`]), the network
//! ([`model`]), the training objective ([`objective`]), optimization and the
//! walk-forward protocol ([`training`]), baseline strategies
//! ([`benchmarks`]), performance metrics and backtesting ([`metrics`]), and
//! data ingestion plus a synthetic market generator ([`data`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod tensor;
pub mod training;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
