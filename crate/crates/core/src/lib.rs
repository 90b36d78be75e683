//! Research engine for systematic trading of delta-neutral equity straddles.
//!
//! The pipeline forms monthly at-the-money straddles from option chains
//! ([`market_data`]), stitches them into per-stock daily panels with trend
//! and momentum features ([`panel`], [`indicators`]), produces positions
//! from rules-based benchmarks ([`strategies`]) or from networks trained
//! directly on a Sharpe-ratio objective ([`models`], [`training`]), and
//! evaluates them walk-forward with transaction-cost sweeps ([`backtest`]).
//! [`synth`] generates panels with known serial correlation for testing.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod backtest;
pub mod error;
pub mod indicators;
pub mod market_data;
pub mod models;
pub mod panel;
pub mod pipeline;
pub mod strategies;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
