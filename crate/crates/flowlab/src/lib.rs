//! Analytics for flow-driven price impact in funds.
//!
//! The crate is organized around a column-oriented [`panel::MarketPanel`]
//! (securities, funds, holdings on a shared trading calendar) and layers on
//! top of it:
//!
//! * [`illiquidity`] — position/fund illiquidity, concentration and size
//!   measures with the effective-liquidity normalization,
//! * [`impact`] — the square-root price-impact law, self-inflated returns,
//!   cross-fund spillovers, transient-impact kernels, and arbitrage-induced
//!   trading measures,
//! * [`econ`] — fixed-effect absorption, cluster-robust OLS, distributed
//!   lags, and exponential-decay NLLS kernel fits,
//! * [`analytics`] — return decomposition, return-chasing regressions,
//!   Ponzi-flow measures, flow-decile sorts, and run-up/bubble event studies,
//! * [`sim`] — a deterministic synthetic market generator with recorded
//!   ground truth, plus parameter-recovery harnesses,
//! * [`io`] / [`cli`] — CSV schemas, config parsing, and the `flowlab`
//!   command-line pipeline.

pub mod analytics;
pub mod calendar;
pub mod cli;
pub mod econ;
pub mod error;
pub mod illiquidity;
pub mod impact;
pub mod io;
pub mod linalg;
pub mod panel;
pub mod rng;
pub mod sim;
pub mod util;

#[cfg(test)]
pub(crate) mod testkit;

pub use error::{Error, Result};
