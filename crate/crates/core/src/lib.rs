//! Gauge-invariant arbitrage curvature for multi-asset price data.
//!
//! The crate estimates the arbitrage curvature `A² = Σ_A (α^A)²` of a set of
//! price series: drift components that lie in the market's null space, i.e.
//! orthogonal both to the all-ones (inflation) direction and to every
//! volatility loading. The pipeline is:
//!
//! 1. [`estimators::estimate_omega`]: windowed covariance of log returns.
//! 2. [`estimators::build_g`]: the numéraire-invariant transform `G` of it.
//! 3. [`estimators::null_basis`]: the `k` smallest sum-zero eigenvectors.
//! 4. [`detector::run_detection`]: `α̂^A`, `Â²`, noise bands, the lag-1
//!    microstructure diagnostic and a sweep over every asset as numéraire.
//!
//! Around it sit an exact log-normal [`simulator`] with embedded arbitrage,
//! the self-financing arbitrage [`portfolio`], Monte Carlo and nonlinear
//! Black-Scholes [`pricer`]s, and CSV/JSON plumbing in [`io`].
//!
//! All time is measured in integer steps with `δt = 1`.

// `!(x > y)` is used to reject NaN together with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detector;
pub mod error;
pub mod estimators;
pub mod io;
pub mod model;
pub mod portfolio;
pub mod pricer;
pub mod simulator;

mod linalg;

pub use error::{Error, ErrorCategory, Result};
pub use model::{DriftDecomposition, MarketModel, PricePanel};
