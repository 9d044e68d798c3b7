//! Two-scale power-variation test for jumps in a discretely observed process.
//!
//! The switch statistic `S(p, k, delta) = B(p, k delta) / B(p, delta)` compares
//! realized `p`-th power variations at two sampling frequencies. For `p > 2`
//! it tends to 1 on paths that jump and to `k^{p/2-1}` on continuous paths.
//!
//! - [`moments`]: Gaussian moment constants entering the variance formulas.
//! - [`variation`]: power, truncated, and multipower variations, and the
//!   local-window jump variance estimator.
//! - [`jumptest`]: standardized statistics and the tests for both nulls.
//! - [`simulate`]: stochastic volatility paths with optional jumps and noise.
//! - [`harness`]: Monte Carlo experiments and histogram output.
//! - [`ingest`]: tick data loading, cleaning, and resampling.

// Range checks are written as `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod ingest;
pub mod jumptest;
pub mod moments;
pub mod simulate;
pub mod variation;

pub use error::{Error, Result};
pub use jumptest::{
    test_jump_null, test_no_jump_null, CutoffStyle, NullHypothesis, TestConfig, TestResult,
    VarianceEstimator,
};
pub use variation::{IncrementSeries, TruncationRule};
