//! Long-run variance estimation and inference for Markov-chain functionals.
//!
//! Given a stationary series `Y_1..Y_n` (observations of `f(X_k)` along an
//! ergodic Markov chain, squared GARCH returns, MCMC traces, …), this crate
//! estimates the long-run variance
//!
//! ```text
//! σ² = Var(Y_1) + 2 Σ_{k≥1} Cov(Y_1, Y_{1+k})
//! ```
//!
//! with lag-window estimators and turns the estimate into confidence
//! intervals for the mean under two asymptotic regimes:
//!
//! * **classical** (`c_n = n^δ`, δ < 1): the estimator is consistent and
//!   the studentized mean is asymptotically standard normal —
//!   [`ci::classical_ci`];
//! * **fixed-b** (`c_n = n`): the estimator converges to a random limit
//!   `K_b` and the studentized mean to `B(1)/√K_b`, whose quantiles are
//!   simulated once and tabulated — [`fixedb`] and [`ci::fixedb_ci`].
//!
//! The supporting theory is checkable to machine precision on finite state
//! spaces, and [`chain_oracle`] does exactly that: it solves the Poisson
//! equation for a chain, splits the estimator (or a general weighted
//! V-statistic, or a U-statistic in [`ustat`]) into its martingale
//! quadratic form plus explicit boundary terms, and verifies the identities
//! path by path. [`samplers`] provides the reference data-generating
//! processes, and [`experiments`] packages the reproducible simulation
//! studies built on top.
//!
//! # Example
//!
//! ```
//! use lrv::lagwindow::{lag_window_estimate, ScalarSeries};
//! use lrv::windows::{BandwidthRule, WindowFunction, WindowKind};
//!
//! let values: Vec<f64> = (0..400).map(|i| ((i * 37 + 11) % 17) as f64).collect();
//! let series = ScalarSeries::new(values).unwrap();
//! let window = WindowFunction::new(WindowKind::Bartlett, 1.0).unwrap();
//! let c_n = BandwidthRule::classical(0.5).unwrap().bandwidth(series.len());
//! let estimate = lag_window_estimate(&series, &window, c_n);
//! assert!(estimate.gamma_sq >= 0.0); // Bartlett windows never go negative
//! ```

pub mod chain_oracle;
pub mod ci;
mod corr;
pub mod experiments;
pub mod fixedb;
pub mod lagwindow;
pub mod linalg;
pub mod samplers;
pub mod stats;
pub mod ustat;
pub mod windows;
