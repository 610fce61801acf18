//! Confidence intervals for the stationary mean of a series.
//!
//! Two studentizations of the sample mean, differing only in how the
//! long-run variance estimate is scaled and which reference law supplies
//! the critical value:
//!
//! * [`classical_ci`] — small bandwidth `c_n = n^δ` with the window at
//!   `b = 1`; the studentized mean is asymptotically standard normal, so
//!   the half-width is `z_{1−α/2} · √(Γ²/n)`.
//! * [`fixedb_ci`] — full bandwidth `c_n = n` with the window's own `b`;
//!   the studentized mean converges to `B(1)/√K_b`, whose simulated
//!   quantile `t_{1−α/2}` comes from a [`CriticalValueTable`].
//!
//! A nonpositive variance estimate (possible for the truncated and
//! quadratic windows) is a hard error, not a clamp: the interval is simply
//! undefined and the caller decides what to do.

use crate::fixedb::{CriticalValueTable, FixedbError};
use crate::lagwindow::{lag_window_estimate, ScalarSeries};
use crate::stats::normal_quantile;
use crate::windows::{BandwidthRule, WindowError, WindowFunction, WindowKind};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CiError {
    #[error("variance estimate {gamma_sq} is not positive; the interval is undefined")]
    NonpositiveVariance { gamma_sq: f64 },
    #[error("critical-value table is for {table_kind} b={table_b}, not {want_kind} b={want_b}")]
    TableMismatch {
        table_kind: WindowKind,
        table_b: f64,
        want_kind: WindowKind,
        want_b: f64,
    },
    #[error("confidence level alpha must lie in (0, 1), got {0}")]
    BadLevel(f64),
    #[error("series has {got} observations, need at least {need}")]
    SeriesTooShort { got: usize, need: usize },
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Table(#[from] FixedbError),
}

/// Which studentization produced an interval, with its tuning parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CiMethod {
    Classical { delta: f64 },
    FixedB { b: f64 },
}

impl CiMethod {
    pub fn name(&self) -> &'static str {
        match self {
            CiMethod::Classical { .. } => "classical",
            CiMethod::FixedB { .. } => "fixedb",
        }
    }

    pub fn param(&self) -> f64 {
        match *self {
            CiMethod::Classical { delta } => delta,
            CiMethod::FixedB { b } => b,
        }
    }
}

/// A two-sided interval `center ± half_width` for the stationary mean.
#[derive(Debug, Clone, Copy)]
pub struct ConfidenceInterval {
    pub center: f64,
    pub half_width: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: CiMethod,
    pub alpha: f64,
    /// `√Γ²`, the long-run standard deviation estimate used for the width.
    pub sigma_hat: f64,
    /// The variance estimate itself.
    pub gamma_sq: f64,
    /// Bandwidth at which it was computed.
    pub c_n: f64,
}

impl ConfidenceInterval {
    pub fn covers(&self, truth: f64) -> bool {
        self.lower <= truth && truth <= self.upper
    }

    pub fn length(&self) -> f64 {
        2.0 * self.half_width
    }
}

fn check_level(alpha: f64) -> Result<(), CiError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CiError::BadLevel(alpha))
    }
}

fn assemble(
    s: &ScalarSeries,
    critical: f64,
    gamma_sq: f64,
    c_n: f64,
    method: CiMethod,
    alpha: f64,
) -> Result<ConfidenceInterval, CiError> {
    if gamma_sq <= 0.0 {
        return Err(CiError::NonpositiveVariance { gamma_sq });
    }
    let n = s.len() as f64;
    let center = s.mean();
    let sigma_hat = gamma_sq.sqrt();
    let half_width = critical * sigma_hat / n.sqrt();
    Ok(ConfidenceInterval {
        center,
        half_width,
        lower: center - half_width,
        upper: center + half_width,
        method,
        alpha,
        sigma_hat,
        gamma_sq,
        c_n,
    })
}

/// Normal-theory interval: window at `b = 1`, bandwidth `c_n = n^δ`,
/// critical value `z_{1−α/2}`.
pub fn classical_ci(
    s: &ScalarSeries,
    alpha: f64,
    delta: f64,
    kind: WindowKind,
) -> Result<ConfidenceInterval, CiError> {
    check_level(alpha)?;
    if s.len() < 2 {
        return Err(CiError::SeriesTooShort { got: s.len(), need: 2 });
    }
    let w = WindowFunction::new(kind, 1.0)?;
    let c_n = BandwidthRule::classical(delta)?.bandwidth(s.len());
    let est = lag_window_estimate(s, &w, c_n);
    let z = normal_quantile(1.0 - alpha / 2.0);
    assemble(s, z, est.gamma_sq, c_n, CiMethod::Classical { delta }, alpha)
}

/// Fixed-b interval: the window's own `b`, bandwidth `c_n = n`, critical
/// value from the simulated law of `B(1)/√K_b`. The table must have been
/// simulated for exactly this window.
pub fn fixedb_ci(
    s: &ScalarSeries,
    alpha: f64,
    w: &WindowFunction,
    table: &CriticalValueTable,
) -> Result<ConfidenceInterval, CiError> {
    check_level(alpha)?;
    if s.len() < 2 {
        return Err(CiError::SeriesTooShort { got: s.len(), need: 2 });
    }
    if !table.matches(w) {
        return Err(CiError::TableMismatch {
            table_kind: table.kind(),
            table_b: table.b(),
            want_kind: w.kind(),
            want_b: w.b(),
        });
    }
    let c_n = BandwidthRule::fixed_b(w.b())?.bandwidth(s.len());
    let est = lag_window_estimate(s, w, c_n);
    let t = table.quantile_for(alpha)?;
    assemble(s, t, est.gamma_sq, c_n, CiMethod::FixedB { b: w.b() }, alpha)
}
