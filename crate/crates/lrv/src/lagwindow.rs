//! Lag-window (spectral-at-zero) variance estimation for scalar series.
//!
//! For observations `y_1..y_n` with sample mean `μ_n`, autocovariances use
//! the divisor `n` (not `n−k`):
//!
//! ```text
//! γ_k = n⁻¹ Σ_{j=1}^{n−k} (y_j − μ_n)(y_{j+k} − μ_n)
//! Γ²  = γ_0 + 2 Σ_{k≥1} w_b(k / c_n) γ_k
//! ```
//!
//! `Γ²` is also exactly a quadratic form in the *uncentered* observations
//! plus a closed-form correction: [`quadratic_form_value`] returns the pair
//! `(Σ_{j≤ℓ} ω(ℓ−j) y_j y_ℓ, R_n)` with `ω(0) = 1/n`, `ω(k) = 2 w_b(k/c_n)/n`,
//! whose sum reproduces [`lag_window_estimate`] to rounding error. The
//! decomposition diagnostics build on that identity.

use crate::corr::{correlate, LagPolynomial};
use crate::windows::WindowFunction;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("series must be non-empty")]
    Empty,
    #[error("series value at index {0} is not finite")]
    NonFinite(usize),
}

/// A validated univariate series: non-empty, all values finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSeries {
    values: Vec<f64>,
}

impl ScalarSeries {
    pub fn new(values: Vec<f64>) -> Result<Self, SeriesError> {
        if values.is_empty() {
            return Err(SeriesError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SeriesError::NonFinite(i));
        }
        Ok(ScalarSeries { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees non-emptiness
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }
}

/// Output of [`lag_window_estimate`].
#[derive(Debug, Clone, Copy)]
pub struct LagWindowEstimate {
    pub gamma_sq: f64,
    pub gamma0: f64,
    pub c_n: f64,
    pub n: usize,
    pub window: WindowFunction,
}

/// Sample autocovariance at lag `k` (divisor `n`).
///
/// # Panics
/// If `k ≥ n`.
pub fn autocovariance(s: &ScalarSeries, k: usize) -> f64 {
    let n = s.len();
    assert!(k < n, "lag {k} out of range for a series of length {n}");
    let mu = s.mean();
    let v = s.values();
    let mut acc = 0.0;
    for j in 0..n - k {
        acc += (v[j] - mu) * (v[j + k] - mu);
    }
    acc / n as f64
}

/// The lag-window estimate `Γ² = γ_0 + 2 Σ_{k≥1} w_b(k/c_n) γ_k`.
///
/// # Panics
/// If `c_n < 1` or `c_n` is not finite.
pub fn lag_window_estimate(
    s: &ScalarSeries,
    window: &WindowFunction,
    c_n: f64,
) -> LagWindowEstimate {
    assert!(c_n.is_finite() && c_n >= 1.0, "bandwidth must be ≥ 1, got {c_n}");
    let n = s.len();
    let mu = s.mean();
    let z: Vec<f64> = s.values().iter().map(|v| v - mu).collect();
    let gamma0 = z.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let lag = LagPolynomial::from_window(window, c_n, 1.0);
    let weighted_past = correlate(&z, &lag);
    let cross: f64 = z.iter().zip(&weighted_past).map(|(a, b)| a * b).sum();
    LagWindowEstimate {
        gamma_sq: gamma0 + 2.0 * cross / n as f64,
        gamma0,
        c_n,
        n,
        window: *window,
    }
}

/// The two pieces of the exact quadratic-form representation of `Γ²`.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticForm {
    /// `Σ_{ℓ=1}^n Σ_{j=1}^{ℓ} ω(ℓ−j) y_j y_ℓ` on the raw (uncentered) values.
    pub quadratic: f64,
    /// The closed-form centering correction `R_n`; `quadratic + remainder`
    /// equals the lag-window estimate exactly.
    pub remainder: f64,
}

/// Splits `Γ²` into the uncentered quadratic form and the correction `R_n`.
pub fn quadratic_form_value(
    s: &ScalarSeries,
    window: &WindowFunction,
    c_n: f64,
) -> QuadraticForm {
    assert!(c_n.is_finite() && c_n >= 1.0, "bandwidth must be ≥ 1, got {c_n}");
    let n = s.len();
    let nf = n as f64;
    let y = s.values();

    let lag = LagPolynomial::from_window(window, c_n, 2.0 / nf);
    let weighted_past = correlate(y, &lag);
    let diag: f64 = y.iter().map(|v| v * v).sum::<f64>() / nf;
    let quadratic =
        diag + y.iter().zip(&weighted_past).map(|(a, b)| a * b).sum::<f64>();

    // R_n needs prefix sums of the window weights over lags 1..n−1
    let k_max = n - 1;
    let wk: Vec<f64> = (1..=k_max)
        .map(|k| window.eval(k as f64 / c_n))
        .collect();
    let mut prefix = vec![0.0; k_max + 1]; // prefix[x] = Σ_{k=1}^{x} w(k/c_n)
    for k in 1..=k_max {
        prefix[k] = prefix[k - 1] + wk[k - 1];
    }
    let total: f64 = y.iter().sum();

    // Σ_{k=1}^{n−1} w(k/c_n)(1 − k/n)
    let tapered: f64 = wk
        .iter()
        .enumerate()
        .map(|(i, w)| w * (1.0 - (i + 1) as f64 / nf))
        .sum();
    // Σ_{j=2}^{n} y_j · prefix(j−1) + Σ_{j=1}^{n−1} y_j · prefix(n−j)
    let mut cross = 0.0;
    for j in 2..=n {
        cross += y[j - 1] * prefix[j - 1];
    }
    for j in 1..=n - 1 {
        cross += y[j - 1] * prefix[n - j];
    }
    let remainder = 2.0 * total * total * tapered / (nf * nf)
        - 2.0 * total * cross / (nf * nf)
        - total * total / (nf * nf);

    QuadraticForm { quadratic, remainder }
}
