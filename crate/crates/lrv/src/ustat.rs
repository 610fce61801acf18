//! U-statistics of Markov chains on finite state spaces.
//!
//! For a symmetric kernel `h` and observations `X_1..X_n`, the statistic is
//! the pair sum `U_n = Σ_{j<ℓ} h(X_j, X_ℓ)`. Around its stationary mean
//! `θ = E_{π⊗π} h`, the Hoeffding-style projection splits `U_n` into a
//! constant, a linear term driven by the first projection
//! `h̄₁(x) = E_π h(x, ·) − θ`, a quadratic form in the degenerate part, and
//! a remainder:
//!
//! ```text
//! U_n = θ·n(n−1)/2 + (n−1)·Σ_ℓ h̄₁(X_ℓ) + Σ_{j<ℓ} Q_{ℓ,j} + ζ_n
//! ```
//!
//! where `Q_{ℓ,j} = Λ₂(X_{j−1}, X_{ℓ−1}; X_j, X_ℓ)` is built from the
//! bivariate Poisson solution for the degenerate part `h̄₂`. When the
//! first projection is non-degenerate the linear term dominates and the
//! centered, scaled statistic `(U_n − θ·n(n−1)/2) / (√n·(n−1)·σ₁)` is
//! asymptotically standard normal; [`clt_normalize`] reports both that
//! statistic and the linear-term statistic it tracks.
//!
//! Pair sums are accumulated in `O(n·S)` time using running state counts;
//! only [`u_statistic_fn`], the closure-based helper for arbitrary numeric
//! samples, is quadratic in `n`.

use crate::chain_oracle::{bivariate_poisson_solve, exact_sigma2, ChainError, FiniteChain};
use crate::linalg::{LinalgError, Matrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum UstatError {
    #[error("kernel matrix must be square, got {rows}×{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("kernel matrix must be symmetric; entry ({i},{j}) differs from ({j},{i}) by {diff:e}")]
    Asymmetric { i: usize, j: usize, diff: f64 },
    #[error("observation {state} is outside the {n_states}-state kernel domain")]
    BadState { state: usize, n_states: usize },
    #[error("need at least {need} observations, got {got}")]
    TooFewObservations { need: usize, got: usize },
    #[error(
        "degenerate kernel: the first projection has long-run variance {sigma1_sq:e}, \
         so the CLT normalization is undefined"
    )]
    DegenerateKernel { sigma1_sq: f64 },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A symmetric kernel on a finite state space, stored as a matrix
/// `h[(x, y)] = h(x, y)`.
#[derive(Debug, Clone)]
pub struct UStatKernel {
    h: Matrix,
}

impl UStatKernel {
    /// Wraps a matrix, requiring it to be square and symmetric.
    pub fn new(h: Matrix) -> Result<Self, UstatError> {
        if !h.is_square() {
            return Err(UstatError::NotSquare { rows: h.rows(), cols: h.cols() });
        }
        let scale = 1.0 + h.max_abs();
        for i in 0..h.rows() {
            for j in (i + 1)..h.cols() {
                let diff = (h[(i, j)] - h[(j, i)]).abs();
                if diff > 1e-12 * scale {
                    return Err(UstatError::Asymmetric { i, j, diff });
                }
            }
        }
        Ok(Self { h })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, UstatError> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// Additive kernel `h(x, y) = f(x) + f(y)`.
    pub fn additive(f: &[f64]) -> Self {
        let s = f.len();
        let mut h = Matrix::zeros(s, s);
        for x in 0..s {
            for y in 0..s {
                h[(x, y)] = f[x] + f[y];
            }
        }
        Self { h }
    }

    /// Product kernel `h(x, y) = f(x)·f(y)`.
    pub fn product(f: &[f64]) -> Self {
        let s = f.len();
        let mut h = Matrix::zeros(s, s);
        for x in 0..s {
            for y in 0..s {
                h[(x, y)] = f[x] * f[y];
            }
        }
        Self { h }
    }

    pub fn n_states(&self) -> usize {
        self.h.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.h
    }
}

fn check_observations(obs: &[usize], n_states: usize, need: usize) -> Result<(), UstatError> {
    if obs.len() < need {
        return Err(UstatError::TooFewObservations { need, got: obs.len() });
    }
    for &x in obs {
        if x >= n_states {
            return Err(UstatError::BadState { state: x, n_states });
        }
    }
    Ok(())
}

/// Pair sum `Σ_{j<ℓ} h(x_j, x_ℓ)` over observed states, in `O(n·S)` time.
pub fn u_statistic(observations: &[usize], kernel: &UStatKernel) -> Result<f64, UstatError> {
    let s = kernel.n_states();
    check_observations(observations, s, 2)?;
    let mut counts = vec![0.0_f64; s];
    let mut total = 0.0;
    for &x in observations {
        let mut row = 0.0;
        for (state, &c) in counts.iter().enumerate() {
            row += c * kernel.h[(state, x)];
        }
        total += row;
        counts[x] += 1.0;
    }
    Ok(total)
}

/// Pair sum `Σ_{j<ℓ} h(values[j], values[ℓ])` for an arbitrary closure.
/// Quadratic in the sample size; empty and singleton samples sum to zero.
pub fn u_statistic_fn<F: Fn(f64, f64) -> f64>(values: &[f64], h: F) -> f64 {
    let mut total = 0.0;
    for l in 1..values.len() {
        for j in 0..l {
            total += h(values[j], values[l]);
        }
    }
    total
}

/// Scaling constants behind the studentized U-statistic.
#[derive(Debug, Clone, Copy)]
pub struct CltNormalization {
    /// Stationary kernel mean `θ = E_{π⊗π} h`.
    pub theta: f64,
    /// Long-run variance of the first projection `h̄₁` under the chain.
    pub sigma1_sq: f64,
    /// Variance scale of the full statistic, `n·(n−1)²·σ₁²`.
    pub sigma_n_sq: f64,
    /// Number of observations.
    pub n: usize,
}

/// A centered-and-scaled U-statistic together with the linear-term
/// statistic it is asymptotically equivalent to.
#[derive(Debug, Clone, Copy)]
pub struct UStatClt {
    /// Raw pair sum `U_n`.
    pub u_n: f64,
    /// `(U_n − θ·n(n−1)/2) / √(n·(n−1)²·σ₁²)`.
    pub statistic: f64,
    /// `Σ_ℓ h̄₁(X_ℓ) / (σ₁·√n)` — the studentized linear term alone.
    pub linear_statistic: f64,
    pub normalization: CltNormalization,
}

/// Centers and scales the U-statistic of `path` (states `X_0..X_n`; the
/// kernel sees `X_1..X_n`) so it is asymptotically standard normal.
///
/// Fails with [`UstatError::DegenerateKernel`] when the first projection
/// carries no long-run variance, in which case this normalization is the
/// wrong one (the statistic lives at a smaller order).
pub fn clt_normalize(
    path: &[usize],
    chain: &FiniteChain,
    kernel: &UStatKernel,
) -> Result<UStatClt, UstatError> {
    if path.len() < 3 {
        return Err(UstatError::TooFewObservations { need: 3, got: path.len() });
    }
    let sol = bivariate_poisson_solve(chain, kernel.matrix())?;
    let sigma1_sq = exact_sigma2(chain, &sol.h1)?;
    let scale = 1.0 + kernel.matrix().max_abs();
    if sigma1_sq <= 1e-14 * scale * scale {
        return Err(UstatError::DegenerateKernel { sigma1_sq });
    }
    let obs = &path[1..];
    let n = obs.len();
    let u_n = u_statistic(obs, kernel)?;
    let nf = n as f64;
    let sigma_n_sq = nf * (nf - 1.0) * (nf - 1.0) * sigma1_sq;
    let statistic = (u_n - sol.theta * nf * (nf - 1.0) / 2.0) / sigma_n_sq.sqrt();
    let linear_sum: f64 = obs.iter().map(|&x| sol.h1[x]).sum();
    let linear_statistic = linear_sum / (sigma1_sq.sqrt() * nf.sqrt());
    Ok(UStatClt {
        u_n,
        statistic,
        linear_statistic,
        normalization: CltNormalization { theta: sol.theta, sigma1_sq, sigma_n_sq, n },
    })
}

/// The exact projection split of a U-statistic along the chain.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticDecomposition {
    pub u_n: f64,
    /// `θ·n(n−1)/2`.
    pub constant: f64,
    /// `(n−1)·Σ_ℓ h̄₁(X_ℓ)`.
    pub linear: f64,
    /// `Σ_{j<ℓ} Q_{ℓ,j}`, the quadratic form in the martingale kernel.
    pub quadratic: f64,
    /// `U_n − constant − linear − quadratic`; boundary-sized, not `O(n)`.
    pub remainder: f64,
}

/// Splits the U-statistic of `path` (states `X_0..X_n`) into constant,
/// linear, quadratic, and remainder pieces. Unlike [`clt_normalize`] this
/// is happy with degenerate kernels — the identity holds regardless.
pub fn quadratic_decomposition(
    path: &[usize],
    chain: &FiniteChain,
    kernel: &UStatKernel,
) -> Result<QuadraticDecomposition, UstatError> {
    if path.len() < 3 {
        return Err(UstatError::TooFewObservations { need: 3, got: path.len() });
    }
    let s = kernel.n_states();
    check_observations(path, s, 3)?;
    let sol = bivariate_poisson_solve(chain, kernel.matrix())?;
    let obs = &path[1..];
    let n = obs.len();
    let nf = n as f64;
    let u_n = u_statistic(obs, kernel)?;
    let constant = sol.theta * nf * (nf - 1.0) / 2.0;
    let linear = (nf - 1.0) * obs.iter().map(|&x| sol.h1[x]).sum::<f64>();

    // Q_{ℓ,j} = Ḡ₂(X_j, X_ℓ) − PḠ₂(X_{ℓ−1}, X_j) − PḠ₂(X_{j−1}, X_ℓ)
    //         + P²Ḡ₂(X_{j−1}, X_{ℓ−1}),
    // summed over 1 ≤ j < ℓ ≤ n via running counts of X_j and X_{j−1}.
    let mut cnt_obs = vec![0.0_f64; s]; // multiplicities of X_j, j ≤ ℓ−1
    let mut cnt_prev = vec![0.0_f64; s]; // multiplicities of X_{j−1}, j ≤ ℓ−1
    cnt_obs[path[1]] += 1.0;
    cnt_prev[path[0]] += 1.0;
    let mut quadratic = 0.0;
    for l in 2..=n {
        let xl = path[l];
        let xl_prev = path[l - 1];
        let mut acc = 0.0;
        for state in 0..s {
            acc += cnt_obs[state] * (sol.g2[(state, xl)] - sol.pg2[(xl_prev, state)]);
            acc += cnt_prev[state] * (sol.p2g2[(state, xl_prev)] - sol.pg2[(state, xl)]);
        }
        quadratic += acc;
        cnt_obs[xl] += 1.0;
        cnt_prev[xl_prev] += 1.0;
    }

    let remainder = u_n - constant - linear - quadratic;
    Ok(QuadraticDecomposition { u_n, constant, linear, quadratic, remainder })
}
