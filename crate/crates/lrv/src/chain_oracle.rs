//! Exact Poisson-equation machinery on finite-state chains.
//!
//! Everything the asymptotic theory promises in the limit can be checked to
//! machine precision on a finite state space, because the Poisson equation
//! `(I − P)G = h` and its bivariate analogue have exact solutions by linear
//! algebra. This module supplies those solutions and the decompositions
//! built from them:
//!
//! * [`poisson_solve`] — `G` with `π·G = 0`, and `PG`;
//! * [`deviation_operator`] — `D = Σ_{k≥0} (Pᵏ − Π)`, the inverse of
//!   `I − P` on the space of π-centered functions;
//! * [`bivariate_poisson_solve`] — for a symmetric kernel `h(x, y)`, the
//!   projections `θ = π⊗π(h)`, `h̄₁`, `h̄₂`, and the bivariate solution
//!   `Ḡ₂ = D h̄₂ Dᵀ` together with its smoothings `PḠ₂` and `P²Ḡ₂`;
//! * [`DecompositionReport`] — the exact split of the lag-window estimator
//!   into a diagonal average, a martingale quadratic form, the centering
//!   correction `R_n`, and a telescoped boundary term `ζ_n`, which must
//!   recombine to `Γ²` up to rounding;
//! * [`pair_sum_terms`] — the same split for a general weighted V-statistic
//!   with an arbitrary (total) weight evaluator, with the boundary term in
//!   both its explicit closed form and its implicit form, so the two can be
//!   compared;
//! * [`linear_martingale_decomposition`] — the first-order analogue for
//!   weighted partial sums.
//!
//! The closed forms for the boundary terms are the delicate part; they were
//! derived from the telescoping construction and verified symbolically
//! before being frozen here. The unit tests enforce the identities at
//! `1e-12`-level tolerances on random chains.

use crate::corr::{correlate, LagPolynomial};
use crate::lagwindow::{lag_window_estimate, quadratic_form_value, ScalarSeries};
use crate::linalg::{lu_factor, LinalgError, Matrix};
use crate::windows::WindowFunction;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("transition matrix must be square, got {rows}×{cols}")]
    BadShape { rows: usize, cols: usize },
    #[error("row {row} of the transition matrix sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("negative transition probability {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("chain is not ergodic: P^S vanishes at ({row}, {col})")]
    NotErgodic { row: usize, col: usize },
    #[error("invalid initial distribution: {0}")]
    BadInitial(String),
    #[error("function must assign one value per state: got {got}, need {need}")]
    BadFunction { got: usize, need: usize },
    #[error("bivariate kernel must be a symmetric {need}×{need} matrix")]
    BadKernel { need: usize },
    #[error(transparent)]
    Solver(#[from] LinalgError),
    #[error("solution residual {residual:e} exceeds tolerance; chain too ill-conditioned")]
    ResidualTooLarge { residual: f64 },
    #[error("long-run variance formulas disagree: {a} vs {b}")]
    FormulaDisagreement { a: f64, b: f64 },
    #[error("state {state} out of range for {n_states} states")]
    BadState { state: usize, n_states: usize },
    #[error("path must contain at least {need} states (initial state included), got {got}")]
    PathTooShort { need: usize, got: usize },
    #[error("coefficient count {got} must match the number of observations {need}")]
    BadCoefficients { got: usize, need: usize },
}

const RESIDUAL_TOL: f64 = 1e-11;

/// An ergodic finite-state Markov chain: validated transition matrix, its
/// stationary distribution, and an initial distribution for simulation.
#[derive(Debug, Clone)]
pub struct FiniteChain {
    p: Matrix,
    pi: Vec<f64>,
    initial: Vec<f64>,
}

impl FiniteChain {
    /// Validates `p` and starts the chain from its stationary distribution.
    pub fn new(p: Matrix) -> Result<Self, ChainError> {
        let mut chain = Self::validate(p)?;
        chain.initial = chain.pi.clone();
        Ok(chain)
    }

    /// Validates `p` and uses the given initial distribution.
    pub fn with_initial(p: Matrix, initial: Vec<f64>) -> Result<Self, ChainError> {
        let mut chain = Self::validate(p)?;
        if initial.len() != chain.n_states() {
            return Err(ChainError::BadInitial(format!(
                "length {} does not match {} states",
                initial.len(),
                chain.n_states()
            )));
        }
        let sum: f64 = initial.iter().sum();
        if initial.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-10 {
            return Err(ChainError::BadInitial(
                "entries must be nonnegative and sum to 1".into(),
            ));
        }
        chain.initial = initial.iter().map(|x| x / sum).collect();
        Ok(chain)
    }

    /// Convenience two-state chain with transition matrix
    /// `[[1−a, a], [b, 1−b]]` for `a, b ∈ (0, 1)`.
    pub fn two_state(a: f64, b: f64) -> Result<Self, ChainError> {
        let p = Matrix::from_rows(vec![vec![1.0 - a, a], vec![b, 1.0 - b]])
            .map_err(ChainError::Solver)?;
        Self::new(p)
    }

    /// Builds a chain directly from row vectors.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ChainError> {
        Self::new(Matrix::from_rows(rows)?)
    }

    fn validate(mut p: Matrix) -> Result<Self, ChainError> {
        if !p.is_square() {
            return Err(ChainError::BadShape { rows: p.rows(), cols: p.cols() });
        }
        let s = p.rows();
        for i in 0..s {
            let mut sum = 0.0;
            for j in 0..s {
                let v = p[(i, j)];
                if v < 0.0 {
                    return Err(ChainError::NegativeEntry { row: i, col: j, value: v });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-10 {
                return Err(ChainError::NotStochastic { row: i, sum });
            }
            for j in 0..s {
                p[(i, j)] /= sum;
            }
        }
        // ergodicity: all entries of P^S must be bounded away from zero
        let mut power = p.clone();
        for _ in 1..s {
            power = power.matmul(&p);
        }
        for i in 0..s {
            for j in 0..s {
                if power[(i, j)] <= 1e-14 {
                    return Err(ChainError::NotErgodic { row: i, col: j });
                }
            }
        }
        let pi = solve_stationary(&p)?;
        Ok(FiniteChain { p, initial: pi.clone(), pi })
    }

    pub fn n_states(&self) -> usize {
        self.p.rows()
    }

    pub fn transition(&self) -> &Matrix {
        &self.p
    }

    /// The unique stationary distribution π (πᵀP = πᵀ, Σπ = 1).
    pub fn stationary(&self) -> &[f64] {
        &self.pi
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// π·f for a per-state function.
    pub fn stationary_mean(&self, f: &[f64]) -> Result<f64, ChainError> {
        self.check_function(f)?;
        Ok(self.pi.iter().zip(f).map(|(p, v)| p * v).sum())
    }

    fn check_function(&self, f: &[f64]) -> Result<(), ChainError> {
        if f.len() != self.n_states() {
            return Err(ChainError::BadFunction { got: f.len(), need: self.n_states() });
        }
        Ok(())
    }

    fn check_path(&self, path: &[usize], min_len: usize) -> Result<(), ChainError> {
        if path.len() < min_len {
            return Err(ChainError::PathTooShort { need: min_len, got: path.len() });
        }
        let s = self.n_states();
        for &x in path {
            if x >= s {
                return Err(ChainError::BadState { state: x, n_states: s });
            }
        }
        Ok(())
    }

    /// The regularized operator `I − P + 1πᵀ`, whose unique solve of
    /// `A g = h` yields the π-centered Poisson solution when `π·h = 0`.
    fn fundamental_operator(&self) -> Matrix {
        let s = self.n_states();
        let mut a = Matrix::zeros(s, s);
        for i in 0..s {
            for j in 0..s {
                a[(i, j)] = (i == j) as u8 as f64 - self.p[(i, j)] + self.pi[j];
            }
        }
        a
    }
}

fn solve_stationary(p: &Matrix) -> Result<Vec<f64>, ChainError> {
    let s = p.rows();
    // (I − Pᵀ) π = 0 with the last equation replaced by Σπ = 1
    let mut m = Matrix::zeros(s, s);
    for i in 0..s {
        for j in 0..s {
            m[(i, j)] = (i == j) as u8 as f64 - p[(j, i)];
        }
    }
    for j in 0..s {
        m[(s - 1, j)] = 1.0;
    }
    let mut rhs = vec![0.0; s];
    rhs[s - 1] = 1.0;
    let lu = lu_factor(&m)?;
    let mut pi = lu.solve_vec(&rhs);
    let total: f64 = pi.iter().sum();
    for x in pi.iter_mut() {
        *x /= total;
    }
    // residual check πᵀP = πᵀ
    let left = p.matvec_t(&pi);
    let residual = left
        .iter()
        .zip(&pi)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if residual > RESIDUAL_TOL || pi.iter().any(|&x| x < -1e-12) {
        return Err(ChainError::ResidualTooLarge { residual });
    }
    Ok(pi.into_iter().map(|x| x.max(0.0)).collect())
}

/// Solution of the Poisson equation for a per-state function `f`:
/// `h = f − π(f)`, `(I − P)G = h` with `π·G = 0`, and `PG`.
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    pub pg: Vec<f64>,
}

pub fn poisson_solve(chain: &FiniteChain, f: &[f64]) -> Result<PoissonSolution, ChainError> {
    chain.check_function(f)?;
    let mean = chain.stationary_mean(f)?;
    let h: Vec<f64> = f.iter().map(|v| v - mean).collect();
    let lu = lu_factor(&chain.fundamental_operator())?;
    let g = lu.solve_vec(&h);
    let pg = chain.p.matvec(&g);

    let scale = 1.0
        + h.iter().fold(0.0f64, |m, x| m.max(x.abs()))
        + g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let centered: f64 = chain.pi.iter().zip(&g).map(|(p, v)| p * v).sum();
    let mut residual = centered.abs();
    for i in 0..chain.n_states() {
        residual = residual.max((g[i] - pg[i] - h[i]).abs());
    }
    if residual > RESIDUAL_TOL * scale {
        return Err(ChainError::ResidualTooLarge { residual });
    }
    Ok(PoissonSolution { h, g, pg })
}

/// The deviation operator `D = Σ_{k≥0}(Pᵏ − Π)`: the unique matrix with
/// `(I − P)D = I − Π` and `πᵀD = 0`.
pub fn deviation_operator(chain: &FiniteChain) -> Result<Matrix, ChainError> {
    let s = chain.n_states();
    let mut rhs = Matrix::zeros(s, s);
    for i in 0..s {
        for j in 0..s {
            rhs[(i, j)] = (i == j) as u8 as f64 - chain.pi[j];
        }
    }
    let lu = lu_factor(&chain.fundamental_operator())?;
    let d = lu.solve_matrix(&rhs);

    // residuals of both defining properties
    let mut ip = Matrix::zeros(s, s);
    for i in 0..s {
        for j in 0..s {
            ip[(i, j)] = (i == j) as u8 as f64 - chain.p[(i, j)];
        }
    }
    let lhs = ip.matmul(&d);
    let mut residual = lhs.max_abs_diff(&rhs);
    for v in d.matvec_t(&chain.pi) {
        residual = residual.max(v.abs());
    }
    let scale = 1.0 + d.max_abs();
    if residual > RESIDUAL_TOL * scale {
        return Err(ChainError::ResidualTooLarge { residual });
    }
    Ok(d)
}

/// Hoeffding-type projections and bivariate Poisson solution for a
/// symmetric kernel `h(x, y)` on the state space.
#[derive(Debug, Clone)]
pub struct BivariateSolution {
    /// `θ = ΣΣ π(x)π(y) h(x, y)`.
    pub theta: f64,
    /// First projection `h̄₁(x) = Σ_y h(x, y)π(y) − θ` (π-centered).
    pub h1: Vec<f64>,
    /// Fully degenerate part `h̄₂ = h − h̄₁ ⊕ h̄₁ − θ` (π-centered in each slot).
    pub h2: Matrix,
    /// Bivariate solution `Ḡ₂ = D h̄₂ Dᵀ`.
    pub g2: Matrix,
    /// First-coordinate smoothing `PḠ₂(x, y) = Σ_z P(x, z) Ḡ₂(z, y)`.
    pub pg2: Matrix,
    /// Both-coordinate smoothing `P²Ḡ₂ = P Ḡ₂ Pᵀ`.
    pub p2g2: Matrix,
}

pub fn bivariate_poisson_solve(
    chain: &FiniteChain,
    kernel: &Matrix,
) -> Result<BivariateSolution, ChainError> {
    let s = chain.n_states();
    if kernel.rows() != s || kernel.cols() != s {
        return Err(ChainError::BadKernel { need: s });
    }
    let scale = 1.0 + kernel.max_abs();
    for i in 0..s {
        for j in i + 1..s {
            if (kernel[(i, j)] - kernel[(j, i)]).abs() > 1e-12 * scale {
                return Err(ChainError::BadKernel { need: s });
            }
        }
    }
    let pi = chain.stationary();
    let row_means = kernel.matvec(pi); // Σ_y h(x, y) π(y)
    let theta: f64 = pi.iter().zip(&row_means).map(|(p, v)| p * v).sum();
    let h1: Vec<f64> = row_means.iter().map(|v| v - theta).collect();
    let mut h2 = Matrix::zeros(s, s);
    for x in 0..s {
        for y in 0..s {
            h2[(x, y)] = kernel[(x, y)] - h1[x] - h1[y] - theta;
        }
    }
    let d = deviation_operator(chain)?;
    let g2 = d.matmul(&h2).matmul(&d.transpose());
    let pg2 = chain.p.matmul(&g2);
    let p2g2 = pg2.matmul(&chain.p.transpose());
    Ok(BivariateSolution { theta, h1, h2, g2, pg2, p2g2 })
}

impl BivariateSolution {
    /// The martingale-difference kernel
    /// `Λ₂(x₁, x₂; y₁, y₂) = Ḡ₂(y₁, y₂) − PḠ₂(x₂, y₁) − PḠ₂(x₁, y₂) + P²Ḡ₂(x₁, x₂)`.
    pub fn lambda2(&self, x1: usize, x2: usize, y1: usize, y2: usize) -> f64 {
        self.g2[(y1, y2)] - self.pg2[(x2, y1)] - self.pg2[(x1, y2)] + self.p2g2[(x1, x2)]
    }

    /// `Q_{ℓ,j} = Λ₂(X_{j−1}, X_{ℓ−1}; X_j, X_ℓ)` for 1-based positions on a
    /// path that includes the initial state at index 0.
    pub fn q_pair(&self, path: &[usize], l: usize, j: usize) -> f64 {
        assert!(j >= 1 && l >= 1 && l < path.len() && j < path.len());
        self.lambda2(path[j - 1], path[l - 1], path[j], path[l])
    }
}

/// Largest residual of the bivariate Poisson identity
/// `h̄₂(x,y) = Ḡ₂(x,y) − PḠ₂(y,x) − PḠ₂(x,y) + P²Ḡ₂(x,y)` over all state pairs.
pub fn verify_bivariate_poisson(chain: &FiniteChain, sol: &BivariateSolution) -> f64 {
    let s = chain.n_states();
    let mut worst = 0.0f64;
    for x in 0..s {
        for y in 0..s {
            let rhs = sol.g2[(x, y)] - sol.pg2[(y, x)] - sol.pg2[(x, y)] + sol.p2g2[(x, y)];
            worst = worst.max((sol.h2[(x, y)] - rhs).abs());
        }
    }
    worst
}

/// Largest violation of the martingale property of `Λ₂`: integrating out the
/// last coordinate in either slot against `P` must give zero,
/// `Σ_y P(x, y) Λ₂(u, x; v, y) = 0` and `Σ_v P(u, v) Λ₂(u, x; v, y) = 0`.
pub fn verify_martingale_property(chain: &FiniteChain, sol: &BivariateSolution) -> f64 {
    let s = chain.n_states();
    let p = chain.transition();
    let mut worst = 0.0f64;
    for u in 0..s {
        for x in 0..s {
            for v in 0..s {
                let sum_y: f64 = (0..s).map(|y| p[(x, y)] * sol.lambda2(u, x, v, y)).sum();
                worst = worst.max(sum_y.abs());
            }
            for y in 0..s {
                let sum_v: f64 = (0..s).map(|v| p[(u, v)] * sol.lambda2(u, x, v, y)).sum();
                worst = worst.max(sum_v.abs());
            }
        }
    }
    worst
}

/// The long-run variance `σ²(f)` of the chain functional, computed two
/// structurally different ways that must agree:
/// `π(h·(2G − h))` and `E_π[(G(X₁) − PG(X₀))²]`.
pub fn exact_sigma2(chain: &FiniteChain, f: &[f64]) -> Result<f64, ChainError> {
    let sol = poisson_solve(chain, f)?;
    let s = chain.n_states();
    let pi = chain.stationary();
    let a: f64 = (0..s)
        .map(|x| pi[x] * sol.h[x] * (2.0 * sol.g[x] - sol.h[x]))
        .sum();
    let mut b = 0.0;
    for x in 0..s {
        for y in 0..s {
            let q = sol.g[y] - sol.pg[x];
            b += pi[x] * chain.transition()[(x, y)] * q * q;
        }
    }
    if (a - b).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
        return Err(ChainError::FormulaDisagreement { a, b });
    }
    Ok(a)
}

/// Martingale increments `Q_ℓ = G(X_ℓ) − PG(X_{ℓ−1})` along a path whose
/// first entry is the initial state `X₀`.
pub fn q_sequence(path: &[usize], sol: &PoissonSolution) -> Result<Vec<f64>, ChainError> {
    let s = sol.g.len();
    if path.len() < 2 {
        return Err(ChainError::PathTooShort { need: 2, got: path.len() });
    }
    if let Some(&bad) = path.iter().find(|&&x| x >= s) {
        return Err(ChainError::BadState { state: bad, n_states: s });
    }
    Ok(path
        .windows(2)
        .map(|w| sol.g[w[1]] - sol.pg[w[0]])
        .collect())
}

/// Exact split of the lag-window estimator along a finite-chain path.
///
/// With `h = f − π(f)`, `Q_ℓ = G(X_ℓ) − PG(X_{ℓ−1})` and the quadratic-form
/// weights `ω(0) = 1/n`, `ω(k) = 2 w_b(k/c_n)/n`:
///
/// ```text
/// Γ² = n⁻¹ Σ Q_ℓ²  +  ΣΣ_{j<ℓ} ω(ℓ−j) Q_ℓ Q_j  +  R_n  +  ζ_n
/// ```
///
/// holds exactly. `ζ_n` aggregates the first-order weight/boundary
/// telescoping; it is computed in closed form (see the module docs) and the
/// reported `residual` is `Γ²` minus the four terms.
#[derive(Debug, Clone, Copy)]
pub struct DecompositionReport {
    pub n: usize,
    pub c_n: f64,
    pub gamma_sq: f64,
    /// `n⁻¹ Σ_ℓ Q_ℓ²` — the law-of-large-numbers term.
    pub term_diag: f64,
    /// `ΣΣ_{j<ℓ} ω(ℓ−j) Q_ℓ Q_j` — the martingale quadratic form.
    pub term_quad: f64,
    /// The empirical-centering correction `R_n`.
    pub term_remainder: f64,
    /// The telescoped boundary term `ζ_n`.
    pub term_zeta: f64,
    /// `Γ² − (diag + quad + R_n + ζ_n)`; zero up to rounding.
    pub residual: f64,
}

pub fn decomposition_report(
    path: &[usize],
    f: &[f64],
    window: &WindowFunction,
    c_n: f64,
    chain: &FiniteChain,
) -> Result<DecompositionReport, ChainError> {
    chain.check_path(path, 2)?;
    let sol = poisson_solve(chain, f)?;
    let n = path.len() - 1;
    let nf = n as f64;

    let h_series: Vec<f64> = path[1..].iter().map(|&x| sol.h[x]).collect();
    let series = ScalarSeries::new(h_series).expect("finite per-state values");
    let gamma_sq = lag_window_estimate(&series, window, c_n).gamma_sq;
    let qf = quadratic_form_value(&series, window, c_n);

    let g_vals: Vec<f64> = path.iter().map(|&x| sol.g[x]).collect();
    let p_vals: Vec<f64> = path.iter().map(|&x| sol.pg[x]).collect();
    let q: Vec<f64> = (1..=n).map(|l| g_vals[l] - p_vals[l - 1]).collect();

    let term_diag = q.iter().map(|v| v * v).sum::<f64>() / nf;

    let lag = LagPolynomial::from_window(window, c_n, 2.0 / nf);
    let q_past = correlate(&q, &lag);
    let term_quad: f64 = q.iter().zip(&q_past).map(|(a, b)| a * b).sum();

    // ζ via the telescoped T-form. Series-position vectors (1-based ℓ):
    //   V_ℓ = Σ_{j≤ℓ} ω(ℓ−j) G(X_j),   U_ℓ = Σ_{j≤ℓ} ω(ℓ−j)(PG(X_{j−1}) − PG(X_j))
    let g_series = &g_vals[1..];
    let d_series: Vec<f64> = (1..=n).map(|j| p_vals[j - 1] - p_vals[j]).collect();
    let mut v = correlate(g_series, &lag);
    for (vi, gi) in v.iter_mut().zip(g_series) {
        *vi += gi / nf; // lag-0 weight ω(0) = 1/n
    }
    let mut u = correlate(&d_series, &lag);
    for (ui, di) in u.iter_mut().zip(&d_series) {
        *ui += di / nf;
    }
    let t1: f64 = d_series.iter().zip(&v).map(|(a, b)| a * b).sum();
    let t2: f64 = g_series.iter().zip(&u).map(|(a, b)| a * b).sum();
    let mut t3 = (p_vals[n] * p_vals[n] - p_vals[0] * p_vals[0]) / nf; // k = 0 term
    for k in 1..n {
        let w = lag.eval(k as i64);
        if w != 0.0 {
            t3 += w * (p_vals[n] * p_vals[n - k] - p_vals[0] * p_vals[k]);
        }
    }
    let term_zeta = t1 + t2 + t3;

    let residual = gamma_sq - (term_diag + term_quad + qf.remainder + term_zeta);
    Ok(DecompositionReport {
        n,
        c_n,
        gamma_sq,
        term_diag,
        term_quad,
        term_remainder: qf.remainder,
        term_zeta,
        residual,
    })
}

/// Exact split of a weighted V-statistic `U_n = ΣΣ_{j≤ℓ} w(ℓ,j) h(X_ℓ, X_j)`
/// into constant, linear, diagonal and martingale parts plus the boundary
/// term, the latter both in closed form and implicitly.
#[derive(Debug, Clone, Copy)]
pub struct PairSumTerms {
    pub u_n: f64,
    /// `θ · ΣΣ_{j≤ℓ} w(ℓ,j)`.
    pub term_constant: f64,
    /// `Σ_ℓ w₁(ℓ) h̄₁(X_ℓ)` with `w₁(ℓ) = Σ_{j≤ℓ} w(ℓ,j) + Σ_{j≥ℓ} w(j,ℓ)`.
    pub term_linear: f64,
    /// `Σ_ℓ w(ℓ,ℓ) Q_{ℓ,ℓ}`.
    pub term_diag: f64,
    /// `ΣΣ_{j<ℓ} w(ℓ,j) Q_{ℓ,j}`.
    pub term_quad: f64,
    /// Closed-form boundary term (weight-difference telescoping).
    pub zeta_explicit: f64,
    /// `U_n` minus the four main terms.
    pub zeta_implicit: f64,
}

/// Computes [`PairSumTerms`] for a path with initial state at index 0.
///
/// `weights(ℓ, j)` must be total on `[0, n]²`: the telescoped form touches
/// index 0 and the first superdiagonal, so the evaluator is consulted
/// (slightly) outside the summation triangle.
pub fn pair_sum_terms(
    path: &[usize],
    kernel: &Matrix,
    weights: &dyn Fn(usize, usize) -> f64,
    chain: &FiniteChain,
) -> Result<PairSumTerms, ChainError> {
    chain.check_path(path, 2)?;
    let sol = bivariate_poisson_solve(chain, kernel)?;
    let n = path.len() - 1;

    let mut u_n = 0.0;
    let mut weight_total = 0.0;
    for l in 1..=n {
        for j in 1..=l {
            let w = weights(l, j);
            u_n += w * kernel[(path[l], path[j])];
            weight_total += w;
        }
    }
    let term_constant = sol.theta * weight_total;

    let mut term_linear = 0.0;
    for l in 1..=n {
        let mut w1 = 0.0;
        for j in 1..=l {
            w1 += weights(l, j);
        }
        for j in l..=n {
            w1 += weights(j, l);
        }
        term_linear += w1 * sol.h1[path[l]];
    }

    let mut term_diag = 0.0;
    let mut term_quad = 0.0;
    for l in 1..=n {
        term_diag += weights(l, l) * sol.q_pair(path, l, l);
        for j in 1..l {
            term_quad += weights(l, j) * sol.q_pair(path, l, j);
        }
    }

    // closed-form boundary term: Z₁ + Z₂ + Z₃ + ε
    let a = |i: usize, j: usize| sol.pg2[(path[i], path[j])];
    let c = |i: usize, j: usize| sol.p2g2[(path[i], path[j])];
    let mut zeta = 0.0;
    for l in 1..=n {
        for j in 1..=l {
            let vp1 = weights(l, j) - weights(l - 1, j);
            let vp2 = weights(l, j) - weights(l, j - 1);
            let vp3 =
                weights(l, j) + weights(l - 1, j - 1) - weights(l, j - 1) - weights(l - 1, j);
            zeta += vp1 * (a(l - 1, j) - c(j - 1, l - 1));
            zeta += vp2 * (a(j - 1, l) - c(j - 1, l - 1));
            zeta += vp3 * c(j - 1, l - 1);
        }
    }
    for l in 1..=n {
        zeta += weights(l, 0) * a(0, l) - weights(l - 1, 0) * c(0, l - 1);
        zeta += weights(l - 1, l) * a(l - 1, l) - weights(l, l) * a(l, l);
    }
    for j in 1..=n {
        zeta += weights(n, j) * (c(n, j) - a(n, j));
    }

    let zeta_implicit = u_n - term_constant - term_linear - term_diag - term_quad;
    Ok(PairSumTerms {
        u_n,
        term_constant,
        term_linear,
        term_diag,
        term_quad,
        zeta_explicit: zeta,
        zeta_implicit,
    })
}

/// Martingale-plus-boundary split of a weighted partial sum
/// `Σ_ℓ a_ℓ h(X_ℓ)` (with `a_0 := 0`):
/// `martingale = Σ a_ℓ Q_ℓ` and
/// `boundary = a_1 PG(X₀) − a_n PG(X_n) + Σ_{k<n} (a_{k+1} − a_k) PG(X_k)`.
#[derive(Debug, Clone, Copy)]
pub struct LinearDecomposition {
    pub martingale: f64,
    pub boundary: f64,
}

pub fn linear_martingale_decomposition(
    path: &[usize],
    coeffs: &[f64],
    sol: &PoissonSolution,
) -> Result<LinearDecomposition, ChainError> {
    let s = sol.g.len();
    if path.len() < 2 {
        return Err(ChainError::PathTooShort { need: 2, got: path.len() });
    }
    if let Some(&bad) = path.iter().find(|&&x| x >= s) {
        return Err(ChainError::BadState { state: bad, n_states: s });
    }
    let n = path.len() - 1;
    if coeffs.len() != n {
        return Err(ChainError::BadCoefficients { got: coeffs.len(), need: n });
    }
    let q = q_sequence(path, sol)?;
    let martingale: f64 = coeffs.iter().zip(&q).map(|(a, b)| a * b).sum();
    let mut boundary = coeffs[0] * sol.pg[path[0]] - coeffs[n - 1] * sol.pg[path[n]];
    for k in 1..n {
        boundary += (coeffs[k] - coeffs[k - 1]) * sol.pg[path[k]];
    }
    Ok(LinearDecomposition { martingale, boundary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windows::WindowKind;
    use proptest::prelude::*;

    fn two_state() -> FiniteChain {
        FiniteChain::two_state(0.1, 0.2).unwrap()
    }

    /// Deterministic path generator for tests (splitmix-style hashing).
    fn test_path(chain: &FiniteChain, n: usize, seed: u64) -> Vec<usize> {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut next = move || {
            state ^= state >> 30;
            state = state.wrapping_mul(0xbf58476d1ce4e5b9);
            state ^= state >> 27;
            state = state.wrapping_mul(0x94d049bb133111eb);
            state ^= state >> 31;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let pick = |dist: &[f64], u: f64| {
            let mut acc = 0.0;
            for (i, p) in dist.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            dist.len() - 1
        };
        let mut path = Vec::with_capacity(n + 1);
        path.push(pick(chain.initial(), next()));
        for _ in 0..n {
            let row = chain.transition().row(*path.last().unwrap()).to_vec();
            path.push(pick(&row, next()));
        }
        path
    }

    #[test]
    fn two_state_oracle_values() {
        let chain = two_state();
        let pi = chain.stationary();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((pi[1] - 1.0 / 3.0).abs() < 1e-14);
        let f = [0.0, 1.0];
        let sol = poisson_solve(&chain, &f).unwrap();
        assert!((sol.h[0] + 1.0 / 3.0).abs() < 1e-13);
        assert!((sol.h[1] - 2.0 / 3.0).abs() < 1e-13);
        assert!((sol.g[0] + 10.0 / 9.0).abs() < 1e-12);
        assert!((sol.g[1] - 20.0 / 9.0).abs() < 1e-12);
        assert!((sol.pg[0] + 7.0 / 9.0).abs() < 1e-12);
        assert!((sol.pg[1] - 14.0 / 9.0).abs() < 1e-12);
        let s2 = exact_sigma2(&chain, &f).unwrap();
        assert!((s2 - 34.0 / 27.0).abs() < 1e-12);
    }

    #[test]
    fn two_state_closed_form_sigma2() {
        // π₀π₁(2 − a − b)/(a + b) for the indicator of the second state
        for &(a, b) in &[(0.1, 0.2), (0.3, 0.4), (0.05, 0.9), (0.5, 0.5)] {
            let chain = FiniteChain::two_state(a, b).unwrap();
            let pi = chain.stationary();
            let expect = pi[0] * pi[1] * (2.0 - a - b) / (a + b);
            let got = exact_sigma2(&chain, &[0.0, 1.0]).unwrap();
            assert!(
                (got - expect).abs() < 1e-12 * (1.0 + expect),
                "a={a} b={b}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn q_sequence_hand_values() {
        let chain = two_state();
        let sol = poisson_solve(&chain, &[0.0, 1.0]).unwrap();
        let q = q_sequence(&[0, 1], &sol).unwrap();
        assert!((q[0] - 3.0).abs() < 1e-12);
        let q = q_sequence(&[0, 0], &sol).unwrap();
        assert!((q[0] + 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn projections_hand_values() {
        let chain = two_state();
        // product kernel f(x)f(y) for the indicator of state 1
        let prod = Matrix::from_rows(vec![vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let sol = bivariate_poisson_solve(&chain, &prod).unwrap();
        assert!((sol.theta - 1.0 / 9.0).abs() < 1e-13);
        assert!((sol.h1[0] + 1.0 / 9.0).abs() < 1e-13);
        assert!((sol.h1[1] - 2.0 / 9.0).abs() < 1e-13);
        // additive kernel f(x) + f(y)
        let add = Matrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let sol = bivariate_poisson_solve(&chain, &add).unwrap();
        assert!((sol.theta - 2.0 / 3.0).abs() < 1e-13);
        assert!((sol.h1[0] + 1.0 / 3.0).abs() < 1e-13);
        assert!((sol.h1[1] - 2.0 / 3.0).abs() < 1e-13);
        // the additive kernel is fully non-degenerate at level one: h̄₂ = 0
        assert!(sol.h2.max_abs() < 1e-13);
    }

    #[test]
    fn deviation_operator_properties() {
        let chain = two_state();
        let d = deviation_operator(&chain).unwrap();
        // D h = G for centered h
        let sol = poisson_solve(&chain, &[0.0, 1.0]).unwrap();
        let dh = d.matvec(&sol.h);
        assert!((dh[0] - sol.g[0]).abs() < 1e-12);
        assert!((dh[1] - sol.g[1]).abs() < 1e-12);
    }

    #[test]
    fn decomposition_identity_two_state() {
        let chain = two_state();
        let f = [0.0, 1.0];
        for (kind, b, seed) in [
            (WindowKind::Bartlett, 1.0, 11u64),
            (WindowKind::Quadratic, 0.5, 12),
            (WindowKind::Parzen, 0.8, 13),
            (WindowKind::Truncated, 0.5, 14),
        ] {
            let w = WindowFunction::new(kind, b).unwrap();
            let n = 200;
            let path = test_path(&chain, n, seed);
            let c_n = (n as f64).sqrt();
            let rep = decomposition_report(&path, &f, &w, c_n, &chain).unwrap();
            assert!(
                rep.residual.abs() <= 1e-11 * (1.0 + rep.gamma_sq.abs()),
                "{kind:?}: residual {:e}",
                rep.residual
            );
        }
    }

    #[test]
    fn pair_sum_boundary_forms_agree_for_pair_weights() {
        // three-state chain, symmetric kernel, all-pairs weights
        let chain = FiniteChain::from_rows(vec![
            vec![0.5, 0.3, 0.2],
            vec![0.2, 0.5, 0.3],
            vec![0.25, 0.25, 0.5],
        ])
        .unwrap();
        let kernel = Matrix::from_rows(vec![
            vec![1.0, -0.5, 0.25],
            vec![-0.5, 2.0, 0.75],
            vec![0.25, 0.75, -1.0],
        ])
        .unwrap();
        for seed in 0..5u64 {
            let path = test_path(&chain, 24, 100 + seed);
            let pair = |l: usize, j: usize| if l != j { 1.0 } else { 0.0 };
            let terms = pair_sum_terms(&path, &kernel, &pair, &chain).unwrap();
            let scale = 1.0 + terms.u_n.abs();
            assert!(
                (terms.zeta_explicit - terms.zeta_implicit).abs() <= 1e-10 * scale,
                "seed {seed}: explicit {} vs implicit {}",
                terms.zeta_explicit,
                terms.zeta_implicit
            );
            // pair weights give the constant w₁(ℓ) = n − 1, so the linear
            // term is (n−1) Σ h̄₁(X_ℓ)
            let sol = bivariate_poisson_solve(&chain, &kernel).unwrap();
            let direct: f64 =
                path[1..].iter().map(|&x| sol.h1[x]).sum::<f64>() * (path.len() - 2) as f64;
            assert!((terms.term_linear - direct).abs() < 1e-10 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn pair_sum_matches_lag_window_decomposition_for_product_kernel() {
        // With kernel h(x)h(y) (h centered) and lag-window weights, the
        // general boundary term must coincide with the T-form used by
        // decomposition_report.
        let chain = two_state();
        let f = [0.0, 1.0];
        let sol = poisson_solve(&chain, &f).unwrap();
        let kernel = Matrix::from_rows(vec![
            vec![sol.h[0] * sol.h[0], sol.h[0] * sol.h[1]],
            vec![sol.h[1] * sol.h[0], sol.h[1] * sol.h[1]],
        ])
        .unwrap();
        let n = 40;
        let path = test_path(&chain, n, 77);
        let w = WindowFunction::new(WindowKind::Parzen, 0.7).unwrap();
        let c_n = 9.0;
        let rep = decomposition_report(&path, &f, &w, c_n, &chain).unwrap();
        let lag = crate::corr::LagPolynomial::from_window(&w, c_n, 2.0 / n as f64);
        let omega = move |l: usize, j: usize| -> f64 {
            if l < j {
                return 0.0;
            }
            let k = (l - j) as i64;
            if k == 0 {
                1.0 / n as f64
            } else {
                lag.eval(k)
            }
        };
        let terms = pair_sum_terms(&path, &kernel, &omega, &chain).unwrap();
        let scale = 1.0 + rep.gamma_sq.abs();
        assert!(
            (terms.zeta_explicit - rep.term_zeta).abs() < 1e-11 * scale,
            "{} vs {}",
            terms.zeta_explicit,
            rep.term_zeta
        );
        assert!((terms.zeta_implicit - rep.term_zeta).abs() < 1e-11 * scale);
        assert!((terms.term_diag - rep.term_diag).abs() < 1e-11 * scale);
        assert!((terms.term_quad - rep.term_quad).abs() < 1e-11 * scale);
        // centered product kernel: no constant or linear part
        assert!(terms.term_constant.abs() < 1e-12);
        assert!(terms.term_linear.abs() < 1e-12);
    }

    #[test]
    fn linear_decomposition_identity() {
        let chain = two_state();
        let f = [0.0, 1.0];
        let sol = poisson_solve(&chain, &f).unwrap();
        let n = 60;
        let path = test_path(&chain, n, 5);
        // deterministic non-trivial coefficients
        let coeffs: Vec<f64> = (1..=n).map(|k| ((k * k % 17) as f64) / 7.0 - 1.0).collect();
        let dec = linear_martingale_decomposition(&path, &coeffs, &sol).unwrap();
        let direct: f64 = (1..=n).map(|k| coeffs[k - 1] * sol.h[path[k]]).sum();
        assert!(
            (dec.martingale + dec.boundary - direct).abs() < 1e-12 * (1.0 + direct.abs()),
            "split {} + {} vs direct {}",
            dec.martingale,
            dec.boundary,
            direct
        );
    }

    #[test]
    fn validation_errors() {
        // non-square
        let m = Matrix::from_rows(vec![vec![0.5, 0.5]]).unwrap();
        assert!(matches!(FiniteChain::new(m), Err(ChainError::BadShape { .. })));
        // bad row sum
        let m = Matrix::from_rows(vec![vec![0.5, 0.6], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(FiniteChain::new(m), Err(ChainError::NotStochastic { .. })));
        // negative entry
        let m = Matrix::from_rows(vec![vec![1.2, -0.2], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(FiniteChain::new(m), Err(ChainError::NegativeEntry { .. })));
        // reducible (block identity)
        let m = Matrix::identity(2);
        assert!(matches!(FiniteChain::new(m), Err(ChainError::NotErgodic { .. })));
        // periodic two-state flip: P² = I has zero off-diagonal entries
        let m = Matrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(FiniteChain::new(m), Err(ChainError::NotErgodic { .. })));
        // asymmetric kernel
        let chain = two_state();
        let k = Matrix::from_rows(vec![vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            bivariate_poisson_solve(&chain, &k),
            Err(ChainError::BadKernel { .. })
        ));
        // wrong function length
        assert!(matches!(
            poisson_solve(&chain, &[1.0]),
            Err(ChainError::BadFunction { .. })
        ));
        // state out of range
        let sol = poisson_solve(&chain, &[0.0, 1.0]).unwrap();
        assert!(matches!(
            q_sequence(&[0, 2], &sol),
            Err(ChainError::BadState { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        /// Bivariate solve and martingale property hold at solver precision
        /// on random well-mixed chains.
        #[test]
        fn bivariate_identities_on_random_chains(
            s in 2usize..7,
            raw in prop::collection::vec(0.05f64..1.0, 49),
            kraw in prop::collection::vec(-2.0f64..2.0, 49),
        ) {
            let rows: Vec<Vec<f64>> = (0..s)
                .map(|i| {
                    let r: Vec<f64> = raw[i * s..(i + 1) * s].to_vec();
                    let t: f64 = r.iter().sum();
                    r.into_iter().map(|v| v / t).collect()
                })
                .collect();
            let chain = FiniteChain::from_rows(rows).unwrap();
            let mut kernel = Matrix::zeros(s, s);
            for i in 0..s {
                for j in 0..s {
                    let v = kraw[i * s + j] + kraw[j * s + i];
                    kernel[(i, j)] = v;
                }
            }
            let sol = bivariate_poisson_solve(&chain, &kernel).unwrap();
            let scale = 1.0 + sol.g2.max_abs();
            prop_assert!(verify_bivariate_poisson(&chain, &sol) <= 1e-12 * scale);
            prop_assert!(verify_martingale_property(&chain, &sol) <= 1e-12 * scale);
        }

        /// The decomposition residual vanishes for random paths, windows
        /// and bandwidths.
        #[test]
        fn decomposition_residual_vanishes(
            kind_idx in 0usize..4,
            b in 0.2f64..1.2,
            n in 3usize..120,
            seed in 0u64..1000,
        ) {
            let chain = two_state();
            let f = [0.0, 1.0];
            let w = WindowFunction::new(WindowKind::ALL[kind_idx], b).unwrap();
            let path = test_path(&chain, n, seed);
            let c_n = (n as f64).sqrt().max(1.0);
            let rep = decomposition_report(&path, &f, &w, c_n, &chain).unwrap();
            prop_assert!(
                rep.residual.abs() <= 1e-11 * (1.0 + rep.gamma_sq.abs()),
                "residual {:e}",
                rep.residual
            );
        }
    }
}
