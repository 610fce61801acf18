//! Data-generating processes and MCMC samplers used by the experiments.
//!
//! Everything here is driven by [`RngStream`], a counter-based generator
//! addressed by `(master_seed, stream_id)`. Replicates of a Monte Carlo
//! experiment draw from distinct streams of one master seed, which makes
//! parallel runs reproducible independently of scheduling.

use crate::chain_oracle::FiniteChain;
use crate::linalg::{cholesky, LinalgError, Matrix};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("log target is {log_density} at the initial point")]
    InvalidInit { log_density: f64 },
    #[error("dimension mismatch: got {got}, need {need}")]
    Dimension { got: usize, need: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A deterministic random stream: stream `stream_id` of a ChaCha8 generator
/// seeded with `master_seed`. Distinct stream ids yield statistically
/// independent sequences, so parallel replicates can each own one.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_id);
        RngStream { inner }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// One step of inverse-CDF sampling from a discrete distribution.
fn sample_discrete<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Simulates `n_steps` transitions of the chain, returning the path
/// `X₀, X₁, …, X_{n_steps}` (`n_steps + 1` states, initial state included).
pub fn simulate_finite_chain<R: Rng + ?Sized>(
    chain: &FiniteChain,
    n_steps: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut path = Vec::with_capacity(n_steps + 1);
    let mut state = sample_discrete(chain.initial(), rng);
    path.push(state);
    for _ in 0..n_steps {
        state = sample_discrete(chain.transition().row(state), rng);
        path.push(state);
    }
    path
}

/// GARCH(1, 1) specification: `h_k = ω + β h_{k−1} + α u_{k−1}²`,
/// `u_k = √h_k ε_k` with iid standard normal innovations, started from the
/// fixed variance `h₀` (so `u₀ ~ N(0, h₀)`).
#[derive(Debug, Clone, Copy)]
pub struct GarchParams {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub h0: f64,
}

impl GarchParams {
    pub fn new(omega: f64, alpha: f64, beta: f64, h0: f64) -> Result<Self, SamplerError> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(SamplerError::InvalidParameter(format!("omega must be positive, got {omega}")));
        }
        if !(alpha >= 0.0 && alpha.is_finite() && beta >= 0.0 && beta.is_finite()) {
            return Err(SamplerError::InvalidParameter(format!(
                "alpha and beta must be nonnegative, got {alpha}, {beta}"
            )));
        }
        if !(h0 > 0.0 && h0.is_finite()) {
            return Err(SamplerError::InvalidParameter(format!("h0 must be positive, got {h0}")));
        }
        Ok(GarchParams { omega, alpha, beta, h0 })
    }

    /// Stationary mean of `u²`, namely `ω/(1 − α − β)`; requires `α + β < 1`.
    pub fn mean_square(&self) -> Result<f64, SamplerError> {
        let persistence = self.alpha + self.beta;
        if persistence >= 1.0 {
            return Err(SamplerError::InvalidParameter(format!(
                "alpha + beta = {persistence} is not < 1; the squared process has no stationary mean"
            )));
        }
        Ok(self.omega / (1.0 - persistence))
    }
}

/// A simulated GARCH path: observations `u` and conditional variances `h`,
/// both of length `n` with `u[0] = √h₀ ε₀` and `h[0] = h₀`.
#[derive(Debug, Clone)]
pub struct GarchPath {
    pub u: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn simulate_garch<R: Rng + ?Sized>(params: &GarchParams, n: usize, rng: &mut R) -> GarchPath {
    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    garch_from_innovations(params, &eps)
}

/// Deterministic recursion given explicit innovations (unit-tested against
/// hand values; `simulate_garch` is this with iid normal `eps`).
fn garch_from_innovations(params: &GarchParams, eps: &[f64]) -> GarchPath {
    let n = eps.len();
    let mut u = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    let mut h_cur = params.h0;
    for (k, &e) in eps.iter().enumerate() {
        if k > 0 {
            h_cur = params.omega + params.beta * h_cur + params.alpha * u[k - 1] * u[k - 1];
        }
        h.push(h_cur);
        u.push(h_cur.sqrt() * e);
    }
    GarchPath { u, h }
}

/// Poisson log-linear random-effects model on a `groups × items` layout:
///
/// ```text
/// y_{g,i} ~ Poisson(n_{g,i} exp(η_{g,i})),   η_{g,i} = μ + α_g + β_i + ε_{g,i}
/// ```
///
/// with the identification constraint `Σ_g α_g = 0` (the last group effect
/// is implied), normal priors `β_i ~ N(0, σ²_β)`, `ε_{g,i} ~ N(0, σ²_ε)`,
/// and flat priors on `μ`, the free `α`'s and the log-scale of the
/// variances absorbed into the posterior written below.
///
/// The parameter vector is laid out as
/// `[μ, α_1 … α_{G−1}, β_1 … β_I, ε_{1,1} … ε_{G,I} (row-major), σ²_ε, σ²_β]`.
#[derive(Debug, Clone)]
pub struct PoissonRegModel {
    n_groups: usize,
    n_items: usize,
    counts: Vec<f64>,
    exposure: Vec<f64>,
}

impl PoissonRegModel {
    pub fn new(
        n_groups: usize,
        n_items: usize,
        counts: Vec<f64>,
        exposure: Vec<f64>,
    ) -> Result<Self, SamplerError> {
        if n_groups == 0 || n_items == 0 {
            return Err(SamplerError::InvalidParameter("need at least one group and one item".into()));
        }
        let cells = n_groups * n_items;
        if counts.len() != cells {
            return Err(SamplerError::Dimension { got: counts.len(), need: cells });
        }
        if exposure.len() != cells {
            return Err(SamplerError::Dimension { got: exposure.len(), need: cells });
        }
        if counts.iter().any(|&y| !(y >= 0.0) || !y.is_finite()) {
            return Err(SamplerError::InvalidParameter("counts must be finite and nonnegative".into()));
        }
        if exposure.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(SamplerError::InvalidParameter("exposures must be finite and positive".into()));
        }
        Ok(PoissonRegModel { n_groups, n_items, counts, exposure })
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn exposure(&self) -> &[f64] {
        &self.exposure
    }

    /// Dimension of the parameter vector:
    /// `1 + (G − 1) + I + G·I + 2`.
    pub fn dim(&self) -> usize {
        1 + (self.n_groups - 1) + self.n_items + self.n_groups * self.n_items + 2
    }

    /// Column names matching the parameter layout, for tabular output.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = vec!["mu".to_string()];
        for g in 1..self.n_groups {
            names.push(format!("alpha_{g}"));
        }
        for i in 1..=self.n_items {
            names.push(format!("beta_{i}"));
        }
        for g in 1..=self.n_groups {
            for i in 1..=self.n_items {
                names.push(format!("eps_{g}_{i}"));
            }
        }
        names.push("var_eps".to_string());
        names.push("var_beta".to_string());
        names
    }

    /// Log posterior density (up to an additive constant). Nonpositive
    /// variance components give `-inf`, so a Metropolis chain simply never
    /// leaves the support.
    pub fn log_posterior(&self, theta: &[f64]) -> Result<f64, SamplerError> {
        let (g, i) = (self.n_groups, self.n_items);
        if theta.len() != self.dim() {
            return Err(SamplerError::Dimension { got: theta.len(), need: self.dim() });
        }
        let mu = theta[0];
        let alphas = &theta[1..g]; // the G−1 free group effects
        let betas = &theta[g..g + i];
        let eps = &theta[g + i..g + i + g * i];
        let var_eps = theta[g + i + g * i];
        let var_beta = theta[g + i + g * i + 1];
        if var_eps <= 0.0 || var_beta <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let alpha_last: f64 = -alphas.iter().sum::<f64>();

        let mut lp = 0.0;
        for gi in 0..g {
            let a = if gi + 1 < g { alphas[gi] } else { alpha_last };
            for ii in 0..i {
                let cell = gi * i + ii;
                let eta = mu + a + betas[ii] + eps[cell];
                lp += self.counts[cell] * eta - self.exposure[cell] * eta.exp();
            }
        }
        let cells = (g * i) as f64;
        lp -= 0.5 * cells * var_eps.ln();
        lp -= eps.iter().map(|e| e * e).sum::<f64>() / (2.0 * var_eps);
        lp -= 0.5 * i as f64 * var_beta.ln();
        lp -= betas.iter().map(|b| b * b).sum::<f64>() / (2.0 * var_beta);
        Ok(lp)
    }
}

/// Ground truth for synthetic data from [`PoissonRegModel`].
#[derive(Debug, Clone)]
pub struct PoissonRegTruth {
    pub mu: f64,
    /// All group effects, length `G`, summing to zero.
    pub alpha: Vec<f64>,
    pub var_eps: f64,
    pub var_beta: f64,
}

/// Draws item effects, interactions and counts from the model, returning
/// the dataset together with the full true parameter vector (latents
/// included) in the layout expected by `log_posterior`.
pub fn generate_poisson_data<R: Rng + ?Sized>(
    truth: &PoissonRegTruth,
    n_items: usize,
    exposure: f64,
    rng: &mut R,
) -> Result<(PoissonRegModel, Vec<f64>), SamplerError> {
    let g = truth.alpha.len();
    if g == 0 || n_items == 0 {
        return Err(SamplerError::InvalidParameter("need at least one group and one item".into()));
    }
    if truth.alpha.iter().sum::<f64>().abs() > 1e-10 {
        return Err(SamplerError::InvalidParameter("group effects must sum to zero".into()));
    }
    if !(truth.var_eps > 0.0 && truth.var_beta > 0.0) {
        return Err(SamplerError::InvalidParameter("variance components must be positive".into()));
    }
    if !(exposure > 0.0 && exposure.is_finite()) {
        return Err(SamplerError::InvalidParameter(format!("exposure must be positive, got {exposure}")));
    }
    let betas: Vec<f64> = (0..n_items)
        .map(|_| truth.var_beta.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let eps: Vec<f64> = (0..g * n_items)
        .map(|_| truth.var_eps.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut counts = Vec::with_capacity(g * n_items);
    for gi in 0..g {
        for ii in 0..n_items {
            let eta = truth.mu + truth.alpha[gi] + betas[ii] + eps[gi * n_items + ii];
            let lambda = exposure * eta.exp();
            if !lambda.is_finite() {
                return Err(SamplerError::InvalidParameter(format!(
                    "mean count overflow at cell ({gi}, {ii}): eta = {eta}"
                )));
            }
            let poisson = Poisson::new(lambda.max(f64::MIN_POSITIVE))
                .map_err(|e| SamplerError::InvalidParameter(e.to_string()))?;
            counts.push(poisson.sample(rng));
        }
    }
    let model = PoissonRegModel::new(g, n_items, counts, vec![exposure; g * n_items])?;
    let mut theta = Vec::with_capacity(model.dim());
    theta.push(truth.mu);
    theta.extend_from_slice(&truth.alpha[..g - 1]);
    theta.extend_from_slice(&betas);
    theta.extend_from_slice(&eps);
    theta.push(truth.var_eps);
    theta.push(truth.var_beta);
    Ok((model, theta))
}

/// Random-walk Metropolis configuration. The proposal is
/// `θ' = θ + √κ L z` with `z` standard normal and `L` the Cholesky factor
/// of `proposal_cov` (identity if `None`).
#[derive(Debug, Clone)]
pub struct RwmConfig {
    /// Scale multiplier κ on the proposal covariance.
    pub kappa: f64,
    /// Proposal covariance Σ; identity when absent.
    pub proposal_cov: Option<Matrix>,
    pub init: Vec<f64>,
    /// Draws retained after burn-in.
    pub steps: usize,
    pub burn_in: usize,
}

#[derive(Debug, Clone)]
pub struct RwmOutput {
    /// `steps` retained states, in order.
    pub samples: Vec<Vec<f64>>,
    /// Fraction of accepted proposals over the whole run (burn-in included).
    pub acceptance_rate: f64,
}

struct ChainRun {
    kept: Vec<Vec<f64>>,
    acceptance: f64,
    last: Vec<f64>,
}

fn run_rwm_chain<F, R>(
    log_target: &F,
    start: &[f64],
    kappa: f64,
    chol: Option<&Matrix>,
    total: usize,
    keep_from: usize,
    rng: &mut R,
) -> Result<ChainRun, SamplerError>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let dim = start.len();
    let mut current = start.to_vec();
    let mut current_lp = log_target(&current);
    if !current_lp.is_finite() {
        return Err(SamplerError::InvalidInit { log_density: current_lp });
    }
    let sqrt_kappa = kappa.sqrt();
    let mut kept = Vec::with_capacity(total.saturating_sub(keep_from));
    let mut accepted = 0usize;
    let mut proposal = vec![0.0; dim];
    let mut z = vec![0.0; dim];
    for step in 0..total {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        match chol {
            None => {
                for (p, (c, zi)) in proposal.iter_mut().zip(current.iter().zip(&z)) {
                    *p = c + sqrt_kappa * zi;
                }
            }
            Some(l) => {
                let lz = l.matvec(&z);
                for (p, (c, li)) in proposal.iter_mut().zip(current.iter().zip(&lz)) {
                    *p = c + sqrt_kappa * li;
                }
            }
        }
        let prop_lp = log_target(&proposal);
        let log_u = rng.random::<f64>().ln();
        if prop_lp - current_lp > log_u {
            std::mem::swap(&mut current, &mut proposal);
            current_lp = prop_lp;
            accepted += 1;
        }
        if step >= keep_from {
            kept.push(current.clone());
        }
    }
    Ok(ChainRun {
        kept,
        acceptance: accepted as f64 / total.max(1) as f64,
        last: current,
    })
}

/// Runs random-walk Metropolis against `log_target` (a log density up to a
/// constant; `-inf` marks points outside the support).
pub fn rwm_sample<F, R>(
    log_target: F,
    cfg: &RwmConfig,
    rng: &mut R,
) -> Result<RwmOutput, SamplerError>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if !(cfg.kappa > 0.0 && cfg.kappa.is_finite()) {
        return Err(SamplerError::InvalidParameter(format!("kappa must be positive, got {}", cfg.kappa)));
    }
    if cfg.init.is_empty() {
        return Err(SamplerError::InvalidParameter("initial point must be non-empty".into()));
    }
    let chol = match &cfg.proposal_cov {
        None => None,
        Some(sigma) => {
            if sigma.rows() != cfg.init.len() || sigma.cols() != cfg.init.len() {
                return Err(SamplerError::Dimension { got: sigma.rows(), need: cfg.init.len() });
            }
            Some(cholesky(sigma)?)
        }
    };
    let total = cfg.burn_in + cfg.steps;
    let run = run_rwm_chain(
        &log_target,
        &cfg.init,
        cfg.kappa,
        chol.as_ref(),
        total,
        cfg.burn_in,
        rng,
    )?;
    Ok(RwmOutput { samples: run.kept, acceptance_rate: run.acceptance })
}

/// Tunes the Metropolis scale toward a target acceptance rate by stochastic
/// search: each round probes `probe_steps` moves from the current state and
/// updates `κ ← κ exp(2 (acc − target))`. Returns the tuned κ.
pub fn tune_kappa<F, R>(
    log_target: &F,
    cfg: &RwmConfig,
    target_rate: f64,
    rounds: usize,
    probe_steps: usize,
    rng: &mut R,
) -> Result<f64, SamplerError>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(SamplerError::InvalidParameter(format!(
            "target acceptance rate must lie in (0, 1), got {target_rate}"
        )));
    }
    if probe_steps == 0 {
        return Err(SamplerError::InvalidParameter("probe_steps must be positive".into()));
    }
    let chol = match &cfg.proposal_cov {
        None => None,
        Some(sigma) => Some(cholesky(sigma)?),
    };
    let mut kappa = cfg.kappa;
    let mut state = cfg.init.clone();
    for _ in 0..rounds {
        let run = run_rwm_chain(log_target, &state, kappa, chol.as_ref(), probe_steps, probe_steps, rng)?;
        kappa *= (2.0 * (run.acceptance - target_rate)).exp();
        state = run.last;
    }
    Ok(kappa)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rng_streams_are_deterministic_and_distinct() {
        let draw = |seed, stream| -> Vec<u64> {
            let mut rng = RngStream::new(seed, stream);
            (0..4).map(|_| rng.next_u64()).collect()
        };
        assert_eq!(draw(42, 0), draw(42, 0));
        assert_ne!(draw(42, 0), draw(42, 1));
        assert_ne!(draw(42, 0), draw(43, 0));
    }

    #[test]
    fn chain_path_shape_and_occupation() {
        let chain = FiniteChain::two_state(0.1, 0.2).unwrap();
        let mut rng = RngStream::new(7, 0);
        let n = 20_000;
        let path = simulate_finite_chain(&chain, n, &mut rng);
        assert_eq!(path.len(), n + 1);
        assert!(path.iter().all(|&x| x < 2));
        let freq = path[1..].iter().filter(|&&x| x == 1).count() as f64 / n as f64;
        // long-run variance of the indicator is 34/27, so 0.04 ≈ 5 sd
        assert!((freq - 1.0 / 3.0).abs() < 0.04, "occupation {freq}");
    }

    #[test]
    fn garch_recursion_hand_values() {
        let p = GarchParams::new(1.0, 0.1, 0.7, 1.0).unwrap();
        let path = garch_from_innovations(&p, &[1.0, 1.0, 1.0]);
        assert_eq!(path.h[0], 1.0);
        assert_eq!(path.u[0], 1.0);
        assert!((path.h[1] - 1.8).abs() < 1e-15);
        assert!((path.u[1] - 1.8f64.sqrt()).abs() < 1e-15);
        // h₂ = 1 + 0.7·1.8 + 0.1·1.8 = 2.44
        assert!((path.h[2] - 2.44).abs() < 1e-15);
        assert!((path.u[2] - 2.44f64.sqrt()).abs() < 1e-15);
        assert!((p.mean_square().unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn garch_long_run_mean_square() {
        let p = GarchParams::new(1.0, 0.1, 0.7, 5.0).unwrap();
        let mut rng = RngStream::new(3, 0);
        let path = simulate_garch(&p, 200_000, &mut rng);
        let mean_sq = path.u.iter().map(|u| u * u).sum::<f64>() / path.u.len() as f64;
        assert!((mean_sq - 5.0).abs() < 0.3, "mean square {mean_sq}");
        assert!(path.h.iter().all(|&h| h >= 1.0)); // h ≥ ω always
    }

    #[test]
    fn garch_rejects_bad_parameters() {
        assert!(GarchParams::new(0.0, 0.1, 0.7, 1.0).is_err());
        assert!(GarchParams::new(1.0, -0.1, 0.7, 1.0).is_err());
        assert!(GarchParams::new(1.0, 0.1, 0.7, 0.0).is_err());
        let p = GarchParams::new(1.0, 0.5, 0.5, 1.0).unwrap();
        assert!(p.mean_square().is_err());
    }

    /// Straight-line reimplementation of the posterior for cross-checking:
    /// builds the full η matrix explicitly instead of streaming over cells.
    fn log_posterior_reference(model: &PoissonRegModel, theta: &[f64]) -> f64 {
        let (g, i) = (model.n_groups(), model.n_items());
        let mu = theta[0];
        let mut alpha: Vec<f64> = theta[1..g].to_vec();
        alpha.push(-alpha.iter().sum::<f64>());
        let beta = &theta[g..g + i];
        let eps = &theta[g + i..g + i + g * i];
        let var_eps = theta[theta.len() - 2];
        let var_beta = theta[theta.len() - 1];
        if var_eps <= 0.0 || var_beta <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut lp = 0.0;
        for gi in 0..g {
            for ii in 0..i {
                let eta = mu + alpha[gi] + beta[ii] + eps[gi * i + ii];
                lp += model.counts()[gi * i + ii] * eta - model.exposure()[gi * i + ii] * eta.exp();
                lp -= eps[gi * i + ii].powi(2) / (2.0 * var_eps);
            }
        }
        lp -= 0.5 * (g * i) as f64 * var_eps.ln() + 0.5 * i as f64 * var_beta.ln();
        lp -= beta.iter().map(|b| b * b).sum::<f64>() / (2.0 * var_beta);
        lp
    }

    fn small_model() -> (PoissonRegModel, Vec<f64>) {
        let model = PoissonRegModel::new(
            2,
            3,
            vec![4.0, 0.0, 7.0, 2.0, 5.0, 1.0],
            vec![10.0; 6],
        )
        .unwrap();
        // dim = 1 + 1 + 3 + 6 + 2 = 13
        let theta = vec![
            -0.4, 0.25, // mu, alpha_1
            0.1, -0.3, 0.2, // beta
            0.05, -0.1, 0.0, 0.12, -0.07, 0.03, // eps
            0.2, 0.5, // variances
        ];
        (model, theta)
    }

    #[test]
    fn log_posterior_matches_reference_and_handles_support() {
        let (model, theta) = small_model();
        assert_eq!(model.dim(), 13);
        let lp = model.log_posterior(&theta).unwrap();
        let reference = log_posterior_reference(&model, &theta);
        assert!((lp - reference).abs() < 1e-12 * (1.0 + reference.abs()));

        let mut bad = theta.clone();
        bad[11] = 0.0; // var_eps = 0 leaves the support
        assert_eq!(model.log_posterior(&bad).unwrap(), f64::NEG_INFINITY);
        bad[11] = 0.2;
        bad[12] = -1.0;
        assert_eq!(model.log_posterior(&bad).unwrap(), f64::NEG_INFINITY);

        assert!(matches!(
            model.log_posterior(&theta[..12]),
            Err(SamplerError::Dimension { .. })
        ));
    }

    #[test]
    fn log_posterior_shift_invariance() {
        // moving δ from μ into all β's leaves η unchanged, so the posterior
        // changes only through the β prior term
        let (model, theta) = small_model();
        let delta = 0.37;
        let mut shifted = theta.clone();
        shifted[0] += delta;
        for b in shifted.iter_mut().skip(2).take(3) {
            *b -= delta;
        }
        let var_beta = theta[12];
        let prior_diff: f64 = (0..3)
            .map(|k| (shifted[2 + k].powi(2) - theta[2 + k].powi(2)) / (2.0 * var_beta))
            .sum();
        let lp0 = model.log_posterior(&theta).unwrap();
        let lp1 = model.log_posterior(&shifted).unwrap();
        assert!(((lp1 - lp0) + prior_diff).abs() < 1e-10);
    }

    #[test]
    fn parameter_names_match_layout() {
        let (model, _) = small_model();
        let names = model.parameter_names();
        assert_eq!(names.len(), model.dim());
        assert_eq!(names[0], "mu");
        assert_eq!(names[1], "alpha_1");
        assert_eq!(names[2], "beta_1");
        assert_eq!(names[5], "eps_1_1");
        assert_eq!(names[11], "var_eps");
        assert_eq!(names[12], "var_beta");
    }

    #[test]
    fn generated_data_is_consistent() {
        let truth = PoissonRegTruth {
            mu: -1.0,
            alpha: vec![0.35, 0.15, -0.5],
            var_eps: 0.1,
            var_beta: 0.3,
        };
        let mut rng = RngStream::new(11, 0);
        let (model, theta) = generate_poisson_data(&truth, 20, 1000.0, &mut rng).unwrap();
        assert_eq!(model.n_groups(), 3);
        assert_eq!(model.n_items(), 20);
        assert_eq!(theta.len(), model.dim());
        assert_eq!(theta[0], truth.mu);
        assert_eq!(theta[theta.len() - 2], truth.var_eps);
        assert_eq!(theta[theta.len() - 1], truth.var_beta);
        assert!(model.log_posterior(&theta).unwrap().is_finite());
        // exposure 1000 at η ≈ −1 means counts in the hundreds
        let mean_count = model.counts().iter().sum::<f64>() / 60.0;
        assert!(mean_count > 50.0 && mean_count < 2000.0, "mean count {mean_count}");

        let bad = PoissonRegTruth { alpha: vec![0.5, 0.1], ..truth.clone() };
        assert!(generate_poisson_data(&bad, 5, 10.0, &mut rng).is_err());
    }

    #[test]
    fn rwm_samples_standard_normal() {
        let cfg = RwmConfig {
            kappa: 5.66, // ≈ 2.38² — the optimal scale in one dimension
            proposal_cov: None,
            init: vec![0.0],
            steps: 20_000,
            burn_in: 1_000,
        };
        let mut rng = RngStream::new(101, 0);
        let out = rwm_sample(|x| -0.5 * x[0] * x[0], &cfg, &mut rng).unwrap();
        assert_eq!(out.samples.len(), 20_000);
        assert!(out.acceptance_rate > 0.2 && out.acceptance_rate < 0.7);
        let mean: f64 = out.samples.iter().map(|s| s[0]).sum::<f64>() / 20_000.0;
        let var: f64 = out.samples.iter().map(|s| (s[0] - mean).powi(2)).sum::<f64>() / 20_000.0;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.15, "var {var}");
    }

    #[test]
    fn rwm_with_proposal_covariance_and_determinism() {
        let sigma = Matrix::from_rows(vec![vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let cfg = RwmConfig {
            kappa: 2.0,
            proposal_cov: Some(sigma),
            init: vec![0.5, -0.5],
            steps: 500,
            burn_in: 100,
        };
        let target = |x: &[f64]| -0.5 * (x[0] * x[0] + x[1] * x[1]);
        let run = |seed| {
            let mut rng = RngStream::new(seed, 3);
            rwm_sample(target, &cfg, &mut rng).unwrap()
        };
        let a = run(5);
        let b = run(5);
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.acceptance_rate, b.acceptance_rate);
        let c = run(6);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn rwm_rejects_bad_configs() {
        let target = |x: &[f64]| -0.5 * x[0] * x[0];
        let base = RwmConfig {
            kappa: 1.0,
            proposal_cov: None,
            init: vec![0.0],
            steps: 10,
            burn_in: 0,
        };
        let mut rng = RngStream::new(1, 0);
        let bad_kappa = RwmConfig { kappa: 0.0, ..base.clone() };
        assert!(rwm_sample(target, &bad_kappa, &mut rng).is_err());
        // initial point outside the support
        let out = rwm_sample(|_| f64::NEG_INFINITY, &base, &mut rng);
        assert!(matches!(out, Err(SamplerError::InvalidInit { .. })));
        // covariance dimension mismatch
        let bad_cov = RwmConfig {
            proposal_cov: Some(Matrix::identity(3)),
            ..base.clone()
        };
        assert!(matches!(
            rwm_sample(target, &bad_cov, &mut rng),
            Err(SamplerError::Dimension { .. })
        ));
    }

    #[test]
    fn kappa_tuning_reaches_target_band() {
        let target = |x: &[f64]| -0.5 * x.iter().map(|v| v * v).sum::<f64>();
        let cfg = RwmConfig {
            kappa: 400.0, // far too large: acceptance ≈ 0
            proposal_cov: None,
            init: vec![0.0, 0.0, 0.0],
            steps: 0,
            burn_in: 0,
        };
        let mut rng = RngStream::new(21, 0);
        let tuned = tune_kappa(&target, &cfg, 0.23, 20, 400, &mut rng).unwrap();
        assert!(tuned < 400.0);
        let probe_cfg = RwmConfig { kappa: tuned, steps: 2_000, ..cfg };
        let out = rwm_sample(target, &probe_cfg, &mut rng).unwrap();
        assert!(
            (out.acceptance_rate - 0.23).abs() < 0.12,
            "tuned κ = {tuned}, acceptance {}",
            out.acceptance_rate
        );
    }
}
