//! Exact O(n) lag-weighted correlation sums.
//!
//! Every window shape in this crate is a piecewise polynomial of degree ≤ 3,
//! so the weighted sums `out[ℓ] = Σ_{k≥1} λ(k) · y[ℓ−k]` that dominate both
//! the estimator and the grid simulation can be maintained by a sliding
//! recursion instead of an O(n·K) double loop: for each polynomial piece we
//! carry the power sums `S_d(ℓ) = Σ_k k^d y[ℓ−k]` over the active lag range
//! and advance them with a binomial shift,
//!
//! ```text
//! S_d(ℓ+1) = Σ_{e≤d} C(d,e) S_e(ℓ)   − (k_hi+1)^d y[ℓ−k_hi]   + k_lo^d y[ℓ+1−k_lo]
//!            (shift all lags by one)   (drop the lag leaving)    (admit the new lag)
//! ```
//!
//! which is exact in real arithmetic. The naive loop is kept both as the
//! small-problem path (better constant, tighter rounding) and as the oracle
//! the property tests compare against.

use crate::windows::WindowFunction;

/// One polynomial piece in the integer lag `k`: weight
/// `c₀ + c₁k + c₂k² + c₃k³` for `k_lo ≤ k ≤ k_hi`.
#[derive(Debug, Clone)]
struct IntPiece {
    k_lo: i64,
    k_hi: i64,
    coef: [f64; 4],
    degree: usize,
}

/// Lag weights `λ(k)`, `k ≥ 1`, as polynomial pieces with bounded support.
#[derive(Debug, Clone)]
pub(crate) struct LagPolynomial {
    pieces: Vec<IntPiece>,
    max_lag: i64,
}

/// Largest integer strictly below `x`.
fn last_int_below(x: f64) -> i64 {
    let f = x.floor();
    if f == x {
        x as i64 - 1
    } else {
        f as i64
    }
}

impl LagPolynomial {
    /// Weights `λ(k) = scale · w_b(k / c_n)` for integer lags `k ≥ 1`.
    pub(crate) fn from_window(w: &WindowFunction, c_n: f64, scale: f64) -> Self {
        assert!(c_n >= 1.0 && c_n.is_finite(), "bandwidth must be ≥ 1");
        let mut pieces = Vec::new();
        let mut max_lag = 0;
        for (u_lo, u_hi, cu) in w.shape_pieces() {
            let k_lo = (u_lo * c_n).ceil().max(1.0) as i64;
            let k_hi = last_int_below(u_hi * c_n);
            if k_hi < k_lo {
                continue;
            }
            // substitute u = k / c_n and rescale
            let mut coef = [0.0; 4];
            let mut degree = 0;
            for d in 0..4 {
                coef[d] = scale * cu[d] / c_n.powi(d as i32);
                if cu[d] != 0.0 {
                    degree = d;
                }
            }
            max_lag = max_lag.max(k_hi);
            pieces.push(IntPiece { k_lo, k_hi, coef, degree });
        }
        LagPolynomial { pieces, max_lag }
    }

    /// λ(k); zero outside the support.
    pub(crate) fn eval(&self, k: i64) -> f64 {
        for p in &self.pieces {
            if k >= p.k_lo && k <= p.k_hi {
                let x = k as f64;
                return p.coef[0] + x * (p.coef[1] + x * (p.coef[2] + x * p.coef[3]));
            }
        }
        0.0
    }
}

/// `out[i] = Σ_{k=1}^{min(max_lag, i)} λ(k) · y[i−k]`, choosing the naive or
/// sliding evaluation by problem size.
pub(crate) fn correlate(y: &[f64], lag: &LagPolynomial) -> Vec<f64> {
    let n = y.len() as i64;
    let k_eff = lag.max_lag.min(n - 1).max(0);
    if (n as i128) * (k_eff as i128 + 1) <= 1 << 24 {
        correlate_naive(y, lag)
    } else {
        correlate_sliding(y, lag)
    }
}

pub(crate) fn correlate_naive(y: &[f64], lag: &LagPolynomial) -> Vec<f64> {
    let n = y.len();
    let k_max = lag.max_lag.min(n as i64 - 1).max(0) as usize;
    let table: Vec<f64> = (1..=k_max).map(|k| lag.eval(k as i64)).collect();
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let kcap = k_max.min(i);
        let mut acc = 0.0;
        for k in 1..=kcap {
            acc += table[k - 1] * y[i - k];
        }
        *o = acc;
    }
    out
}

pub(crate) fn correlate_sliding(y: &[f64], lag: &LagPolynomial) -> Vec<f64> {
    const BINOM: [[f64; 4]; 4] = [
        [1.0, 0.0, 0.0, 0.0],
        [1.0, 1.0, 0.0, 0.0],
        [1.0, 2.0, 1.0, 0.0],
        [1.0, 3.0, 3.0, 1.0],
    ];
    let n = y.len();
    let mut out = vec![0.0; n];
    for p in &lag.pieces {
        let deg = p.degree;
        let k_lo = p.k_lo;
        let k_hi = p.k_hi;
        // k_lo^d and (k_hi+1)^d for the boundary updates
        let mut lo_pow = [1.0; 4];
        let mut hi_pow = [1.0; 4];
        for d in 1..=deg {
            lo_pow[d] = lo_pow[d - 1] * k_lo as f64;
            hi_pow[d] = hi_pow[d - 1] * (k_hi + 1) as f64;
        }
        let mut s = [0.0f64; 4];
        for i in 0..n as i64 {
            // advance S from position i-1 to i
            let mut next = [0.0f64; 4];
            for d in (0..=deg).rev() {
                let row = &BINOM[d];
                let mut acc = 0.0;
                for e in 0..=d {
                    acc += row[e] * s[e];
                }
                next[d] = acc;
            }
            if i - 1 >= k_hi {
                let leaving = y[(i - 1 - k_hi) as usize];
                for d in 0..=deg {
                    next[d] -= hi_pow[d] * leaving;
                }
            }
            if i >= k_lo {
                let entering = y[(i - k_lo) as usize];
                for d in 0..=deg {
                    next[d] += lo_pow[d] * entering;
                }
            }
            s = next;
            let mut contrib = 0.0;
            for d in 0..=deg {
                contrib += p.coef[d] * s[d];
            }
            out[i as usize] += contrib;
        }
    }
    out
}
