//! Lag windows and bandwidth rules.
//!
//! A lag window is a weight function `w_b(x) = shape(x/b)` on `x ≥ 0` with
//! window parameter `b > 0`; it damps autocovariance contributions by lag.
//! Four classical shapes are provided:
//!
//! * **Bartlett** — `1 − x/b` on `[0, b)`;
//! * **Quadratic** — `1 − (x/b)²` on `[0, b)`;
//! * **Truncated** — `1` on `[0, b)` (right-open, so the lag exactly at the
//!   cutoff is excluded; the jump at `b` makes this the only discontinuous
//!   shape);
//! * **Parzen** — the piecewise cubic `1 − 6r² + 6r³` for `r = x/b ≤ 1/2`,
//!   `2(1 − r)³` for `1/2 < r ≤ 1`.
//!
//! Besides pointwise evaluation the module exposes the integral quantities
//! that the fixed-b limiting distribution needs: the antiderivative
//! `W(t) = ∫₀ᵗ w_b`, the boundary function `g(t) = W(t) + W(1−t)`, and the
//! mean weight `∫₀¹ (1−t) w_b(t) dt`. All are closed forms, checked in the
//! tests against adaptive quadrature.
//!
//! [`BandwidthRule`] maps a sample size to the truncation point `c_n` of the
//! estimator: `Classical` uses `c_n = n^δ` (a vanishing fraction of the
//! sample), `FixedB` uses `c_n = n` so that the window parameter `b` keeps a
//! fixed fraction of all lags in play.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("window parameter b must be positive and finite, got {0}")]
    InvalidParameter(f64),
    #[error("unknown window kind {0:?}")]
    UnknownKind(String),
}

/// The four supported window shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WindowKind {
    Bartlett,
    Quadratic,
    Truncated,
    Parzen,
}

impl WindowKind {
    pub const ALL: [WindowKind; 4] = [
        WindowKind::Bartlett,
        WindowKind::Quadratic,
        WindowKind::Truncated,
        WindowKind::Parzen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WindowKind::Bartlett => "bartlett",
            WindowKind::Quadratic => "quadratic",
            WindowKind::Truncated => "truncated",
            WindowKind::Parzen => "parzen",
        }
    }

    /// Whether the taper is a positive-semidefinite sequence, so that the
    /// lag-window estimate (and its fixed-b limit) is nonnegative by
    /// construction.
    ///
    /// Bartlett and Parzen tapers are PSD: any negative variance estimate
    /// built from them can only come from numerical error, and a negative
    /// draw in the simulated fixed-b law can only be a discretization
    /// artifact of the grid. The quadratic and truncated tapers are not PSD,
    /// and their fixed-b limit laws take negative values with probability
    /// bounded away from zero, so negativity there is intrinsic rather than
    /// a grid artifact.
    pub fn positive_semidefinite(self) -> bool {
        matches!(self, WindowKind::Bartlett | WindowKind::Parzen)
    }
}

impl std::str::FromStr for WindowKind {
    type Err = WindowError;
    fn from_str(s: &str) -> Result<Self, WindowError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bartlett" => Ok(WindowKind::Bartlett),
            "quadratic" => Ok(WindowKind::Quadratic),
            "truncated" => Ok(WindowKind::Truncated),
            "parzen" => Ok(WindowKind::Parzen),
            other => Err(WindowError::UnknownKind(other.into())),
        }
    }
}

impl std::fmt::Display for WindowKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A window shape together with its parameter `b > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowFunction {
    kind: WindowKind,
    b: f64,
}

impl WindowFunction {
    pub fn new(kind: WindowKind, b: f64) -> Result<Self, WindowError> {
        if !(b.is_finite() && b > 0.0) {
            return Err(WindowError::InvalidParameter(b));
        }
        Ok(WindowFunction { kind, b })
    }

    pub fn kind(&self) -> WindowKind {
        self.kind
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// `w_b(x)` for `x ≥ 0`. Zero at and beyond the support edge `b`
    /// (right-open convention; only the truncated shape jumps there).
    pub fn eval(&self, x: f64) -> f64 {
        assert!(x >= 0.0 && x.is_finite(), "window argument must be finite and ≥ 0");
        let r = x / self.b;
        if r >= 1.0 {
            return 0.0;
        }
        match self.kind {
            WindowKind::Bartlett => 1.0 - r,
            WindowKind::Quadratic => 1.0 - r * r,
            WindowKind::Truncated => 1.0,
            WindowKind::Parzen => {
                if r <= 0.5 {
                    1.0 - 6.0 * r * r + 6.0 * r * r * r
                } else {
                    let s = 1.0 - r;
                    2.0 * s * s * s
                }
            }
        }
    }

    /// `W(t) = ∫₀ᵗ w_b(u) du`, in closed form.
    pub fn cumulative(&self, t: f64) -> f64 {
        assert!(t >= 0.0 && t.is_finite(), "integration bound must be finite and ≥ 0");
        let b = self.b;
        let tc = t.min(b);
        match self.kind {
            WindowKind::Bartlett => tc - tc * tc / (2.0 * b),
            WindowKind::Quadratic => tc - tc * tc * tc / (3.0 * b * b),
            WindowKind::Truncated => tc,
            WindowKind::Parzen => {
                let r = tc / b;
                if r <= 0.5 {
                    b * (r - 2.0 * r.powi(3) + 1.5 * r.powi(4))
                } else {
                    let s = 1.0 - r;
                    b * (0.375 - 0.5 * s.powi(4))
                }
            }
        }
    }

    /// `M(t) = ∫₀ᵗ u · w_b(u) du`, in closed form.
    pub fn first_moment(&self, t: f64) -> f64 {
        assert!(t >= 0.0 && t.is_finite(), "integration bound must be finite and ≥ 0");
        let b = self.b;
        let tc = t.min(b);
        match self.kind {
            WindowKind::Bartlett => tc * tc / 2.0 - tc * tc * tc / (3.0 * b),
            WindowKind::Quadratic => tc * tc / 2.0 - tc.powi(4) / (4.0 * b * b),
            WindowKind::Truncated => tc * tc / 2.0,
            WindowKind::Parzen => {
                let r = tc / b;
                if r <= 0.5 {
                    b * b * (0.5 * r * r - 1.5 * r.powi(4) + 1.2 * r.powi(5))
                } else {
                    let s = 1.0 - r;
                    b * b * (7.0 / 80.0 - 0.5 * s.powi(4) + 0.4 * s.powi(5))
                }
            }
        }
    }

    /// The boundary function `g(t) = W(t) + W(1−t)` for `t ∈ [0, 1]`,
    /// which weighs Brownian increments in the fixed-b limit.
    pub fn g(&self, t: f64) -> f64 {
        assert!((0.0..=1.0).contains(&t), "g is defined on [0, 1]");
        self.cumulative(t) + self.cumulative(1.0 - t)
    }

    /// `∫₀¹ (1 − t) w_b(t) dt = W(1) − M(1)`.
    pub fn mean_weight(&self) -> f64 {
        self.cumulative(1.0) - self.first_moment(1.0)
    }

    /// Polynomial pieces of `u ↦ w_b(u)`: `(u_lo, u_hi, coefficients)` with
    /// the weight equal to `c₀ + c₁u + c₂u² + c₃u³` on `[u_lo, u_hi)`.
    pub(crate) fn shape_pieces(&self) -> Vec<(f64, f64, [f64; 4])> {
        let b = self.b;
        match self.kind {
            WindowKind::Bartlett => vec![(0.0, b, [1.0, -1.0 / b, 0.0, 0.0])],
            WindowKind::Quadratic => vec![(0.0, b, [1.0, 0.0, -1.0 / (b * b), 0.0])],
            WindowKind::Truncated => vec![(0.0, b, [1.0, 0.0, 0.0, 0.0])],
            WindowKind::Parzen => vec![
                (0.0, b / 2.0, [1.0, 0.0, -6.0 / (b * b), 6.0 / (b * b * b)]),
                // 2(1 − u/b)³ expanded in powers of u
                (
                    b / 2.0,
                    b,
                    [
                        2.0,
                        -6.0 / b,
                        6.0 / (b * b),
                        -2.0 / (b * b * b),
                    ],
                ),
            ],
        }
    }
}

/// Rule mapping a sample size `n` to the estimator truncation point `c_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// `c_n = n^δ` with `δ ∈ (0, 1]`; the small-bandwidth regime when `δ < 1`.
    Classical { delta: f64 },
    /// `c_n = n`; all lags stay in play, scaled by the window parameter `b`.
    FixedB { b: f64 },
}

impl BandwidthRule {
    pub fn classical(delta: f64) -> Result<Self, WindowError> {
        if !(delta.is_finite() && delta > 0.0 && delta <= 1.0) {
            return Err(WindowError::InvalidParameter(delta));
        }
        Ok(BandwidthRule::Classical { delta })
    }

    pub fn fixed_b(b: f64) -> Result<Self, WindowError> {
        if !(b.is_finite() && b > 0.0) {
            return Err(WindowError::InvalidParameter(b));
        }
        Ok(BandwidthRule::FixedB { b })
    }

    /// The truncation point `c_n ≥ 1` for a sample of size `n ≥ 1`.
    pub fn bandwidth(&self, n: usize) -> f64 {
        assert!(n >= 1, "sample size must be at least 1");
        match *self {
            BandwidthRule::Classical { delta } => {
                assert!(delta > 0.0 && delta <= 1.0, "delta must lie in (0, 1]");
                (n as f64).powf(delta)
            }
            BandwidthRule::FixedB { .. } => n as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Adaptive Simpson quadrature; the independent oracle for the closed forms.
    fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
            let m = 0.5 * (a + b);
            let fm = f(m);
            ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
        }
        #[allow(clippy::too_many_arguments)]
        fn recurse(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            fa: f64,
            b: f64,
            fb: f64,
            whole: f64,
            m: f64,
            fm: f64,
            tol: f64,
            depth: u32,
            force: u32,
        ) -> f64 {
            let (left, lm, flm) = simpson(f, a, fa, m, fm);
            let (right, rm, frm) = simpson(f, m, fm, b, fb);
            let delta = left + right - whole;
            // `force` keeps splitting even when the error estimate looks
            // converged: the piecewise shapes can fool the estimator when
            // every probe lands on a breakpoint or a zero.
            if depth == 0 || (force == 0 && delta.abs() <= 15.0 * tol) {
                left + right + delta / 15.0
            } else {
                let fnext = force.saturating_sub(1);
                recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1, fnext)
                    + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1, fnext)
            }
        }
        if a == b {
            return 0.0;
        }
        let (fa, fb) = (f(a), f(b));
        let (whole, m, fm) = simpson(f, a, fa, b, fb);
        recurse(f, a, fa, b, fb, whole, m, fm, tol, 40, 7)
    }

    fn all_windows(b: f64) -> Vec<WindowFunction> {
        WindowKind::ALL
            .iter()
            .map(|&k| WindowFunction::new(k, b).unwrap())
            .collect()
    }

    #[test]
    fn cumulative_matches_quadrature() {
        for &b in &[0.3, 0.5, 0.7, 1.0, 1.7] {
            for w in all_windows(b) {
                for i in 0..=20 {
                    let t = i as f64 * 0.1;
                    let byquad = integrate(&|u| w.eval(u), 0.0, t, 1e-13);
                    assert!(
                        (w.cumulative(t) - byquad).abs() < 1e-10,
                        "{:?} b={b} t={t}: {} vs {}",
                        w.kind(),
                        w.cumulative(t),
                        byquad
                    );
                }
            }
        }
    }

    #[test]
    fn first_moment_matches_quadrature() {
        for &b in &[0.3, 0.5, 0.7, 1.0, 1.7] {
            for w in all_windows(b) {
                for i in 0..=20 {
                    let t = i as f64 * 0.1;
                    let byquad = integrate(&|u| u * w.eval(u), 0.0, t, 1e-13);
                    assert!(
                        (w.first_moment(t) - byquad).abs() < 1e-10,
                        "{:?} b={b} t={t}: {} vs {}",
                        w.kind(),
                        w.first_moment(t),
                        byquad
                    );
                }
            }
        }
    }

    #[test]
    fn mean_weight_spot_values() {
        let cases = [
            (WindowKind::Bartlett, 1.0, 1.0 / 3.0),
            (WindowKind::Truncated, 1.0, 0.5),
            (WindowKind::Truncated, 0.5, 0.375),
            (WindowKind::Parzen, 1.0, 23.0 / 80.0),
            (WindowKind::Quadratic, 0.5, 13.0 / 48.0),
        ];
        for (kind, b, expect) in cases {
            let w = WindowFunction::new(kind, b).unwrap();
            assert!(
                (w.mean_weight() - expect).abs() < 1e-14,
                "{kind:?} b={b}: {} vs {expect}",
                w.mean_weight()
            );
        }
    }

    #[test]
    fn boundary_function_spot_values() {
        let w = WindowFunction::new(WindowKind::Bartlett, 1.0).unwrap();
        assert!((w.g(0.0) - 0.5).abs() < 1e-15);
        assert!((w.g(0.5) - 0.75).abs() < 1e-15);
        assert!((w.g(1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn eval_boundary_conventions() {
        let tr = WindowFunction::new(WindowKind::Truncated, 0.5).unwrap();
        assert_eq!(tr.eval(0.4999999), 1.0);
        assert_eq!(tr.eval(0.5), 0.0);
        assert_eq!(tr.eval(0.75), 0.0);
        let ba = WindowFunction::new(WindowKind::Bartlett, 1.0).unwrap();
        assert!((ba.eval(0.5) - 0.5).abs() < 1e-15);
        assert_eq!(ba.eval(0.0), 1.0);
        assert_eq!(ba.eval(1.0), 0.0);
        // Parzen is continuous across its interior breakpoint
        let pa = WindowFunction::new(WindowKind::Parzen, 1.0).unwrap();
        assert!((pa.eval(0.5) - 0.25).abs() < 1e-15);
        assert!((pa.eval(0.5 - 1e-12) - pa.eval(0.5 + 1e-12)).abs() < 1e-9);
    }

    #[test]
    fn shape_pieces_reproduce_eval() {
        for &b in &[0.3, 1.0, 1.7] {
            for w in all_windows(b) {
                for piece in w.shape_pieces() {
                    let (lo, hi, c) = piece;
                    for i in 0..10 {
                        let u = lo + (hi - lo) * (i as f64 + 0.25) / 10.0;
                        let p = c[0] + u * (c[1] + u * (c[2] + u * c[3]));
                        assert!(
                            (p - w.eval(u)).abs() < 1e-12,
                            "{:?} b={b} u={u}",
                            w.kind()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn bandwidth_rules() {
        let c = BandwidthRule::classical(0.5).unwrap();
        assert!((c.bandwidth(10_000) - 100.0).abs() < 1e-9);
        let f = BandwidthRule::fixed_b(0.3).unwrap();
        assert_eq!(f.bandwidth(500), 500.0);
        assert!(BandwidthRule::classical(0.0).is_err());
        assert!(BandwidthRule::classical(1.5).is_err());
        assert!(BandwidthRule::fixed_b(-1.0).is_err());
        assert!(c.bandwidth(1) >= 1.0);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(WindowFunction::new(WindowKind::Bartlett, 0.0).is_err());
        assert!(WindowFunction::new(WindowKind::Bartlett, f64::NAN).is_err());
        assert!(WindowFunction::new(WindowKind::Bartlett, f64::INFINITY).is_err());
        assert!("bartlett".parse::<WindowKind>().is_ok());
        assert!("Parzen".parse::<WindowKind>().is_ok());
        assert!("hann".parse::<WindowKind>().is_err());
    }

    proptest! {
        #[test]
        fn window_values_in_unit_range_and_nonincreasing(
            b in 0.05f64..3.0,
            kind_idx in 0usize..4,
            x1 in 0.0f64..4.0,
            x2 in 0.0f64..4.0,
        ) {
            let w = WindowFunction::new(WindowKind::ALL[kind_idx], b).unwrap();
            let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
            prop_assert!((0.0..=1.0).contains(&w.eval(lo)));
            prop_assert!(w.eval(lo) >= w.eval(hi) - 1e-12);
        }

        #[test]
        fn cumulative_is_nondecreasing(
            b in 0.05f64..3.0,
            kind_idx in 0usize..4,
            t1 in 0.0f64..2.0,
            t2 in 0.0f64..2.0,
        ) {
            let w = WindowFunction::new(WindowKind::ALL[kind_idx], b).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(w.cumulative(hi) >= w.cumulative(lo) - 1e-12);
        }
    }
}
