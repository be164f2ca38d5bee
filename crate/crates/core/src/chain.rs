//! The four-state chain: two transient states (1, 2) and two absorbing
//! states (3, 4) linked by five intensities.
//!
//! ```text
//!        λ12            λ23
//!   1 ────────▶ 2 ────────────▶ 3
//!   │ ◀──────── │
//!   │    μ21    │ λ24
//!   │ λ14       ▼
//!   └─────────▶ 4
//! ```
//!
//! Transition probabilities have an explicit two-exponential solution. The
//! series exponential in [`matrix_exponential_series`] is an independent
//! route used as an oracle and as the fallback for degenerate rate vectors.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Degeneracy, Error, Result};

/// Number of states in the chain.
pub const N_STATES: usize = 4;
/// Number of free intensities.
pub const N_RATES: usize = 5;

/// Names of the five intensities in canonical order.
pub const RATE_NAMES: [&str; N_RATES] = ["lambda12", "lambda14", "mu21", "lambda23", "lambda24"];

/// Discriminant values at or below this are treated as repeated roots.
pub const DISCRIMINANT_TOL: f64 = 1e-12;

/// Negative probabilities above this (i.e. closer to zero) are rounding noise.
const NEGATIVE_PROBABILITY_TOL: f64 = 1e-9;

/// The five intensities, per year, in order `(λ12, λ14, μ21, λ23, λ24)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RateVector {
    pub lambda12: f64,
    pub lambda14: f64,
    pub mu21: f64,
    pub lambda23: f64,
    pub lambda24: f64,
}

impl RateVector {
    pub const fn new(lambda12: f64, lambda14: f64, mu21: f64, lambda23: f64, lambda24: f64) -> Self {
        Self {
            lambda12,
            lambda14,
            mu21,
            lambda23,
            lambda24,
        }
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn from_array(v: [f64; N_RATES]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn to_array(&self) -> [f64; N_RATES] {
        [self.lambda12, self.lambda14, self.mu21, self.lambda23, self.lambda24]
    }

    /// Total exit rate of state 1.
    pub fn gamma1(&self) -> f64 {
        self.lambda12 + self.lambda14
    }

    /// Total exit rate of state 2.
    pub fn gamma2(&self) -> f64 {
        self.mu21 + self.lambda23 + self.lambda24
    }

    /// Determinant of the transient block, `γ₁γ₂ − μ₂₁λ₁₂`.
    pub fn transient_det(&self) -> f64 {
        self.gamma1() * self.gamma2() - self.mu21 * self.lambda12
    }

    /// Checks every component is finite and nonnegative.
    pub fn validate(&self) -> Result<()> {
        for (index, (value, name)) in self.to_array().into_iter().zip(RATE_NAMES).enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::NegativeRate { index, name, value });
            }
        }
        Ok(())
    }
}

/// A validated 4×4 intensity matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorMatrix {
    q: Matrix4<f64>,
}

impl GeneratorMatrix {
    /// Wraps an arbitrary generator. Rows must sum to zero with nonnegative
    /// off-diagonals; the series exponential accepts any such matrix.
    pub fn from_matrix(q: Matrix4<f64>) -> Result<Self> {
        for i in 0..N_STATES {
            let row_sum: f64 = (0..N_STATES).map(|j| q[(i, j)]).sum();
            let scale = (0..N_STATES).map(|j| q[(i, j)].abs()).fold(1.0, f64::max);
            if row_sum.abs() > 1e-12 * scale {
                return Err(Error::Invalid(format!("generator row {} sums to {row_sum:e}", i + 1)));
            }
            for j in 0..N_STATES {
                if i != j && q[(i, j)] < 0.0 {
                    return Err(Error::Invalid(format!(
                        "generator entry ({},{}) is negative",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { q })
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.q
    }
}

/// Builds `Q` with rows `[−γ₁, λ₁₂, 0, λ₁₄]`, `[μ₂₁, −γ₂, λ₂₃, λ₂₄]`, then two zero rows.
pub fn build_generator(theta: &RateVector) -> Result<GeneratorMatrix> {
    theta.validate()?;
    #[rustfmt::skip]
    let q = Matrix4::new(
        -theta.gamma1(), theta.lambda12, 0.0,            theta.lambda14,
        theta.mu21,      -theta.gamma2(), theta.lambda23, theta.lambda24,
        0.0,             0.0,             0.0,            0.0,
        0.0,             0.0,             0.0,            0.0,
    );
    Ok(GeneratorMatrix { q })
}

/// Discriminant `(γ₁+γ₂)² − 4γ₁γ₂ + 4λ₁₂μ₂₁` of the transient characteristic quadratic.
pub fn discriminant(theta: &RateVector) -> f64 {
    let (g1, g2) = (theta.gamma1(), theta.gamma2());
    // (γ₁−γ₂)² form avoids cancellation between the first two terms
    (g1 - g2).powi(2) + 4.0 * theta.lambda12 * theta.mu21
}

/// Roots `w1 ≤ w2` of `w² + (γ₁+γ₂)w + γ₁γ₂ − λ₁₂μ₂₁ = 0`.
///
/// `w1` is the minus-radical branch. `w2` is recovered from the product of
/// the roots so it keeps full relative precision when it is close to zero.
pub fn characteristic_roots(theta: &RateVector) -> Result<(f64, f64)> {
    theta.validate()?;
    let d = discriminant(theta);
    if d <= DISCRIMINANT_TOL {
        return Err(Degeneracy::RepeatedRoots { discriminant: d }.into());
    }
    let sum = theta.gamma1() + theta.gamma2();
    let w1 = -(sum + d.sqrt()) / 2.0;
    let w2 = theta.transient_det() / w1;
    Ok((w1, w2))
}

/// Coefficients of the explicit solution of the forward equations.
///
/// Field `aN` is the coefficient numbered N in the usual derivation; the
/// `gN` are the intermediate sums feeding `a7`, `a8`, `a14`, `a15`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormCoefficients {
    pub w1: f64,
    pub w2: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
    pub a6: f64,
    pub a7: f64,
    pub a8: f64,
    pub a9: f64,
    pub a10: f64,
    pub a11: f64,
    pub a12: f64,
    pub a13: f64,
    pub a14: f64,
    pub a15: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub g4: f64,
}

pub fn closed_form_coefficients(theta: &RateVector) -> Result<ClosedFormCoefficients> {
    let (w1, w2) = characteristic_roots(theta)?;
    if theta.mu21 == 0.0 {
        return Err(Degeneracy::ZeroRegression.into());
    }
    if w1 == 0.0 || w2 == 0.0 {
        return Err(Degeneracy::ZeroRoot.into());
    }
    let g1_rate = theta.gamma1();
    let (l14, mu, l23, l24) = (theta.lambda14, theta.mu21, theta.lambda23, theta.lambda24);

    let a1 = (w2 + g1_rate) / (w2 - w1);
    let a2 = (w1 + g1_rate) / (w1 - w2);
    let a3 = a1 * (w1 + g1_rate) / mu;
    let a4 = a2 * (w2 + g1_rate) / mu;
    let a5 = l23 * a3 / w1;
    let a6 = l23 * a4 / w2;
    let g1 = l14 * a1 + l24 * a3;
    let g2 = l14 * a2 + l24 * a4;
    let a7 = g1 / w1;
    let a8 = g2 / w2;
    let a9 = mu / (w1 - w2);
    let a10 = (w1 + g1_rate) / (w1 - w2);
    let a11 = (w2 + g1_rate) / (w2 - w1);
    let a12 = l23 * a10 / w1;
    let a13 = l23 * a11 / w2;
    let g3 = l14 * a9 + l24 * a10;
    let g4 = l24 * a11 - l14 * a9;
    let a14 = g3 / w1;
    let a15 = g4 / w2;

    Ok(ClosedFormCoefficients {
        w1,
        w2,
        a1,
        a2,
        a3,
        a4,
        a5,
        a6,
        a7,
        a8,
        a9,
        a10,
        a11,
        a12,
        a13,
        a14,
        a15,
        g1,
        g2,
        g3,
        g4,
    })
}

/// A row-stochastic `P(t)` with absorbing rows 3 and 4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix {
    p: Matrix4<f64>,
    t: f64,
}

impl TransitionMatrix {
    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.p
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Entry for 1-based states `(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[(i - 1, j - 1)]
    }

    pub fn rows(&self) -> [[f64; N_STATES]; N_STATES] {
        let mut out = [[0.0; N_STATES]; N_STATES];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.p[(i, j)];
            }
        }
        out
    }

    /// Clamps rounding-level negatives to zero and renormalizes the affected
    /// rows; anything further below zero is reported as a bug.
    fn sanitized(mut p: Matrix4<f64>, t: f64) -> Result<Self> {
        for i in 0..N_STATES {
            let mut clamped = false;
            for j in 0..N_STATES {
                let v = p[(i, j)];
                if !v.is_finite() {
                    return Err(Error::InternalConsistency(format!(
                        "P({t})[{},{}] is not finite",
                        i + 1,
                        j + 1
                    )));
                }
                if v < -NEGATIVE_PROBABILITY_TOL {
                    return Err(Error::InternalConsistency(format!(
                        "P({t})[{},{}] = {v:e} is negative",
                        i + 1,
                        j + 1
                    )));
                }
                if v < 0.0 {
                    p[(i, j)] = 0.0;
                    clamped = true;
                }
            }
            if clamped {
                let s: f64 = (0..N_STATES).map(|j| p[(i, j)]).sum();
                for j in 0..N_STATES {
                    p[(i, j)] /= s;
                }
            }
        }
        Ok(Self { p, t })
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidTime(t));
    }
    Ok(())
}

/// `P(t)` from the explicit two-exponential solution.
pub fn transition_matrix_closed_form(theta: &RateVector, t: f64) -> Result<TransitionMatrix> {
    check_time(t)?;
    let c = closed_form_coefficients(theta)?;
    let e1 = (c.w1 * t).exp();
    let e2 = (c.w2 * t).exp();
    // e^{wt} − 1 without cancellation for small wt
    let m1 = (c.w1 * t).exp_m1();
    let m2 = (c.w2 * t).exp_m1();

    #[rustfmt::skip]
    let p = Matrix4::new(
        c.a1 * e1 + c.a2 * e2, c.a3 * e1 + c.a4 * e2,  c.a5 * m1 + c.a6 * m2,   c.a7 * m1 + c.a8 * m2,
        c.a9 * (e1 - e2),      c.a10 * e1 + c.a11 * e2, c.a12 * m1 + c.a13 * m2, c.a14 * m1 + c.a15 * m2,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    );
    TransitionMatrix::sanitized(p, t)
}

/// `e^{Qt}` by scaling and squaring with an order-18 Taylor polynomial.
pub fn matrix_exponential_series(q: &GeneratorMatrix, t: f64) -> Result<TransitionMatrix> {
    check_time(t)?;
    let a = q.q * t;
    let norm = one_norm(&a);
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let a = a * scale;

    // Horner evaluation of Σ_{k=0}^{18} A^k / k!
    const ORDER: u32 = 18;
    let identity = Matrix4::<f64>::identity();
    let mut acc = identity;
    for k in (1..=ORDER).rev() {
        acc = identity + (a * acc) / f64::from(k);
    }
    for _ in 0..squarings {
        acc = acc * acc;
    }
    TransitionMatrix::sanitized(acc, t)
}

/// `P(t)` via the closed form, falling back to the series exponential when
/// the closed form is degenerate for `theta`.
pub fn transition_matrix(theta: &RateVector, t: f64) -> Result<TransitionMatrix> {
    match transition_matrix_closed_form(theta, t) {
        Err(Error::Degenerate(_)) => matrix_exponential_series(&build_generator(theta)?, t),
        other => other,
    }
}

fn one_norm(m: &Matrix4<f64>) -> f64 {
    (0..N_STATES)
        .map(|j| (0..N_STATES).map(|i| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
