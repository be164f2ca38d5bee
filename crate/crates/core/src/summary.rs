//! Sojourn times, occupancy, expected cohort counts and the limiting
//! distribution with its delta-method covariance.

use nalgebra::{Matrix4, Matrix5, SMatrix, Vector5};
use serde::{Deserialize, Serialize};

use crate::absorption;
use crate::chain::{self, RateVector, N_STATES};
use crate::linalg;
use crate::error::{Degeneracy, Error, Result};

/// Tolerance on `Σπ = 1` for occupancy vectors.
pub const DISTRIBUTION_SUM_TOL: f64 = 1e-9;
/// Relative singular-value cutoff for [`svd_pseudoinverse`].
pub const PINV_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SojournSummary {
    pub s1: f64,
    pub s2: f64,
    pub var_s1: f64,
    pub var_s2: f64,
}

/// Gradient of `q_ii` with respect to θ used in the sojourn variances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientConvention {
    /// All five components −1 for both states.
    #[default]
    Collapsed,
    /// −1 only on the rates that leave the state, 0 elsewhere.
    Strict,
}

impl GradientConvention {
    fn gradients(self) -> (Vector5<f64>, Vector5<f64>) {
        match self {
            GradientConvention::Collapsed => (Vector5::repeat(-1.0), Vector5::repeat(-1.0)),
            GradientConvention::Strict => (
                Vector5::new(-1.0, -1.0, 0.0, 0.0, 0.0),
                Vector5::new(0.0, 0.0, -1.0, -1.0, -1.0),
            ),
        }
    }
}

fn exit_rates(theta: &RateVector) -> Result<(f64, f64)> {
    theta.validate()?;
    let (g1, g2) = (theta.gamma1(), theta.gamma2());
    if g1 <= 0.0 {
        return Err(Degeneracy::ZeroExitRate { state: 1 }.into());
    }
    if g2 <= 0.0 {
        return Err(Degeneracy::ZeroExitRate { state: 2 }.into());
    }
    Ok((g1, g2))
}

/// `(1/γ₁, 1/γ₂)`.
pub fn sojourn_means(theta: &RateVector) -> Result<(f64, f64)> {
    let (g1, g2) = exit_rates(theta)?;
    Ok((g1.recip(), g2.recip()))
}

/// `γᵢ⁻⁴ · dᵢᵀ·V·dᵢ` with the gradient `dᵢ` chosen by `convention`.
pub fn sojourn_variances(
    theta: &RateVector,
    var_theta: &Matrix5<f64>,
    convention: GradientConvention,
) -> Result<(f64, f64)> {
    let (g1, g2) = exit_rates(theta)?;
    let (d1, d2) = convention.gradients();
    let quad = |d: &Vector5<f64>| (d.transpose() * var_theta * d)[(0, 0)];
    Ok((quad(&d1) / g1.powi(4), quad(&d2) / g2.powi(4)))
}

pub fn sojourn_summary(
    theta: &RateVector,
    var_theta: &Matrix5<f64>,
    convention: GradientConvention,
) -> Result<SojournSummary> {
    let (s1, s2) = sojourn_means(theta)?;
    let (var_s1, var_s2) = sojourn_variances(theta, var_theta, convention)?;
    Ok(SojournSummary {
        s1,
        s2,
        var_s1,
        var_s2,
    })
}

/// A state distribution at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyVector {
    pub pi: [f64; N_STATES],
    pub t: f64,
}

impl OccupancyVector {
    pub fn new(pi: [f64; N_STATES], t: f64) -> Result<Self> {
        if pi.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Invalid(format!("distribution {pi:?} has a negative component")));
        }
        let sum: f64 = pi.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOL {
            return Err(Error::Invalid(format!("distribution {pi:?} sums to {sum}")));
        }
        Ok(Self { pi, t })
    }

    /// Initial distribution concentrated on one 1-based state.
    pub fn point(state: usize) -> Self {
        let mut pi = [0.0; N_STATES];
        pi[state - 1] = 1.0;
        Self { pi, t: 0.0 }
    }
}

/// Expected numbers of subjects per state at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortVector {
    pub u: [f64; N_STATES],
    pub t: f64,
}

impl CohortVector {
    pub fn new(u: [f64; N_STATES], t: f64) -> Result<Self> {
        if u.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::Invalid(format!("cohort {u:?} has a negative component")));
        }
        Ok(Self { u, t })
    }

    pub fn total(&self) -> f64 {
        self.u.iter().sum()
    }
}

fn propagate(row: &[f64; N_STATES], theta: &RateVector, t: f64) -> Result<[f64; N_STATES]> {
    let p = chain::transition_matrix(theta, t)?;
    let m = p.matrix();
    let mut out = [0.0; N_STATES];
    for (j, o) in out.iter_mut().enumerate() {
        *o = (0..N_STATES).map(|i| row[i] * m[(i, j)]).sum();
    }
    Ok(out)
}

/// `π(t) = π(0)·P(t)`.
pub fn occupancy_at(pi0: &OccupancyVector, theta: &RateVector, t: f64) -> Result<OccupancyVector> {
    Ok(OccupancyVector {
        pi: propagate(&pi0.pi, theta, t)?,
        t: pi0.t + t,
    })
}

/// `u(t) = u(0)·P(t)`.
pub fn expected_counts(u0: &CohortVector, theta: &RateVector, t: f64) -> Result<CohortVector> {
    Ok(CohortVector {
        u: propagate(&u0.u, theta, t)?,
        t: u0.t + t,
    })
}

/// `lim_{t→∞} π(0)·P(t)`.
///
/// Uses the limits of the explicit solution, `P₁₃(∞) = −A₅ − A₆` and so on.
/// When the explicit solution is unavailable (for instance `μ₂₁ = 0`) the
/// absorption probabilities `−B⁻¹A` give the same limit.
pub fn limiting_distribution(pi0: &OccupancyVector, theta: &RateVector) -> Result<[f64; N_STATES]> {
    theta.validate()?;
    let det = theta.transient_det();
    if !(det > 0.0) {
        return Err(Degeneracy::SingularTransientBlock { det }.into());
    }
    let [p1, p2, p3, p4] = pi0.pi;
    let (to3, to4) = match chain::closed_form_coefficients(theta) {
        Ok(c) => (
            p1 * (-c.a5 - c.a6) + p2 * (-c.a12 - c.a13) + p3,
            p1 * (-c.a7 - c.a8) + p2 * (-c.a14 - c.a15) + p4,
        ),
        Err(Error::Degenerate(_)) => {
            let probs = absorption::absorption_probabilities(theta)?;
            (
                p1 * probs[(0, 0)] + p2 * probs[(1, 0)] + p3,
                p1 * probs[(0, 1)] + p2 * probs[(1, 1)] + p4,
            )
        }
        Err(e) => return Err(e),
    };
    Ok([0.0, 0.0, to3, to4])
}

/// Moore–Penrose pseudo-inverse, dropping singular values below
/// `PINV_RCOND·σ_max`.
pub fn svd_pseudoinverse(m: &Matrix4<f64>) -> Matrix4<f64> {
    linalg::pseudo_inverse(m, PINV_RCOND)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitingCovariance {
    /// `[Q′]⁺`.
    pub q_transpose_pinv: Matrix4<f64>,
    /// `C(θ) = c·(1,1,1,1,1)`.
    pub c: SMatrix<f64, 4, 5>,
    /// `A(θ) = −[Q′]⁺·C(θ)`.
    pub a: SMatrix<f64, 4, 5>,
    /// `A·V·Aᵀ`.
    pub covariance: Matrix4<f64>,
}

/// Delta-method covariance of the limiting distribution with the collapsed
/// all-ones parameter derivative of `Q′`.
pub fn limiting_covariance(
    cvec: &[f64; N_STATES],
    theta: &RateVector,
    var_theta: &Matrix5<f64>,
) -> Result<LimitingCovariance> {
    let q = chain::build_generator(theta)?;
    let q_transpose_pinv = svd_pseudoinverse(&q.matrix().transpose());
    let c = SMatrix::<f64, 4, 5>::from_fn(|i, _| cvec[i]);
    let a = -(q_transpose_pinv * c);
    let mut covariance = a * var_theta * a.transpose();
    // symmetrize away rounding
    covariance = (covariance + covariance.transpose()) * 0.5;
    Ok(LimitingCovariance {
        q_transpose_pinv,
        c,
        a,
        covariance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitingDistributionResult {
    pub pi_inf: [f64; N_STATES],
    pub covariance: [[f64; N_STATES]; N_STATES],
}

pub fn limiting_distribution_result(
    pi0: &OccupancyVector,
    cvec: Option<&[f64; N_STATES]>,
    theta: &RateVector,
    var_theta: &Matrix5<f64>,
) -> Result<LimitingDistributionResult> {
    let pi_inf = limiting_distribution(pi0, theta)?;
    let lc = limiting_covariance(cvec.unwrap_or(&pi_inf), theta, var_theta)?;
    let mut covariance = [[0.0; N_STATES]; N_STATES];
    for (i, row) in covariance.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = lc.covariance[(i, j)];
        }
    }
    Ok(LimitingDistributionResult { pi_inf, covariance })
}
