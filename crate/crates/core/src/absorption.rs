//! Transient/absorbing partition of the generator and expected times to
//! absorption.
//!
//! With `Q = [[B, A], [0, 0]]`, `Z = B⁻¹A` has rows summing to −1 and `−Z`
//! holds the probabilities of ending in state 3 or 4. The expected-time
//! matrix is `B⁻¹Z = B⁻²A`, entry `(i, k)` pairing start state `i ∈ {1, 2}`
//! with absorbing state `k ∈ {3, 4}`.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::chain::RateVector;
use crate::error::{Degeneracy, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionSummary {
    /// Transient block, rows and columns states 1 and 2.
    pub b: [[f64; 2]; 2],
    /// Transient-to-absorbing block, columns states 3 and 4.
    pub a_block: [[f64; 2]; 2],
    pub b_inverse: [[f64; 2]; 2],
    pub z: [[f64; 2]; 2],
    /// `−Z`.
    pub absorption_probabilities: [[f64; 2]; 2],
    pub etau: [[f64; 2]; 2],
}

pub fn partition_generator(theta: &RateVector) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
    theta.validate()?;
    let b = Matrix2::new(-theta.gamma1(), theta.lambda12, theta.mu21, -theta.gamma2());
    let a = Matrix2::new(0.0, theta.lambda14, theta.lambda23, theta.lambda24);
    Ok((b, a))
}

fn b_inverse(theta: &RateVector) -> Result<Matrix2<f64>> {
    let (b, _) = partition_generator(theta)?;
    let det = theta.transient_det();
    if !(det > 0.0) {
        return Err(Degeneracy::SingularTransientBlock { det }.into());
    }
    // adjugate over det(B), which equals the transient determinant
    Ok(Matrix2::new(b[(1, 1)], -b[(0, 1)], -b[(1, 0)], b[(0, 0)]) / det)
}

/// `Z = B⁻¹A`.
pub fn z_matrix(theta: &RateVector) -> Result<Matrix2<f64>> {
    let (_, a) = partition_generator(theta)?;
    Ok(b_inverse(theta)? * a)
}

/// `−Z`: row `i` gives the probabilities of absorption in states 3 and 4
/// starting from state `i`.
pub fn absorption_probabilities(theta: &RateVector) -> Result<Matrix2<f64>> {
    Ok(-z_matrix(theta)?)
}

/// `B⁻¹Z`.
pub fn expected_absorption_times(theta: &RateVector) -> Result<Matrix2<f64>> {
    let b_inv = b_inverse(theta)?;
    Ok(b_inv * z_matrix(theta)?)
}

/// The four explicit expressions for `B⁻²A`.
pub fn closed_form_etau(theta: &RateVector) -> Result<Matrix2<f64>> {
    theta.validate()?;
    let det = theta.transient_det();
    if !(det > 0.0) {
        return Err(Degeneracy::SingularTransientBlock { det }.into());
    }
    let (g1, g2) = (theta.gamma1(), theta.gamma2());
    if !(g1 > 0.0) {
        return Err(Degeneracy::ZeroExitRate { state: 1 }.into());
    }
    let RateVector {
        lambda12: l12,
        lambda14: l14,
        mu21: mu,
        lambda23: l23,
        lambda24: l24,
    } = *theta;
    let det2 = det * det;
    let via4 = mu * l14 + l24 * g1;
    let back = mu * l12 + g1 * g1;
    let e13 = l12 * l23 * (g1 + g2) / det2;
    let e14 = l12 * via4 * (g1 + g2) / (g1 * det2) + l14 * g2 / (g1 * det);
    let e23 = l23 * back / det2;
    let e24 = via4 * back / (g1 * det2) + mu * l14 / (g1 * det);
    Ok(Matrix2::new(e13, e14, e23, e24))
}

fn rows(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

pub fn absorption_summary(theta: &RateVector) -> Result<AbsorptionSummary> {
    let (b, a) = partition_generator(theta)?;
    let b_inv = b_inverse(theta)?;
    let z = b_inv * a;
    let etau = b_inv * z;
    Ok(AbsorptionSummary {
        b: rows(&b),
        a_block: rows(&a),
        b_inverse: rows(&b_inv),
        z: rows(&z),
        absorption_probabilities: rows(&(-z)),
        etau: rows(&etau),
    })
}
