//! Moore–Penrose pseudo-inverse of small square matrices.
//!
//! Uses one-sided Jacobi orthogonalization. The bidiagonal SVD in nalgebra
//! 0.35 can return factors that do not reproduce rank-deficient 4×4 inputs
//! (relative reconstruction errors near 0.2 on rank-2 matrices), and every
//! matrix inverted here is rank-deficient by construction.

use nalgebra::SMatrix;

const MAX_SWEEPS: usize = 64;

/// Singular values of `m`, unordered.
pub fn singular_values<const N: usize>(m: &SMatrix<f64, N, N>) -> [f64; N] {
    let (a, _) = orthogonalize(m);
    std::array::from_fn(|j| a.column(j).norm())
}

/// Returns `(A·V, V)` where the columns of `A·V` are mutually orthogonal
/// and `V` is orthogonal.
fn orthogonalize<const N: usize>(m: &SMatrix<f64, N, N>) -> (SMatrix<f64, N, N>, SMatrix<f64, N, N>) {
    let mut a = *m;
    let mut v = SMatrix::<f64, N, N>::identity();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..N {
            for q in (p + 1)..N {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = (1.0 + t * t).sqrt().recip();
                let s = c * t;
                for k in 0..N {
                    let (x, y) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * x - s * y;
                    a[(k, q)] = s * x + c * y;
                    let (x, y) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * x - s * y;
                    v[(k, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (a, v)
}

/// `M⁺`, treating singular values at or below `rcond·σ_max` as zero.
pub fn pseudo_inverse<const N: usize>(m: &SMatrix<f64, N, N>, rcond: f64) -> SMatrix<f64, N, N> {
    let (a, v) = orthogonalize(m);
    let sigma: [f64; N] = std::array::from_fn(|j| a.column(j).norm());
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    let mut out = SMatrix::<f64, N, N>::zeros();
    if sigma_max == 0.0 {
        return out;
    }
    // M = U·Σ·Vᵀ with U = A·V·Σ⁻¹, so M⁺ = Σ_j v_j·(A·V)_jᵀ / σ_j²
    for j in 0..N {
        if sigma[j] > rcond * sigma_max {
            out += v.column(j) * a.column(j).transpose() / (sigma[j] * sigma[j]);
        }
    }
    out
}
