//! Quasi-Newton estimation of the five intensities from interval count tables.
//!
//! The score is the reduced form obtained by replacing each `n_ij / P_ij`
//! with the row total `n_{i+}`: every cell contributes the same
//! eigenvalue-derivative vector `v`, so the score for one interval is
//! `(4n₁₊ + 4n₂₊)·v`. The Hessian approximation is the outer product of that
//! score with itself, scaled by `Σ n_{i+}² / n_ij` over the eight observable
//! cells. Its rank-1 structure means only the leading 3×3 block is inverted.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use crate::chain::{self, RateVector, N_RATES};
use crate::error::{Error, Result};
use crate::linalg;

/// Default convergence tolerance on the infinity norm of the step.
///
/// The reduced score never vanishes, so each step has a floor of roughly
/// `1/(F·|S|)`; on a table of 50 transitions that floor is about 1.7e-6.
pub const DEFAULT_TOL: f64 = 1e-5;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 50;
/// Singular values below this fraction of the largest are discarded when
/// inverting the leading Hessian block.
pub const BLOCK_RCOND: f64 = 1e-10;
/// Continuity correction applied to empty cells in the Hessian scale factor.
pub const ZERO_CELL_CORRECTION: f64 = 0.5;

/// The eight cells that carry information: rows 1–2, columns 1–4 (0-based).
pub const OBSERVABLE_CELLS: [(usize, usize); 8] =
    [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0), (1, 1), (1, 2), (1, 3)];

/// Observed transitions over intervals of one length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionCountTable {
    delta_t: u32,
    counts: [[u64; 4]; 4],
}

impl TransitionCountTable {
    pub fn new(delta_t: u32, counts: [[u64; 4]; 4]) -> Result<Self> {
        if delta_t == 0 {
            return Err(Error::Invalid("delta_t must be a whole number of years >= 1".into()));
        }
        for (r, row) in counts.iter().enumerate().skip(2) {
            if row.iter().any(|&c| c != 0) {
                return Err(Error::Invalid(format!(
                    "table delta_t={delta_t}: row {} is an absorbing state and must be zero",
                    r + 1
                )));
            }
        }
        Ok(Self { delta_t, counts })
    }

    /// An all-zero table.
    pub fn empty(delta_t: u32) -> Result<Self> {
        Self::new(delta_t, [[0; 4]; 4])
    }

    pub fn delta_t(&self) -> u32 {
        self.delta_t
    }

    pub fn counts(&self) -> &[[u64; 4]; 4] {
        &self.counts
    }

    /// Count for 1-based states.
    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i - 1][j - 1]
    }

    /// `n_{i+}` for 1-based transient row `i`.
    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i - 1].iter().sum()
    }

    /// Transitions in the table (rows 1 and 2).
    pub fn total(&self) -> u64 {
        self.row_total(1) + self.row_total(2)
    }

    /// Adds one observed transition between 1-based states.
    pub(crate) fn record(&mut self, from: usize, to: usize) {
        debug_assert!(from <= 2);
        self.counts[from - 1][to - 1] += 1;
    }

    fn require_positive_rows(&self) -> Result<()> {
        for i in 1..=2 {
            if self.row_total(i) == 0 {
                return Err(Error::EstimationInput(format!(
                    "table delta_t={}: row {i} has no transitions",
                    self.delta_t
                )));
            }
        }
        Ok(())
    }
}

/// Count tables for distinct interval lengths, ordered by `delta_t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelDataset {
    tables: Vec<TransitionCountTable>,
}

impl PanelDataset {
    pub fn new(mut tables: Vec<TransitionCountTable>) -> Result<Self> {
        tables.sort_by_key(|t| t.delta_t);
        if tables.windows(2).any(|w| w[0].delta_t == w[1].delta_t) {
            return Err(Error::Invalid("duplicate delta_t among count tables".into()));
        }
        if !tables.iter().any(|t| t.delta_t == 1) {
            return Err(Error::Invalid("a delta_t=1 table is required".into()));
        }
        Ok(Self { tables })
    }

    pub fn tables(&self) -> &[TransitionCountTable] {
        &self.tables
    }

    pub fn table(&self, delta_t: u32) -> Option<&TransitionCountTable> {
        self.tables.iter().find(|t| t.delta_t == delta_t)
    }

    pub fn total(&self) -> u64 {
        self.tables.iter().map(TransitionCountTable::total).sum()
    }

    /// Share of all transitions contributed by each table.
    pub fn weights(&self) -> Result<BTreeMap<u32, f64>> {
        let grand = self.total();
        if grand == 0 {
            return Err(Error::EstimationInput("dataset has no transitions".into()));
        }
        Ok(self
            .tables
            .iter()
            .map(|t| (t.delta_t, t.total() as f64 / grand as f64))
            .collect())
    }
}

/// `n_ij / n_{i+}` for the five off-diagonal cells, on a `delta_t = 1` table.
pub fn initial_rates(table_dt1: &TransitionCountTable) -> Result<RateVector> {
    if table_dt1.delta_t != 1 {
        return Err(Error::EstimationInput(format!(
            "initial rates need the delta_t=1 table, got delta_t={}",
            table_dt1.delta_t
        )));
    }
    crude_rates(table_dt1)
}

/// Row-proportion starting values `n_ij / n_{i+}` for any interval length.
pub fn crude_rates(table: &TransitionCountTable) -> Result<RateVector> {
    table.require_positive_rows()?;
    let n1 = table.row_total(1) as f64;
    let n2 = table.row_total(2) as f64;
    Ok(RateVector::new(
        table.count(1, 2) as f64 / n1,
        table.count(1, 4) as f64 / n1,
        table.count(2, 1) as f64 / n2,
        table.count(2, 3) as f64 / n2,
        table.count(2, 4) as f64 / n2,
    ))
}

/// The five signed sums `s_h` with `∂D/∂θ_h = 2 s_h`.
pub(crate) fn discriminant_gradient_halves(theta: &RateVector) -> [f64; N_RATES] {
    let RateVector {
        lambda12: l12,
        lambda14: l14,
        mu21: mu,
        lambda23: l23,
        lambda24: l24,
    } = *theta;
    [
        l12 + l14 + mu - l23 - l24,
        l12 + l14 - mu - l23 - l24,
        mu + l12 + l23 + l24 - l14,
        l23 + mu + l24 - l12 - l14,
        l24 + mu + l23 - l12 - l14,
    ]
}

/// Partial derivatives of both characteristic roots with respect to each intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootGradients {
    pub d_w1: [f64; N_RATES],
    pub d_w2: [f64; N_RATES],
}

pub fn root_gradients(theta: &RateVector) -> Result<RootGradients> {
    chain::characteristic_roots(theta)?;
    let inv_sqrt = chain::discriminant(theta).sqrt().recip();
    let s = discriminant_gradient_halves(theta);
    let mut d_w1 = [0.0; N_RATES];
    let mut d_w2 = [0.0; N_RATES];
    for h in 0..N_RATES {
        d_w1[h] = -0.5 - 0.5 * inv_sqrt * s[h];
        d_w2[h] = -0.5 + 0.5 * inv_sqrt * s[h];
    }
    Ok(RootGradients { d_w1, d_w2 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreVector {
    pub v: Vector5<f64>,
    pub scaled: bool,
}

/// `v_h = t·e^{w₁t}·∂w₁/∂θ_h + t·e^{w₂t}·∂w₂/∂θ_h` at `t = delta_t`.
pub fn score_components(theta: &RateVector, delta_t: f64) -> Result<ScoreVector> {
    let (w1, w2) = chain::characteristic_roots(theta)?;
    let g = root_gradients(theta)?;
    let e1 = delta_t * (w1 * delta_t).exp();
    let e2 = delta_t * (w2 * delta_t).exp();
    let v = Vector5::from_fn(|h, _| e1 * g.d_w1[h] + e2 * g.d_w2[h]);
    Ok(ScoreVector { v, scaled: false })
}

/// Score for one table: `(4n₁₊ + 4n₂₊)·v`.
pub fn scaled_score(theta: &RateVector, table: &TransitionCountTable) -> Result<ScoreVector> {
    let unscaled = score_components(theta, f64::from(table.delta_t))?;
    let factor = 4.0 * (table.row_total(1) + table.row_total(2)) as f64;
    Ok(ScoreVector {
        v: unscaled.v * factor,
        scaled: true,
    })
}

/// What to do with an empty observable cell in the Hessian scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroCellPolicy {
    Reject,
    /// Replace the zero count by one half.
    #[default]
    Correct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianApprox {
    pub m: Matrix5<f64>,
    pub scale_factor: f64,
    /// 1-based cells that received the continuity correction.
    pub corrected_cells: Vec<(usize, usize)>,
}

impl HessianApprox {
    /// Wraps an explicit matrix with unit scale.
    pub fn from_matrix(m: Matrix5<f64>) -> Self {
        Self {
            m,
            scale_factor: 1.0,
            corrected_cells: Vec::new(),
        }
    }
}

/// `Σ n_{i+}² / n_ij` over the eight observable cells.
pub fn hessian_scale_factor(
    table: &TransitionCountTable,
    policy: ZeroCellPolicy,
) -> Result<(f64, Vec<(usize, usize)>)> {
    let mut factor = 0.0;
    let mut corrected = Vec::new();
    for &(i, j) in &OBSERVABLE_CELLS {
        let n_row = table.row_total(i + 1) as f64;
        let mut n = table.counts[i][j] as f64;
        if n == 0.0 {
            match policy {
                ZeroCellPolicy::Reject => {
                    return Err(Error::ZeroCell {
                        delta_t: table.delta_t,
                        row: i + 1,
                        col: j + 1,
                    })
                }
                ZeroCellPolicy::Correct => {
                    n = ZERO_CELL_CORRECTION;
                    corrected.push((i + 1, j + 1));
                }
            }
        }
        factor += n_row * n_row / n;
    }
    Ok((factor, corrected))
}

/// `scale_factor · S·Sᵀ` for a scaled score `S`.
pub fn hessian_approx(
    score: &ScoreVector,
    table: &TransitionCountTable,
    policy: ZeroCellPolicy,
) -> Result<HessianApprox> {
    let (scale_factor, corrected_cells) = hessian_scale_factor(table, policy)?;
    let m = (score.v * score.v.transpose()) * scale_factor;
    Ok(HessianApprox {
        m,
        scale_factor,
        corrected_cells,
    })
}

/// `[[O⁺, 0], [0, 0]]` where `O` is the leading 3×3 block of `M`.
///
/// `O⁺` equals `O⁻¹` whenever `O` is numerically invertible; otherwise
/// singular values below `BLOCK_RCOND·σ_max` are dropped.
pub fn block_pseudoinverse(m: &HessianApprox) -> Result<Matrix5<f64>> {
    let o: Matrix3<f64> = m.m.fixed_view::<3, 3>(0, 0).into_owned();
    if o.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularHessian);
    }
    if o.iter().all(|&x| x == 0.0) {
        return Err(Error::SingularHessian);
    }
    let o_inv = linalg::pseudo_inverse(&o, BLOCK_RCOND);
    let mut out = Matrix5::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&o_inv);
    Ok(out)
}

/// One quasi-Newton step as recorded in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub theta: RateVector,
    pub step_norm: f64,
    /// Components clamped at zero after the step, by canonical index.
    pub clamped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub delta_t: u32,
    pub theta_hat: RateVector,
    pub iterations: usize,
    pub delta_norm: f64,
    /// Block pseudo-inverse of the scaled Hessian at `theta_hat`.
    pub inverse_hessian: [[f64; N_RATES]; N_RATES],
    pub corrected_cells: Vec<(usize, usize)>,
    pub trace: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub zero_cells: ZeroCellPolicy,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            zero_cells: ZeroCellPolicy::Correct,
        }
    }
}

/// Score, block pseudo-inverse and the zero cells that were corrected.
type Linearization = (Vector5<f64>, Matrix5<f64>, Vec<(usize, usize)>);

fn inverse_hessian_at(theta: &RateVector, table: &TransitionCountTable, policy: ZeroCellPolicy) -> Result<Linearization> {
    let s = scaled_score(theta, table)?;
    let h = hessian_approx(&s, table, policy)?;
    let inv = block_pseudoinverse(&h)?;
    Ok((s.v, inv, h.corrected_cells))
}

/// Iterates `θ ← θ + M(θ)⁺·S(θ)` on one table until the step's infinity
/// norm drops below `opts.tol`.
pub fn estimate_interval(
    table: &TransitionCountTable,
    theta0: &RateVector,
    opts: &EstimationOptions,
) -> Result<IntervalEstimate> {
    theta0.validate()?;
    if !(opts.tol > 0.0) {
        return Err(Error::Invalid("tolerance must be positive".into()));
    }
    table.require_positive_rows()?;

    let mut theta = *theta0;
    let mut trace = Vec::new();
    let mut delta_norm = f64::INFINITY;
    for iteration in 1..=opts.max_iter {
        let (s, inv, _) = inverse_hessian_at(&theta, table, opts.zero_cells)?;
        let step = inv * s;
        let mut next = theta.to_array();
        let mut clamped = Vec::new();
        for (h, x) in next.iter_mut().enumerate() {
            *x += step[h];
            if *x < 0.0 {
                *x = 0.0;
                clamped.push(h);
            }
        }
        let next = RateVector::from_array(next);
        delta_norm = next
            .to_array()
            .iter()
            .zip(theta.to_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        theta = next;
        trace.push(IterationRecord {
            iteration,
            theta,
            step_norm: delta_norm,
            clamped,
        });
        if delta_norm < opts.tol {
            let (_, inv, corrected_cells) = inverse_hessian_at(&theta, table, opts.zero_cells)?;
            return Ok(IntervalEstimate {
                delta_t: table.delta_t,
                theta_hat: theta,
                iterations: iteration,
                delta_norm,
                inverse_hessian: to_rows(&inv),
                corrected_cells,
                trace,
            });
        }
    }
    Err(Error::NonConvergence {
        delta_t: table.delta_t,
        iterations: opts.max_iter,
        delta_norm,
        trace,
    })
}

/// `Σ_Δt weight(Δt)·θ̂(Δt)`.
pub fn pool_estimates(
    per_interval: &BTreeMap<u32, RateVector>,
    dataset: &PanelDataset,
) -> Result<RateVector> {
    let weights = dataset.weights()?;
    let mut acc = [0.0; N_RATES];
    for (dt, w) in &weights {
        let theta = per_interval.get(dt).ok_or_else(|| {
            Error::EstimationInput(format!("no estimate for delta_t={dt}"))
        })?;
        for (a, x) in acc.iter_mut().zip(theta.to_array()) {
            *a += w * x;
        }
    }
    Ok(RateVector::from_array(acc))
}

/// `Σ_Δt weight(Δt)·[M(θ̂_Δt)]⁺`.
pub fn pooled_covariance(
    per_interval_inverses: &BTreeMap<u32, Matrix5<f64>>,
    dataset: &PanelDataset,
) -> Result<Matrix5<f64>> {
    let weights = dataset.weights()?;
    let mut acc = Matrix5::zeros();
    for (dt, w) in &weights {
        let inv = per_interval_inverses.get(dt).ok_or_else(|| {
            Error::EstimationInput(format!("no inverse Hessian for delta_t={dt}"))
        })?;
        acc += inv * *w;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub per_interval: BTreeMap<u32, IntervalEstimate>,
    pub weights: BTreeMap<u32, f64>,
    pub pooled_theta: RateVector,
    pub pooled_covariance: [[f64; N_RATES]; N_RATES],
}

impl EstimationResult {
    pub fn covariance_matrix(&self) -> Matrix5<f64> {
        from_rows(&self.pooled_covariance)
    }
}

/// Estimates every table from its own row-proportion start, then pools.
///
/// Tables whose rows are empty are skipped; they carry no weight.
pub fn estimate_dataset(dataset: &PanelDataset, opts: &EstimationOptions) -> Result<EstimationResult> {
    let weights = dataset.weights()?;
    let mut per_interval = BTreeMap::new();
    for table in dataset.tables() {
        if table.total() == 0 {
            continue;
        }
        let theta0 = crude_rates(table)?;
        let est = estimate_interval(table, &theta0, opts)?;
        per_interval.insert(table.delta_t, est);
    }
    let weights: BTreeMap<u32, f64> = weights.into_iter().filter(|(_, w)| *w > 0.0).collect();
    let thetas: BTreeMap<u32, RateVector> =
        per_interval.iter().map(|(dt, e)| (*dt, e.theta_hat)).collect();
    let inverses: BTreeMap<u32, Matrix5<f64>> = per_interval
        .iter()
        .map(|(dt, e)| (*dt, from_rows(&e.inverse_hessian)))
        .collect();
    let nonempty = PanelDataset {
        tables: dataset.tables().iter().filter(|t| t.total() > 0).cloned().collect(),
    };
    let pooled_theta = pool_estimates(&thetas, &nonempty)?;
    let cov = pooled_covariance(&inverses, &nonempty)?;
    Ok(EstimationResult {
        per_interval,
        weights,
        pooled_theta,
        pooled_covariance: to_rows(&cov),
    })
}

pub(crate) fn to_rows(m: &Matrix5<f64>) -> [[f64; N_RATES]; N_RATES] {
    let mut out = [[0.0; N_RATES]; N_RATES];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    out
}

pub fn from_rows(rows: &[[f64; N_RATES]; N_RATES]) -> Matrix5<f64> {
    Matrix5::from_fn(|i, j| rows[i][j])
}
