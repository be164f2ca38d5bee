//! Pearson χ² comparison of observed count tables with fitted expectations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::chain::{self, RateVector, N_STATES};
use crate::error::{Error, Result};
use crate::estimation::{PanelDataset, TransitionCountTable, OBSERVABLE_CELLS};

/// Degrees of freedom assigned to each table, `(4 − 1)(4 − 1)`.
pub const DF_PER_INTERVAL: u32 = 9;
/// Significance level used when none is given.
pub const DEFAULT_ALPHA: f64 = 0.05;
/// Expectations below this are treated as zero.
pub const NEGLIGIBLE_EXPECTATION: f64 = 1e-12;

/// Interpretation wording that accompanies the reference example. Kept
/// verbatim and separate from the neutral report fields.
pub const REFERENCE_INTERPRETATION: &str = "So from the above results the null hypothesis is \
rejected while the alternative hypothesis is accepted and the model fits the data that is to \
mean the future state depends on the current state with the estimated transition rate and \
probability matrices as obtained.";

const DF_NOTE: &str = "df follows the (r-1)(c-1) = 9 per table convention; only 8 cells are \
informative and 5 parameters are estimated, so a conventional accounting would give fewer \
degrees of freedom";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalGof {
    pub expected_table: [[f64; N_STATES]; N_STATES],
    pub chi_sq: f64,
    pub df: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub per_interval: BTreeMap<u32, IntervalGof>,
    pub pooled_chi_sq: f64,
    pub pooled_df: u32,
    pub alpha: f64,
    pub critical_value: f64,
    pub reject_null: bool,
    pub df_note: String,
    pub reference_interpretation: String,
}

/// `E_ij = n_{i+}·P_ij(Δt)` for rows 1 and 2; rows 3 and 4 are zero.
pub fn expected_table(
    theta: &RateVector,
    table: &TransitionCountTable,
) -> Result<[[f64; N_STATES]; N_STATES]> {
    let p = chain::transition_matrix(theta, f64::from(table.delta_t()))?;
    let mut e = [[0.0; N_STATES]; N_STATES];
    for (i, row) in e.iter_mut().enumerate().take(2) {
        let n = table.row_total(i + 1) as f64;
        for (j, v) in row.iter_mut().enumerate() {
            *v = n * p.matrix()[(i, j)];
        }
    }
    Ok(e)
}

/// Σ (O − E)²/E over the eight observable cells, with `df = 9`.
///
/// Cells with negligible expectation are skipped when nothing was observed
/// there and rejected otherwise.
pub fn chi_square_interval(
    observed: &TransitionCountTable,
    expected: &[[f64; N_STATES]; N_STATES],
) -> Result<(f64, u32)> {
    let mut chi = 0.0;
    for &(i, j) in &OBSERVABLE_CELLS {
        let o = observed.counts()[i][j];
        let e = expected[i][j];
        if !(e >= NEGLIGIBLE_EXPECTATION) {
            if o == 0 {
                continue;
            }
            return Err(Error::IllDefinedCell {
                delta_t: observed.delta_t(),
                row: i + 1,
                col: j + 1,
                observed: o,
            });
        }
        let d = o as f64 - e;
        chi += d * d / e;
    }
    Ok((chi, DF_PER_INTERVAL))
}

/// Upper-α quantile of χ²(df).
pub fn critical_value(df: u32, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("significance level {alpha} is outside (0, 1)")));
    }
    let dist = ChiSquared::new(f64::from(df))
        .map_err(|e| Error::Invalid(format!("chi-square with df={df}: {e}")))?;
    Ok(dist.inverse_cdf(1.0 - alpha))
}

/// Sums per-table statistics and compares with the critical value.
pub fn pooled_chi_square(parts: &[(f64, u32)], alpha: f64) -> Result<(f64, u32, f64, bool)> {
    if parts.is_empty() {
        return Err(Error::EstimationInput("no tables to pool".into()));
    }
    let chi: f64 = parts.iter().map(|(c, _)| c).sum();
    let df: u32 = parts.iter().map(|(_, d)| d).sum();
    let crit = critical_value(df, alpha)?;
    Ok((chi, df, crit, chi > crit))
}

pub fn gof_report(theta: &RateVector, dataset: &PanelDataset, alpha: f64) -> Result<GofReport> {
    let mut per_interval = BTreeMap::new();
    let mut parts = Vec::new();
    for table in dataset.tables() {
        let expected_table = expected_table(theta, table)?;
        let (chi_sq, df) = chi_square_interval(table, &expected_table)?;
        parts.push((chi_sq, df));
        per_interval.insert(
            table.delta_t(),
            IntervalGof {
                expected_table,
                chi_sq,
                df,
            },
        );
    }
    let (pooled_chi_sq, pooled_df, critical_value, reject_null) = pooled_chi_square(&parts, alpha)?;
    Ok(GofReport {
        per_interval,
        pooled_chi_sq,
        pooled_df,
        alpha,
        critical_value,
        reject_null,
        df_note: DF_NOTE.to_string(),
        reference_interpretation: REFERENCE_INTERPRETATION.to_string(),
    })
}
