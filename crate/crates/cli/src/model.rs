use std::path::Path;

use serde::{Deserialize, Serialize};

use panel_ctmc::chain::N_RATES;
use panel_ctmc::RateVector;

use crate::CliError;

/// Fitted rates and their covariance, as read by `summarize`, `absorb`,
/// `gof` and `simulate` and written by `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub theta: RateVector,
    /// Omitted means unknown; treated as zero and noted in reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_theta: Option<[[f64; N_RATES]; N_RATES]>,
}

#[derive(Deserialize)]
struct Wrapped {
    model: FittedModel,
}

impl FittedModel {
    /// Reads either a bare model document or any report that embeds one
    /// under `model`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let bad = |e: serde_json::Error| CliError::Input(format!("{}: {e}", path.display()));
        let value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
        let model = if value.get("model").is_some() {
            serde_json::from_value::<Wrapped>(value).map_err(bad)?.model
        } else {
            serde_json::from_value(value).map_err(bad)?
        };
        model.theta.validate()?;
        Ok(model)
    }
}

/// `λ12,λ14,μ21,λ23,λ24` as comma-separated decimals.
pub fn parse_theta(s: &str) -> Result<RateVector, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N_RATES {
        return Err(format!("expected 5 comma-separated rates, got {}", parts.len()));
    }
    let mut v = [0.0; N_RATES];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| format!("`{p}` is not a number"))?;
    }
    let theta = RateVector::from_array(v);
    theta.validate().map_err(|e| e.to_string())?;
    Ok(theta)
}
