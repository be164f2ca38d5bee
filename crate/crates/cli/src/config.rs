use std::path::Path;

use serde::{Deserialize, Serialize};

use panel_ctmc::estimation::{ZeroCellPolicy, DEFAULT_MAX_ITER, DEFAULT_TOL};
use panel_ctmc::gof::DEFAULT_ALPHA;
use panel_ctmc::summary::{GradientConvention, DISTRIBUTION_SUM_TOL};

use crate::CliError;

/// Settings shared by every analysis subcommand. Loaded from TOML, then
/// overridden field by field from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub tolerance: f64,
    pub max_iter: usize,
    pub significance: f64,
    pub pi0: [f64; 4],
    pub u0: Option<[f64; 4]>,
    pub horizons: Vec<f64>,
    pub strict_gradient: bool,
    pub cvec: Option<[f64; 4]>,
    pub zero_cells: ZeroCellPolicy,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            significance: DEFAULT_ALPHA,
            pi0: [1.0, 0.0, 0.0, 0.0],
            u0: None,
            horizons: vec![1.0],
            strict_gradient: false,
            cvec: None,
            zero_cells: ZeroCellPolicy::Correct,
        }
    }
}

impl AnalysisConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn gradient(&self) -> GradientConvention {
        if self.strict_gradient {
            GradientConvention::Strict
        } else {
            GradientConvention::Collapsed
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return bad(format!("tolerance must be positive, got {}", self.tolerance));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return bad(format!("significance must lie in (0, 1), got {}", self.significance));
        }
        if self.pi0.iter().any(|p| !(*p >= 0.0))
            || (self.pi0.iter().sum::<f64>() - 1.0).abs() > DISTRIBUTION_SUM_TOL
        {
            return bad(format!("pi0 must be nonnegative and sum to 1, got {:?}", self.pi0));
        }
        if let Some(u0) = self.u0 {
            if u0.iter().any(|u| !(*u >= 0.0 && u.is_finite())) {
                return bad(format!("u0 must be nonnegative counts, got {u0:?}"));
            }
        }
        if self.horizons.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return bad(format!("horizons must be finite and nonnegative, got {:?}", self.horizons));
        }
        if let Some(c) = self.cvec {
            if c.iter().any(|x| !x.is_finite()) {
                return bad(format!("cvec must be finite, got {c:?}"));
            }
        }
        Ok(())
    }
}
