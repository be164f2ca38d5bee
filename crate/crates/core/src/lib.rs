//! Four-state continuous-time Markov chain with two transient and two
//! absorbing states, fitted to interval-censored panel counts.
//!
//! The crate covers the full analysis of such a model:
//!
//! * [`chain`]: generator, closed-form `P(t)` and a series exponential.
//! * [`estimation`]: scaled-score quasi-Newton fit per interval and pooling.
//! * [`summary`]: sojourn times, occupancy, cohort counts, limiting distribution.
//! * [`absorption`]: block partition, `Z = B⁻¹A` and expected absorption times.
//! * [`gof`]: Pearson χ² against fitted expectations.
//! * [`simulate`]: exact sample paths and their panel tables.
//! * [`format`]: text formats for count tables and raw visit records.
//!
//! ```
//! use panel_ctmc::chain::{transition_matrix, RateVector};
//!
//! let theta = RateVector::new(0.2908, 0.02285, 0.02805, 0.2076, 0.068);
//! let p = transition_matrix(&theta, 1.0).unwrap();
//! assert!((p.get(1, 1) - 0.734).abs() < 5e-4);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN takes the error branch
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// entry loops read closer to the matrix algebra than iterator chains
#![allow(clippy::needless_range_loop)]

pub mod absorption;
pub mod chain;
pub mod error;
pub mod estimation;
pub mod format;
pub mod gof;
pub mod linalg;
pub mod simulate;
pub mod summary;

pub use chain::{RateVector, TransitionMatrix};
pub use error::{Degeneracy, Error, Result};
pub use estimation::{EstimationOptions, EstimationResult, PanelDataset, TransitionCountTable};
