//! Exact sample paths of the chain and their reduction to panel count tables.
//!
//! Every subject draws from its own ChaCha8 stream, keyed by the cohort seed
//! and the subject index, so output does not depend on how subjects are
//! scheduled across threads.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::chain::{self, RateVector, N_STATES};
use crate::error::{Error, Result};
use crate::estimation::{PanelDataset, TransitionCountTable};

/// Gaps between visits must be within this of a whole number of years.
const GAP_ROUNDING_TOL: f64 = 1e-9;

/// A piecewise-constant path: `jumps[k] = (time, state)` with the first entry at time 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub jumps: Vec<(f64, usize)>,
    pub horizon: f64,
    pub stream: u64,
}

impl Trajectory {
    pub fn start_state(&self) -> usize {
        self.jumps[0].1
    }

    pub fn final_state(&self) -> usize {
        self.jumps[self.jumps.len() - 1].1
    }

    /// State occupied at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jumps.partition_point(|&(s, _)| s <= t);
        self.jumps[k.saturating_sub(1)].1
    }

    /// Time of entry into an absorbing state, if it happened before the horizon.
    pub fn absorption_time(&self) -> Option<f64> {
        let &(t, s) = self.jumps.last()?;
        (s > 2).then_some(t)
    }

    /// Completed holding times in `state`; the censored final spell is excluded.
    pub fn holding_times(&self, state: usize) -> impl Iterator<Item = f64> + '_ {
        self.jumps
            .windows(2)
            .filter(move |w| w[0].1 == state)
            .map(|w| w[1].0 - w[0].0)
    }
}

/// Visit times in years, strictly increasing from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSchedule {
    times: Vec<f64>,
}

impl ObservationSchedule {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return Err(Error::Invalid("observation schedule must start at time 0".into()));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("observation times must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    /// Visits at `0, 1, …, years`.
    pub fn annual(years: u32) -> Self {
        Self {
            times: (0..=years).map(f64::from).collect(),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("schedule is nonempty")
    }
}

/// Gillespie simulation on a caller-supplied generator.
pub fn sample_path_with_rng<R: Rng + ?Sized>(
    theta: &RateVector,
    start_state: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<Vec<(f64, usize)>> {
    if !(1..=N_STATES).contains(&start_state) {
        return Err(Error::Invalid(format!("start state {start_state} is not in 1..=4")));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Invalid(format!("horizon must be positive, got {horizon}")));
    }
    let q = chain::build_generator(theta)?;
    let q = q.matrix();
    let mut jumps = vec![(0.0, start_state)];
    let mut t = 0.0;
    let mut state = start_state;
    loop {
        let i = state - 1;
        let exit = -q[(i, i)];
        if exit <= 0.0 {
            break;
        }
        let hold: f64 = Exp::new(exit)
            .map_err(|e| Error::Invalid(format!("exit rate {exit}: {e}")))?
            .sample(rng);
        t += hold;
        if t >= horizon {
            break;
        }
        let mut u = rng.random::<f64>() * exit;
        let mut next = None;
        for j in 0..N_STATES {
            if j == i {
                continue;
            }
            let rate = q[(i, j)];
            if rate > 0.0 {
                next = Some(j);
                if u < rate {
                    break;
                }
                u -= rate;
            }
        }
        // at least one positive rate exists when exit > 0
        state = next.expect("positive exit rate has a destination") + 1;
        jumps.push((t, state));
    }
    Ok(jumps)
}

fn subject_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One path on stream 0 of `seed`.
pub fn sample_path(theta: &RateVector, start_state: usize, horizon: f64, seed: u64) -> Result<Trajectory> {
    sample_path_on_stream(theta, start_state, horizon, seed, 0)
}

pub fn sample_path_on_stream(
    theta: &RateVector,
    start_state: usize,
    horizon: f64,
    seed: u64,
    stream: u64,
) -> Result<Trajectory> {
    let mut rng = subject_rng(seed, stream);
    let jumps = sample_path_with_rng(theta, start_state, horizon, &mut rng)?;
    Ok(Trajectory {
        jumps,
        horizon,
        stream,
    })
}

/// How subjects choose their initial state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartDistribution {
    #[default]
    State1,
    /// State 1 with the given probability, otherwise state 2.
    Mixed { p1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub theta: RateVector,
    pub subjects: usize,
    pub horizon: f64,
    pub seed: u64,
    pub start: StartDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Splits subjects across the rayon pool. Without the `parallel`
    /// feature this runs sequentially.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

fn simulate_subject(spec: &CohortSpec, index: usize) -> Result<Trajectory> {
    let stream = index as u64;
    let mut rng = subject_rng(spec.seed, stream);
    let start = match spec.start {
        StartDistribution::State1 => 1,
        StartDistribution::Mixed { p1 } => {
            if rng.random::<f64>() < p1 {
                1
            } else {
                2
            }
        }
    };
    let jumps = sample_path_with_rng(&spec.theta, start, spec.horizon, &mut rng)?;
    Ok(Trajectory {
        jumps,
        horizon: spec.horizon,
        stream,
    })
}

fn check_spec(spec: &CohortSpec) -> Result<()> {
    spec.theta.validate()?;
    if let StartDistribution::Mixed { p1 } = spec.start {
        if !(0.0..=1.0).contains(&p1) {
            return Err(Error::Invalid(format!("start probability {p1} is outside [0, 1]")));
        }
    }
    Ok(())
}

/// Simulates `spec.subjects` independent paths; trajectory `k` uses stream `k`.
pub fn simulate_cohort(spec: &CohortSpec, exec: Execution) -> Result<Vec<Trajectory>> {
    check_spec(spec)?;
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..spec.subjects)
                .into_par_iter()
                .map(|k| simulate_subject(spec, k))
                .collect()
        }
        _ => (0..spec.subjects).map(|k| simulate_subject(spec, k)).collect(),
    }
}

fn whole_years(gap: f64) -> Result<u32> {
    let k = gap.round();
    if (gap - k).abs() > GAP_ROUNDING_TOL || k < 1.0 {
        return Err(Error::Invalid(format!(
            "visit gap {gap} is not a whole number of years"
        )));
    }
    Ok(k as u32)
}

fn accumulate(
    tables: &mut BTreeMap<u32, TransitionCountTable>,
    trajectory: &Trajectory,
    schedule: &ObservationSchedule,
) -> Result<()> {
    if schedule.end() > trajectory.horizon + GAP_ROUNDING_TOL {
        return Err(Error::Invalid(format!(
            "schedule ends at {} beyond the trajectory horizon {}",
            schedule.end(),
            trajectory.horizon
        )));
    }
    for w in schedule.times().windows(2) {
        let from = trajectory.state_at(w[0]);
        if from > 2 {
            // absorbed subjects contribute nothing further
            break;
        }
        let dt = whole_years(w[1] - w[0])?;
        let to = trajectory.state_at(w[1]);
        tables
            .entry(dt)
            .or_insert_with(|| TransitionCountTable::empty(dt).expect("dt >= 1"))
            .record(from, to);
    }
    Ok(())
}

fn finish(mut tables: BTreeMap<u32, TransitionCountTable>) -> Result<PanelDataset> {
    tables
        .entry(1)
        .or_insert_with(|| TransitionCountTable::empty(1).expect("dt >= 1"));
    PanelDataset::new(tables.into_values().collect())
}

/// Counts consecutive-visit transitions of every trajectory under one
/// shared schedule. A `delta_t = 1` table is always present.
pub fn panelize(trajectories: &[Trajectory], schedule: &ObservationSchedule) -> Result<PanelDataset> {
    let mut tables = BTreeMap::new();
    for tr in trajectories {
        accumulate(&mut tables, tr, schedule)?;
    }
    finish(tables)
}

/// As [`panelize`] with one schedule per trajectory.
pub fn panelize_subjects(
    trajectories: &[Trajectory],
    schedules: &[ObservationSchedule],
) -> Result<PanelDataset> {
    if trajectories.len() != schedules.len() {
        return Err(Error::Invalid(format!(
            "{} trajectories but {} schedules",
            trajectories.len(),
            schedules.len()
        )));
    }
    let mut tables = BTreeMap::new();
    for (tr, s) in trajectories.iter().zip(schedules) {
        accumulate(&mut tables, tr, s)?;
    }
    finish(tables)
}

/// Removes the visits listed (by index into `base`) for each subject.
pub fn irregular_schedule(
    base: &ObservationSchedule,
    missing_pattern: &[BTreeSet<usize>],
) -> Result<Vec<ObservationSchedule>> {
    missing_pattern
        .iter()
        .map(|skipped| {
            if skipped.contains(&0) {
                return Err(Error::Invalid("the baseline visit cannot be skipped".into()));
            }
            let times = base
                .times()
                .iter()
                .enumerate()
                .filter(|(k, _)| !skipped.contains(k))
                .map(|(_, &t)| t)
                .collect();
            ObservationSchedule::new(times)
        })
        .collect()
}

/// Skips each non-baseline visit independently with probability
/// `skip_prob`, never more than `max_consecutive` in a row.
///
/// With `skip_prob = 0.2` and `max_consecutive = 2` the gaps of 1, 2 and 3
/// visits occur in proportions of about 0.8, 0.16 and 0.04.
pub fn random_missing_pattern(
    subjects: usize,
    visits: usize,
    skip_prob: f64,
    max_consecutive: usize,
    seed: u64,
) -> Result<Vec<BTreeSet<usize>>> {
    if !(0.0..1.0).contains(&skip_prob) {
        return Err(Error::Invalid(format!("skip probability {skip_prob} is outside [0, 1)")));
    }
    Ok((0..subjects)
        .map(|k| {
            // offset keeps these streams apart from the path streams
            let mut rng = subject_rng(seed ^ 0x9e37_79b9_7f4a_7c15, k as u64);
            let mut skipped = BTreeSet::new();
            let mut run = 0;
            for v in 1..visits {
                if run < max_consecutive && rng.random::<f64>() < skip_prob {
                    skipped.insert(v);
                    run += 1;
                } else {
                    run = 0;
                }
            }
            skipped
        })
        .collect())
}
