//! Text formats for panel data.
//!
//! Count tables are blocks of a `delta_t=<k>` header followed by four rows
//! of four comma-separated counts:
//!
//! ```text
//! delta_t=1
//! 330,163,45,12
//! 5,185,45,15
//! 0,0,0,0
//! 0,0,0,0
//! ```
//!
//! Raw records are `subject,time,state` lines, optionally headed by that
//! literal line. Lines starting with `#` and blank lines are ignored in both.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::estimation::{PanelDataset, TransitionCountTable};
use crate::simulate::{ObservationSchedule, Trajectory};

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_header(line: usize, text: &str) -> Result<u32> {
    let rest = text
        .strip_prefix("delta_t")
        .map(str::trim_start)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| parse_err(line, format!("expected `delta_t=<k>`, found `{text}`")))?;
    rest.trim()
        .parse::<u32>()
        .map_err(|_| parse_err(line, format!("delta_t must be a positive integer, found `{}`", rest.trim())))
}

fn parse_row(line: usize, text: &str) -> Result<[u64; 4]> {
    let fields: Vec<&str> = text.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(parse_err(line, format!("expected 4 counts, found {}", fields.len())));
    }
    let mut row = [0u64; 4];
    for (slot, f) in row.iter_mut().zip(fields) {
        *slot = f
            .parse()
            .map_err(|_| parse_err(line, format!("`{f}` is not a nonnegative integer count")))?;
    }
    Ok(row)
}

/// Parses one or more count-table blocks.
pub fn parse_count_tables(text: &str) -> Result<PanelDataset> {
    let mut lines = content_lines(text).peekable();
    let mut tables = Vec::new();
    while let Some((ln, header)) = lines.next() {
        let dt = parse_header(ln, header)?;
        let mut counts = [[0u64; 4]; 4];
        for (r, row) in counts.iter_mut().enumerate() {
            let (ln, text) = lines
                .next()
                .ok_or_else(|| parse_err(ln, format!("table delta_t={dt} has {r} of 4 rows")))?;
            if text.starts_with("delta_t") {
                return Err(parse_err(ln, format!("table delta_t={dt} has {r} of 4 rows")));
            }
            *row = parse_row(ln, text)?;
        }
        let table = TransitionCountTable::new(dt, counts).map_err(|e| parse_err(ln, e.to_string()))?;
        tables.push(table);
    }
    if tables.is_empty() {
        return Err(parse_err(0, "no count tables found"));
    }
    PanelDataset::new(tables).map_err(|e| parse_err(0, e.to_string()))
}

pub fn write_count_tables(dataset: &PanelDataset) -> String {
    let mut out = String::new();
    for (k, t) in dataset.tables().iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "delta_t={}", t.delta_t());
        for row in t.counts() {
            let _ = writeln!(out, "{},{},{},{}", row[0], row[1], row[2], row[3]);
        }
    }
    out
}

/// One visit of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub subject: String,
    pub time: f64,
    pub state: usize,
}

pub fn parse_records(text: &str) -> Result<Vec<ObservationRecord>> {
    let mut out = Vec::new();
    for (ln, line) in content_lines(text) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(ln, format!("expected subject,time,state, found {} fields", fields.len())));
        }
        if out.is_empty() && fields == ["subject", "time", "state"] {
            continue;
        }
        let time: f64 = fields[1]
            .parse()
            .map_err(|_| parse_err(ln, format!("`{}` is not a time", fields[1])))?;
        if !(time >= 0.0) || !time.is_finite() {
            return Err(parse_err(ln, format!("time {time} must be finite and nonnegative")));
        }
        let state: usize = fields[2]
            .parse()
            .ok()
            .filter(|s| (1..=4).contains(s))
            .ok_or_else(|| parse_err(ln, format!("`{}` is not a state in 1..=4", fields[2])))?;
        out.push(ObservationRecord {
            subject: fields[0].to_string(),
            time,
            state,
        });
    }
    if out.is_empty() {
        return Err(parse_err(0, "no observation records found"));
    }
    Ok(out)
}

/// Groups records by subject, orders each subject's visits by time and
/// counts consecutive pairs. Pairs starting in an absorbing state are dropped.
pub fn panelize_records(records: &[ObservationRecord]) -> Result<PanelDataset> {
    let mut by_subject: BTreeMap<&str, Vec<&ObservationRecord>> = BTreeMap::new();
    for r in records {
        by_subject.entry(&r.subject).or_default().push(r);
    }
    let mut tables: BTreeMap<u32, TransitionCountTable> = BTreeMap::new();
    for (subject, mut visits) in by_subject {
        visits.sort_by(|a, b| a.time.total_cmp(&b.time));
        for w in visits.windows(2) {
            let gap = w[1].time - w[0].time;
            let dt = gap.round();
            if (gap - dt).abs() > 1e-9 || dt < 1.0 {
                return Err(Error::Invalid(format!(
                    "subject {subject}: visits at {} and {} are not a whole number of years apart",
                    w[0].time, w[1].time
                )));
            }
            if w[0].state > 2 {
                continue;
            }
            let dt = dt as u32;
            tables
                .entry(dt)
                .or_insert_with(|| TransitionCountTable::empty(dt).expect("dt >= 1"))
                .record(w[0].state, w[1].state);
        }
    }
    tables
        .entry(1)
        .or_insert_with(|| TransitionCountTable::empty(1).expect("dt >= 1"));
    PanelDataset::new(tables.into_values().collect())
}

/// States observed at each subject's scheduled visits, as raw records.
pub fn write_records(trajectories: &[Trajectory], schedules: &[ObservationSchedule]) -> Result<String> {
    if trajectories.len() != schedules.len() {
        return Err(Error::Invalid("one schedule per trajectory is required".into()));
    }
    let mut out = String::from("subject,time,state\n");
    for (k, (tr, s)) in trajectories.iter().zip(schedules).enumerate() {
        for &t in s.times() {
            let _ = writeln!(out, "{},{},{}", k + 1, t, tr.state_at(t));
        }
    }
    Ok(out)
}

/// Count tables if the text has a `delta_t=` header, raw records otherwise.
pub fn parse_dataset(text: &str) -> Result<PanelDataset> {
    let first = content_lines(text).next();
    match first {
        None => Err(parse_err(0, "input is empty")),
        Some((_, l)) if l.starts_with("delta_t") => parse_count_tables(text),
        Some(_) => panelize_records(&parse_records(text)?),
    }
}
