//! Accuracy-vs-rounds lookup.
//!
//! No model is trained here. Accuracy comes from a trace file with columns
//! `involvement_percent,round,accuracy`. The bundled trace is illustrative:
//! its saturation levels are 0.68 at 10% involvement and 0.82 at 100%, and
//! the curve between samples is a smooth saturating shape, not measured data.

use std::collections::BTreeMap;

use thiserror::Error;

pub const BUNDLED_TRACE_CSV: &str = include_str!("../../data/accuracy_trace.csv");

#[derive(Debug, Error, PartialEq)]
pub enum AccuracyError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace is empty")]
    Empty,
    #[error("no samples for involvement {0}%")]
    UnknownInvolvement(f64),
}

/// How to pick the involvement level for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelMatch {
    Exact,
    Nearest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTrace {
    // Keyed by involvement in hundredths of a percent.
    levels: BTreeMap<u32, Vec<(u32, f64)>>,
}

fn level_key(p: f64) -> u32 {
    (p * 100.0).round() as u32
}

impl AccuracyTrace {
    pub fn bundled() -> Self {
        Self::parse_csv(BUNDLED_TRACE_CSV).expect("bundled trace is valid")
    }

    pub fn parse_csv(text: &str) -> Result<Self, AccuracyError> {
        let mut levels: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "involvement_percent,round,accuracy" => {}
            _ => {
                return Err(AccuracyError::Parse {
                    line: 1,
                    msg: "expected header involvement_percent,round,accuracy".into(),
                })
            }
        }
        for (i, raw) in lines {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let err = |msg: String| AccuracyError::Parse { line, msg };
            let cols: Vec<&str> = raw.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(err(format!("expected 3 columns, got {}", cols.len())));
            }
            let p: f64 = cols[0]
                .parse()
                .map_err(|_| err(format!("bad involvement '{}'", cols[0])))?;
            let round: u32 = cols[1]
                .parse()
                .map_err(|_| err(format!("bad round '{}'", cols[1])))?;
            let acc: f64 = cols[2]
                .parse()
                .map_err(|_| err(format!("bad accuracy '{}'", cols[2])))?;
            if !(p > 0.0 && p <= 100.0) {
                return Err(err(format!("involvement {p} outside (0, 100]")));
            }
            if !(0.0..=1.0).contains(&acc) {
                return Err(err(format!("accuracy {acc} outside [0, 1]")));
            }
            let samples = levels.entry(level_key(p)).or_default();
            if samples.last().is_some_and(|(r, _)| *r >= round) {
                return Err(err(format!("rounds must increase within involvement {p}%")));
            }
            samples.push((round, acc));
        }
        if levels.is_empty() {
            return Err(AccuracyError::Empty);
        }
        Ok(AccuracyTrace { levels })
    }

    pub fn involvement_levels(&self) -> Vec<f64> {
        self.levels.keys().map(|k| *k as f64 / 100.0).collect()
    }

    /// Last sample of a level.
    pub fn saturated(&self, involvement_percent: f64) -> Option<f64> {
        self.levels
            .get(&level_key(involvement_percent))
            .and_then(|s| s.last())
            .map(|(_, a)| *a)
    }
}

/// Accuracy after `round` rounds: linear between samples of the chosen
/// level, flat before the first and after the last sample.
pub fn accuracy_lookup(
    trace: &AccuracyTrace,
    involvement_percent: f64,
    round: f64,
    matching: LevelMatch,
) -> Result<f64, AccuracyError> {
    let key = level_key(involvement_percent);
    let samples = match (trace.levels.get(&key), matching) {
        (Some(s), _) => s,
        (None, LevelMatch::Exact) => {
            return Err(AccuracyError::UnknownInvolvement(involvement_percent))
        }
        (None, LevelMatch::Nearest) => trace
            .levels
            .iter()
            .min_by_key(|(k, _)| k.abs_diff(key))
            .map(|(_, s)| s)
            .ok_or(AccuracyError::Empty)?,
    };
    let (first_round, first_acc) = samples[0];
    if round <= first_round as f64 {
        return Ok(first_acc);
    }
    for w in samples.windows(2) {
        let ((r0, a0), (r1, a1)) = (w[0], w[1]);
        if round <= r1 as f64 {
            let frac = (round - r0 as f64) / (r1 - r0) as f64;
            return Ok(a0 + (a1 - a0) * frac);
        }
    }
    Ok(samples.last().expect("nonempty").1)
}
