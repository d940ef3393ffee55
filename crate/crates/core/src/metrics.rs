//! Round statistics, FCFS-vs-BS savings and report serialization.
//!
//! All seconds are written with nine decimals so identical runs produce
//! byte-identical files.

use std::fmt::Write as _;

use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{FlTaskConfig, Policy, RoundRecord};
use crate::pon::PonConfig;
use crate::traffic::BackgroundConfig;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("report has no rounds to summarize")]
    EmptyReport,
    #[error("FCFS total is zero; savings undefined")]
    DivZero,
}

/// Rounds `x` to nine decimals.
pub fn round9(x: f64) -> f64 {
    format!("{x:.9}").parse().unwrap_or(x)
}

pub(crate) fn ser9<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round9(*x))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fingerprint {
    pub config_hash: String,
    pub seed: u64,
}

impl Fingerprint {
    pub fn of(pon: &PonConfig, background: &BackgroundConfig, task: &FlTaskConfig) -> Self {
        let json = serde_json::to_string(&(pon, background, task)).expect("configs serialize");
        let digest = Sha256::digest(json.as_bytes());
        let config_hash = digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        Fingerprint {
            config_hash,
            seed: background.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingReport {
    pub fingerprint: Fingerprint,
    pub policy: Policy,
    /// Load label for exports (total offered load when known).
    pub load: f64,
    pub involvement: f64,
    /// Leading rounds that ran before the slice took effect.
    pub pre_activation: u32,
    pub rounds: Vec<RoundRecord>,
    pub total_time: f64,
}

impl TrainingReport {
    pub fn new(
        fingerprint: Fingerprint,
        policy: Policy,
        load: f64,
        involvement: f64,
        pre_activation: u32,
        rounds: Vec<RoundRecord>,
    ) -> Self {
        let total_time = rounds.iter().map(|r| r.sync_time).sum();
        TrainingReport {
            fingerprint,
            policy,
            load,
            involvement,
            pre_activation,
            rounds,
            total_time,
        }
    }

    pub fn rounds_csv_header() -> &'static str {
        "round,policy,load,involvement,sync_time_s,overrun_s,straggler_id"
    }

    /// Per-round rows without header.
    pub fn rounds_csv_rows(&self, out: &mut String) {
        for r in &self.rounds {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.9},{:.9},{}",
                r.round,
                self.policy,
                fmt_num(self.load),
                fmt_num(self.involvement),
                r.sync_time,
                r.overrun,
                r.straggler
            );
        }
    }
}

// Shortest round-trip form; stable across platforms.
fn fmt_num(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncSummary {
    pub rounds: usize,
    #[serde(serialize_with = "ser9")]
    pub mean: f64,
    #[serde(serialize_with = "ser9")]
    pub min: f64,
    #[serde(serialize_with = "ser9")]
    pub max: f64,
    #[serde(serialize_with = "ser9")]
    pub p95: f64,
    #[serde(serialize_with = "ser9")]
    pub total: f64,
}

impl SyncSummary {
    pub fn from_times(times: &[f64]) -> Result<Self, MetricsError> {
        if times.is_empty() {
            return Err(MetricsError::EmptyReport);
        }
        let mut sorted = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let total: f64 = sorted.iter().sum();
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Ok(SyncSummary {
            rounds: n,
            mean: total / n as f64,
            min: sorted[0],
            max: sorted[n - 1],
            p95: sorted[rank - 1],
            total,
        })
    }
}

/// Statistics over a report's rounds; the pre-activation rounds are left out
/// unless `include_pre_activation` is set.
pub fn summarize(
    report: &TrainingReport,
    include_pre_activation: bool,
) -> Result<SyncSummary, MetricsError> {
    let skip = if include_pre_activation {
        0
    } else {
        report.pre_activation as usize
    };
    let times: Vec<f64> = report
        .rounds
        .iter()
        .skip(skip)
        .map(|r| r.sync_time)
        .collect();
    SyncSummary::from_times(&times)
}

/// `(T_FCFS - T_BS) / T_FCFS` on totals. Negative when BS is slower.
pub fn compute_savings(fcfs: &SyncSummary, bs: &SyncSummary) -> Result<f64, MetricsError> {
    if fcfs.total == 0.0 {
        return Err(MetricsError::DivZero);
    }
    Ok((fcfs.total - bs.total) / fcfs.total)
}

/// One (load, involvement) cell of a paired comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonCell {
    #[serde(serialize_with = "ser9")]
    pub load: f64,
    #[serde(serialize_with = "ser9")]
    pub involvement: f64,
    #[serde(serialize_with = "ser9")]
    pub background_load: f64,
    pub seeds: Vec<u64>,
    pub fcfs: SyncSummary,
    pub bs: SyncSummary,
    #[serde(serialize_with = "ser9")]
    pub savings: f64,
}

impl ComparisonCell {
    /// Pools the rounds of every seed for each policy. Both reports of a
    /// pair drop the same leading rounds (the larger pre-activation count),
    /// so the totals cover identical round indices.
    pub fn from_pairs(
        load: f64,
        involvement: f64,
        background_load: f64,
        pairs: &[(u64, TrainingReport, TrainingReport)],
    ) -> Result<Self, MetricsError> {
        let pooled = |pick: fn(&(u64, TrainingReport, TrainingReport)) -> &TrainingReport| {
            let mut times = Vec::new();
            for p in pairs {
                let skip = p.1.pre_activation.max(p.2.pre_activation) as usize;
                times.extend(pick(p).rounds.iter().skip(skip).map(|x| x.sync_time));
            }
            SyncSummary::from_times(&times)
        };
        let fcfs = pooled(|p| &p.1)?;
        let bs = pooled(|p| &p.2)?;
        let savings = compute_savings(&fcfs, &bs)?;
        Ok(ComparisonCell {
            load,
            involvement,
            background_load,
            seeds: pairs.iter().map(|p| p.0).collect(),
            fcfs,
            bs,
            savings,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonSummary {
    pub config_hash: String,
    pub cells: Vec<ComparisonCell>,
}

impl ComparisonSummary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn cell(&self, load: f64, involvement: f64) -> Option<&ComparisonCell> {
        self.cells
            .iter()
            .find(|c| c.load == load && c.involvement == involvement)
    }

    pub fn table_csv(&self) -> String {
        let mut out = String::from("load,involvement,mean_sync_fcfs_s,mean_sync_bs_s,savings\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{:.9},{:.9},{:.9}",
                fmt_num(c.load),
                fmt_num(c.involvement),
                c.fcfs.mean,
                c.bs.mean,
                c.savings
            );
        }
        out
    }
}
