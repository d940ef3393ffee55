//! Multi-run experiments: single runs, paired FCFS/BS comparisons and
//! policy sweeps over (load, involvement, seed) cells.
//!
//! Cells run in parallel; results are merged in input order so output files
//! do not depend on thread scheduling.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{
    client_population, run_training, select_cohort, EngineError, FlSimulation, Policy,
};
use crate::metrics::{
    summarize, ComparisonCell, ComparisonSummary, MetricsError, SyncSummary, TrainingReport,
};
use crate::planner::{plan_slice, validate_round_threshold, CohortInfo, RoundVerdict, SliceSpec};
use crate::scenario::{LoadSpec, Scenario, ScenarioError};
use crate::uplink::GrantLog;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0} list is empty")]
    EmptyList(&'static str),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("run at load {load}, involvement {involvement}%, seed {seed}, {policy}: {source}")]
    Run {
        load: f64,
        involvement: f64,
        seed: u64,
        policy: Policy,
        source: EngineError,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Runs one training for a cell. The report's `load` is the load label the
/// caller asked for.
pub fn run_cell(
    scenario: &Scenario,
    load: LoadSpec,
    involvement: f64,
    seed: u64,
    policy: Policy,
) -> Result<TrainingReport, ExperimentError> {
    let (bg, mut task) = scenario.resolve(load, involvement, seed)?;
    task.policy = policy;
    let mut report =
        run_training(&scenario.pon, &bg, &task).map_err(|source| ExperimentError::Run {
            load: load_label(load),
            involvement,
            seed,
            policy,
            source,
        })?;
    report.load = load_label(load);
    Ok(report)
}

fn load_label(load: LoadSpec) -> f64 {
    match load {
        LoadSpec::Total(x) | LoadSpec::Background(x) => x,
    }
}

fn with_load(scenario: &Scenario, value: f64) -> LoadSpec {
    match scenario.load {
        LoadSpec::Total(_) => LoadSpec::Total(value),
        LoadSpec::Background(_) => LoadSpec::Background(value),
    }
}

fn nonempty<T>(v: &[T], what: &'static str) -> Result<(), ExperimentError> {
    if v.is_empty() {
        Err(ExperimentError::EmptyList(what))
    } else {
        Ok(())
    }
}

/// Short hex digest of a scenario's resolved config, output path excluded.
pub fn scenario_hash(scenario: &Scenario) -> String {
    let mut sc = scenario.clone();
    sc.out_dir.clear();
    Sha256::digest(sc.to_config_string().as_bytes())
        .iter()
        .take(8)
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[derive(Debug, Clone)]
pub struct CompareOutput {
    pub summary: ComparisonSummary,
    /// Reports per cell, seeds in input order: `(seed, fcfs, bs)`.
    pub runs: Vec<Vec<(u64, TrainingReport, TrainingReport)>>,
}

impl CompareOutput {
    /// Per-round CSV: cells in input order, then seed, FCFS before BS.
    pub fn rounds_csv(&self) -> String {
        let mut out = String::from(TrainingReport::rounds_csv_header());
        out.push('\n');
        for cell in &self.runs {
            for (_, f, b) in cell {
                f.rounds_csv_rows(&mut out);
                b.rounds_csv_rows(&mut out);
            }
        }
        out
    }
}

/// Paired FCFS/BS runs for every (load, involvement, seed). `loads` are
/// interpreted like the scenario's load key (total or background).
pub fn run_compare(
    scenario: &Scenario,
    loads: &[f64],
    involvements: &[f64],
    seeds: &[u64],
) -> Result<CompareOutput, ExperimentError> {
    nonempty(loads, "load")?;
    nonempty(involvements, "involvement")?;
    nonempty(seeds, "seed")?;
    let mut jobs = Vec::new();
    for &l in loads {
        for &p in involvements {
            for &s in seeds {
                for policy in [Policy::Fcfs, Policy::Bs] {
                    jobs.push((l, p, s, policy));
                }
            }
        }
    }
    let results: Vec<TrainingReport> = jobs
        .par_iter()
        .map(|&(l, p, s, policy)| run_cell(scenario, with_load(scenario, l), p, s, policy))
        .collect::<Result<_, _>>()?;

    let mut it = results.into_iter();
    let mut cells = Vec::new();
    let mut runs = Vec::new();
    for &l in loads {
        for &p in involvements {
            let mut pairs = Vec::with_capacity(seeds.len());
            for &s in seeds {
                let f = it.next().expect("one report per job");
                let b = it.next().expect("one report per job");
                pairs.push((s, f, b));
            }
            let (bg, _) = scenario.resolve(with_load(scenario, l), p, seeds[0])?;
            cells.push(ComparisonCell::from_pairs(l, p, bg.load, &pairs)?);
            runs.push(pairs);
        }
    }
    Ok(CompareOutput {
        summary: ComparisonSummary {
            config_hash: scenario_hash(scenario),
            cells,
        },
        runs,
    })
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub load: f64,
    pub involvement: f64,
    pub summary: SyncSummary,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub policy: Policy,
    pub rows: Vec<SweepRow>,
    pub reports: Vec<TrainingReport>,
}

impl SweepOutput {
    pub fn table_csv(&self) -> String {
        let mut out = String::from(
            "load,involvement,policy,rounds,mean_sync_s,min_sync_s,max_sync_s,p95_sync_s,total_s\n",
        );
        for r in &self.rows {
            let s = &r.summary;
            let _ = writeln!(
                out,
                "{},{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9}",
                r.load, r.involvement, self.policy, s.rounds, s.mean, s.min, s.max, s.p95, s.total
            );
        }
        out
    }

    pub fn rounds_csv(&self) -> String {
        let mut out = String::from(TrainingReport::rounds_csv_header());
        out.push('\n');
        for r in &self.reports {
            r.rounds_csv_rows(&mut out);
        }
        out
    }
}

/// One policy over a load x involvement grid, seeds pooled per cell.
pub fn run_sweep(
    scenario: &Scenario,
    policy: Policy,
    loads: &[f64],
    involvements: &[f64],
    seeds: &[u64],
) -> Result<SweepOutput, ExperimentError> {
    nonempty(loads, "load")?;
    nonempty(involvements, "involvement")?;
    nonempty(seeds, "seed")?;
    let jobs: Vec<(f64, f64, u64)> = loads
        .iter()
        .flat_map(|&l| {
            involvements
                .iter()
                .flat_map(move |&p| seeds.iter().map(move |&s| (l, p, s)))
        })
        .collect();
    let reports: Vec<TrainingReport> = jobs
        .par_iter()
        .map(|&(l, p, s)| run_cell(scenario, with_load(scenario, l), p, s, policy))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (chunk, (l, p, _)) in reports
        .chunks(seeds.len())
        .zip(jobs.iter().step_by(seeds.len()))
    {
        let times: Vec<f64> = chunk
            .iter()
            .flat_map(|r| {
                r.rounds
                    .iter()
                    .skip(r.pre_activation as usize)
                    .map(|x| x.sync_time)
            })
            .collect();
        rows.push(SweepRow {
            load: *l,
            involvement: *p,
            summary: SyncSummary::from_times(&times)?,
        });
    }
    Ok(SweepOutput {
        policy,
        rows,
        reports,
    })
}

/// A single run with its training grants and event trace.
#[derive(Debug, Clone)]
pub struct DetailedRun {
    pub report: TrainingReport,
    pub summary: SyncSummary,
    pub grants: GrantLog,
    pub events: Vec<String>,
}

pub fn run_detailed(scenario: &Scenario, seed: u64) -> Result<DetailedRun, ExperimentError> {
    let load = scenario.load;
    let involvement = scenario.task.involvement_percent;
    let policy = scenario.task.policy;
    let (bg, task) = scenario.resolve(load, involvement, seed)?;
    let wrap = |source: EngineError| ExperimentError::Run {
        load: load_label(load),
        involvement,
        seed,
        policy,
        source,
    };
    let cohort =
        select_cohort(&client_population(&task, &scenario.pon), involvement).map_err(wrap)?;
    let mut sim = FlSimulation::new(&scenario.pon, &bg, &task, cohort)
        .map_err(wrap)?
        .with_event_trace()
        .with_grant_log();
    let mut rounds = Vec::with_capacity(task.rounds as usize);
    for _ in 0..task.rounds {
        rounds.push(sim.run_round().map_err(wrap)?);
    }
    let pre = if policy == Policy::Bs {
        task.activation_offset
    } else {
        0
    };
    let report = TrainingReport::new(
        crate::metrics::Fingerprint::of(&scenario.pon, &bg, &task),
        policy,
        load_label(load),
        involvement,
        pre,
        rounds,
    );
    let summary = summarize(&report, false)?;
    Ok(DetailedRun {
        report,
        summary,
        grants: sim.grant_log().clone(),
        events: sim.event_trace().to_vec(),
    })
}

/// The slice a scenario's cohort would get, without simulating.
#[derive(Debug, Clone, Serialize)]
pub struct PlanReport {
    pub clients: usize,
    pub total_bits: f64,
    pub tau: f64,
    pub slice: SliceSpec,
    pub verdict: RoundVerdict,
}

impl PlanReport {
    pub fn to_text(&self) -> String {
        let s = &self.slice;
        let mut out = String::new();
        let _ = writeln!(out, "clients       {}", self.clients);
        let _ = writeln!(out, "total_bits    {:.3}", self.total_bits);
        let _ = writeln!(
            out,
            "rate_bps      {:.3}{}",
            s.rate_bps,
            if s.capped { " (capped)" } else { "" }
        );
        let _ = writeln!(out, "t_start       {:.9}", s.t_start.secs());
        let _ = writeln!(out, "t_end         {:.9}", s.t_end.secs());
        let _ = writeln!(out, "tau           {:.9}", self.tau);
        let _ = writeln!(
            out,
            "feasible      {} (slack {:.9} s, critical client {})",
            self.verdict.feasible, self.verdict.slack, self.verdict.critical_client
        );
        if let Some(r) = &self.verdict.remedy {
            let _ = writeln!(out, "remedy        {r}");
        }
        let _ = writeln!(
            out,
            "upload order  onu,clients,bits,ready_offset_s,slot_len_s"
        );
        for e in &s.upload_order {
            let ids: Vec<String> = e.clients.iter().map(u32::to_string).collect();
            let _ = writeln!(
                out,
                "  {},{},{:.3},{:.9},{:.9}",
                e.onu,
                ids.join(" "),
                e.bits,
                e.ready_offset,
                e.slot_len
            );
        }
        out
    }
}

/// Plans the slice for the scenario's cohort at `t_current = 0`.
pub fn plan_scenario(scenario: &Scenario) -> Result<PlanReport, ExperimentError> {
    let task = &scenario.task;
    let policy = Policy::Bs;
    let wrap = |source: EngineError| ExperimentError::Run {
        load: load_label(scenario.load),
        involvement: task.involvement_percent,
        seed: scenario.seeds[0],
        policy,
        source,
    };
    let cohort = select_cohort(
        &client_population(task, &scenario.pon),
        task.involvement_percent,
    )
    .map_err(wrap)?;
    let mut info = CohortInfo::new(
        cohort,
        task.model_bits,
        task.round_period,
        scenario.pon.uplink_capacity,
    );
    info.activation_offset = task.activation_offset;
    info.total_rounds = task.rounds;
    info.aggregation_time = task.aggregation_time;
    let slice = plan_slice(&info, &scenario.pon).map_err(|e| wrap(e.into()))?;
    let verdict =
        validate_round_threshold(&info, &slice, &scenario.pon).map_err(|e| wrap(e.into()))?;
    Ok(PlanReport {
        clients: info.clients.len(),
        total_bits: info.total_update_bits(),
        tau: slice.tau(),
        slice,
        verdict,
    })
}

pub fn events_csv(events: &[String]) -> String {
    let mut out = String::from("time,seq,kind\n");
    for e in events {
        out.push_str(e);
        out.push('\n');
    }
    out
}

/// Writes `name` under `dir`, creating the directory.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, ExperimentError> {
    let io = |path: &Path, source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| io(&path, e))?;
    Ok(path)
}

/// `rounds.csv`, `summary.json`, `comparison.csv` and `scenario.cfg`.
pub fn write_compare(
    dir: &Path,
    scenario: &Scenario,
    out: &CompareOutput,
) -> Result<Vec<PathBuf>, ExperimentError> {
    Ok(vec![
        write_file(dir, "rounds.csv", &out.rounds_csv())?,
        write_file(dir, "summary.json", &out.summary.to_json())?,
        write_file(dir, "comparison.csv", &out.summary.table_csv())?,
        write_file(dir, "scenario.cfg", &scenario.to_config_string())?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_config;

    fn small() -> Scenario {
        parse_config("pon.num_onus = 8\ntask.rounds = 3\ntraffic.coarse = true\n").unwrap()
    }

    #[test]
    fn compare_pairs_and_orders() {
        let sc = small();
        let out = run_compare(&sc, &[0.3, 0.8], &[100.0], &[1, 2]).unwrap();
        assert_eq!(out.summary.cells.len(), 2);
        assert_eq!(out.summary.cells[1].load, 0.8);
        assert_eq!(out.summary.cells[0].seeds, vec![1, 2]);
        // header + 2 loads x 2 seeds x 2 policies x 3 rounds
        assert_eq!(out.rounds_csv().lines().count(), 1 + 24);
        let c = &out.summary.cells[0];
        assert_eq!(c.fcfs.rounds, 4);
        assert_eq!(c.bs.rounds, 4);
    }

    #[test]
    fn compare_is_deterministic() {
        let sc = small();
        let a = run_compare(&sc, &[0.5], &[50.0, 100.0], &[3, 4]).unwrap();
        let b = run_compare(&sc, &[0.5], &[50.0, 100.0], &[3, 4]).unwrap();
        assert_eq!(a.rounds_csv(), b.rounds_csv());
        assert_eq!(a.summary.to_json(), b.summary.to_json());
    }

    #[test]
    fn empty_lists_rejected() {
        let sc = small();
        assert!(matches!(
            run_compare(&sc, &[0.5], &[100.0], &[]),
            Err(ExperimentError::EmptyList("seed"))
        ));
        assert!(matches!(
            run_compare(&sc, &[], &[100.0], &[1]),
            Err(ExperimentError::EmptyList("load"))
        ));
        assert!(matches!(
            run_sweep(&sc, Policy::Bs, &[0.5], &[], &[1]),
            Err(ExperimentError::EmptyList(_))
        ));
    }

    #[test]
    fn inconsistent_cell_fails_whole_compare() {
        let sc = small();
        // 8 clients need 8 * 26.416e6 / 6e10 = 0.0035 of the uplink.
        assert!(matches!(
            run_compare(&sc, &[0.001], &[100.0], &[1]),
            Err(ExperimentError::Scenario(ScenarioError::Consistency(_)))
        ));
    }

    #[test]
    fn sweep_rows() {
        let sc = small();
        let out = run_sweep(&sc, Policy::Fcfs, &[0.2, 0.4], &[50.0], &[1, 2]).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows[0].summary.rounds, 6);
        assert_eq!(out.table_csv().lines().count(), 3);
    }

    #[test]
    fn plan_two_onus() {
        let sc = parse_config("pon.num_onus = 2\ntask.round_period = 8\n").unwrap();
        let p = plan_scenario(&sc).unwrap();
        assert_eq!(p.clients, 2);
        assert!((p.tau - 4.0027416).abs() < 1e-9);
        assert!(p.to_text().contains("t_start       9.002741600"));
    }

    #[test]
    fn detailed_run_exports() {
        let sc = small();
        let d = run_detailed(&sc, 1).unwrap();
        assert_eq!(d.report.rounds.len(), 3);
        // 8 clients, one grant per update at minimum
        assert!(d.grants.grants.len() >= 24);
        assert!(events_csv(&d.events).lines().count() > 24 * 3);
        assert_eq!(d.summary.rounds, 2);
    }
}
