use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fedslice::engine::Policy;
use fedslice::experiment::{
    events_csv, plan_scenario, run_compare, run_detailed, run_sweep, write_compare, write_file,
};
use fedslice::scenario::{load_config, parse_seed_list, LoadSpec, Scenario};

/// FL rounds over a TDM PON: bandwidth slicing vs FCFS.
#[derive(Parser)]
#[command(name = "fedslice", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one training run.
    Run(Common),
    /// Paired FCFS/BS runs over loads, involvements and seeds.
    Compare(Common),
    /// One policy over a load x involvement grid.
    Sweep(Common),
    /// Print the slice for the cohort without simulating.
    Plan(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (key = value or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds, e.g. `1,2,3` or `1..=10`.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    rounds: Option<u32>,
    /// Load, or comma list for compare/sweep.
    #[arg(long)]
    load: Option<String>,
    /// Involvement percent, or comma list for compare/sweep.
    #[arg(long)]
    involvement: Option<String>,
    #[arg(long)]
    policy: Option<Policy>,
    /// 1 Mbit background units instead of 1500-byte packets.
    #[arg(long)]
    coarse: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn floats(s: &str, what: &str) -> Result<Vec<f64>> {
    let v = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| {
            x.parse::<f64>()
                .with_context(|| format!("bad {what} '{x}'"))
        })
        .collect::<Result<Vec<_>>>()?;
    if v.is_empty() {
        bail!("{what} list is empty");
    }
    Ok(v)
}

struct Setup {
    scenario: Scenario,
    loads: Vec<f64>,
    involvements: Vec<f64>,
    out: PathBuf,
}

fn setup(c: &Common) -> Result<Setup> {
    let mut sc = match &c.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
        None => Scenario::default(),
    };
    if let Some(s) = &c.seed {
        sc.seeds = parse_seed_list(s)
            .map_err(anyhow::Error::msg)
            .context("--seed")?;
    }
    if let Some(r) = c.rounds {
        sc.task.rounds = r;
    }
    if let Some(p) = c.policy {
        sc.task.policy = p;
    }
    sc.coarse |= c.coarse;
    let loads = match &c.load {
        Some(s) => floats(s, "load")?,
        None => vec![match sc.load {
            LoadSpec::Total(x) | LoadSpec::Background(x) => x,
        }],
    };
    sc.load = match sc.load {
        LoadSpec::Total(_) => LoadSpec::Total(loads[0]),
        LoadSpec::Background(_) => LoadSpec::Background(loads[0]),
    };
    let involvements = match &c.involvement {
        Some(s) => floats(s, "involvement")?,
        None => vec![sc.task.involvement_percent],
    };
    sc.task.involvement_percent = involvements[0];
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from(&sc.out_dir));
    sc.out_dir = out.display().to_string();
    sc.validate()?;
    Ok(Setup {
        scenario: sc,
        loads,
        involvements,
        out,
    })
}

fn announce(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

fn cmd_run(s: Setup) -> Result<()> {
    if s.loads.len() > 1 || s.involvements.len() > 1 {
        bail!("run takes a single load and involvement; use sweep for lists");
    }
    let seed = s.scenario.seeds[0];
    let d = run_detailed(&s.scenario, seed)?;
    let mut rounds = String::from(fedslice::metrics::TrainingReport::rounds_csv_header());
    rounds.push('\n');
    d.report.rounds_csv_rows(&mut rounds);
    let out: &Path = &s.out;
    announce(&[
        write_file(out, "rounds.csv", &rounds)?,
        write_file(out, "grants.csv", &d.grants.to_csv())?,
        write_file(out, "events.csv", &events_csv(&d.events))?,
        write_file(out, "scenario.cfg", &s.scenario.to_config_string())?,
    ]);
    let m = &d.summary;
    println!(
        "{} load={} involvement={} seed={} rounds={} mean_sync={:.9} min={:.9} max={:.9} p95={:.9} total={:.9}",
        d.report.policy, d.report.load, d.report.involvement, seed, m.rounds, m.mean, m.min, m.max, m.p95, m.total
    );
    Ok(())
}

fn cmd_compare(s: Setup) -> Result<()> {
    let out = run_compare(&s.scenario, &s.loads, &s.involvements, &s.scenario.seeds)?;
    announce(&write_compare(&s.out, &s.scenario, &out)?);
    print!("{}", out.summary.table_csv());
    Ok(())
}

fn cmd_sweep(s: Setup) -> Result<()> {
    let policy = s.scenario.task.policy;
    let out = run_sweep(
        &s.scenario,
        policy,
        &s.loads,
        &s.involvements,
        &s.scenario.seeds,
    )?;
    announce(&[
        write_file(&s.out, "sweep.csv", &out.table_csv())?,
        write_file(&s.out, "rounds.csv", &out.rounds_csv())?,
        write_file(&s.out, "scenario.cfg", &s.scenario.to_config_string())?,
    ]);
    print!("{}", out.table_csv());
    Ok(())
}

fn cmd_plan(s: Setup) -> Result<()> {
    print!("{}", plan_scenario(&s.scenario)?.to_text());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run(c) => cmd_run(setup(&c)?),
        Cmd::Compare(c) => cmd_compare(setup(&c)?),
        Cmd::Sweep(c) => cmd_sweep(setup(&c)?),
        Cmd::Plan(c) => cmd_plan(setup(&c)?),
    }
}
