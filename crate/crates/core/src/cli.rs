//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for configuration or usage errors, 2 when a
//! run fails.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::conditioning::DescriptorBank;
use crate::config::Config;
use crate::data::{write_stream, TaskStream};
use crate::error::{Error, Result};
use crate::metrics::RunMetrics;
use crate::report::{self, ManifestRun, RunManifest, RunRecord};
use crate::trainer::{run_experiment_detailed, Strategy};

pub const OUT_ENV: &str = "GAUSSTIN_OUT";
pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Parser)]
#[command(name = "gausstin", version, about = "Gaussian-mixture replay for continual learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed (repetition seeds for runs, stream seed for `synth`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for `grid` and `ablate`.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory; overrides $GAUSSTIN_OUT.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Restrict to one strategy.
    #[arg(long, global = true)]
    pub strategy: Option<Strategy>,
    /// Restrict to one prefix size.
    #[arg(long, global = true)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the configured synthetic stream as JSONL.
    Synth,
    /// Run one strategy at one k over all repetition seeds.
    Run,
    /// Sweep k values x strategies x seeds.
    Grid,
    /// Re-aggregate `runs.jsonl` in the output directory.
    Report,
    /// Sweep the full method and its two ablations.
    Ablate,
}

/// `--out`, then $GAUSSTIN_OUT, then `./out`.
pub fn resolve_out(flag: Option<&Path>, env: Option<&str>) -> PathBuf {
    match (flag, env) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(e)) if !e.is_empty() => PathBuf::from(e),
        _ => PathBuf::from(DEFAULT_OUT),
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let out = resolve_out(cli.out.as_deref(), std::env::var(OUT_ENV).ok().as_deref());
    match cli.command {
        Command::Synth => {
            if let Some(s) = cli.seed {
                cfg.stream.seed = s;
            }
            if cfg.stream.path.is_some() {
                return Err(Error::InvalidConfig("`synth` needs synthetic [stream] settings, not a path".into()));
            }
            let stream = cfg.stream(0)?;
            fs::create_dir_all(&out)?;
            let path = out.join("stream.jsonl");
            write_stream(&stream, &path)?;
            eprintln!("wrote {} tasks to {}", stream.len(), path.display());
            Ok(())
        }
        Command::Report => {
            let file = File::open(out.join("runs.jsonl"))?;
            let records = report::read_records(BufReader::new(file))?;
            let paths = report::render_tables(&report::summarize_records(&records), &out)?;
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Run | Command::Grid | Command::Ablate => {
            if let Some(s) = cli.seed {
                cfg.experiment.seed = s;
            }
            let plan = plan(&cfg, cli)?;
            let jobs = if cli.command == Command::Run { 1 } else { cli.jobs.unwrap_or(0) };
            let manifest = sweep(&cfg, &plan, jobs, &out)?;
            eprintln!(
                "{} runs in {} ms; tables in {}",
                manifest.runs.len(),
                manifest.wall_clock_ms,
                out.display()
            );
            Ok(())
        }
    }
}

/// The `(strategy, k)` pairs a command covers.
fn plan(cfg: &Config, cli: &Cli) -> Result<Vec<(Strategy, usize)>> {
    let strategies: Vec<Strategy> = match (cli.strategy, cli.command) {
        (Some(s), _) => vec![s],
        (None, Command::Run) => vec![cfg.experiment.strategies[0]],
        (None, Command::Ablate) => Strategy::ABLATION.to_vec(),
        (None, _) => cfg.experiment.strategies.clone(),
    };
    let ks: Vec<usize> = match (cli.k, cli.command) {
        (Some(k), _) => vec![k],
        (None, Command::Run) => vec![cfg.experiment.k_values[0]],
        (None, _) => cfg.experiment.k_values.clone(),
    };
    if ks.contains(&0) {
        return Err(Error::KOutOfRange { k: 0, tasks: cfg.stream.tasks });
    }
    Ok(strategies.iter().flat_map(|&s| ks.iter().map(move |&k| (s, k))).collect())
}

struct Outcome {
    record: RunRecord,
    entry: ManifestRun,
}

/// Runs every planned cell for every repetition seed and writes all
/// artifacts under `out`.
pub fn sweep(cfg: &Config, plan: &[(Strategy, usize)], jobs: usize, out: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    let seeds = cfg.seeds();
    let mut streams = BTreeMap::new();
    for &seed in &seeds {
        let stream = cfg.stream(seed)?;
        for &(_, k) in plan {
            if k > stream.len() {
                return Err(Error::KOutOfRange { k, tasks: stream.len() });
            }
        }
        streams.insert(seed, stream);
    }
    fs::create_dir_all(out)?;
    let first = streams.values().next().expect("repetitions >= 1");
    write_descriptors(cfg, first, out)?;

    let cells: Vec<(Strategy, usize, u64)> = plan
        .iter()
        .flat_map(|&(s, k)| seeds.iter().map(move |&seed| (s, k, seed)))
        .collect();
    let work = |&(strategy, k, seed): &(Strategy, usize, u64)| one_run(cfg, &streams[&seed], strategy, k, seed, out);
    let outcomes: Vec<Result<Outcome>> = if jobs == 1 {
        cells.iter().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| cells.par_iter().map(work).collect())
    };
    let mut outcomes: Vec<Outcome> = outcomes.into_iter().collect::<Result<_>>()?;
    outcomes.sort_by_key(|o| (o.record.strategy, o.record.k, o.record.seed));

    let records: Vec<RunRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    report::write_records(&records, BufWriter::new(File::create(out.join("runs.jsonl"))?))?;
    let summary = report::summarize_records(&records);
    let mut reports = vec![PathBuf::from("runs.jsonl"), PathBuf::from("descriptors.json")];
    for p in report::render_tables(&summary, out)? {
        reports.push(p.strip_prefix(out).map(Path::to_path_buf).unwrap_or(p));
    }

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seeds,
        runs: outcomes.into_iter().map(|o| o.entry).collect(),
        reports,
        wall_clock_ms: start.elapsed().as_millis(),
    };
    let mut w = BufWriter::new(File::create(out.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(manifest)
}

fn write_descriptors(cfg: &Config, stream: &TaskStream<f64>, out: &Path) -> Result<()> {
    let bank: DescriptorBank<f64> = DescriptorBank::build(
        stream.tasks().iter().map(|t| t.task_id.as_str()),
        cfg.experiment.p_dim,
        cfg.experiment.descriptor_seed,
    )?;
    fs::write(out.join("descriptors.json"), bank.to_json())?;
    Ok(())
}

fn one_run(cfg: &Config, stream: &TaskStream<f64>, strategy: Strategy, k: usize, seed: u64, out: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let ecfg = cfg.experiment_config(k, strategy, seed);
    let stream = stream.with_k(k)?;
    let run = run_experiment_detailed(&stream, &ecfg)?;
    let metrics = RunMetrics::from_matrix(&run.matrix)?;

    let rel = PathBuf::from("runs").join(format!("{}-k{k}-s{seed}", strategy.name()));
    let dir = out.join(&rel);
    fs::create_dir_all(dir.join("buffers"))?;
    let matrix = rel.join("matrix.json");
    fs::write(out.join(&matrix), serde_json::to_string_pretty(&run.matrix)?)?;
    let mut buffers = Vec::with_capacity(run.snapshots.len());
    for (i, (label, buf)) in run.snapshots.iter().enumerate() {
        let p = rel.join("buffers").join(format!("{i:02}-{label}.jsonl"));
        let mut w = BufWriter::new(File::create(out.join(&p))?);
        buf.write_snapshot(&mut w)?;
        w.flush()?;
        buffers.push(p);
    }
    Ok(Outcome {
        record: RunRecord::new(strategy, k, seed, &metrics),
        entry: ManifestRun {
            strategy,
            k,
            seed,
            matrix,
            buffers,
            wall_clock_ms: start.elapsed().as_millis(),
        },
    })
}
