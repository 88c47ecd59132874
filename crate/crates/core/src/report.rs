//! Result tables and run artifacts.
//!
//! `results.csv` holds raw `[0, 1]` values at full precision and parses back
//! to the identical summary. The Markdown table and `results_points.csv`
//! show the same numbers in percentage points.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Cell, Metric, RunMetrics, Summary};
use crate::trainer::Strategy;

pub const CSV_HEADER: [&str; 6] = ["strategy", "k", "metric", "mean", "std", "n_seeds"];

/// Multiplier applied to accuracies before display.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Raw,
    Points,
}

impl Scale {
    fn factor(self) -> f64 {
        match self {
            Scale::Raw => 1.0,
            Scale::Points => 100.0,
        }
    }
}

pub fn write_csv<W: Write>(summary: &Summary, w: W, scale: Scale) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    let f = scale.factor();
    for ((strategy, k, metric), cell) in summary {
        out.write_record([
            strategy.clone(),
            k.to_string(),
            metric.as_str().to_string(),
            (cell.mean * f).to_string(),
            (cell.std * f).to_string(),
            cell.n.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Inverse of [`write_csv`] with [`Scale::Raw`].
pub fn parse_csv<R: Read>(r: R) -> Result<Summary> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(CSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut summary = Summary::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |msg: String| Error::Parse { line, msg };
        let num = |j: usize| -> Result<f64> { rec[j].parse().map_err(|e| bad(format!("`{}`: {e}", &rec[j]))) };
        let k = rec[1].parse().map_err(|e| bad(format!("k `{}`: {e}", &rec[1])))?;
        let metric = Metric::parse(&rec[2]).ok_or_else(|| bad(format!("unknown metric `{}`", &rec[2])))?;
        let n = rec[5].parse().map_err(|e| bad(format!("n_seeds `{}`: {e}", &rec[5])))?;
        let cell = Cell {
            mean: num(3)?,
            std: num(4)?,
            n,
        };
        summary.insert((rec[0].to_string(), k, metric), cell);
    }
    Ok(summary)
}

fn display_name(name: &str) -> &str {
    name.parse::<Strategy>().map(Strategy::display_name).unwrap_or(name)
}

fn fmt2(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:.2}"),
        _ => "-".to_string(),
    }
}

/// Markdown table with FWT columns then BWT columns, one column per `k`.
///
/// The joint baseline has a single model, so its row carries the final
/// accuracy (`mean ± std`) in the first cell.
pub fn render_markdown(summary: &Summary, scale: Scale) -> Result<String> {
    if summary.is_empty() {
        return Err(Error::EmptySummary);
    }
    let f = scale.factor();
    let ks: BTreeSet<usize> = summary.keys().map(|(_, k, _)| *k).collect();
    let present: BTreeSet<&str> = summary.keys().map(|(s, _, _)| s.as_str()).collect();
    let mut rows: Vec<&str> = Strategy::ALL.iter().map(|s| s.name()).filter(|n| present.contains(n)).collect();
    rows.extend(present.iter().filter(|n| n.parse::<Strategy>().is_err()));

    let mut out = String::from("| Method |");
    for metric in [Metric::Fwt, Metric::Bwt] {
        for k in &ks {
            out.push_str(&format!(" {} D_k{k} |", metric.as_str()));
        }
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(2 * ks.len()));
    out.push('\n');

    for name in rows {
        let mut cells = Vec::with_capacity(2 * ks.len());
        if name == Strategy::Joint.name() {
            let acc = ks.iter().find_map(|&k| summary.get(&(name.to_string(), k, Metric::Acc)));
            cells.push(match acc {
                Some(c) => format!("{} ± {}", fmt2(Some(c.mean * f)), fmt2(Some(c.std * f))),
                None => "-".to_string(),
            });
            cells.resize(2 * ks.len(), String::new());
        } else {
            for metric in [Metric::Fwt, Metric::Bwt] {
                for &k in &ks {
                    cells.push(fmt2(summary.get(&(name.to_string(), k, metric)).map(|c| c.mean * f)));
                }
            }
        }
        out.push_str(&format!("| {} | {} |\n", display_name(name), cells.join(" | ")));
    }
    Ok(out)
}

/// Writes `results.csv`, `results_points.csv` and `results.md` into `dir`.
pub fn render_tables(summary: &Summary, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let markdown = render_markdown(summary, Scale::Points)?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("results.csv");
    let points_path = dir.join("results_points.csv");
    let md_path = dir.join("results.md");
    write_csv(summary, BufWriter::new(File::create(&csv_path)?), Scale::Raw)?;
    write_csv(summary, BufWriter::new(File::create(&points_path)?), Scale::Points)?;
    fs::write(&md_path, markdown)?;
    Ok(vec![csv_path, points_path, md_path])
}

/// One line of `runs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub k: usize,
    pub seed: u64,
    pub bwt: f64,
    /// `None` when no model preceded the last task.
    pub fwt: Option<f64>,
    pub acc: f64,
}

impl RunRecord {
    pub fn new(strategy: Strategy, k: usize, seed: u64, m: &RunMetrics) -> Self {
        Self {
            strategy,
            k,
            seed,
            bwt: m.bwt,
            fwt: m.fwt.is_finite().then_some(m.fwt),
            acc: m.acc,
        }
    }

    pub fn metrics(&self) -> RunMetrics {
        RunMetrics {
            bwt: self.bwt,
            fwt: self.fwt.unwrap_or(f64::NAN),
            acc: self.acc,
        }
    }
}

pub fn summarize_records(records: &[RunRecord]) -> Summary {
    let metrics: Vec<RunMetrics> = records.iter().map(RunRecord::metrics).collect();
    crate::metrics::summarize(records.iter().zip(&metrics).map(|(r, m)| (r.strategy.name(), r.k, m)))
}

pub fn write_records<W: Write>(records: &[RunRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub strategy: Strategy,
    pub k: usize,
    pub seed: u64,
    pub matrix: PathBuf,
    pub buffers: Vec<PathBuf>,
    pub wall_clock_ms: u128,
}

/// Provenance of one CLI invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<ManifestRun>,
    pub reports: Vec<PathBuf>,
    pub wall_clock_ms: u128,
}

impl RunManifest {
    /// Every referenced artifact, relative to the output directory.
    pub fn paths(&self) -> impl Iterator<Item = &PathBuf> {
        self.runs
            .iter()
            .flat_map(|r| std::iter::once(&r.matrix).chain(&r.buffers))
            .chain(&self.reports)
    }

    /// Paths under `root` that do not exist.
    pub fn missing(&self, root: &Path) -> Vec<PathBuf> {
        self.paths().filter(|p| !root.join(p).exists()).cloned().collect()
    }
}
