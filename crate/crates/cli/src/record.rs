//! Run records: `rows.csv` with one row per episode (or label pair) and
//! `summary.json` with aggregates that must be recomputable from the rows.
//!
//! Rows never contain timing, so a rerun with the same seed reproduces
//! `rows.csv` byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use navlab::localize::{aggregate_records, CellMetrics, EpisodeRecord};
use navlab::topo::{LabeledPair, DIRECTIONS};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const ROWS_SCHEMA: &str = "# navlab rows v1";
pub const SUMMARY_SCHEMA: &str = "navlab summary v1";
pub const ROWS_FILE: &str = "rows.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    GenWorld,
    Localize,
    Explore,
    Objectgoal,
    TopoLabel,
    FitNoise,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::GenWorld => "gen-world",
            Task::Localize => "localize",
            Task::Explore => "explore",
            Task::Objectgoal => "objectgoal",
            Task::TopoLabel => "topo-label",
            Task::FitNoise => "fit-noise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    pub task: Task,
    pub tool_version: String,
    /// Hash of the resolved config and master seed.
    pub fingerprint: String,
    pub seed: u64,
    pub workers: usize,
    pub config: serde_json::Value,
    pub aggregates: serde_json::Value,
    /// Wall-clock figures; excluded from determinism checks.
    pub timing: serde_json::Value,
    pub wall_seconds: f64,
}

impl Summary {
    pub fn new<C: Serialize, A: Serialize>(task: Task, config: &C, seed: u64, workers: usize, aggregates: &A) -> Result<Self, CliError> {
        let config = serde_json::to_value(config)?;
        Ok(Self {
            schema: SUMMARY_SCHEMA.into(),
            task,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            fingerprint: fingerprint(&config, seed),
            seed,
            workers,
            config,
            aggregates: serde_json::to_value(aggregates)?,
            timing: serde_json::Value::Null,
            wall_seconds: 0.0,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(SUMMARY_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(SUMMARY_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let s: Summary = serde_json::from_str(&text)?;
        if s.schema != SUMMARY_SCHEMA {
            return Err(CliError::Record(format!("{}: unknown schema `{}`", path.display(), s.schema)));
        }
        Ok(s)
    }
}

/// FNV-1a over the canonical JSON of the config, followed by the seed.
pub fn fingerprint(config: &serde_json::Value, seed: u64) -> String {
    let text = format!("{config}#{seed}");
    format!("{:016x}", navlab::seed::tag(&text))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| CliError::io(&path, e))
}

/// Writes `rows.csv`: the schema line, then a CSV header and rows.
pub fn write_rows<T: Serialize>(dir: &Path, task: Task, rows: &[T]) -> Result<(), CliError> {
    let mut out = create(dir, ROWS_FILE)?;
    writeln!(out, "{ROWS_SCHEMA} task={}", task.name()).map_err(|e| CliError::io(dir.join(ROWS_FILE), e))?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(dir.join(ROWS_FILE), e))?;
    Ok(())
}

pub fn write_label_rows(dir: &Path, pairs: &[LabeledPair]) -> Result<(), CliError> {
    let mut out = create(dir, ROWS_FILE)?;
    writeln!(out, "{ROWS_SCHEMA} task={}", Task::TopoLabel.name()).map_err(|e| CliError::io(dir.join(ROWS_FILE), e))?;
    navlab::topo::write_label_csv(pairs, out)?;
    Ok(())
}

fn open_rows(dir: &Path, task: Task) -> Result<BufReader<File>, CliError> {
    let path = dir.join(ROWS_FILE);
    let mut r = BufReader::new(File::open(&path).map_err(|e| CliError::io(&path, e))?);
    let mut first = String::new();
    r.read_line(&mut first).map_err(|e| CliError::io(&path, e))?;
    let expect = format!("{ROWS_SCHEMA} task={}", task.name());
    if first.trim_end() != expect {
        return Err(CliError::Record(format!("{}: expected schema line `{expect}`", path.display())));
    }
    Ok(r)
}

pub fn read_rows<T: DeserializeOwned>(dir: &Path, task: Task) -> Result<Vec<T>, CliError> {
    let r = open_rows(dir, task)?;
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(CliError::from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreRow {
    pub policy: String,
    pub episode: usize,
    pub world_seed: u64,
    pub steps: usize,
    pub coverage_quarter: f64,
    pub coverage_half: f64,
    pub coverage_final: f64,
    pub area_m2_final: f64,
    pub collisions: usize,
    pub exhausted_at: Option<usize>,
    pub curiosity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreAggregate {
    pub policy: String,
    pub episodes: usize,
    pub mean_coverage_quarter: f64,
    pub mean_coverage_half: f64,
    pub mean_coverage_final: f64,
    pub mean_collisions: f64,
    pub exhausted: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-policy means, policies in order of first appearance.
pub fn explore_aggregates(rows: &[ExploreRow]) -> Vec<ExploreAggregate> {
    let mut policies: Vec<&str> = Vec::new();
    for r in rows {
        if !policies.contains(&r.policy.as_str()) {
            policies.push(&r.policy);
        }
    }
    policies
        .into_iter()
        .map(|p| {
            let of = || rows.iter().filter(move |r| r.policy == p);
            ExploreAggregate {
                policy: p.to_string(),
                episodes: of().count(),
                mean_coverage_quarter: mean(of().map(|r| r.coverage_quarter)),
                mean_coverage_half: mean(of().map(|r| r.coverage_half)),
                mean_coverage_final: mean(of().map(|r| r.coverage_final)),
                mean_collisions: mean(of().map(|r| r.collisions as f64)),
                exhausted: of().filter(|r| r.exhausted_at.is_some()).count(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectGoalRow {
    pub episode: usize,
    pub world_seed: u64,
    pub goal_category: u8,
    pub steps: usize,
    pub stopped: bool,
    pub success: bool,
    pub spl: f64,
    pub dts: f64,
    pub path_length: f64,
    pub shortest_path: f64,
    pub final_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectGoalAggregate {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_spl: f64,
    pub mean_dts: f64,
}

pub fn objectgoal_aggregate(rows: &[ObjectGoalRow]) -> ObjectGoalAggregate {
    ObjectGoalAggregate {
        episodes: rows.len(),
        success_rate: mean(rows.iter().map(|r| f64::from(u8::from(r.success)))),
        mean_spl: mean(rows.iter().map(|r| r.spl)),
        mean_dts: mean(rows.iter().map(|r| r.dts)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoAggregate {
    pub pairs: usize,
    pub connected: usize,
    pub mean_intra_score: f64,
    /// Fraction of explorable directions over non-connected pairs.
    pub explorable_fraction: f64,
}

/// The label fields that aggregates depend on.
pub struct LabelSummaryRow {
    pub connection: bool,
    pub intra_score: Option<f64>,
    pub explorable: Option<usize>,
}

pub fn topo_aggregate(rows: &[LabelSummaryRow]) -> TopoAggregate {
    let inter: Vec<usize> = rows.iter().filter_map(|r| r.explorable).collect();
    TopoAggregate {
        pairs: rows.len(),
        connected: rows.iter().filter(|r| r.connection).count(),
        mean_intra_score: mean(rows.iter().filter_map(|r| r.intra_score)),
        explorable_fraction: mean(inter.iter().map(|n| *n as f64 / DIRECTIONS as f64)),
    }
}

pub fn label_summary_rows(pairs: &[LabeledPair]) -> Vec<LabelSummaryRow> {
    pairs
        .iter()
        .map(|p| LabelSummaryRow {
            connection: p.labels.connection,
            intra_score: p.labels.intra.map(|l| l.score),
            explorable: p.labels.inter.map(|l| l.directions.iter().filter(|d| **d).count()),
        })
        .collect()
}

pub fn read_label_summary_rows(dir: &Path) -> Result<Vec<LabelSummaryRow>, CliError> {
    let r = open_rows(dir, Task::TopoLabel)?;
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Record(format!("rows.csv has no `{name}` column")))
    };
    let (conn, score, dir0) = (col("connection")?, col("score")?, col("dir_0")?);
    let bad = |what: &str| CliError::Record(format!("rows.csv: malformed {what}"));
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let connection = rec.get(conn) == Some("1");
        let intra_score = match rec.get(score) {
            Some("") | None => None,
            Some(s) => Some(s.parse::<f64>().map_err(|_| bad("score"))?),
        };
        let explorable = if rec.get(dir0).unwrap_or("").is_empty() {
            None
        } else {
            Some((0..DIRECTIONS).filter(|i| rec.get(dir0 + i) == Some("1")).count())
        };
        out.push(LabelSummaryRow {
            connection,
            intra_score,
            explorable,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub model: String,
    pub k: usize,
    pub heldout_log_likelihood: f64,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseAggregate {
    pub model: String,
    pub chosen_k: usize,
    pub heldout_log_likelihood: f64,
}

pub fn noise_aggregates(rows: &[NoiseRow]) -> Vec<NoiseAggregate> {
    rows.iter()
        .filter(|r| r.chosen)
        .map(|r| NoiseAggregate {
            model: r.model.clone(),
            chosen_k: r.k,
            heldout_log_likelihood: r.heldout_log_likelihood,
        })
        .collect()
}

/// Recomputes the aggregates of a run from its rows and compares them with
/// the stored summary.
pub fn verify(dir: &Path) -> Result<Summary, CliError> {
    let summary = Summary::read(dir)?;
    let recomputed = match summary.task {
        Task::GenWorld => return Ok(summary),
        Task::Localize => serde_json::to_value(aggregate_records(&read_rows::<EpisodeRecord>(dir, Task::Localize)?))?,
        Task::Explore => serde_json::to_value(explore_aggregates(&read_rows(dir, Task::Explore)?))?,
        Task::Objectgoal => serde_json::to_value(objectgoal_aggregate(&read_rows(dir, Task::Objectgoal)?))?,
        Task::TopoLabel => serde_json::to_value(topo_aggregate(&read_label_summary_rows(dir)?))?,
        Task::FitNoise => serde_json::to_value(noise_aggregates(&read_rows(dir, Task::FitNoise)?))?,
    };
    if recomputed != summary.aggregates {
        return Err(CliError::Record(format!(
            "{}: aggregates differ from those recomputed from {ROWS_FILE}",
            dir.join(SUMMARY_FILE).display()
        )));
    }
    Ok(summary)
}

/// Localization cells read back from a summary.
pub fn localize_cells(summary: &Summary) -> Result<Vec<CellMetrics>, CliError> {
    Ok(serde_json::from_value(summary.aggregates.clone())?)
}
