//! CSV and JSON output for trials and benchmark grids.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use pipc_core::environment::Obstacle;
use pipc_core::simulator::{BenchmarkReport, Outcome, PlanRecord, Sample, SimConfig, TrialResult};
use pipc_core::PipcError;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed CSV: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Core(#[from] PipcError),
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// Writes `bytes` to a new file; existing files are never replaced.
pub fn write_new(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| BenchError::Io { path: path.to_path_buf(), source };
    let mut f = OpenOptions::new().write(true).create_new(true).open(path).map_err(io)?;
    f.write_all(bytes).map_err(io)
}

fn csv_bytes<T: Serialize>(rows: &[T], path: &Path) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|source| BenchError::Csv { path: path.to_path_buf(), source })?;
    }
    w.into_inner().map_err(|e| BenchError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })
}

fn json_bytes<T: Serialize>(value: &T, path: &Path) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)
        .map_err(|source| BenchError::Json { path: path.to_path_buf(), source })?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ux: f64,
    pub uy: f64,
}

impl From<&Sample> for TrajectoryRow {
    fn from(s: &Sample) -> Self {
        Self {
            time: s.time,
            x: s.position[0],
            y: s.position[1],
            vx: s.velocity[0],
            vy: s.velocity[1],
            ux: s.control[0],
            uy: s.control[1],
        }
    }
}

pub fn trajectory_csv(samples: &[Sample], path: &Path) -> Result<Vec<u8>> {
    let rows: Vec<TrajectoryRow> = samples.iter().map(TrajectoryRow::from).collect();
    if rows.is_empty() {
        return Ok(b"time,x,y,vx,vy,ux,uy\n".to_vec());
    }
    csv_bytes(&rows, path)
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|source| BenchError::Csv { path: path.to_path_buf(), source })?;
    r.deserialize()
        .collect::<std::result::Result<Vec<TrajectoryRow>, _>>()
        .map_err(|source| BenchError::Csv { path: path.to_path_buf(), source })
}

/// Summary written next to a trial's trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub outcome: Outcome,
    pub mode: String,
    pub seed: u64,
    pub q_x: f64,
    pub n_obs: usize,
    pub time_to_goal: f64,
    pub path_length: f64,
    pub path_cost: f64,
    pub replans: usize,
    pub diagnostic: Option<String>,
    pub arena: [f64; 2],
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub robot_radius: f64,
    pub initial_obstacles: Vec<Obstacle>,
    pub config: SimConfig,
}

impl TrialRecord {
    pub fn new(cfg: &SimConfig, r: &TrialResult) -> Self {
        Self {
            outcome: r.outcome,
            mode: r.mode.to_string(),
            seed: r.seed,
            q_x: r.q_x,
            n_obs: r.n_obs,
            time_to_goal: r.time_to_goal,
            path_length: r.path_length,
            path_cost: r.path_cost,
            replans: r.replans,
            diagnostic: r.diagnostic.clone(),
            arena: [cfg.environment.width, cfg.environment.height],
            start: cfg.start,
            goal: cfg.goal,
            robot_radius: cfg.environment.robot_radius,
            initial_obstacles: r.initial_obstacles.clone(),
            config: cfg.clone(),
        }
    }
}

pub const RESULT_FILE: &str = "result.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const PLANS_FILE: &str = "plans.json";
pub const SVG_FILE: &str = "trajectory.svg";
pub const TRIALS_FILE: &str = "trials.csv";
pub const TABLE_FILE: &str = "table.csv";
pub const AGGREGATE_FILE: &str = "aggregate.json";

/// Writes `result.json`, `trajectory.csv` and `plans.json` into `dir`.
pub fn write_trial(dir: &Path, cfg: &SimConfig, r: &TrialResult) -> Result<()> {
    let p = dir.join(RESULT_FILE);
    write_new(&p, &json_bytes(&TrialRecord::new(cfg, r), &p)?)?;
    let p = dir.join(TRAJECTORY_FILE);
    write_new(&p, &trajectory_csv(&r.trajectory, &p)?)?;
    let p = dir.join(PLANS_FILE);
    write_new(&p, &json_bytes(&r.plans, &p)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read(path).map_err(|source| BenchError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_slice(&text).map_err(|source| BenchError::Json { path: path.to_path_buf(), source })
}

pub fn read_trial_record(dir: &Path) -> Result<TrialRecord> {
    read_json(&dir.join(RESULT_FILE))
}

pub fn read_plans(dir: &Path) -> Result<Vec<PlanRecord>> {
    read_json(&dir.join(PLANS_FILE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub mode: String,
    pub q_x: f64,
    pub n_obs: usize,
    pub seed: u64,
    pub outcome: String,
    pub time_to_goal: f64,
    pub path_length: f64,
    pub path_cost: f64,
    pub replans: usize,
    pub diagnostic: String,
}

/// One row per grid cell, in the layout of the success-rate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub mode: String,
    #[serde(rename = "Q_x")]
    pub q_x: f64,
    #[serde(rename = "N_obs")]
    pub n_obs: usize,
    pub success_rate: f64,
    pub mean_time: Option<f64>,
    pub std_time: Option<f64>,
    pub mean_length: Option<f64>,
    pub std_length: Option<f64>,
    pub mean_cost: Option<f64>,
    pub std_cost: Option<f64>,
    #[serde(rename = "K_success")]
    pub k_success: usize,
}

pub fn trial_rows(report: &BenchmarkReport) -> Vec<TrialRow> {
    report
        .trials
        .iter()
        .map(|t| TrialRow {
            mode: t.mode.to_string(),
            q_x: t.q_x,
            n_obs: t.n_obs,
            seed: t.seed,
            outcome: t.outcome.as_str().to_string(),
            time_to_goal: t.time_to_goal,
            path_length: t.path_length,
            path_cost: t.path_cost,
            replans: t.replans,
            diagnostic: t.diagnostic.clone().unwrap_or_default(),
        })
        .collect()
}

pub fn table_rows(report: &BenchmarkReport) -> Vec<TableRow> {
    report
        .cells
        .iter()
        .map(|c| TableRow {
            mode: c.mode.to_string(),
            q_x: c.q_x,
            n_obs: c.n_obs,
            success_rate: c.success_rate,
            mean_time: c.mean_time,
            std_time: c.std_time,
            mean_length: c.mean_length,
            std_length: c.std_length,
            mean_cost: c.mean_cost,
            std_cost: c.std_cost,
            k_success: c.successes,
        })
        .collect()
}

/// Writes `trials.csv`, `table.csv` and `aggregate.json` into `dir`.
pub fn write_benchmark(dir: &Path, report: &BenchmarkReport) -> Result<()> {
    let p = dir.join(TRIALS_FILE);
    write_new(&p, &csv_bytes(&trial_rows(report), &p)?)?;
    let p = dir.join(TABLE_FILE);
    write_new(&p, &csv_bytes(&table_rows(report), &p)?)?;
    let p = dir.join(AGGREGATE_FILE);
    write_new(&p, &json_bytes(&report.cells, &p)?)?;
    Ok(())
}

/// Plain-text success-rate table: rows are (mode, Q_x), columns obstacle counts.
pub fn success_table(report: &BenchmarkReport) -> String {
    let mut n_obs: Vec<usize> = report.cells.iter().map(|c| c.n_obs).collect();
    n_obs.sort_unstable();
    n_obs.dedup();
    let mut out = format!("{:<9} {:>5}", "mode", "Q_x");
    for n in &n_obs {
        out.push_str(&format!(" {n:>6}"));
    }
    out.push('\n');
    let mut keys: Vec<(String, f64)> = Vec::new();
    for c in &report.cells {
        let k = (c.mode.to_string(), c.q_x);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (mode, q) in keys {
        out.push_str(&format!("{mode:<9} {q:>5}"));
        for n in &n_obs {
            match report.cells.iter().find(|c| c.mode.as_str() == mode && c.q_x == q && c.n_obs == *n) {
                Some(c) => out.push_str(&format!(" {:>6.3}", c.success_rate)),
                None => out.push_str(&format!(" {:>6}", "-")),
            }
        }
        out.push('\n');
    }
    out
}
