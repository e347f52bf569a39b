//! Command-line front end.
//!
//! Exit codes: 0 success, 1 trial failure or failed self-test, 2 usage,
//! configuration or I/O error. `PIPC_LOG` sets the log filter
//! (`error`, `warn`, `info`, `debug`, `trace`).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use pipc_core::scenario::Scenario;
use pipc_core::simulator::{run_benchmark, run_trial, Mode, Outcome};

use crate::render::{render_svg, Scene, Style};
use crate::report::{self, BenchError};

#[derive(Debug, Parser)]
#[command(name = "pipc-bench", version, about = "Receding-horizon planning benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one trial and write result.json, trajectory.csv and plans.json.
    Trial(TrialArgs),
    /// Run a grid of trials and write trials.csv, table.csv and aggregate.json.
    Benchmark(BenchmarkArgs),
    /// Render a trial directory as SVG.
    Render(RenderArgs),
    /// Run the numerical self-checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct TrialArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Also write trajectory.svg.
    #[arg(long)]
    pub render: bool,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Base seed; trial k of every cell uses seed + k.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Restrict the grid to one mode.
    #[arg(long)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Trial output directory.
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    /// Output file; defaults to trajectory.svg inside the input directory.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Replan whose horizon and obstacle snapshot are drawn.
    #[arg(long, default_value_t = 0)]
    pub replan: usize,
    #[arg(long, default_value_t = 20.0)]
    pub scale: f64,
    #[arg(long)]
    pub executed_color: Option<String>,
    #[arg(long)]
    pub horizon_color: Option<String>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Bench(BenchError),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        Failure::Bench(e)
    }
}

impl From<pipc_core::PipcError> for Failure {
    fn from(e: pipc_core::PipcError) -> Self {
        Failure::Bench(e.into())
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("PIPC_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    init_logging();
    let result = match cli.command {
        Command::Trial(a) => cmd_trial(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::Render(a) => cmd_render(&a).map(|_| 0),
        Command::Selftest => Ok(cmd_selftest()),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Bench(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|source| BenchError::Io { path: dir.to_path_buf(), source })?;
    Ok(())
}

fn cmd_trial(a: &TrialArgs) -> Result<i32, Failure> {
    let scenario = Scenario::load(&a.config)?;
    let mut cfg = scenario.sim_config();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    cfg.validate()?;
    // Surfaces planner construction errors such as goal == start.
    cfg.planner()?;
    prepare_out(&a.out)?;
    let result = run_trial(&cfg)?;
    report::write_trial(&a.out, &cfg, &result)?;
    if a.render {
        write_render(&a.out, &a.out.join(report::SVG_FILE), 0, &Style::default())?;
    }
    println!(
        "{} seed={} outcome={} time={:.3} length={:.3} cost={:.3}",
        result.mode,
        result.seed,
        result.outcome.as_str(),
        result.time_to_goal,
        result.path_length,
        result.path_cost
    );
    Ok(if result.outcome == Outcome::Success { 0 } else { 1 })
}

fn cmd_benchmark(a: &BenchmarkArgs) -> Result<i32, Failure> {
    let scenario = Scenario::load(&a.config)?;
    let base = scenario.sim_config();
    let mut grid = scenario.benchmark.clone();
    if let Some(s) = a.seed {
        grid.base_seed = s;
    }
    if let Some(m) = a.mode {
        grid.modes = vec![m];
    }
    grid.validate()?;
    prepare_out(&a.out)?;
    info!("running {} cells x {} trials", grid.cells().len(), grid.trials);
    let report = run_benchmark(&base, &grid, a.jobs)?;
    report::write_benchmark(&a.out, &report)?;
    print!("{}", report::success_table(&report));
    Ok(0)
}

fn cmd_render(a: &RenderArgs) -> Result<(), Failure> {
    if !(a.scale.is_finite() && a.scale > 0.0) {
        return Err(Failure::Usage(format!("--scale must be positive, got {}", a.scale)));
    }
    let mut style = Style { scale: a.scale, ..Style::default() };
    if let Some(c) = &a.executed_color {
        style.executed = c.clone();
    }
    if let Some(c) = &a.horizon_color {
        style.horizon = c.clone();
    }
    let out = a.out.clone().unwrap_or_else(|| a.input.join(report::SVG_FILE));
    write_render(&a.input, &out, a.replan, &style)
}

fn write_render(dir: &Path, out: &Path, replan: usize, style: &Style) -> Result<(), Failure> {
    let record = report::read_trial_record(dir)?;
    let rows = report::read_trajectory_csv(&dir.join(report::TRAJECTORY_FILE))?;
    let plans = match report::read_plans(dir) {
        Ok(p) => p,
        Err(e) => {
            warn!("no horizon drawn: {e}");
            Vec::new()
        }
    };
    let plan = plans.get(replan);
    if plan.is_none() && !plans.is_empty() {
        return Err(Failure::Usage(format!("replan index {replan} out of range (0..{})", plans.len())));
    }
    let scene = Scene {
        arena: record.arena,
        obstacles: plan.map_or_else(|| record.initial_obstacles.clone(), |p| p.obstacles.clone()),
        executed: rows.iter().map(|r| [r.x, r.y]).collect(),
        horizon: plan.map(|p| p.positions.clone()).unwrap_or_default(),
        start: Some(record.start),
        goal: Some(record.goal),
        robot_radius: record.robot_radius,
    };
    report::write_new(out, render_svg(&scene, style).as_bytes())?;
    Ok(())
}

fn cmd_selftest() -> i32 {
    let checks = pipc_core::oracle::run_selftest();
    let mut failed = 0;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    i32::from(failed > 0)
}
