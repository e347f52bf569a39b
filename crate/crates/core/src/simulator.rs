//! Ground-truth plant, sensing and the receding-horizon trial loop.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{build_sdf, check_collision, step_obstacles, BoxField, DistanceField, Environment2D, EnvironmentParams, Obstacle};
use crate::error::{PipcError, Result};
use crate::factor_graph::{graph_cost, Factor, FactorGraph, FactorKind, OptimizerConfig, ResidualModel, VariableId};
use crate::gp_model::{AugmentedState, GpInterval, LinearSdeModel};
use crate::planner::{Belief, FactorParams, HorizonConfig, HorizonPosterior, Observability, Planner};

const OBSTACLE_STREAM: u64 = 0;
const PROCESS_STREAM: u64 = 1;
const OBSERVATION_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    MdpCl,
    MdpOl,
    PomdpCl,
    PomdpOl,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::MdpCl, Mode::MdpOl, Mode::PomdpCl, Mode::PomdpOl];

    pub fn observability(self) -> Observability {
        match self {
            Mode::MdpCl | Mode::MdpOl => Observability::Mdp,
            Mode::PomdpCl | Mode::PomdpOl => Observability::Pomdp,
        }
    }

    pub fn closed_loop(self) -> bool {
        matches!(self, Mode::MdpCl | Mode::PomdpCl)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::MdpCl => "mdp-cl",
            Mode::MdpOl => "mdp-ol",
            Mode::PomdpCl => "pomdp-cl",
            Mode::PomdpOl => "pomdp-ol",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = PipcError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| PipcError::Config(format!("unknown mode {s:?}")))
    }
}

/// Everything that determines one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mode: Mode,
    pub seed: u64,
    pub n_obs: usize,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub factors: FactorParams,
    pub horizon: HorizonConfig,
    pub optimizer: OptimizerConfig,
    pub environment: EnvironmentParams,
    /// Fixed initial layout; overrides random placement of `n_obs` obstacles.
    pub obstacles: Option<Vec<Obstacle>>,
    /// Keep planned horizons and obstacle snapshots for rendering.
    pub record_plans: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mode: Mode::MdpCl,
            seed: 0,
            n_obs: 10,
            start: [2.0, 10.0],
            goal: [28.0, 10.0],
            factors: FactorParams::default(),
            horizon: HorizonConfig::default(),
            optimizer: OptimizerConfig::default(),
            environment: EnvironmentParams::default(),
            obstacles: None,
            record_plans: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.factors.validate()?;
        self.horizon.validate()?;
        self.optimizer.validate()?;
        self.environment.validate()?;
        for p in [self.start, self.goal] {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(PipcError::Config("start and goal must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<LinearSdeModel> {
        LinearSdeModel::double_integrator(2, self.factors.q_x, self.factors.q_u, self.factors.sigma_m)
    }

    pub fn start_state(&self) -> AugmentedState {
        AugmentedState::from_parts(0.0, &self.start, &[0.0, 0.0], &[0.0, 0.0])
    }

    pub fn goal_state(&self) -> AugmentedState {
        AugmentedState::from_parts(0.0, &self.goal, &[0.0, 0.0], &[0.0, 0.0])
    }

    /// Planner for this configuration; fails on a degenerate goal.
    pub fn planner(&self) -> Result<Planner> {
        self.validate()?;
        Planner::new(
            Arc::new(self.model()?),
            self.factors.clone(),
            self.horizon.clone(),
            self.optimizer.clone(),
            self.environment.robot_radius,
            self.start_state(),
            self.goal_state(),
        )
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Initial obstacle layout, drawn from the obstacle stream unless fixed.
    pub fn initial_environment(&self, rng: &mut ChaCha8Rng) -> Result<Environment2D> {
        match &self.obstacles {
            Some(list) => Environment2D::new(self.environment.clone(), list.clone()),
            None => Environment2D::random(self.environment.clone(), self.n_obs, self.start, self.goal, rng),
        }
    }
}

/// Exact zero-order-hold discretization of the plant over one control period.
#[derive(Debug, Clone)]
pub struct SystemIntegrator {
    phi: DMatrix<f64>,
    gamma: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
    noise_sqrt: DMatrix<f64>,
}

impl SystemIntegrator {
    pub fn new(model: &LinearSdeModel, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(PipcError::InvalidArgument(format!("integration step must be > 0, got {dt}")));
        }
        let (phi, gamma, noise_cov) = model.state_discretization(dt)?;
        let eig = SymmetricEigen::new(noise_cov.clone());
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let noise_sqrt = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(Self { phi, gamma, noise_cov, noise_sqrt })
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn input(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    /// `x' = Φ x + Γ u + w`, `w ~ N(0, Q_d)`.
    pub fn step<R: Rng + ?Sized>(&self, x: &DVector<f64>, u: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let mut next = &self.phi * x + &self.gamma * u;
        if self.noise_cov.iter().any(|v| *v != 0.0) {
            let w = DVector::from_fn(x.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            next += &self.noise_sqrt * w;
        }
        next
    }
}

/// One-step plant integration under a held control.
pub fn integrate_system<R: Rng + ?Sized>(
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    model: &LinearSdeModel,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(SystemIntegrator::new(model, dt)?.step(x, u, rng))
}

/// Observation of the physical state: exact under full observability,
/// corrupted by `N(0, σ_m² I)` otherwise.
pub fn observe<R: Rng + ?Sized>(x: &DVector<f64>, mode: Observability, sigma_m: f64, rng: &mut R) -> DVector<f64> {
    match mode {
        Observability::Mdp => x.clone(),
        Observability::Pomdp => {
            if sigma_m == 0.0 {
                return x.clone();
            }
            x.map(|v| v + sigma_m * rng.sample::<f64, _>(StandardNormal))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
    /// The planner or filter failed numerically.
    Failure,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
            Outcome::Failure => "failure",
        }
    }
}

/// Executed state at one control step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: f64,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub control: [f64; 2],
}

/// Planned horizon and the world snapshot it was planned against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub time: f64,
    pub positions: Vec<[f64; 2]>,
    pub obstacles: Vec<Obstacle>,
    pub converged: bool,
    pub iterations: usize,
    /// Optimized horizon cost.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub mode: Mode,
    pub seed: u64,
    pub q_x: f64,
    pub n_obs: usize,
    pub outcome: Outcome,
    /// Elapsed time at termination.
    pub time_to_goal: f64,
    pub path_length: f64,
    pub path_cost: f64,
    pub replans: usize,
    pub diagnostic: Option<String>,
    pub trajectory: Vec<Sample>,
    pub plans: Vec<PlanRecord>,
    pub initial_obstacles: Vec<Obstacle>,
}

impl TrialResult {
    pub fn succeeded(&self) -> bool {
        self.outcome == Outcome::Success
    }
}

fn sample(time: f64, x: &DVector<f64>, u: &DVector<f64>) -> Sample {
    Sample { time, position: [x[0], x[1]], velocity: [x[2], x[3]], control: [u[0], u[1]] }
}

fn augmented(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied())
}

/// Cost of executed support states: GP prior factors between consecutive
/// states, obstacle hinge factors against the exact obstacle snapshot of each
/// state's time, and goal factors weighted at the executed states.
pub fn executed_path_cost(
    cfg: &SimConfig,
    planner: &Planner,
    states: &[DVector<f64>],
    snapshots: &[Vec<Obstacle>],
) -> Result<f64> {
    let num = states.len();
    if num == 0 {
        return Ok(0.0);
    }
    let n = states[0].len();
    let interval: &GpInterval = planner.interval();
    let mut graph = FactorGraph::new(num, n);
    let eye = DMatrix::<f64>::identity(n, n);
    for i in 0..num.saturating_sub(1) {
        graph.add(Factor::linear(
            FactorKind::Gp,
            vec![VariableId(i), VariableId(i + 1)],
            vec![interval.phi().clone(), -&eye],
            DVector::zeros(n),
            interval.q_inv().clone(),
        ))?;
    }
    let mut sel = DMatrix::zeros(2, n);
    sel[(0, 0)] = 1.0;
    sel[(1, 1)] = 1.0;
    let obs_w = DMatrix::from_element(1, 1, cfg.factors.sigma_obs.powi(-2));
    for (i, snap) in snapshots.iter().enumerate() {
        let field: Arc<dyn DistanceField> = Arc::new(BoxField { obstacles: snap.clone() });
        graph.add(Factor {
            kind: FactorKind::Obstacle,
            vars: vec![VariableId(i)],
            weight: obs_w.clone(),
            model: ResidualModel::Hinge {
                field,
                selectors: vec![sel.clone()],
                radius: cfg.environment.robot_radius,
                eps: cfg.factors.eps,
            },
        })?;
    }
    for (i, xi) in states.iter().enumerate().skip(1) {
        let w = &eye / planner.goal_variance(xi);
        graph.add(Factor::prior(FactorKind::Goal, VariableId(i), planner.goal().values.clone(), w))?;
    }
    graph_cost(&graph, states)
}

/// Runs one receding-horizon trial.
pub fn run_trial(cfg: &SimConfig) -> Result<TrialResult> {
    cfg.validate()?;
    let mut obstacle_rng = cfg.rng(OBSTACLE_STREAM);
    let mut process_rng = cfg.rng(PROCESS_STREAM);
    let mut observation_rng = cfg.rng(OBSERVATION_STREAM);
    let mut env = cfg.initial_environment(&mut obstacle_rng)?;
    let mut result = TrialResult {
        mode: cfg.mode,
        seed: cfg.seed,
        q_x: cfg.factors.q_x,
        n_obs: env.obstacles.len(),
        outcome: Outcome::Timeout,
        time_to_goal: 0.0,
        path_length: 0.0,
        path_cost: 0.0,
        replans: 0,
        diagnostic: None,
        trajectory: Vec::new(),
        plans: Vec::new(),
        initial_obstacles: env.obstacles.clone(),
    };

    let goal = Vector2::from(cfg.goal);
    let start = Vector2::from(cfg.start);
    let zero_u = DVector::zeros(2);
    let mut x = DVector::from_vec(vec![cfg.start[0], cfg.start[1], 0.0, 0.0]);
    if check_collision(&env, cfg.start) {
        result.outcome = Outcome::Collision;
        result.trajectory.push(sample(0.0, &x, &zero_u));
        return Ok(result);
    }
    if (start - goal).norm() <= cfg.horizon.gdist {
        result.outcome = Outcome::Success;
        result.trajectory.push(sample(0.0, &x, &zero_u));
        return Ok(result);
    }

    let planner = cfg.planner()?;
    let model = planner.model().clone();
    let integrator = SystemIntegrator::new(&model, cfg.horizon.dt_step())?;
    let obs_mode = cfg.mode.observability();
    let dt = cfg.horizon.dt_step();
    let n_ip = cfg.horizon.n_ip;
    let max_steps = (cfg.horizon.t_max / dt).round() as usize;

    let mut state_belief = planner.initial_belief();
    let mut posterior: Option<HorizonPosterior> = None;
    let mut policy_belief: Option<Belief> = None;
    let mut support_states: Vec<DVector<f64>> = Vec::new();
    let mut support_obstacles: Vec<Vec<Obstacle>> = Vec::new();
    let mut last_u = zero_u.clone();

    let mut k = 0usize;
    let outcome = loop {
        let t = k as f64 * dt;
        let p = [x[0], x[1]];
        if check_collision(&env, p) {
            break Outcome::Collision;
        }
        if (Vector2::from(p) - goal).norm() <= cfg.horizon.gdist {
            break Outcome::Success;
        }
        if k >= max_steps {
            break Outcome::Timeout;
        }

        if k.is_multiple_of(n_ip) {
            let field = match build_sdf(&env, true, p) {
                Ok(f) => f,
                Err(e) => {
                    result.diagnostic = Some(format!("distance field at t={t:.2}: {e}"));
                    break Outcome::Failure;
                }
            };
            state_belief.mean.time = t;
            let init = planner.warm_start(&state_belief, posterior.as_ref());
            let field: Arc<dyn DistanceField> = Arc::new(field);
            match planner.get_laplace_approx(&state_belief, Some(field), &init, result.replans as u64) {
                Ok(post) => {
                    if cfg.record_plans {
                        result.plans.push(PlanRecord {
                            time: t,
                            positions: post.graph.means.iter().map(|m| [m[0], m[1]]).collect(),
                            obstacles: env.obstacles.clone(),
                            converged: post.graph.converged(),
                            iterations: post.graph.iterations,
                            cost: post.graph.cost,
                        });
                    }
                    posterior = Some(post);
                }
                Err(e) => {
                    result.diagnostic = Some(format!("planning at t={t:.2}: {e}"));
                    break Outcome::Failure;
                }
            }
            result.replans += 1;
            policy_belief = None;
        }
        let post = posterior.as_ref().expect("planned at step 0");

        let z = observe(&x, obs_mode, cfg.factors.sigma_m, &mut observation_rng);
        let action = if cfg.mode.closed_loop() {
            planner
                .filter_policy(&z, policy_belief.as_ref(), post, t, obs_mode)
                .map(|(b, u)| {
                    policy_belief = Some(b);
                    u
                })
        } else {
            planner.open_loop_policy(post, t)
        };
        let u = match action {
            Ok(u) => u,
            Err(e) => {
                result.diagnostic = Some(format!("policy at t={t:.2}: {e}"));
                break Outcome::Failure;
            }
        };
        if k.is_multiple_of(n_ip) {
            support_states.push(augmented(&x, &u));
            support_obstacles.push(env.obstacles.clone());
        }
        result.trajectory.push(sample(t, &x, &u));
        last_u = u.clone();

        let next = integrator.step(&x, &u, &mut process_rng);
        result.path_length += (Vector2::new(next[0], next[1]) - Vector2::new(x[0], x[1])).norm();
        x = next;
        state_belief = match planner.filter_state(Some(&z), Some(&u), &state_belief, obs_mode) {
            Ok(b) => b,
            Err(e) => {
                result.diagnostic = Some(format!("state estimate at t={t:.2}: {e}"));
                break Outcome::Failure;
            }
        };
        step_obstacles(&mut env, dt, &mut obstacle_rng);
        k += 1;
        state_belief.mean.time = k as f64 * dt;
    };

    result.outcome = outcome;
    result.time_to_goal = k as f64 * dt;
    result.trajectory.push(sample(result.time_to_goal, &x, &last_u));
    result.path_cost = executed_path_cost(cfg, &planner, &support_states, &support_obstacles)?;
    Ok(result)
}

/// Benchmark grid over noise levels, obstacle counts and modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkGrid {
    pub q_x: Vec<f64>,
    pub n_obs: Vec<usize>,
    pub modes: Vec<Mode>,
    pub trials: usize,
    pub base_seed: u64,
}

impl Default for BenchmarkGrid {
    fn default() -> Self {
        Self {
            q_x: vec![0.01, 0.04, 0.07],
            n_obs: vec![10, 20, 30, 40, 50],
            modes: Mode::ALL.to_vec(),
            trials: 40,
            base_seed: 0,
        }
    }
}

impl BenchmarkGrid {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(PipcError::Config("benchmark needs at least one trial per cell".into()));
        }
        if self.q_x.is_empty() || self.n_obs.is_empty() || self.modes.is_empty() {
            return Err(PipcError::Config("benchmark grid axes must be non-empty".into()));
        }
        Ok(())
    }

    /// Cells in output order: mode, then `Q_x`, then obstacle count.
    pub fn cells(&self) -> Vec<(Mode, f64, usize)> {
        let mut out = Vec::new();
        for &m in &self.modes {
            for &q in &self.q_x {
                for &n in &self.n_obs {
                    out.push((m, q, n));
                }
            }
        }
        out
    }
}

/// Per-trial line of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub mode: Mode,
    pub q_x: f64,
    pub n_obs: usize,
    pub seed: u64,
    pub outcome: Outcome,
    pub time_to_goal: f64,
    pub path_length: f64,
    pub path_cost: f64,
    pub replans: usize,
    pub diagnostic: Option<String>,
}

impl From<&TrialResult> for TrialSummary {
    fn from(r: &TrialResult) -> Self {
        Self {
            mode: r.mode,
            q_x: r.q_x,
            n_obs: r.n_obs,
            seed: r.seed,
            outcome: r.outcome,
            time_to_goal: r.time_to_goal,
            path_length: r.path_length,
            path_cost: r.path_cost,
            replans: r.replans,
            diagnostic: r.diagnostic.clone(),
        }
    }
}

/// Aggregate over one cell; statistics use successful trials only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub mode: Mode,
    pub q_x: f64,
    pub n_obs: usize,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_time: Option<f64>,
    pub std_time: Option<f64>,
    pub mean_length: Option<f64>,
    pub std_length: Option<f64>,
    pub mean_cost: Option<f64>,
    pub std_cost: Option<f64>,
}

/// Mean and sample standard deviation; the deviation needs two values.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

pub fn aggregate(mode: Mode, q_x: f64, n_obs: usize, trials: &[TrialSummary]) -> CellAggregate {
    let ok: Vec<&TrialSummary> = trials.iter().filter(|t| t.outcome == Outcome::Success).collect();
    let col = |f: fn(&TrialSummary) -> f64| mean_std(&ok.iter().map(|t| f(t)).collect::<Vec<_>>());
    let (mean_time, std_time) = col(|t| t.time_to_goal);
    let (mean_length, std_length) = col(|t| t.path_length);
    let (mean_cost, std_cost) = col(|t| t.path_cost);
    CellAggregate {
        mode,
        q_x,
        n_obs,
        trials: trials.len(),
        successes: ok.len(),
        success_rate: if trials.is_empty() { 0.0 } else { ok.len() as f64 / trials.len() as f64 },
        mean_time,
        std_time,
        mean_length,
        std_length,
        mean_cost,
        std_cost,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub trials: Vec<TrialSummary>,
    pub cells: Vec<CellAggregate>,
}

impl BenchmarkReport {
    pub fn cell(&self, mode: Mode, q_x: f64, n_obs: usize) -> Option<&CellAggregate> {
        self.cells.iter().find(|c| c.mode == mode && c.q_x == q_x && c.n_obs == n_obs)
    }
}

/// Runs every cell of `grid` with `K` seeds `base_seed + k`, shared across
/// cells and modes. Trials run on `jobs` worker threads (0 = all cores); the
/// report order depends only on the grid.
pub fn run_benchmark(base: &SimConfig, grid: &BenchmarkGrid, jobs: usize) -> Result<BenchmarkReport> {
    grid.validate()?;
    base.validate()?;
    let mut tasks = Vec::new();
    for (mode, q_x, n_obs) in grid.cells() {
        for k in 0..grid.trials {
            let mut cfg = base.clone();
            cfg.mode = mode;
            cfg.factors.q_x = q_x;
            cfg.n_obs = n_obs;
            cfg.seed = grid.base_seed + k as u64;
            cfg.record_plans = false;
            tasks.push(cfg);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| PipcError::Config(format!("worker pool: {e}")))?;
    let summaries: Vec<TrialSummary> = pool.install(|| {
        tasks
            .par_iter()
            .map(|cfg| match run_trial(cfg) {
                Ok(r) => TrialSummary::from(&r),
                Err(e) => TrialSummary {
                    mode: cfg.mode,
                    q_x: cfg.factors.q_x,
                    n_obs: cfg.n_obs,
                    seed: cfg.seed,
                    outcome: Outcome::Failure,
                    time_to_goal: 0.0,
                    path_length: 0.0,
                    path_cost: 0.0,
                    replans: 0,
                    diagnostic: Some(e.to_string()),
                },
            })
            .collect()
    });
    let cells = grid
        .cells()
        .into_iter()
        .enumerate()
        .map(|(c, (mode, q_x, n_obs))| {
            let slice = &summaries[c * grid.trials..(c + 1) * grid.trials];
            aggregate(mode, q_x, n_obs, slice)
        })
        .collect();
    Ok(BenchmarkReport { trials: summaries, cells })
}
