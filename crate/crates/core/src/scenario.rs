//! TOML scenario files.
//!
//! ```toml
//! [trial]
//! mode = "mdp-cl"
//! seed = 3
//! n_obs = 10
//! start = [2.0, 10.0]
//! goal = [28.0, 10.0]
//!
//! [factors]
//! q_x = 0.04
//!
//! [benchmark]
//! q_x = [0.01, 0.04, 0.07]
//! n_obs = [10, 20, 30, 40, 50]
//! trials = 40
//! ```
//!
//! Every section and key is optional; omitted values take the benchmark
//! defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::{EnvironmentParams, Obstacle};
use crate::error::{PipcError, Result};
use crate::factor_graph::OptimizerConfig;
use crate::planner::{FactorParams, HorizonConfig};
use crate::simulator::{BenchmarkGrid, Mode, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialSection {
    pub mode: Mode,
    pub seed: u64,
    pub n_obs: usize,
    pub start: [f64; 2],
    pub goal: [f64; 2],
}

impl Default for TrialSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self { mode: d.mode, seed: d.seed, n_obs: d.n_obs, start: d.start, goal: d.goal }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub trial: TrialSection,
    pub factors: FactorParams,
    pub horizon: HorizonConfig,
    pub optimizer: OptimizerConfig,
    pub environment: EnvironmentParams,
    /// Fixed initial obstacle layout; replaces random placement.
    pub obstacles: Option<Vec<Obstacle>>,
    pub benchmark: BenchmarkGrid,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| PipcError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipcError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PipcError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim_config().validate()?;
        self.benchmark.validate()
    }

    /// Single-trial configuration described by the file.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            mode: self.trial.mode,
            seed: self.trial.seed,
            n_obs: self.obstacles.as_ref().map_or(self.trial.n_obs, Vec::len),
            start: self.trial.start,
            goal: self.trial.goal,
            factors: self.factors.clone(),
            horizon: self.horizon.clone(),
            optimizer: self.optimizer.clone(),
            environment: self.environment.clone(),
            obstacles: self.obstacles.clone(),
            record_plans: true,
        }
    }
}
