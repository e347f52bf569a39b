//! Continuous-time stochastic planning and control with Gaussian-process
//! factor graphs, Laplace approximation and recursive Kalman policy inference.

pub mod environment;
pub mod error;
pub mod factor_graph;
pub mod gp_model;
pub mod oracle;
pub mod planner;
pub mod scenario;
pub mod simulator;

pub use error::{PipcError, Result};
