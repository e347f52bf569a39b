//! Factor graph over support states and its Levenberg–Marquardt solver.
//!
//! Every factor touches one state or two adjacent states, so the Gauss–Newton
//! information matrix is block-tridiagonal and each solve is linear in the
//! horizon length. The MAP estimate together with the adjacent-pair marginal
//! covariances is the Laplace approximation of the trajectory posterior.

pub mod banded;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

pub use banded::{solve_banded, BandedCholesky, BlockTridiagonal};

use crate::environment::{hinge_cost, DistanceField};
use crate::error::{PipcError, Result};

/// Ordinal of a support state along the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VariableId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorKind {
    Prior,
    Gp,
    Obstacle,
    ObstacleInterpolated,
    Goal,
}

/// Residual map of a factor.
#[derive(Debug, Clone)]
pub enum ResidualModel {
    /// `r = Σₖ Jₖ ξₖ − offset`.
    Linear {
        jacobians: Vec<DMatrix<f64>>,
        offset: DVector<f64>,
    },
    /// Hinge on the clearance of the point `p = Σₖ Sₖ ξₖ`:
    /// `r = max(0, eps − (sd(p) − radius))`.
    Hinge {
        field: Arc<dyn DistanceField>,
        selectors: Vec<DMatrix<f64>>,
        radius: f64,
        eps: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Factor {
    pub kind: FactorKind,
    pub vars: Vec<VariableId>,
    pub weight: DMatrix<f64>,
    pub model: ResidualModel,
}

/// Residual and per-variable jacobians of one factor.
#[derive(Debug, Clone)]
pub struct FactorLinearization {
    pub residual: DVector<f64>,
    pub jacobians: Vec<DMatrix<f64>>,
    /// False for an inactive hinge: zero residual and zero jacobians.
    pub active: bool,
}

impl Factor {
    /// Linear factor `r = Σ Jₖ ξₖ − offset` with information `weight`.
    pub fn linear(
        kind: FactorKind,
        vars: Vec<VariableId>,
        jacobians: Vec<DMatrix<f64>>,
        offset: DVector<f64>,
        weight: DMatrix<f64>,
    ) -> Self {
        Self { kind, vars, weight, model: ResidualModel::Linear { jacobians, offset } }
    }

    /// Unary prior `r = ξ − mean`.
    pub fn prior(kind: FactorKind, var: VariableId, mean: DVector<f64>, weight: DMatrix<f64>) -> Self {
        let n = mean.len();
        Self::linear(kind, vec![var], vec![DMatrix::identity(n, n)], mean, weight)
    }

    pub fn residual_dim(&self) -> usize {
        match &self.model {
            ResidualModel::Linear { offset, .. } => offset.len(),
            ResidualModel::Hinge { .. } => 1,
        }
    }

    pub fn residual(&self, states: &[&DVector<f64>]) -> Result<DVector<f64>> {
        match &self.model {
            ResidualModel::Linear { jacobians, offset } => {
                let mut r = -offset.clone();
                for (j, x) in jacobians.iter().zip(states) {
                    r.gemv(1.0, j, x, 1.0);
                }
                Ok(r)
            }
            ResidualModel::Hinge { field, selectors, radius, eps } => {
                let p = select_point(selectors, states);
                let (cost, _) = hinge_or_free(field.as_ref(), p, *radius, *eps)?;
                Ok(DVector::from_element(1, cost))
            }
        }
    }

    pub fn linearize(&self, states: &[&DVector<f64>]) -> Result<FactorLinearization> {
        match &self.model {
            ResidualModel::Linear { jacobians, .. } => Ok(FactorLinearization {
                residual: self.residual(states)?,
                jacobians: jacobians.clone(),
                active: true,
            }),
            ResidualModel::Hinge { field, selectors, radius, eps } => {
                let p = select_point(selectors, states);
                let (cost, grad) = hinge_or_free(field.as_ref(), p, *radius, *eps)?;
                let active = grad != Vector2::zeros() || cost != 0.0;
                let jacobians = selectors
                    .iter()
                    .map(|s| {
                        let mut j = DMatrix::zeros(1, s.ncols());
                        if active {
                            for c in 0..s.ncols() {
                                j[(0, c)] = grad[0] * s[(0, c)] + grad[1] * s[(1, c)];
                            }
                        }
                        j
                    })
                    .collect();
                Ok(FactorLinearization {
                    residual: DVector::from_element(1, cost),
                    jacobians,
                    active,
                })
            }
        }
    }

    pub fn cost(&self, states: &[&DVector<f64>]) -> Result<f64> {
        let r = self.residual(states)?;
        Ok(0.5 * r.dot(&(&self.weight * &r)))
    }
}

fn select_point(selectors: &[DMatrix<f64>], states: &[&DVector<f64>]) -> Vector2<f64> {
    let mut p = Vector2::zeros();
    for (s, x) in selectors.iter().zip(states) {
        for c in 0..s.ncols() {
            let xc = x[c];
            if xc != 0.0 {
                p[0] += s[(0, c)] * xc;
                p[1] += s[(1, c)] * xc;
            }
        }
    }
    p
}

/// Points outside the field extent are treated as free space: planning fields
/// are built with a margin wider than `radius + eps` around every obstacle they
/// include.
fn hinge_or_free(
    field: &dyn DistanceField,
    p: Vector2<f64>,
    radius: f64,
    eps: f64,
) -> Result<(f64, Vector2<f64>)> {
    match hinge_cost(field, p, radius, eps) {
        Err(PipcError::OutsideField { .. }) => Ok((0.0, Vector2::zeros())),
        other => other,
    }
}

/// Bipartite graph over `num_vars` support states of dimension `var_dim`.
#[derive(Debug, Clone)]
pub struct FactorGraph {
    num_vars: usize,
    var_dim: usize,
    factors: Vec<Factor>,
}

impl FactorGraph {
    pub fn new(num_vars: usize, var_dim: usize) -> Self {
        Self { num_vars, var_dim, factors: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn var_dim(&self) -> usize {
        self.var_dim
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn count(&self, kind: FactorKind) -> usize {
        self.factors.iter().filter(|f| f.kind == kind).count()
    }

    /// Adds a factor; it must touch one state or two adjacent states in order.
    pub fn add(&mut self, factor: Factor) -> Result<()> {
        let vars = &factor.vars;
        let banded = match vars.as_slice() {
            [a] => a.0 < self.num_vars,
            [a, b] => b.0 == a.0 + 1 && b.0 < self.num_vars,
            _ => false,
        };
        if !banded {
            return Err(PipcError::InvalidArgument(format!(
                "factor must connect one state or an adjacent pair, got {vars:?}"
            )));
        }
        let k = factor.residual_dim();
        if factor.weight.shape() != (k, k) {
            return Err(PipcError::DimensionMismatch {
                expected: k,
                got: factor.weight.nrows(),
                context: "factor weight",
            });
        }
        let cols_ok = match &factor.model {
            ResidualModel::Linear { jacobians, .. } => {
                jacobians.len() == vars.len()
                    && jacobians.iter().all(|j| j.shape() == (k, self.var_dim))
            }
            ResidualModel::Hinge { selectors, .. } => {
                selectors.len() == vars.len()
                    && selectors.iter().all(|s| s.shape() == (2, self.var_dim))
            }
        };
        if !cols_ok {
            return Err(PipcError::InvalidArgument("factor jacobian shapes do not match".into()));
        }
        self.factors.push(factor);
        Ok(())
    }

    fn states<'a>(&self, estimate: &'a [DVector<f64>], f: &Factor) -> Vec<&'a DVector<f64>> {
        f.vars.iter().map(|v| &estimate[v.0]).collect()
    }

    fn check_estimate(&self, estimate: &[DVector<f64>]) -> Result<()> {
        if estimate.len() != self.num_vars {
            return Err(PipcError::DimensionMismatch {
                expected: self.num_vars,
                got: estimate.len(),
                context: "estimate length",
            });
        }
        for x in estimate {
            if x.len() != self.var_dim {
                return Err(PipcError::DimensionMismatch {
                    expected: self.var_dim,
                    got: x.len(),
                    context: "estimate state dimension",
                });
            }
        }
        Ok(())
    }
}

/// Splits a stacked vector into per-state vectors.
pub fn unstack(stacked: &DVector<f64>, var_dim: usize) -> Vec<DVector<f64>> {
    stacked
        .as_slice()
        .chunks(var_dim)
        .map(DVector::from_column_slice)
        .collect()
}

pub fn stack(states: &[DVector<f64>]) -> DVector<f64> {
    let n: usize = states.iter().map(|s| s.len()).sum();
    DVector::from_iterator(n, states.iter().flat_map(|s| s.iter().copied()))
}

/// Gauss–Newton normal equations `H = JᵀWJ`, `g = JᵀWr`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub info: BlockTridiagonal,
    pub gradient: DVector<f64>,
    pub cost: f64,
}

/// `½ Σ rᵀ W r` over all factors.
pub fn graph_cost(graph: &FactorGraph, estimate: &[DVector<f64>]) -> Result<f64> {
    graph.check_estimate(estimate)?;
    let mut total = 0.0;
    for f in &graph.factors {
        total += f.cost(&graph.states(estimate, f))?;
    }
    Ok(total)
}

pub fn linearize(graph: &FactorGraph, estimate: &[DVector<f64>]) -> Result<NormalEquations> {
    graph.check_estimate(estimate)?;
    let n = graph.var_dim;
    let mut info = BlockTridiagonal::zeros(graph.num_vars, n);
    let mut gradient = DVector::zeros(graph.num_vars * n);
    let mut cost = 0.0;
    for f in &graph.factors {
        let lin = f.linearize(&graph.states(estimate, f))?;
        if !lin.residual.iter().all(|v| v.is_finite())
            || !lin.jacobians.iter().all(|j| j.iter().all(|v| v.is_finite()))
        {
            return Err(PipcError::NonFinite("factor linearization"));
        }
        let wr = &f.weight * &lin.residual;
        cost += 0.5 * lin.residual.dot(&wr);
        if !lin.active {
            continue;
        }
        let wj: Vec<DMatrix<f64>> = lin.jacobians.iter().map(|j| &f.weight * j).collect();
        for (a, (ja, va)) in lin.jacobians.iter().zip(&f.vars).enumerate() {
            let mut g = gradient.rows_mut(va.0 * n, n);
            g.gemv_tr(1.0, ja, &wr, 1.0);
            info.diag_mut(va.0).gemm_tr(1.0, ja, &wj[a], 1.0);
        }
        if let [v0, _] = f.vars.as_slice() {
            // block (i+1, i) = J1ᵀ W J0
            info.lower_mut(v0.0).gemm_tr(1.0, &lin.jacobians[1], &wj[0], 1.0);
        }
    }
    if !cost.is_finite() {
        return Err(PipcError::NonFinite("graph cost"));
    }
    Ok(NormalEquations { info, gradient, cost })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub abs_cost_tol: f64,
    pub rel_cost_tol: f64,
    pub min_step_norm: f64,
    pub max_damping: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            initial_damping: 1e-4,
            damping_up: 10.0,
            damping_down: 0.1,
            abs_cost_tol: 1e-12,
            rel_cost_tol: 1e-6,
            min_step_norm: 1e-12,
            max_damping: 1e12,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.initial_damping,
            self.damping_up,
            self.damping_down,
            self.abs_cost_tol,
            self.rel_cost_tol,
            self.min_step_norm,
            self.max_damping,
        ];
        if self.max_iters == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(PipcError::Config("optimizer settings must all be positive".into()));
        }
        if self.damping_up <= 1.0 || self.damping_down >= 1.0 {
            return Err(PipcError::Config(
                "damping_up must exceed 1 and damping_down must be below 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIterations,
    DampingExhausted,
}

/// Laplace approximation of the support-state posterior.
#[derive(Debug, Clone)]
pub struct GraphPosterior {
    pub means: Vec<DVector<f64>>,
    /// Marginal covariance of each support state.
    pub marginals: Vec<DMatrix<f64>>,
    /// Joint covariance of each adjacent pair `(ξ_i, ξ_{i+1})`.
    pub pair_covariances: Vec<DMatrix<f64>>,
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub termination: Termination,
}

impl GraphPosterior {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn mean_stacked(&self) -> DVector<f64> {
        stack(&self.means)
    }
}

/// Levenberg–Marquardt on the banded normal equations, followed by the
/// adjacent-pair covariance extraction at the final estimate.
pub fn optimize(
    graph: &FactorGraph,
    init: &[DVector<f64>],
    cfg: &OptimizerConfig,
) -> Result<GraphPosterior> {
    cfg.validate()?;
    graph.check_estimate(init)?;
    if !init.iter().all(|x| x.iter().all(|v| v.is_finite())) {
        return Err(PipcError::NonFinite("initial estimate"));
    }
    let n = graph.var_dim;
    let mut x: Vec<DVector<f64>> = init.to_vec();
    let mut eq = linearize(graph, &x)?;
    let initial_cost = eq.cost;
    let mut lambda = cfg.initial_damping;
    let mut iterations = 0;
    let mut accepted_steps = 0;
    let mut termination = Termination::MaxIterations;

    while iterations < cfg.max_iters {
        iterations += 1;
        let mut damped = eq.info.clone();
        damped.add_diagonal(lambda);
        let neg_grad = -&eq.gradient;
        let step = match solve_banded(&damped, &neg_grad) {
            Ok(step) => step,
            Err(PipcError::RankDeficient { .. }) => {
                lambda *= cfg.damping_up;
                if lambda > cfg.max_damping {
                    termination = Termination::DampingExhausted;
                    break;
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let x_norm = x.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        if step.norm() <= cfg.min_step_norm * (x_norm + cfg.min_step_norm) {
            termination = Termination::Converged;
            break;
        }
        let predicted = -(eq.gradient.dot(&step) + 0.5 * step.dot(&eq.info.mul_vec(&step)));
        if predicted <= cfg.abs_cost_tol || predicted <= cfg.rel_cost_tol * eq.cost {
            termination = Termination::Converged;
            break;
        }
        let candidate: Vec<DVector<f64>> = x
            .iter()
            .enumerate()
            .map(|(i, xi)| xi + step.rows(i * n, n))
            .collect();
        let new_cost = graph_cost(graph, &candidate)?;
        if new_cost.is_nan() {
            return Err(PipcError::NonFinite("graph cost"));
        }
        if new_cost < eq.cost {
            let previous = eq.cost;
            x = candidate;
            accepted_steps += 1;
            lambda = (lambda * cfg.damping_down).max(f64::MIN_POSITIVE);
            eq = linearize(graph, &x)?;
            let decrease = previous - eq.cost;
            if decrease <= cfg.abs_cost_tol || decrease <= cfg.rel_cost_tol * previous {
                termination = Termination::Converged;
                break;
            }
        } else {
            lambda *= cfg.damping_up;
            if lambda > cfg.max_damping {
                termination = Termination::DampingExhausted;
                break;
            }
        }
    }

    let (marginals, lower) = eq.info.cholesky()?.band_covariances()?;
    let pair_covariances = lower
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut p = DMatrix::zeros(2 * n, 2 * n);
            p.view_mut((0, 0), (n, n)).copy_from(&marginals[i]);
            p.view_mut((n, n), (n, n)).copy_from(&marginals[i + 1]);
            p.view_mut((n, 0), (n, n)).copy_from(l);
            p.view_mut((0, n), (n, n)).copy_from(&l.transpose());
            p
        })
        .collect();
    Ok(GraphPosterior {
        means: x,
        marginals,
        pair_covariances,
        cost: eq.cost,
        initial_cost,
        iterations,
        accepted_steps,
        termination,
    })
}
