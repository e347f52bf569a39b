//! Per-horizon factor graph, Laplace approximation and the two recursive
//! filters: policy inference between replans and state estimation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::environment::DistanceField;
use crate::factor_graph::{optimize, Factor, FactorGraph, FactorKind, GraphPosterior, OptimizerConfig, ResidualModel, VariableId};
use crate::gp_model::{check_len, spd_inverse, symmetrize, AugmentedState, BridgeJoint, GpInterval, Interpolator, LinearSdeModel};
use crate::error::{PipcError, Result};

/// Goal covariance floor relative to `σ_g²`.
pub const GOAL_FLOOR_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorParams {
    pub sigma_g: f64,
    pub sigma_fix: f64,
    pub sigma_obs: f64,
    pub sigma_m: f64,
    pub eps: f64,
    pub q_u: f64,
    pub q_x: f64,
}

impl Default for FactorParams {
    fn default() -> Self {
        Self { sigma_g: 1.0, sigma_fix: 1e-4, sigma_obs: 0.02, sigma_m: 0.01, eps: 1.0, q_u: 10.0, q_x: 0.01 }
    }
}

impl FactorParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("sigma_g", self.sigma_g),
            ("sigma_fix", self.sigma_fix),
            ("sigma_obs", self.sigma_obs),
            ("sigma_m", self.sigma_m),
            ("eps", self.eps),
            ("q_u", self.q_u),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PipcError::Config(format!("{name} must be strictly positive, got {v}")));
            }
        }
        // A noise-free plant is allowed; the GP prior stays proper through q_u.
        if !(self.q_x >= 0.0 && self.q_x.is_finite()) {
            return Err(PipcError::Config(format!("q_x must be non-negative, got {}", self.q_x)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonConfig {
    pub t_h: f64,
    pub dt_support: f64,
    pub n_ip: usize,
    pub t_max: f64,
    pub gdist: f64,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self { t_h: 2.0, dt_support: 0.2, n_ip: 20, t_max: 20.0, gdist: 0.2 }
    }
}

impl HorizonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_support > 0.0) || !(self.t_h >= self.dt_support) {
            return Err(PipcError::Config("need 0 < dt_support <= t_h".into()));
        }
        let ratio = self.t_h / self.dt_support;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(PipcError::Config(format!(
                "t_h = {} is not a multiple of dt_support = {}",
                self.t_h, self.dt_support
            )));
        }
        if self.n_ip == 0 {
            return Err(PipcError::Config("n_ip must be at least 1".into()));
        }
        if !(self.t_max > 0.0) || !(self.gdist >= 0.0) {
            return Err(PipcError::Config("t_max must be positive and gdist non-negative".into()));
        }
        Ok(())
    }

    /// Support states per horizon, `t_h / Δt + 1`.
    pub fn num_support(&self) -> usize {
        (self.t_h / self.dt_support).round() as usize + 1
    }

    /// Control and observation period `δt = Δt / n_ip`.
    pub fn dt_step(&self) -> f64 {
        self.dt_support / self.n_ip as f64
    }

    /// Offsets of the interpolated obstacle factors inside an interval.
    pub fn interpolation_offsets(&self) -> Vec<f64> {
        let h = self.dt_step();
        (0..self.n_ip).map(|k| (k as f64 + 0.5) * h).collect()
    }
}

/// Observation model of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observability {
    Mdp,
    Pomdp,
}

/// Gaussian belief over one augmented state.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub mean: AugmentedState,
    pub cov: DMatrix<f64>,
}

impl Belief {
    pub fn time(&self) -> f64 {
        self.mean.time
    }

    pub fn control(&self) -> DVector<f64> {
        self.mean.control().into_owned()
    }
}

/// Laplace approximation over one receding horizon.
#[derive(Debug, Clone)]
pub struct HorizonPosterior {
    pub start_time: f64,
    pub dt: f64,
    pub graph: GraphPosterior,
    pub goal: AugmentedState,
    pub sdf_id: u64,
}

impl HorizonPosterior {
    pub fn num_support(&self) -> usize {
        self.graph.means.len()
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.dt * (self.num_support() - 1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.num_support()).map(|i| self.start_time + i as f64 * self.dt).collect()
    }

    pub fn mean(&self, i: usize) -> AugmentedState {
        AugmentedState::new(self.start_time + i as f64 * self.dt, self.graph.means[i].clone())
    }

    /// Interval index and offset containing `t`; the right end belongs to the last interval.
    pub fn bracket(&self, t: f64) -> Result<(usize, f64)> {
        let tol = 1e-9 * self.dt;
        let rel = t - self.start_time;
        let span = self.end_time() - self.start_time;
        if !(rel >= -tol && rel <= span + tol) || self.num_support() < 2 {
            return Err(PipcError::TimeOutOfRange { t, start: self.start_time, end: self.end_time() });
        }
        let last = self.num_support() - 2;
        let mut i = ((rel + tol) / self.dt).floor() as usize;
        i = i.min(last);
        let tau = (rel - i as f64 * self.dt).clamp(0.0, self.dt);
        Ok((i, tau))
    }

    fn pair_mean(&self, i: usize) -> DVector<f64> {
        let m = &self.graph.means;
        let n = m[i].len();
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&m[i]);
        out.rows_mut(n, n).copy_from(&m[i + 1]);
        out
    }
}

/// `ξ_{t+δt} | ξ_t ~ N(A ξ_t + c, Σ)` under the horizon posterior.
#[derive(Debug, Clone)]
pub struct PolicyTransition {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Graph construction, Laplace approximation and filtering for one trial.
#[derive(Debug, Clone)]
pub struct Planner {
    model: Arc<LinearSdeModel>,
    params: FactorParams,
    horizon: HorizonConfig,
    optimizer: OptimizerConfig,
    robot_radius: f64,
    start: AugmentedState,
    goal: AugmentedState,
    interval: GpInterval,
    obstacle_interps: Vec<Interpolator>,
    step_bridges: Vec<BridgeJoint>,
    step_phi: DMatrix<f64>,
    step_q: DMatrix<f64>,
}

impl Planner {
    pub fn new(
        model: Arc<LinearSdeModel>,
        params: FactorParams,
        horizon: HorizonConfig,
        optimizer: OptimizerConfig,
        robot_radius: f64,
        start: AugmentedState,
        goal: AugmentedState,
    ) -> Result<Self> {
        params.validate()?;
        horizon.validate()?;
        optimizer.validate()?;
        let n = model.augmented_dim();
        check_len(start.values.len(), n, "planner start state")?;
        check_len(goal.values.len(), n, "planner goal state")?;
        if (&start.values - &goal.values).norm() == 0.0 {
            return Err(PipcError::Config("goal coincides with start; goal weighting is undefined".into()));
        }
        let interval = GpInterval::new(model.clone(), horizon.dt_support)?;
        let obstacle_interps = horizon
            .interpolation_offsets()
            .into_iter()
            .map(|tau| interval.interpolator(tau))
            .collect::<Result<Vec<_>>>()?;
        let h = horizon.dt_step();
        let step_bridges = (0..horizon.n_ip)
            .map(|m| {
                let a = m as f64 * h;
                interval.bridge(a, (a + h).min(horizon.dt_support))
            })
            .collect::<Result<Vec<_>>>()?;
        let step_phi = model.transition_matrix(h)?;
        let step_q = model.process_noise_cov(h)?;
        Ok(Self {
            model,
            params,
            horizon,
            optimizer,
            robot_radius,
            start,
            goal,
            interval,
            obstacle_interps,
            step_bridges,
            step_phi,
            step_q,
        })
    }

    pub fn model(&self) -> &Arc<LinearSdeModel> {
        &self.model
    }

    pub fn params(&self) -> &FactorParams {
        &self.params
    }

    pub fn horizon(&self) -> &HorizonConfig {
        &self.horizon
    }

    pub fn interval(&self) -> &GpInterval {
        &self.interval
    }

    pub fn goal(&self) -> &AugmentedState {
        &self.goal
    }

    pub fn start(&self) -> &AugmentedState {
        &self.start
    }

    fn n(&self) -> usize {
        self.model.augmented_dim()
    }

    fn d(&self) -> usize {
        self.model.dim()
    }

    /// Belief at the start of a trial: the known start state with covariance
    /// `σ_fix² I + Q_gp(δt)`.
    pub fn initial_belief(&self) -> Belief {
        let n = self.n();
        let cov = DMatrix::identity(n, n) * self.params.sigma_fix.powi(2) + &self.step_q;
        Belief { mean: self.start.clone(), cov }
    }

    /// Goal covariance scale `σ_g² ‖ξ − ξ_goal‖² / ‖ξ_start − ξ_goal‖²`, floored.
    pub fn goal_variance(&self, xi: &DVector<f64>) -> f64 {
        let denom = (&self.start.values - &self.goal.values).norm_squared();
        let ratio = (xi - &self.goal.values).norm_squared() / denom;
        self.params.sigma_g.powi(2) * ratio.max(GOAL_FLOOR_RATIO)
    }

    /// Covariance of the anchor prior on the first support state: `σ_fix² I` on
    /// the physical state, the belief's control block on the control.
    pub fn anchor_covariance(&self, belief: &Belief) -> DMatrix<f64> {
        let n = self.n();
        let s = 2 * self.d();
        let mut cov = DMatrix::zeros(n, n);
        for k in 0..s {
            cov[(k, k)] = self.params.sigma_fix.powi(2);
        }
        cov.view_mut((s, s), (n - s, n - s)).copy_from(&belief.cov.view((s, s), (n - s, n - s)));
        cov
    }

    fn position_selector(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(2, self.n());
        s[(0, 0)] = 1.0;
        s[(1, 1)] = 1.0;
        s
    }

    /// Factor graph for the horizon starting at the belief time. Goal weights
    /// are evaluated at `linearization` and stay fixed afterwards.
    pub fn build_graph(
        &self,
        belief: &Belief,
        field: Option<Arc<dyn DistanceField>>,
        linearization: &[DVector<f64>],
    ) -> Result<FactorGraph> {
        let n = self.n();
        let num = self.horizon.num_support();
        check_len(belief.mean.values.len(), n, "belief mean")?;
        check_len(linearization.len(), num, "linearization length")?;
        if self.d() != 2 && field.is_some() {
            return Err(PipcError::InvalidArgument("obstacle factors need a planar model".into()));
        }
        let mut graph = FactorGraph::new(num, n);
        let anchor_w = spd_inverse(&self.anchor_covariance(belief), "anchor prior covariance")?;
        graph.add(Factor::prior(FactorKind::Prior, VariableId(0), belief.mean.values.clone(), anchor_w))?;

        let eye = DMatrix::<f64>::identity(n, n);
        for i in 0..num - 1 {
            graph.add(Factor::linear(
                FactorKind::Gp,
                vec![VariableId(i), VariableId(i + 1)],
                vec![self.interval.phi().clone(), -&eye],
                DVector::zeros(n),
                self.interval.q_inv().clone(),
            ))?;
        }

        if let Some(field) = field {
            self.add_obstacle_factors(&mut graph, field)?;
        }

        for (i, xi) in linearization.iter().enumerate().skip(1) {
            let w = eye.clone() / self.goal_variance(xi);
            graph.add(Factor::prior(FactorKind::Goal, VariableId(i), self.goal.values.clone(), w))?;
        }
        Ok(graph)
    }

    fn add_obstacle_factors(&self, graph: &mut FactorGraph, field: Arc<dyn DistanceField>) -> Result<()> {
        let num = graph.num_vars();
        let sel = self.position_selector();
        let obs_w = DMatrix::from_element(1, 1, self.params.sigma_obs.powi(-2));
        for i in 0..num {
            graph.add(Factor {
                kind: FactorKind::Obstacle,
                vars: vec![VariableId(i)],
                weight: obs_w.clone(),
                model: ResidualModel::Hinge {
                    field: field.clone(),
                    selectors: vec![sel.clone()],
                    radius: self.robot_radius,
                    eps: self.params.eps,
                },
            })?;
        }
        let interp_selectors: Vec<[DMatrix<f64>; 2]> = self
            .obstacle_interps
            .iter()
            .map(|ip| [&sel * &ip.lambda, &sel * &ip.psi])
            .collect();
        for i in 0..num - 1 {
            for [sl, sp] in &interp_selectors {
                graph.add(Factor {
                    kind: FactorKind::ObstacleInterpolated,
                    vars: vec![VariableId(i), VariableId(i + 1)],
                    weight: obs_w.clone(),
                    model: ResidualModel::Hinge {
                        field: field.clone(),
                        selectors: vec![sl.clone(), sp.clone()],
                        radius: self.robot_radius,
                        eps: self.params.eps,
                    },
                })?;
            }
        }
        Ok(())
    }

    /// Initial estimate for a horizon starting at `belief.time()`: the previous
    /// posterior shifted forward with a constant-velocity tail, or a
    /// constant-velocity rollout of the belief mean.
    pub fn warm_start(&self, belief: &Belief, previous: Option<&HorizonPosterior>) -> Vec<DVector<f64>> {
        let num = self.horizon.num_support();
        let dt = self.horizon.dt_support;
        let d = self.d();
        let extrapolate = |x: &DVector<f64>| {
            let mut next = x.clone();
            for k in 0..d {
                next[k] = x[k] + dt * x[d + k];
                next[2 * d + k] = 0.0;
            }
            next
        };
        let mut init: Vec<DVector<f64>> = Vec::with_capacity(num);
        if let Some(prev) = previous {
            let shift = ((belief.time() - prev.start_time) / dt).round().max(0.0) as usize;
            for i in 0..num {
                let src = i + shift;
                if src < prev.num_support() {
                    init.push(prev.graph.means[src].clone());
                } else {
                    let last = init.last().cloned().unwrap_or_else(|| belief.mean.values.clone());
                    init.push(extrapolate(&last));
                }
            }
        } else {
            init.push(belief.mean.values.clone());
            let mut cur = belief.mean.values.clone();
            for k in 0..d {
                cur[2 * d + k] = 0.0;
            }
            for _ in 1..num {
                cur = extrapolate(&cur);
                init.push(cur.clone());
            }
        }
        init[0] = belief.mean.values.clone();
        init
    }

    /// Builds and solves the horizon graph from `init`.
    pub fn get_laplace_approx(
        &self,
        belief: &Belief,
        field: Option<Arc<dyn DistanceField>>,
        init: &[DVector<f64>],
        sdf_id: u64,
    ) -> Result<HorizonPosterior> {
        let graph = self.build_graph(belief, field, init)?;
        let post = optimize(&graph, init, &self.optimizer)?;
        if !post.converged() {
            log::debug!(
                "horizon at t={:.2} stopped with {:?} after {} iterations",
                belief.time(),
                post.termination,
                post.iterations
            );
        }
        Ok(HorizonPosterior {
            start_time: belief.time(),
            dt: self.horizon.dt_support,
            graph: post,
            goal: self.goal.clone(),
            sdf_id,
        })
    }

    fn bridge_for(&self, tau_a: f64, tau_b: f64) -> Result<BridgeJoint> {
        let h = self.horizon.dt_step();
        let m = (tau_a / h).round();
        if (tau_a - m * h).abs() < 1e-9 * h && ((tau_b - tau_a) - h).abs() < 1e-9 * h {
            if let Some(b) = self.step_bridges.get(m as usize) {
                return Ok(b.clone());
            }
        }
        self.interval.bridge(tau_a, tau_b)
    }

    /// Posterior marginal of the augmented state at time `t`.
    pub fn marginal_at(&self, posterior: &HorizonPosterior, t: f64) -> Result<Belief> {
        let (i, tau) = posterior.bracket(t)?;
        let n = self.n();
        let ip = self.interval.interpolator(tau)?;
        let mut map = DMatrix::zeros(n, 2 * n);
        map.view_mut((0, 0), (n, n)).copy_from(&ip.lambda);
        map.view_mut((0, n), (n, n)).copy_from(&ip.psi);
        let mean = &map * posterior.pair_mean(i);
        let mut cov = &map * &posterior.graph.pair_covariances[i] * map.transpose() + &ip.conditional_cov;
        symmetrize(&mut cov);
        Ok(Belief { mean: AugmentedState::new(t, mean), cov })
    }

    /// Conditional of `ξ(t + dt_step)` given `ξ(t)` under the horizon posterior.
    pub fn policy_transition(&self, posterior: &HorizonPosterior, t: f64, dt_step: f64) -> Result<PolicyTransition> {
        let (i, tau) = posterior.bracket(t)?;
        let n = self.n();
        let tau_b = tau + dt_step;
        if !(dt_step > 0.0) || tau_b > posterior.dt * (1.0 + 1e-9) {
            return Err(PipcError::TimeOutOfRange { t: t + dt_step, start: t, end: posterior.start_time + (i + 1) as f64 * posterior.dt });
        }
        let bridge = self.bridge_for(tau, tau_b.min(posterior.dt))?;
        let mean = &bridge.map * posterior.pair_mean(i);
        let mut joint = &bridge.map * &posterior.graph.pair_covariances[i] * bridge.map.transpose() + &bridge.cov;
        symmetrize(&mut joint);
        let s_aa = joint.view((0, 0), (n, n)).into_owned();
        let s_ba = joint.view((n, 0), (n, n)).into_owned();
        let s_bb = joint.view((n, n), (n, n)).into_owned();
        let a = &s_ba * pseudo_inverse(&s_aa)?;
        let c = mean.rows(n, n) - &a * mean.rows(0, n);
        let mut sigma = s_bb - &a * s_ba.transpose();
        symmetrize(&mut sigma);
        Ok(PolicyTransition { a, c, sigma })
    }

    fn observation_noise(&self, mode: Observability) -> f64 {
        match mode {
            Observability::Mdp => self.params.sigma_fix.powi(2),
            Observability::Pomdp => self.params.sigma_m.powi(2),
        }
    }

    /// Policy filter step at time `t`. Without a previous belief the filter
    /// starts from the posterior marginal at `t`; otherwise it predicts through
    /// the posterior transition from `prev`. Both are then corrected with `z`.
    /// Returns the belief and the action, the control block of its mean.
    pub fn filter_policy(
        &self,
        z: &DVector<f64>,
        prev: Option<&Belief>,
        posterior: &HorizonPosterior,
        t: f64,
        mode: Observability,
    ) -> Result<(Belief, DVector<f64>)> {
        let predicted = match prev {
            None => self.marginal_at(posterior, t)?,
            Some(p) => {
                let step = t - p.time();
                let tr = self.policy_transition(posterior, p.time(), step)?;
                let mean = &tr.a * &p.mean.values + &tr.c;
                let mut cov = &tr.a * &p.cov * tr.a.transpose() + &tr.sigma;
                symmetrize(&mut cov);
                Belief { mean: AugmentedState::new(t, mean), cov }
            }
        };
        let r = self.observation_noise(mode);
        let belief = correct_block(&predicted, 0, z, r)?;
        let action = belief.control();
        Ok((belief, action))
    }

    /// Control block of the posterior mean at `t`.
    pub fn open_loop_policy(&self, posterior: &HorizonPosterior, t: f64) -> Result<DVector<f64>> {
        let (i, tau) = posterior.bracket(t)?;
        let m = &posterior.graph.means;
        let u = if tau == 0.0 {
            m[i].clone()
        } else if tau == posterior.dt {
            m[i + 1].clone()
        } else {
            let ip = self.interval.interpolator(tau)?;
            &ip.lambda * &m[i] + &ip.psi * &m[i + 1]
        };
        let d = self.d();
        Ok(u.rows(2 * d, d).into_owned())
    }

    /// State-estimation step: correct with the observation `z` of the physical
    /// state and the executed control `u`, then predict one `δt` ahead under the
    /// augmented prior dynamics.
    pub fn filter_state(
        &self,
        z: Option<&DVector<f64>>,
        u: Option<&DVector<f64>>,
        prev: &Belief,
        mode: Observability,
    ) -> Result<Belief> {
        let mut b = prev.clone();
        if let Some(z) = z {
            b = correct_block(&b, 0, z, self.observation_noise(mode))?;
        }
        if let Some(u) = u {
            b = correct_block(&b, 2 * self.d(), u, self.params.sigma_fix.powi(2))?;
        }
        let mean = &self.step_phi * &b.mean.values;
        let mut cov = &self.step_phi * &b.cov * self.step_phi.transpose() + &self.step_q;
        symmetrize(&mut cov);
        check_psd(&cov, "state belief covariance")?;
        Ok(Belief { mean: AugmentedState::new(b.time() + self.horizon.dt_step(), mean), cov })
    }
}

/// Kalman correction with a direct observation of `z.len()` consecutive
/// components starting at `offset`, noise `r · I`.
pub fn correct_block(prior: &Belief, offset: usize, z: &DVector<f64>, r: f64) -> Result<Belief> {
    let n = prior.mean.values.len();
    let k = z.len();
    if offset + k > n {
        return Err(PipcError::DimensionMismatch { expected: n - offset, got: k, context: "observation length" });
    }
    let p = &prior.cov;
    let p_xh = p.columns(offset, k).into_owned();
    let mut s = p.view((offset, offset), (k, k)).into_owned();
    for i in 0..k {
        s[(i, i)] += r;
    }
    symmetrize(&mut s);
    let chol = s
        .clone()
        .cholesky()
        .ok_or(PipcError::Singular { context: "innovation covariance", condition: f64::INFINITY })?;
    // K = P Hᵀ S⁻¹
    let gain = chol.solve(&p_xh.transpose()).transpose();
    let innovation = z - prior.mean.values.rows(offset, k);
    let mean = &prior.mean.values + &gain * innovation;
    // Joseph form: (I − KH) P (I − KH)ᵀ + r K Kᵀ
    let mut i_kh = DMatrix::<f64>::identity(n, n);
    let mut block = i_kh.columns_mut(offset, k);
    block -= &gain;
    let mut cov = &i_kh * p * i_kh.transpose() + &gain * gain.transpose() * r;
    symmetrize(&mut cov);
    if !mean.iter().all(|v| v.is_finite()) {
        return Err(PipcError::NonFinite("filtered mean"));
    }
    check_psd(&cov, "filtered covariance")?;
    Ok(Belief { mean: AugmentedState::new(prior.time(), mean), cov })
}

fn check_psd(m: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(PipcError::NonFinite(context));
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let scale = eig.amax().max(f64::MIN_POSITIVE);
    if eig.min() < -1e-9 * scale {
        return Err(PipcError::Singular { context, condition: eig.min() / scale });
    }
    Ok(())
}

/// Eigen pseudo-inverse of a symmetric PSD matrix.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(PipcError::NonFinite("pseudo-inverse input"));
    }
    let eig = SymmetricEigen::new(m.clone());
    let cutoff = eig.eigenvalues.amax() * 1e-14 * m.nrows() as f64;
    let inv_vals = eig.eigenvalues.map(|l| if l > cutoff { 1.0 / l } else { 0.0 });
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{BoxField, Obstacle};

    fn planner() -> Planner {
        let model = Arc::new(LinearSdeModel::double_integrator(2, 0.01, 10.0, 0.01).unwrap());
        Planner::new(
            model,
            FactorParams::default(),
            HorizonConfig::default(),
            OptimizerConfig::default(),
            0.5,
            AugmentedState::from_parts(0.0, &[2.0, 10.0], &[0.0, 0.0], &[0.0, 0.0]),
            AugmentedState::from_parts(0.0, &[28.0, 10.0], &[0.0, 0.0], &[0.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn factor_counts_for_default_horizon() {
        let p = planner();
        let b = p.initial_belief();
        let init = p.warm_start(&b, None);
        let field: Arc<dyn DistanceField> = Arc::new(BoxField { obstacles: vec![] });
        let g = p.build_graph(&b, Some(field), &init).unwrap();
        assert_eq!(g.num_vars(), 11);
        assert_eq!(g.count(FactorKind::Prior), 1);
        assert_eq!(g.count(FactorKind::Gp), 10);
        assert_eq!(g.count(FactorKind::Obstacle), 11);
        assert_eq!(g.count(FactorKind::ObstacleInterpolated), 200);
        assert_eq!(g.count(FactorKind::Goal), 10);
    }

    #[test]
    fn goal_weights() {
        let p = planner();
        let sg2 = p.params().sigma_g.powi(2);
        assert!((p.goal_variance(&p.start().values) - sg2).abs() < 1e-15);
        assert_eq!(p.goal_variance(&p.goal().values), sg2 * GOAL_FLOOR_RATIO);
    }

    #[test]
    fn goal_equal_start_rejected() {
        let model = Arc::new(LinearSdeModel::double_integrator(2, 0.01, 10.0, 0.01).unwrap());
        let s = AugmentedState::from_parts(0.0, &[1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]);
        let r = Planner::new(
            model,
            FactorParams::default(),
            HorizonConfig::default(),
            OptimizerConfig::default(),
            0.5,
            s.clone(),
            s,
        );
        assert!(matches!(r, Err(PipcError::Config(_))));
    }

    #[test]
    fn uninformative_correction_is_pure_prediction() {
        let b = Belief {
            mean: AugmentedState::from_parts(0.0, &[1.0], &[2.0], &[3.0]),
            cov: DMatrix::identity(3, 3),
        };
        let z = DVector::from_vec(vec![100.0, -100.0]);
        let out = correct_block(&b, 0, &z, 1e18).unwrap();
        assert!((out.mean.values - b.mean.values).amax() < 1e-15);
        assert!((out.cov - b.cov).amax() < 1e-15);
    }

    #[test]
    fn warm_start_shifts_previous_plan() {
        let p = planner();
        let b = p.initial_belief();
        let field: Arc<dyn DistanceField> = Arc::new(BoxField { obstacles: vec![Obstacle::at([15.0, 3.0], 0.5)] });
        let init = p.warm_start(&b, None);
        let post = p.get_laplace_approx(&b, Some(field), &init, 0).unwrap();
        let mut next = b.clone();
        next.mean.time = 0.2;
        next.mean.values = post.graph.means[1].clone();
        let shifted = p.warm_start(&next, Some(&post));
        for i in 0..10 {
            assert_eq!(shifted[i], post.graph.means[i + 1]);
        }
        let last = &post.graph.means[10];
        assert!((shifted[10][0] - (last[0] + 0.2 * last[2])).abs() < 1e-12);
        assert_eq!(shifted[10][4], 0.0);
    }
}
