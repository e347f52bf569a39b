//! Structured Gaussian-process prior over augmented trajectories.
//!
//! The prior is the solution of a linear SDE on the augmented state
//! `ξ = (x, u)` with `x = (p, v)`:
//!
//! ```text
//! dξ = M ξ dt + L dw,   M = [[A, B], [0, D]],   L Lᵀ = diag(F Fᵀ, G Gᵀ)
//! ```
//!
//! Support states are linked by the transition matrix `Φ(Δt) = exp(M Δt)` and
//! the process-noise covariance `Q(Δt) = ∫ Φ(s) L Lᵀ Φ(s)ᵀ ds`. When `M` is
//! nilpotent (the double integrator with a Brownian control) both are finite
//! polynomials in `Δt` and are evaluated exactly; otherwise the matrix
//! exponential and Gauss–Legendre quadrature are used.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, DVectorView, SymmetricEigen};

use crate::error::{PipcError, Result};

/// Largest admissible condition estimate for `Q(Δt)` before it is reported singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Linear SDE model of the system state and its Gaussian-process control prior.
///
/// Ordering of every augmented vector is `(p, v, u)`, each block of length `d`.
/// Drift biases (`b`, `η`) and the control bias are fixed at zero.
#[derive(Debug, Clone)]
pub struct LinearSdeModel {
    dim: usize,
    state_drift: DMatrix<f64>,
    input: DMatrix<f64>,
    control_drift: DMatrix<f64>,
    state_diffusion: DMatrix<f64>,
    control_diffusion: DMatrix<f64>,
    observation: DMatrix<f64>,
    observation_noise: DMatrix<f64>,
    augmented: Propagator,
    state_only: Propagator,
}

/// Closed-form or numeric evaluator of `exp(M t)` and `∫ exp(M s) Qc exp(M s)ᵀ ds`.
#[derive(Debug, Clone)]
struct Propagator {
    drift: DMatrix<f64>,
    diffusion: DMatrix<f64>,
    /// `M^0 .. M^{k-1}` when `M^k = 0`.
    nilpotent_powers: Option<Vec<DMatrix<f64>>>,
}

impl Propagator {
    fn new(drift: DMatrix<f64>, diffusion: DMatrix<f64>) -> Self {
        let n = drift.nrows();
        let mut powers = vec![DMatrix::identity(n, n)];
        let mut nilpotent = false;
        for _ in 0..n {
            let next = powers.last().unwrap() * &drift;
            if next.iter().all(|v| *v == 0.0) {
                nilpotent = true;
                break;
            }
            powers.push(next);
        }
        Self {
            drift,
            diffusion,
            nilpotent_powers: nilpotent.then_some(powers),
        }
    }

    fn transition(&self, dt: f64) -> Result<DMatrix<f64>> {
        match &self.nilpotent_powers {
            Some(powers) => {
                let n = self.drift.nrows();
                let mut phi = DMatrix::zeros(n, n);
                let mut coeff = 1.0;
                for (j, p) in powers.iter().enumerate() {
                    if j > 0 {
                        coeff *= dt / j as f64;
                    }
                    phi += p * coeff;
                }
                Ok(phi)
            }
            None => {
                let phi = (&self.drift * dt).exp();
                if phi.iter().all(|v| v.is_finite()) {
                    Ok(phi)
                } else {
                    Err(PipcError::ExpmDiverged)
                }
            }
        }
    }

    fn noise(&self, dt: f64) -> Result<DMatrix<f64>> {
        let n = self.drift.nrows();
        if dt == 0.0 {
            return Ok(DMatrix::zeros(n, n));
        }
        let mut q = match &self.nilpotent_powers {
            Some(powers) => {
                let mut q = DMatrix::zeros(n, n);
                let fact = |k: usize| (1..=k).map(|i| i as f64).product::<f64>();
                for (j, mj) in powers.iter().enumerate() {
                    let left = mj * &self.diffusion;
                    for (l, ml) in powers.iter().enumerate() {
                        let e = (j + l + 1) as i32;
                        let c = dt.powi(e) / (fact(j) * fact(l) * e as f64);
                        q += &left * ml.transpose() * c;
                    }
                }
                q
            }
            None => self.noise_quadrature(dt)?,
        };
        symmetrize(&mut q);
        Ok(q)
    }

    /// Composite 5-point Gauss–Legendre rule over `[0, dt]`.
    fn noise_quadrature(&self, dt: f64) -> Result<DMatrix<f64>> {
        const NODES: [f64; 5] = [
            0.0,
            -0.538_469_310_105_683_1,
            0.538_469_310_105_683_1,
            -0.906_179_845_938_664,
            0.906_179_845_938_664,
        ];
        const WEIGHTS: [f64; 5] = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
            0.236_926_885_056_189_1,
        ];
        const PANELS: usize = 32;
        let n = self.drift.nrows();
        let h = dt / PANELS as f64;
        let mut q = DMatrix::zeros(n, n);
        for panel in 0..PANELS {
            let mid = (panel as f64 + 0.5) * h;
            for (x, w) in NODES.iter().zip(WEIGHTS) {
                let phi = self.transition(mid + 0.5 * h * x)?;
                q += &phi * &self.diffusion * phi.transpose() * (0.5 * h * w);
            }
        }
        Ok(q)
    }
}

impl LinearSdeModel {
    /// General constructor. `a`: 2d×2d, `b`: 2d×d, `control_drift`: d×d,
    /// `state_diffusion` (FFᵀ): 2d×2d, `control_diffusion` (GGᵀ): d×d,
    /// `observation` (C): m×2d, `observation_noise` (Q_v): m×m.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        control_drift: DMatrix<f64>,
        state_diffusion: DMatrix<f64>,
        control_diffusion: DMatrix<f64>,
        observation: DMatrix<f64>,
        observation_noise: DMatrix<f64>,
    ) -> Result<Self> {
        let d = control_drift.nrows();
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(PipcError::InvalidArgument(format!("inconsistent {what} shape")))
            }
        };
        check(control_drift.is_square(), "control drift")?;
        check(a.shape() == (2 * d, 2 * d), "state drift")?;
        check(b.shape() == (2 * d, d), "input matrix")?;
        check(state_diffusion.shape() == (2 * d, 2 * d), "state diffusion")?;
        check(control_diffusion.shape() == (d, d), "control diffusion")?;
        check(observation.ncols() == 2 * d, "observation matrix")?;
        let m = observation.nrows();
        check(observation_noise.shape() == (m, m), "observation noise")?;
        if observation_noise.clone().cholesky().is_none() {
            return Err(PipcError::InvalidArgument(
                "observation noise must be positive definite".into(),
            ));
        }

        let n = 3 * d;
        let mut drift = DMatrix::zeros(n, n);
        drift.view_mut((0, 0), (2 * d, 2 * d)).copy_from(&a);
        drift.view_mut((0, 2 * d), (2 * d, d)).copy_from(&b);
        drift.view_mut((2 * d, 2 * d), (d, d)).copy_from(&control_drift);
        let mut diffusion = DMatrix::zeros(n, n);
        diffusion.view_mut((0, 0), (2 * d, 2 * d)).copy_from(&state_diffusion);
        diffusion.view_mut((2 * d, 2 * d), (d, d)).copy_from(&control_diffusion);

        // Zero-order-hold discretization of the state: control constant, no control noise.
        let mut zoh_drift = drift.clone();
        zoh_drift.view_mut((2 * d, 2 * d), (d, d)).fill(0.0);
        let mut zoh_diffusion = diffusion.clone();
        zoh_diffusion.view_mut((2 * d, 2 * d), (d, d)).fill(0.0);

        Ok(Self {
            dim: d,
            state_drift: a,
            input: b,
            control_drift,
            state_diffusion,
            control_diffusion,
            observation,
            observation_noise,
            augmented: Propagator::new(drift, diffusion),
            state_only: Propagator::new(zoh_drift, zoh_diffusion),
        })
    }

    /// Double integrator `ṗ = v, v̇ = u + noise` with a Brownian control prior:
    /// `FFᵀ = diag(0, q_x I)`, `GGᵀ = q_u I`, `Q_v = σ_m² I`.
    pub fn double_integrator(d: usize, q_x: f64, q_u: f64, sigma_m: f64) -> Result<Self> {
        if d == 0 {
            return Err(PipcError::InvalidArgument("workspace dimension must be positive".into()));
        }
        if q_x < 0.0 || q_u < 0.0 || sigma_m <= 0.0 {
            return Err(PipcError::InvalidArgument(
                "noise intensities must be non-negative and sigma_m positive".into(),
            ));
        }
        let eye = DMatrix::<f64>::identity(d, d);
        let mut a = DMatrix::zeros(2 * d, 2 * d);
        a.view_mut((0, d), (d, d)).copy_from(&eye);
        let mut b = DMatrix::zeros(2 * d, d);
        b.view_mut((d, 0), (d, d)).copy_from(&eye);
        let mut f_sq = DMatrix::zeros(2 * d, 2 * d);
        f_sq.view_mut((d, d), (d, d)).copy_from(&(&eye * q_x));
        Self::new(
            a,
            b,
            DMatrix::zeros(d, d),
            f_sq,
            &eye * q_u,
            DMatrix::identity(2 * d, 2 * d),
            DMatrix::identity(2 * d, 2 * d) * (sigma_m * sigma_m),
        )
    }

    /// Workspace dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state_dim(&self) -> usize {
        2 * self.dim
    }

    pub fn augmented_dim(&self) -> usize {
        3 * self.dim
    }

    pub fn state_drift(&self) -> &DMatrix<f64> {
        &self.state_drift
    }

    pub fn input_matrix(&self) -> &DMatrix<f64> {
        &self.input
    }

    pub fn control_drift(&self) -> &DMatrix<f64> {
        &self.control_drift
    }

    pub fn state_diffusion(&self) -> &DMatrix<f64> {
        &self.state_diffusion
    }

    pub fn control_diffusion(&self) -> &DMatrix<f64> {
        &self.control_diffusion
    }

    pub fn observation_matrix(&self) -> &DMatrix<f64> {
        &self.observation
    }

    pub fn observation_noise(&self) -> &DMatrix<f64> {
        &self.observation_noise
    }

    /// Augmented drift `[[A, B], [0, D]]`.
    pub fn augmented_drift(&self) -> &DMatrix<f64> {
        &self.augmented.drift
    }

    /// Augmented diffusion `diag(FFᵀ, GGᵀ)`.
    pub fn augmented_diffusion(&self) -> &DMatrix<f64> {
        &self.augmented.diffusion
    }

    /// True when the augmented drift is nilpotent and closed forms are used.
    pub fn is_nilpotent(&self) -> bool {
        self.augmented.nilpotent_powers.is_some()
    }

    /// `Φ_ξ(dt) = exp(M dt)`.
    pub fn transition_matrix(&self, dt: f64) -> Result<DMatrix<f64>> {
        if !(dt >= 0.0) {
            return Err(PipcError::InvalidArgument(format!("dt must be >= 0, got {dt}")));
        }
        self.augmented.transition(dt)
    }

    /// `Q_gp(dt) = ∫₀^dt Φ(s) L Lᵀ Φ(s)ᵀ ds`.
    pub fn process_noise_cov(&self, dt: f64) -> Result<DMatrix<f64>> {
        if !(dt >= 0.0) {
            return Err(PipcError::InvalidArgument(format!("dt must be >= 0, got {dt}")));
        }
        self.augmented.noise(dt)
    }

    /// Zero-order-hold discretization of the physical state over `dt`:
    /// `x' = Φ_x x + Γ u + w`, `w ~ N(0, Q_d)`. Returns `(Φ_x, Γ, Q_d)`.
    pub fn state_discretization(
        &self,
        dt: f64,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let n = self.state_dim();
        let d = self.dim;
        let phi = self.state_only.transition(dt)?;
        let q = self.state_only.noise(dt)?;
        Ok((
            phi.view((0, 0), (n, n)).into_owned(),
            phi.view((0, n), (n, d)).into_owned(),
            q.view((0, 0), (n, n)).into_owned(),
        ))
    }
}

/// Augmented state `ξ = (p, v, u)` at a time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub time: f64,
    pub values: DVector<f64>,
}

impl AugmentedState {
    pub fn new(time: f64, values: DVector<f64>) -> Self {
        assert!(values.len().is_multiple_of(3), "augmented state length must be a multiple of 3");
        Self { time, values }
    }

    pub fn from_parts(time: f64, position: &[f64], velocity: &[f64], control: &[f64]) -> Self {
        assert!(position.len() == velocity.len() && velocity.len() == control.len());
        let values = DVector::from_iterator(
            3 * position.len(),
            position.iter().chain(velocity).chain(control).copied(),
        );
        Self { time, values }
    }

    pub fn zeros(time: f64, d: usize) -> Self {
        Self { time, values: DVector::zeros(3 * d) }
    }

    pub fn dim(&self) -> usize {
        self.values.len() / 3
    }

    pub fn position(&self) -> DVectorView<'_, f64> {
        let d = self.dim();
        self.values.rows(0, d)
    }

    pub fn velocity(&self) -> DVectorView<'_, f64> {
        let d = self.dim();
        self.values.rows(d, d)
    }

    pub fn control(&self) -> DVectorView<'_, f64> {
        let d = self.dim();
        self.values.rows(2 * d, d)
    }

    /// Physical state `x = (p, v)`.
    pub fn state(&self) -> DVectorView<'_, f64> {
        let d = self.dim();
        self.values.rows(0, 2 * d)
    }
}

/// One support interval of the GP prior: `Φ(Δt)`, `Q(Δt)` and `Q(Δt)⁻¹`.
#[derive(Debug, Clone)]
pub struct GpInterval {
    model: Arc<LinearSdeModel>,
    dt: f64,
    phi: DMatrix<f64>,
    q: DMatrix<f64>,
    q_inv: DMatrix<f64>,
}

/// GP posterior-mean interpolation operators at an offset `τ` inside an interval.
#[derive(Debug, Clone)]
pub struct Interpolator {
    pub tau: f64,
    /// `Λ(τ) = Φ(τ) − Ψ(τ) Φ(Δt)`
    pub lambda: DMatrix<f64>,
    /// `Ψ(τ) = Q(τ) Φ(Δt − τ)ᵀ Q(Δt)⁻¹`
    pub psi: DMatrix<f64>,
    /// Covariance of `ξ(τ)` given both endpoints.
    pub conditional_cov: DMatrix<f64>,
}

/// Joint conditional of two interior states given the interval endpoints:
/// `(ξ(τa), ξ(τb)) | ξ_i, ξ_j ~ N(map · [ξ_i; ξ_j], cov)`.
#[derive(Debug, Clone)]
pub struct BridgeJoint {
    pub map: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

/// Weighted residual `r` with information matrix `W`; the cost is `½ rᵀ W r`.
#[derive(Debug, Clone)]
pub struct WeightedResidual {
    pub residual: DVector<f64>,
    pub weight: DMatrix<f64>,
}

impl WeightedResidual {
    pub fn cost(&self) -> f64 {
        0.5 * self.residual.dot(&(&self.weight * &self.residual))
    }
}

impl GpInterval {
    pub fn new(model: Arc<LinearSdeModel>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(PipcError::InvalidArgument(format!("interval dt must be > 0, got {dt}")));
        }
        let phi = model.transition_matrix(dt)?;
        let q = model.process_noise_cov(dt)?;
        let q_inv = spd_inverse(&q, "process noise covariance")?;
        Ok(Self { model, dt, phi, q, q_inv })
    }

    pub fn model(&self) -> &Arc<LinearSdeModel> {
        &self.model
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn q_inv(&self) -> &DMatrix<f64> {
        &self.q_inv
    }

    pub fn interpolator(&self, tau: f64) -> Result<Interpolator> {
        self.check_tau(tau)?;
        let phi_tau = self.model.transition_matrix(tau)?;
        let q_tau = self.model.process_noise_cov(tau)?;
        let phi_rest = self.model.transition_matrix(self.dt - tau)?;
        let psi = &q_tau * phi_rest.transpose() * &self.q_inv;
        let lambda = &phi_tau - &psi * &self.phi;
        let mut conditional_cov = &q_tau - &psi * &phi_rest * &q_tau;
        symmetrize(&mut conditional_cov);
        Ok(Interpolator { tau, lambda, psi, conditional_cov })
    }

    /// Joint conditional of `(ξ(τa), ξ(τb))` given the endpoints of the interval.
    pub fn bridge(&self, tau_a: f64, tau_b: f64) -> Result<BridgeJoint> {
        self.check_tau(tau_a)?;
        self.check_tau(tau_b)?;
        let n = self.phi.nrows();
        let (lo, hi, swapped) = if tau_a <= tau_b {
            (tau_a, tau_b, false)
        } else {
            (tau_b, tau_a, true)
        };
        let m = &self.model;
        let q_lo = m.process_noise_cov(lo)?;
        let q_hi = m.process_noise_cov(hi)?;
        let cross = m.transition_matrix(hi - lo)? * &q_lo; // Cov(ξ_hi, ξ_lo)
        let end_lo = m.transition_matrix(self.dt - lo)? * &q_lo; // Cov(ξ_j, ξ_lo)
        let end_hi = m.transition_matrix(self.dt - hi)? * &q_hi; // Cov(ξ_j, ξ_hi)

        let mut prior = DMatrix::zeros(2 * n, 2 * n);
        prior.view_mut((0, 0), (n, n)).copy_from(&q_lo);
        prior.view_mut((n, n), (n, n)).copy_from(&q_hi);
        prior.view_mut((n, 0), (n, n)).copy_from(&cross);
        prior.view_mut((0, n), (n, n)).copy_from(&cross.transpose());
        let mut with_end = DMatrix::zeros(2 * n, n);
        with_end.view_mut((0, 0), (n, n)).copy_from(&end_lo.transpose());
        with_end.view_mut((n, 0), (n, n)).copy_from(&end_hi.transpose());

        let psi = &with_end * &self.q_inv; // rows: Ψ(lo), Ψ(hi)
        let mut cov = prior - &psi * with_end.transpose();
        symmetrize(&mut cov);

        let mut map = DMatrix::zeros(2 * n, 2 * n);
        let phis = [m.transition_matrix(lo)?, m.transition_matrix(hi)?];
        for (k, phi_k) in phis.iter().enumerate() {
            let psi_k = psi.view((k * n, 0), (n, n));
            let lambda_k = phi_k - psi_k * &self.phi;
            map.view_mut((k * n, 0), (n, n)).copy_from(&lambda_k);
            map.view_mut((k * n, n), (n, n)).copy_from(&psi_k);
        }
        if swapped {
            map = swap_blocks_rows(&map, n);
            let tmp = swap_blocks_rows(&cov, n);
            cov = swap_blocks_rows(&tmp.transpose(), n).transpose();
        }
        Ok(BridgeJoint { map, cov })
    }

    fn check_tau(&self, tau: f64) -> Result<()> {
        if tau.is_finite() && (0.0..=self.dt).contains(&tau) {
            Ok(())
        } else {
            Err(PipcError::TimeOutOfRange { t: tau, start: 0.0, end: self.dt })
        }
    }
}

/// Pairwise GP prior factor: `r = Φ ξ_i − ξ_j`, weight `Q⁻¹`.
pub fn gp_prior_residual(
    interval: &GpInterval,
    xi_i: &AugmentedState,
    xi_j: &AugmentedState,
) -> Result<WeightedResidual> {
    let n = interval.phi.nrows();
    check_len(xi_i.values.len(), n, "gp_prior_residual ξ_i")?;
    check_len(xi_j.values.len(), n, "gp_prior_residual ξ_j")?;
    let gap = xi_j.time - xi_i.time;
    if (gap - interval.dt).abs() > 1e-9 * interval.dt.max(1.0) {
        return Err(PipcError::InvalidArgument(format!(
            "state times differ by {gap}, interval is {}",
            interval.dt
        )));
    }
    Ok(WeightedResidual {
        residual: &interval.phi * &xi_i.values - &xi_j.values,
        weight: interval.q_inv.clone(),
    })
}

/// GP posterior-mean interpolation at `xi_i.time + tau`.
/// Returns the interpolated state with its jacobians `(Λ(τ), Ψ(τ))`.
pub fn gp_interpolate(
    interval: &GpInterval,
    xi_i: &AugmentedState,
    xi_j: &AugmentedState,
    tau: f64,
) -> Result<(AugmentedState, DMatrix<f64>, DMatrix<f64>)> {
    let n = interval.phi.nrows();
    check_len(xi_i.values.len(), n, "gp_interpolate ξ_i")?;
    check_len(xi_j.values.len(), n, "gp_interpolate ξ_j")?;
    let interp = interval.interpolator(tau)?;
    let values = &interp.lambda * &xi_i.values + &interp.psi * &xi_j.values;
    Ok((
        AugmentedState::new(xi_i.time + tau, values),
        interp.lambda,
        interp.psi,
    ))
}

pub(crate) fn check_len(got: usize, expected: usize, context: &'static str) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(PipcError::DimensionMismatch { expected, got, context })
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Inverse of a symmetric positive-definite matrix, rejecting condition
/// estimates above [`MAX_CONDITION`].
pub fn spd_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(PipcError::NonFinite(context));
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(PipcError::Singular { context, condition });
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or(PipcError::Singular { context, condition })?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

fn swap_blocks_rows(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut out = m.clone();
    out.rows_mut(0, n).copy_from(&m.rows(n, n));
    out.rows_mut(n, n).copy_from(&m.rows(0, n));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model1() -> Arc<LinearSdeModel> {
        Arc::new(LinearSdeModel::double_integrator(1, 0.04, 10.0, 0.01).unwrap())
    }

    #[test]
    fn transition_at_zero_is_identity() {
        let m = model1();
        assert_eq!(m.transition_matrix(0.0).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn transition_closed_form_d1() {
        let phi = model1().transition_matrix(0.2).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.02, 0.0, 1.0, 0.2, 0.0, 0.0, 1.0]);
        assert!((phi - expected).amax() < 1e-15);
    }

    #[test]
    fn semigroup() {
        let m = LinearSdeModel::double_integrator(2, 0.01, 10.0, 0.01).unwrap();
        let a = m.transition_matrix(0.1).unwrap();
        let b = m.transition_matrix(0.2).unwrap();
        assert!((&a * &a - b).amax() < 1e-12);
    }

    #[test]
    fn noise_zero_without_diffusion() {
        let m = LinearSdeModel::double_integrator(2, 0.0, 0.0, 0.01).unwrap();
        assert_eq!(m.process_noise_cov(0.3).unwrap().amax(), 0.0);
    }

    #[test]
    fn noise_is_exactly_symmetric() {
        let m = LinearSdeModel::double_integrator(2, 0.07, 10.0, 0.01).unwrap();
        for dt in [0.01, 0.2, 1.7] {
            let q = m.process_noise_cov(dt).unwrap();
            assert_eq!((&q - q.transpose()).amax(), 0.0);
        }
    }

    #[test]
    fn degenerate_hyperparameters_are_reported() {
        let m = Arc::new(LinearSdeModel::double_integrator(1, 0.0, 0.0, 0.01).unwrap());
        assert!(matches!(GpInterval::new(m, 0.2), Err(PipcError::Singular { .. })));
    }

    #[test]
    fn residual_zero_on_noise_free_propagation() {
        let iv = GpInterval::new(model1(), 0.2).unwrap();
        let xi = AugmentedState::from_parts(0.0, &[0.3], &[-1.0], &[2.0]);
        let xj = AugmentedState::new(0.2, iv.phi() * &xi.values);
        let r = gp_prior_residual(&iv, &xi, &xj).unwrap();
        assert!(r.residual.amax() < 1e-15);
        assert!(r.cost() < 1e-20);
    }

    #[test]
    fn residual_is_linear() {
        let iv = GpInterval::new(model1(), 0.2).unwrap();
        let xi = AugmentedState::zeros(0.0, 1);
        let xj = AugmentedState::from_parts(0.2, &[1.0], &[0.0], &[0.0]);
        let r = gp_prior_residual(&iv, &xi, &xj).unwrap();
        assert_eq!(r.residual, DVector::from_vec(vec![-1.0, 0.0, 0.0]));
    }

    #[test]
    fn residual_rejects_bad_inputs() {
        let iv = GpInterval::new(model1(), 0.2).unwrap();
        let xi = AugmentedState::zeros(0.0, 1);
        let wrong_dim = AugmentedState::zeros(0.2, 2);
        assert!(matches!(
            gp_prior_residual(&iv, &xi, &wrong_dim),
            Err(PipcError::DimensionMismatch { .. })
        ));
        let wrong_time = AugmentedState::zeros(0.3, 1);
        assert!(gp_prior_residual(&iv, &xi, &wrong_time).is_err());
    }

    #[test]
    fn interpolation_endpoints() {
        let iv = GpInterval::new(model1(), 0.2).unwrap();
        let xi = AugmentedState::from_parts(0.0, &[0.3], &[-1.0], &[2.0]);
        let xj = AugmentedState::from_parts(0.2, &[0.1], &[0.5], &[-2.0]);
        let (s0, l0, p0) = gp_interpolate(&iv, &xi, &xj, 0.0).unwrap();
        assert_eq!(s0.values, xi.values);
        assert_eq!(l0, DMatrix::identity(3, 3));
        assert_eq!(p0.amax(), 0.0);
        let (s1, l1, p1) = gp_interpolate(&iv, &xi, &xj, 0.2).unwrap();
        assert!((s1.values - &xj.values).amax() < 1e-9);
        assert!(l1.amax() < 1e-9);
        assert!((p1 - DMatrix::<f64>::identity(3, 3)).amax() < 1e-9);
        assert!(gp_interpolate(&iv, &xi, &xj, 0.25).is_err());
        assert!(gp_interpolate(&iv, &xi, &xj, -0.01).is_err());
    }

    #[test]
    fn bridge_diagonal_blocks_match_interpolator() {
        let iv = GpInterval::new(model1(), 0.2).unwrap();
        let b = iv.bridge(0.05, 0.12).unwrap();
        let ia = iv.interpolator(0.05).unwrap();
        let ib = iv.interpolator(0.12).unwrap();
        assert!((b.cov.view((0, 0), (3, 3)) - &ia.conditional_cov).amax() < 1e-12);
        assert!((b.cov.view((3, 3), (3, 3)) - &ib.conditional_cov).amax() < 1e-12);
        assert!((b.map.view((3, 0), (3, 3)) - &ib.lambda).amax() < 1e-12);
        let swapped = iv.bridge(0.12, 0.05).unwrap();
        assert!((swapped.cov.view((0, 3), (3, 3)) - b.cov.view((3, 0), (3, 3))).amax() < 1e-15);
        assert!((swapped.map.view((0, 0), (3, 6)) - b.map.view((3, 0), (3, 6))).amax() < 1e-15);
    }

    #[test]
    fn general_drift_uses_numeric_path() {
        // Damped velocity: not nilpotent.
        let mut m = LinearSdeModel::double_integrator(1, 0.1, 1.0, 0.1).unwrap();
        let mut a = m.state_drift().clone();
        a[(1, 1)] = -0.5;
        m = LinearSdeModel::new(
            a,
            m.input_matrix().clone(),
            m.control_drift().clone(),
            m.state_diffusion().clone(),
            m.control_diffusion().clone(),
            m.observation_matrix().clone(),
            m.observation_noise().clone(),
        )
        .unwrap();
        assert!(!m.is_nilpotent());
        let a = m.transition_matrix(0.3).unwrap();
        let b = m.transition_matrix(0.6).unwrap();
        assert!((&a * &a - b).amax() < 1e-12);
        let q = m.process_noise_cov(0.3).unwrap();
        assert!(q.clone().cholesky().is_some());
    }

    #[test]
    fn zoh_discretization_d1() {
        let m = LinearSdeModel::double_integrator(1, 0.0, 10.0, 0.01).unwrap();
        let (phi, gamma, q) = m.state_discretization(0.01).unwrap();
        assert!((phi - DMatrix::from_row_slice(2, 2, &[1.0, 0.01, 0.0, 1.0])).amax() < 1e-15);
        assert!((gamma - DMatrix::from_row_slice(2, 1, &[5e-5, 0.01])).amax() < 1e-15);
        assert_eq!(q.amax(), 0.0);
    }
}
