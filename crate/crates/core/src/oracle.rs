//! Brute-force reference computations: dense Gaussian conditioning, dense
//! normal equations, series matrix exponential and Simpson quadrature. They
//! share no code with the structured solvers they check, and back both the
//! test suites and the `selftest` command.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::factor_graph::{optimize, solve_banded, BlockTridiagonal, FactorGraph, OptimizerConfig};
use crate::gp_model::{AugmentedState, LinearSdeModel};
use crate::planner::{FactorParams, HorizonConfig, Observability, Planner};

/// Simpson panels for the transition covariances of the dense references.
const QUADRATURE_PANELS: usize = 512;

/// `exp(m)` by a Taylor series with scaling and squaring.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = m.abs().row_sum().max();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scaled = m / 2f64.powi(squarings as i32);
    let n = m.nrows();
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Composite Simpson rule for a matrix-valued integrand.
pub fn simpson<F: Fn(f64) -> DMatrix<f64>>(f: F, a: f64, b: f64, panels: usize) -> DMatrix<f64> {
    let panels = panels.max(1) * 2;
    let h = (b - a) / panels as f64;
    let mut acc = f(a) + f(b);
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(a + k as f64 * h) * w;
    }
    acc * (h / 3.0)
}

/// Process noise covariance `∫₀^dt e^{Ms} L Lᵀ e^{Mᵀs} ds` by quadrature.
pub fn process_noise_quadrature(model: &LinearSdeModel, dt: f64, panels: usize) -> DMatrix<f64> {
    let m = model.augmented_drift().clone();
    let l = model.augmented_diffusion().clone();
    simpson(
        |s| {
            let phi = expm(&(&m * s));
            &phi * &l * phi.transpose()
        },
        0.0,
        dt,
        panels,
    )
}

/// Joint covariance of GP states at increasing `times`, with `k0` the
/// covariance at the first time.
pub fn gp_joint_cov(model: &LinearSdeModel, times: &[f64], k0: &DMatrix<f64>) -> DMatrix<f64> {
    let n = model.augmented_dim();
    let m = model.augmented_drift().clone();
    let l = model.augmented_diffusion().clone();
    let k = times.len();
    let mut marg: Vec<DMatrix<f64>> = Vec::with_capacity(k);
    marg.push(k0.clone());
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        let phi = expm(&(&m * dt));
        let q = if dt > 0.0 {
            simpson(
                |s| {
                    let p = expm(&(&m * s));
                    &p * &l * p.transpose()
                },
                0.0,
                dt,
                QUADRATURE_PANELS,
            )
        } else {
            DMatrix::zeros(n, n)
        };
        let prev = marg.last().unwrap();
        marg.push(&phi * prev * phi.transpose() + q);
    }
    let mut cov = DMatrix::zeros(n * k, n * k);
    for a in 0..k {
        for b in a..k {
            // Cov(ξ_b, ξ_a) = Φ(t_b − t_a) K(t_a)
            let block = expm(&(&m * (times[b] - times[a]))) * &marg[a];
            cov.view_mut((b * n, a * n), (n, n)).copy_from(&block);
            cov.view_mut((a * n, b * n), (n, n)).copy_from(&block.transpose());
        }
    }
    cov
}

/// `s_xo s_oo⁻¹`, with `s_oo` rescaled to unit diagonal before factoring;
/// GP covariances mix scales over many orders of magnitude.
fn gain(s_xo: &DMatrix<f64>, s_oo: &DMatrix<f64>) -> DMatrix<f64> {
    let scale = DVector::from_iterator(s_oo.nrows(), s_oo.diagonal().iter().map(|v| 1.0 / v.sqrt()));
    let unit = DMatrix::from_fn(s_oo.nrows(), s_oo.ncols(), |i, j| s_oo[(i, j)] * scale[i] * scale[j]);
    let chol = unit.cholesky().expect("conditioning block positive definite");
    let mut rhs = s_xo.transpose();
    for (i, mut row) in rhs.row_iter_mut().enumerate() {
        row *= scale[i];
    }
    let mut g = chol.solve(&rhs);
    for (i, mut row) in g.row_iter_mut().enumerate() {
        row *= scale[i];
    }
    g.transpose()
}

/// Conditions `N(mean, cov)` on `x[observed] = values`; returns the mean and
/// covariance of the remaining coordinates in index order.
pub fn condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    observed: &[usize],
    values: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let free: Vec<usize> = (0..mean.len()).filter(|i| !observed.contains(i)).collect();
    let s_ff = cov.select_rows(&free).select_columns(&free);
    let s_fo = cov.select_rows(&free).select_columns(observed);
    let s_oo = cov.select_rows(observed).select_columns(observed);
    let gain = gain(&s_fo, &s_oo);
    let m = mean.select_rows(&free) + &gain * (values - mean.select_rows(observed));
    let c = s_ff - &gain * s_fo.transpose();
    (m, c)
}

/// Linear-Gaussian regression of `x[b]` on `x[a]`: `(A, c, Σ)` with
/// `x_b | x_a ~ N(A x_a + c, Σ)`.
pub fn regression(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    a: &[usize],
    b: &[usize],
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let s_aa = cov.select_rows(a).select_columns(a);
    let s_ba = cov.select_rows(b).select_columns(a);
    let s_bb = cov.select_rows(b).select_columns(b);
    let gain = gain(&s_ba, &s_aa);
    let c = mean.select_rows(b) - &gain * mean.select_rows(a);
    let sigma = s_bb - &gain * s_ba.transpose();
    (gain, c, sigma)
}

/// Dense `JᵀWJ`, `JᵀWr` and cost of a factor graph at `estimate`.
pub fn dense_normal_equations(
    graph: &FactorGraph,
    estimate: &[DVector<f64>],
) -> (DMatrix<f64>, DVector<f64>, f64) {
    let n = graph.var_dim();
    let dim = n * graph.num_vars();
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    let mut cost = 0.0;
    for f in graph.factors() {
        let states: Vec<&DVector<f64>> = f.vars.iter().map(|v| &estimate[v.0]).collect();
        let lin = f.linearize(&states).expect("finite linearization");
        let k = lin.residual.len();
        let mut j = DMatrix::zeros(k, dim);
        for (jac, v) in lin.jacobians.iter().zip(&f.vars) {
            j.view_mut((0, v.0 * n), (k, n)).copy_from(jac);
        }
        h += j.transpose() * &f.weight * &j;
        g += j.transpose() * &f.weight * &lin.residual;
        cost += 0.5 * lin.residual.dot(&(&f.weight * &lin.residual));
    }
    (h, g, cost)
}

/// Central finite-difference jacobian.
pub fn finite_difference<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    for c in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[c] += h;
        xm[c] -= h;
        jac.set_column(c, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    jac
}

/// Unary linear-Gaussian evidence `r = H ξ_k − z` with information `W`.
#[derive(Debug, Clone)]
pub struct UnaryEvidence {
    pub index: usize,
    pub h: DMatrix<f64>,
    pub z: DVector<f64>,
    pub w: DMatrix<f64>,
}

/// Dense posterior over states of the GP at `times` (increasing), built from
/// the transition densities between consecutive times and unary evidence.
/// The first state has no prior beyond its evidence.
pub fn chain_posterior(
    model: &LinearSdeModel,
    times: &[f64],
    evidence: &[UnaryEvidence],
) -> (DVector<f64>, DMatrix<f64>) {
    let n = model.augmented_dim();
    let dim = n * times.len();
    let m = model.augmented_drift().clone();
    let l = model.augmented_diffusion().clone();
    let mut info = DMatrix::zeros(dim, dim);
    let mut vec = DVector::zeros(dim);
    for (k, w) in times.windows(2).enumerate() {
        let dt = w[1] - w[0];
        let phi = expm(&(&m * dt));
        let q = simpson(
            |s| {
                let p = expm(&(&m * s));
                &p * &l * p.transpose()
            },
            0.0,
            dt,
            QUADRATURE_PANELS,
        );
        let qi = q.try_inverse().expect("transition covariance invertible");
        let mut j = DMatrix::zeros(n, dim);
        j.view_mut((0, k * n), (n, n)).copy_from(&phi);
        j.view_mut((0, (k + 1) * n), (n, n)).copy_from(&(-DMatrix::<f64>::identity(n, n)));
        info += j.transpose() * &qi * &j;
    }
    for e in evidence {
        let mut j = DMatrix::zeros(e.h.nrows(), dim);
        j.view_mut((0, e.index * n), (e.h.nrows(), n)).copy_from(&e.h);
        info += j.transpose() * &e.w * &j;
        vec += j.transpose() * &e.w * &e.z;
    }
    let cov = info.try_inverse().expect("posterior information invertible");
    let mean = &cov * vec;
    (mean, cov)
}

/// Outcome of one reference check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, error: f64, tol: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: error <= tol,
        detail: format!("max error {error:.3e} (tolerance {tol:.0e})"),
    }
}

/// Relative max-abs difference `|a − b|∞ / max(|b|∞, floor)`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).amax() / b.amax().max(floor)
}

/// Closed-form process noise against Simpson quadrature.
pub fn check_quadrature() -> CheckOutcome {
    let model = LinearSdeModel::double_integrator(1, 0.04, 10.0, 0.01).expect("valid model");
    let closed = model.process_noise_cov(0.2).expect("noise covariance");
    let quad = process_noise_quadrature(&model, 0.2, 200);
    check("quadrature-vs-closed-form", rel_err(&closed, &quad, 1e-300), 1e-8)
}

/// Block-tridiagonal Cholesky solve against a dense solve.
pub fn check_banded_solve(seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nb, b) = (6, 6);
    let mut m = BlockTridiagonal::zeros(nb, b);
    for i in 0..nb - 1 {
        *m.lower_mut(i) = DMatrix::from_fn(b, b, |_, _| rng.random_range(-1.0..1.0));
    }
    for i in 0..nb {
        let a = DMatrix::from_fn(b, b, |_, _| rng.random_range(-1.0..1.0));
        *m.diag_mut(i) = &a * a.transpose() + DMatrix::identity(b, b) * (2.0 * b as f64);
    }
    let rhs = DVector::from_fn(nb * b, |_, _| rng.sample::<f64, _>(StandardNormal));
    let banded = solve_banded(&m, &rhs).expect("positive definite");
    let dense = m.to_dense().cholesky().expect("positive definite").solve(&rhs);
    let err = (&banded - &dense).amax() / dense.amax();
    check("banded-vs-dense-solve", err, 1e-10)
}

/// Linear 1-D instance with five support states used by the duality checks.
pub fn duality_planner() -> Planner {
    let model = Arc::new(LinearSdeModel::double_integrator(1, 0.04, 10.0, 0.01).expect("valid model"));
    let horizon = HorizonConfig { t_h: 0.8, dt_support: 0.2, n_ip: 5, t_max: 10.0, gdist: 0.1 };
    Planner::new(
        model,
        FactorParams { sigma_fix: 1e-2, q_x: 0.04, ..FactorParams::default() },
        horizon,
        OptimizerConfig::default(),
        0.5,
        AugmentedState::from_parts(0.0, &[0.0], &[0.0], &[0.0]),
        AugmentedState::from_parts(0.0, &[3.0], &[0.0], &[0.0]),
    )
    .expect("valid planner")
}

/// Filtered actions over the first support interval and the corresponding
/// dense posterior modes `argmax_u q̂(u_t | h_t, e_S)`.
pub fn duality_actions(seed: u64, mode: Observability) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let planner = duality_planner();
    let model = planner.model().clone();
    let n = model.augmented_dim();
    let sdim = model.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut belief = planner.initial_belief();
    belief.mean.values = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let init = planner.warm_start(&belief, None);
    let graph = planner.build_graph(&belief, None, &init).expect("linear graph");
    let tight = OptimizerConfig { rel_cost_tol: 1e-15, abs_cost_tol: 1e-15, ..OptimizerConfig::default() };
    let post = optimize(&graph, &init, &tight).expect("solvable");
    let posterior = crate::planner::HorizonPosterior {
        start_time: 0.0,
        dt: planner.horizon().dt_support,
        graph: post,
        goal: planner.goal().clone(),
        sdf_id: 0,
    };

    let h = planner.horizon().dt_step();
    let steps = planner.horizon().n_ip;
    let r = match mode {
        Observability::Mdp => planner.params().sigma_fix.powi(2),
        Observability::Pomdp => planner.params().sigma_m.powi(2),
    };
    let zs: Vec<DVector<f64>> = (0..steps)
        .map(|k| {
            let t = k as f64 * h;
            let m = planner.marginal_at(&posterior, t).expect("inside horizon").mean.values;
            DVector::from_fn(sdim, |i, _| m[i] + 0.05 * rng.sample::<f64, _>(StandardNormal))
        })
        .collect();

    let mut filtered = Vec::with_capacity(steps);
    let mut prev = None;
    for (k, z) in zs.iter().enumerate() {
        let (b, u) = planner
            .filter_policy(z, prev.as_ref(), &posterior, k as f64 * h, mode)
            .expect("filter step");
        prev = Some(b);
        filtered.push(u);
    }

    // Fine time grid: interior control times of the first interval, then the supports.
    let num = planner.horizon().num_support();
    let dt = planner.horizon().dt_support;
    let mut times: Vec<f64> = (0..steps).map(|k| k as f64 * h).collect();
    times.extend((1..num).map(|i| i as f64 * dt));
    let support_index = |i: usize| if i == 0 { 0 } else { steps - 1 + i };
    let mut evidence = Vec::new();
    for f in graph.factors() {
        if f.vars.len() != 1 {
            continue;
        }
        if let crate::factor_graph::ResidualModel::Linear { jacobians, offset } = &f.model {
            evidence.push(UnaryEvidence {
                index: support_index(f.vars[0].0),
                h: jacobians[0].clone(),
                z: offset.clone(),
                w: f.weight.clone(),
            });
        }
    }
    let mut obs_h = DMatrix::zeros(sdim, n);
    for i in 0..sdim {
        obs_h[(i, i)] = 1.0;
    }
    let obs_w = DMatrix::<f64>::identity(sdim, sdim) / r;
    let d = model.dim();
    let mut dense = Vec::with_capacity(steps);
    for k in 0..steps {
        let mut ev = evidence.clone();
        for (j, z) in zs.iter().enumerate().take(k + 1) {
            ev.push(UnaryEvidence { index: j, h: obs_h.clone(), z: z.clone(), w: obs_w.clone() });
        }
        let (mean, _) = chain_posterior(&model, &times, &ev);
        dense.push(mean.rows(k * n + 2 * d, d).into_owned());
    }
    (filtered, dense)
}

/// Policy filter against dense batch conditioning on a linear instance.
pub fn check_filter_vs_batch() -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for (seed, mode) in [(1, Observability::Mdp), (2, Observability::Pomdp), (3, Observability::Pomdp)] {
        let (filtered, dense) = duality_actions(seed, mode);
        for (a, b) in filtered.iter().zip(&dense) {
            worst = worst.max((a - b).amax() / b.amax().max(1.0));
        }
    }
    check("filter-vs-batch", worst, 1e-6)
}

/// All reference checks run by `selftest`.
pub fn run_selftest() -> Vec<CheckOutcome> {
    vec![check_banded_solve(7), check_filter_vs_batch(), check_quadrature()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_zero_is_identity() {
        assert_eq!(expm(&DMatrix::zeros(3, 3)), DMatrix::identity(3, 3));
    }

    #[test]
    fn simpson_exact_on_cubics() {
        let v = simpson(|s| DMatrix::from_element(1, 1, s * s * s), 0.0, 2.0, 1);
        assert!((v[(0, 0)] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn condition_scalar_pair() {
        let mean = DVector::from_vec(vec![0.0, 0.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let (m, c) = condition(&mean, &cov, &[1], &DVector::from_element(1, 2.0));
        assert!((m[0] - 1.0).abs() < 1e-15);
        assert!((c[(0, 0)] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn selftest_passes() {
        for c in run_selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
