//! Outer loop for the rank-constrained ℓ1 relaxation: convex X-update,
//! rank-`n` projection, dual ascent, reweighting, then truncation and cost
//! evaluation of the gain.

mod input_bound;
mod truncation;

pub use input_bound::{
    check_input_certificate, invariant_ellipsoid, run_input_bounded, InputCertificate,
};
pub use truncation::{cardinality, evaluate_cost, truncate_below, truncate_l0, truncation_bound};

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::conic::{solve_subproblem, ConvexSubproblem, DynamicsProjector, SolveStatus, WarmStart};
use crate::error::{Error, Result};
use crate::lifting::{assemble, fit_gain, is_identity, LiftedVariable};
use crate::linalg::{
    hurwitz_margin, project_rank_symmetric, solve_care, solve_lyapunov, spd_inverse,
};
use crate::model::{validate, AdmmOptions, SynthesisProblem, TruncationMode};
use crate::serde_mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub eps: f64,
    /// `Tr QX11 + Tr RX22 + λ‖W∘K‖₁` at the X-iterate.
    pub objective: f64,
    /// `‖X − V‖_F / ‖X‖_F`, the distance to the rank-`n` set.
    pub rank_residual: f64,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub x_lifted: LiftedVariable,
    pub x_assembled: DMatrix<f64>,
    pub v_consensus: DMatrix<f64>,
    pub v_previous: DMatrix<f64>,
    pub y_dual: DMatrix<f64>,
    pub weight_matrix: DMatrix<f64>,
    pub iteration: usize,
    pub eps_current: f64,
    pub history: Vec<HistoryEntry>,
    pub inner_status: Option<SolveStatus>,
    /// Iteration and gain of the latest iterate with a stabilizing gain.
    pub last_stabilizing: Option<(usize, DMatrix<f64>)>,
    warm: Option<WarmStart>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ControllerResult {
    #[serde(serialize_with = "serde_mat::rows")]
    pub k_dense: DMatrix<f64>,
    #[serde(serialize_with = "serde_mat::rows")]
    pub k_truncated: DMatrix<f64>,
    pub j_achieved: f64,
    pub j_baseline: f64,
    pub density: f64,
    pub stability_margin: f64,
    pub stabilizing: bool,
    pub xi_bound: f64,
    pub converged: bool,
    pub iterations: usize,
    pub eps_final: f64,
    pub input_certificate: Option<InputCertificate>,
}

impl ControllerResult {
    /// `(J − J_base) / J_base`.
    pub fn performance_loss(&self) -> f64 {
        (self.j_achieved - self.j_baseline) / self.j_baseline
    }

    pub fn cardinality(&self) -> usize {
        cardinality(&self.k_truncated)
    }
}

/// Per-problem data shared by all iterations.
pub(crate) struct Context<'a> {
    pub problem: &'a SynthesisProblem,
    pub opts: &'a AdmmOptions,
    pub projector: DynamicsProjector,
}

impl<'a> Context<'a> {
    pub fn new(problem: &'a SynthesisProblem, opts: &'a AdmmOptions) -> Self {
        Self {
            problem,
            opts,
            projector: DynamicsProjector::new(&problem.system.a, &problem.system.b, 2.0),
        }
    }
}

/// `w_ij = 1 / (|k_ij| + δ)`.
pub fn reweight(k: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    k.map(|v| 1.0 / (v.abs() + delta))
}

/// Expected LQR cost `Tr(P N)`; the relaxation optimum for any output
/// matrix and pattern.
pub fn lqr_baseline(problem: &SynthesisProblem) -> Result<f64> {
    let s = &problem.system;
    Ok(solve_care(&s.a, &s.b, &problem.q_weight, &problem.r_weight)?.cost(&problem.noise_cov))
}

/// Starting point: the LQR solution with its closed-loop covariance for
/// `C = I`, the `λ = 0` relaxation optimum otherwise.
pub fn init_state(problem: &SynthesisProblem, opts: &AdmmOptions) -> Result<AdmmState> {
    let ctx = Context::new(problem, opts);
    init_with(&ctx)
}

fn init_with(ctx: &Context<'_>) -> Result<AdmmState> {
    let prob = ctx.problem;
    let sys = &prob.system;
    let (n, m) = (prob.n(), prob.m());
    let x_lifted = if is_identity(&sys.c) {
        let care = solve_care(&sys.a, &sys.b, &prob.q_weight, &prob.r_weight)?;
        let k = care.k_lqr;
        let x11 = solve_lyapunov(&sys.closed_loop(&k), &prob.noise_cov)?;
        let z = spd_inverse(&x11);
        LiftedVariable::from_gain(&k, &sys.c, &x11, &z)
    } else {
        let relaxed = SynthesisProblem {
            lambda: 0.0,
            ..prob.clone()
        };
        let sub = ConvexSubproblem {
            problem: &relaxed,
            projector: &ctx.projector,
            anchor: DMatrix::zeros(2 * n + m, 2 * n + m),
            penalty_rho: 1e-8,
            weight_matrix: DMatrix::from_element(m, prob.p(), 1.0),
            include_quadratic: true,
        };
        let out = solve_subproblem(&sub, ctx.opts, None);
        if out.report.status == SolveStatus::Infeasible {
            return Err(Error::Infeasible(
                "relaxation of the synthesis problem".into(),
            ));
        }
        out.x
    };
    let xa = assemble(&x_lifted, &sys.c);
    let d = xa.nrows();
    let mut state = AdmmState {
        weight_matrix: reweight(&x_lifted.k_gain, ctx.opts.reweight_delta),
        x_lifted,
        v_consensus: xa.clone(),
        v_previous: xa.clone(),
        x_assembled: xa,
        y_dual: DMatrix::zeros(d, d),
        iteration: 0,
        eps_current: f64::INFINITY,
        history: Vec::new(),
        inner_status: None,
        last_stabilizing: None,
        warm: None,
    };
    record_stabilizing(&mut state, prob);
    Ok(state)
}

/// One outer iteration: X-update, V-update, dual update, reweighting and
/// the residual `ε = max(‖X − V‖_F, ‖V − V_prev‖_F)`.
pub fn admm_iterate(
    state: AdmmState,
    problem: &SynthesisProblem,
    opts: &AdmmOptions,
) -> Result<AdmmState> {
    let ctx = Context::new(problem, opts);
    iterate_with(state, &ctx)
}

fn iterate_with(mut state: AdmmState, ctx: &Context<'_>) -> Result<AdmmState> {
    let prob = ctx.problem;
    let n = prob.n();
    let sub = ConvexSubproblem {
        problem: prob,
        projector: &ctx.projector,
        anchor: &state.v_consensus - &state.y_dual,
        penalty_rho: ctx.opts.penalty_rho,
        weight_matrix: state.weight_matrix.clone(),
        include_quadratic: true,
    };
    let out = solve_subproblem(&sub, ctx.opts, state.warm.take());
    match out.report.status {
        SolveStatus::Infeasible => {
            return Err(Error::Infeasible(format!(
                "X-update stalled at distance {:.3e} from the PSD cone",
                out.report.primal_residual
            )))
        }
        SolveStatus::MaxIters => log::debug!(
            "X-update hit {} iterations (primal {:.2e}, dual {:.2e})",
            out.report.iterations,
            out.report.primal_residual,
            out.report.dual_residual
        ),
        SolveStatus::Converged => {}
    }
    let xa = assemble(&out.x, &prob.system.c);
    let v_new = project_rank_symmetric(&(&xa + &state.y_dual), n);
    state.y_dual += &xa - &v_new;
    state.weight_matrix = reweight(&out.x.k_gain, ctx.opts.reweight_delta);
    let gap = (&xa - &v_new).norm();
    let step = (&v_new - &state.v_consensus).norm();
    state.eps_current = gap.max(step);
    state.iteration += 1;
    let objective = (&prob.q_weight * &out.x.x11).trace()
        + (&prob.r_weight * &out.x.x22).trace()
        + prob.lambda
            * out
                .x
                .k_gain
                .zip_fold(&sub.weight_matrix, 0.0, |a, k, w| a + w * k.abs());
    state.history.push(HistoryEntry {
        iteration: state.iteration,
        eps: state.eps_current,
        objective,
        rank_residual: gap / xa.norm().max(f64::MIN_POSITIVE),
        inner_iterations: out.report.iterations,
    });
    state.v_previous = std::mem::replace(&mut state.v_consensus, v_new);
    state.x_lifted = out.x;
    state.x_assembled = xa;
    state.inner_status = Some(out.report.status);
    state.warm = Some(out.warm);
    record_stabilizing(&mut state, prob);
    Ok(state)
}

/// Keeps the X-update gain, or failing that the consensus gain, when it
/// stabilizes the plant.
pub(crate) fn record_stabilizing(state: &mut AdmmState, problem: &SynthesisProblem) {
    let stable = |k: &DMatrix<f64>| hurwitz_margin(&problem.system.closed_loop(k)) < 0.0;
    let k = problem.pattern.apply(&state.x_lifted.k_gain);
    if stable(&k) {
        state.last_stabilizing = Some((state.iteration, k));
        return;
    }
    let k = consensus_gain(state, problem);
    if stable(&k) {
        state.last_stabilizing = Some((state.iteration, k));
    }
}

/// Iterates until `ε ≤ ε*` or `max_outer`, then truncates and evaluates.
pub fn run(problem: &SynthesisProblem, opts: &AdmmOptions) -> Result<ControllerResult> {
    run_logged(problem, opts, None)
}

/// [`run`] with an optional CSV iteration log
/// (`iteration,eps,objective,rank_residual`).
pub fn run_logged(
    problem: &SynthesisProblem,
    opts: &AdmmOptions,
    mut log: Option<&mut dyn Write>,
) -> Result<ControllerResult> {
    validate(problem).map_err(Error::Invalid)?;
    opts.validate().map_err(Error::Invalid)?;
    if problem
        .input_bound
        .as_ref()
        .is_some_and(|b| b.u_max.is_finite())
    {
        return run_input_bounded(problem, opts, log);
    }
    let ctx = Context::new(problem, opts);
    let mut state = init_with(&ctx)?;
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "iteration,eps,objective,rank_residual")?;
    }
    while state.iteration < opts.max_outer && state.eps_current > opts.eps_star {
        state = iterate_with(state, &ctx)?;
        if let (Some(w), Some(h)) = (log.as_deref_mut(), state.history.last()) {
            writeln!(
                w,
                "{},{:e},{:e},{:e}",
                h.iteration, h.eps, h.objective, h.rank_residual
            )?;
        }
    }
    log::info!(
        "outer loop stopped after {} iterations at eps {:.3e}",
        state.iteration,
        state.eps_current
    );
    finish(problem, opts, &state, None)
}

/// Truncates and evaluates the current iterate of a loop driven through
/// [`admm_iterate`].
pub fn conclude(
    problem: &SynthesisProblem,
    opts: &AdmmOptions,
    state: &AdmmState,
) -> Result<ControllerResult> {
    finish(problem, opts, state, None)
}

/// Gain of the rank-`n` point `V − Y`, fitted to the pattern.
pub(crate) fn consensus_gain(state: &AdmmState, problem: &SynthesisProblem) -> DMatrix<f64> {
    let (n, m) = (problem.n(), problem.m());
    let w = &state.v_consensus - &state.y_dual;
    let kc = (w.view((n, n + m), (m, n)) + w.view((n + m, n), (n, m)).transpose()) * 0.5;
    fit_gain(&kc, &problem.system.c, &problem.pattern)
}

/// Threshold of the certified mode: the stability bound `ξ`, capped at the
/// ℓ0-prox scale `√(2λ/ρ)` below which an entry is not worth its penalty.
pub fn certified_threshold(xi_bound: f64, lambda: f64, penalty_rho: f64) -> f64 {
    xi_bound.min((2.0 * lambda / penalty_rho).sqrt())
}

pub(crate) fn finish(
    problem: &SynthesisProblem,
    opts: &AdmmOptions,
    state: &AdmmState,
    input_certificate: Option<InputCertificate>,
) -> Result<ControllerResult> {
    let sys = &problem.system;
    let mut k_dense = problem.pattern.apply(&state.x_lifted.k_gain);
    let mut dense_margin = hurwitz_margin(&sys.closed_loop(&k_dense));
    if dense_margin >= 0.0 {
        match &state.last_stabilizing {
            Some((it, k)) if state.eps_current > opts.eps_star => {
                log::warn!(
                    "final gain has spectral abscissa {dense_margin:.3e}; \
                     falling back to the stabilizing gain of iteration {it}"
                );
                k_dense = k.clone();
                dense_margin = hurwitz_margin(&sys.closed_loop(&k_dense));
            }
            _ => {
                return Err(Error::Unstabilizable(format!(
                    "gain from the outer loop has spectral abscissa {dense_margin:.3e}"
                )))
            }
        }
    }
    let x11_dense = solve_lyapunov(&sys.closed_loop(&k_dense), &problem.noise_cov)?;
    let xi_bound = truncation_bound(&k_dense, &x11_dense, &problem.noise_cov, sys);
    let mut k_truncated = match opts.truncation_mode {
        TruncationMode::Certified => truncate_below(
            &k_dense,
            certified_threshold(xi_bound, problem.lambda, opts.penalty_rho),
            &problem.pattern,
        ),
        TruncationMode::Manual(xi) => truncate_below(&k_dense, xi, &problem.pattern),
        TruncationMode::L0Threshold => truncate_l0(
            &consensus_gain(state, problem),
            problem.lambda,
            opts.penalty_rho,
            &problem.pattern,
        ),
    };
    let mut stability_margin = hurwitz_margin(&sys.closed_loop(&k_truncated));
    if stability_margin >= 0.0 && opts.truncation_mode == TruncationMode::Certified {
        // cannot happen in exact arithmetic; keep the certified dense gain
        log::warn!("certified truncation lost stability numerically; reporting the dense gain");
        k_truncated = k_dense.clone();
        stability_margin = dense_margin;
    }
    let stabilizing = stability_margin < 0.0;
    let j_achieved = if stabilizing {
        evaluate_cost(
            sys,
            &k_truncated,
            &problem.q_weight,
            &problem.r_weight,
            &problem.noise_cov,
        )?
        .0
    } else {
        f64::INFINITY
    };
    let (m, p) = problem.pattern.shape();
    Ok(ControllerResult {
        density: cardinality(&k_truncated) as f64 / (m * p) as f64,
        j_baseline: lqr_baseline(problem)?,
        k_dense,
        k_truncated,
        j_achieved,
        stability_margin,
        stabilizing,
        xi_bound,
        converged: state.eps_current <= opts.eps_star,
        iterations: state.iteration,
        eps_final: state.eps_current,
        input_certificate,
    })
}

#[cfg(test)]
/// Numerical rank of a symmetric matrix from its spectrum (τ-threshold).
pub(crate) fn symmetric_rank(m: &DMatrix<f64>) -> usize {
    let f = crate::linalg::SpectralFactor::new(m);
    let top = f.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    f.eigenvalues
        .iter()
        .filter(|v| v.abs() > crate::linalg::RANK_TAU * top)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LtiSystem;
    use nalgebra::dmatrix;

    fn scalar(a: f64, b: f64) -> SynthesisProblem {
        SynthesisProblem::with_defaults(
            LtiSystem::new(dmatrix![a], dmatrix![b], dmatrix![1.0]).unwrap(),
        )
    }

    #[test]
    fn init_unforced_stable() {
        let p = scalar(-2.0, 0.0);
        let s = init_state(&p, &AdmmOptions::default()).unwrap();
        assert_eq!(s.x_lifted.k_gain[(0, 0)], 0.0);
        assert!((s.x_lifted.x11[(0, 0)] - 0.25).abs() < 1e-14);
        assert_eq!(s.y_dual, DMatrix::zeros(3, 3));
        assert!((s.weight_matrix[(0, 0)] - 1e4).abs() < 1e-9);
    }

    #[test]
    fn init_scalar_unstable() {
        let s = init_state(&scalar(1.0, 1.0), &AdmmOptions::default()).unwrap();
        assert!((s.x_lifted.k_gain[(0, 0)] + 1.0 + 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn lqr_point_is_fixed() {
        let p = scalar(1.0, 1.0);
        let opts = AdmmOptions::default();
        let s0 = init_state(&p, &opts).unwrap();
        let s1 = admm_iterate(s0.clone(), &p, &opts).unwrap();
        assert!(s1.eps_current < 1e-5, "eps {}", s1.eps_current);
        assert!((&s1.x_assembled - &s0.x_assembled).norm() < 1e-5);
        assert_eq!(symmetric_rank(&s1.v_consensus), 1);
    }

    #[test]
    fn eps_bookkeeping() {
        let mut p = scalar(-1.0, 1.0);
        p.lambda = 0.3;
        let opts = AdmmOptions::default();
        let mut s = init_state(&p, &opts).unwrap();
        for _ in 0..5 {
            let prev_v = s.v_consensus.clone();
            s = admm_iterate(s, &p, &opts).unwrap();
            let e = (&s.x_assembled - &s.v_consensus)
                .norm()
                .max((&s.v_consensus - &prev_v).norm());
            assert!((e - s.eps_current).abs() <= 1e-12);
            assert_eq!(s.v_previous, prev_v);
        }
    }

    #[test]
    fn dominant_penalty_on_stable_plant_gives_zero_gain() {
        let mut p = scalar(-1.0, 1.0);
        p.lambda = 1e6;
        let r = run(&p, &AdmmOptions::default()).unwrap();
        assert_eq!(r.k_truncated[(0, 0)], 0.0);
        assert!((r.j_achieved - 0.5).abs() < 1e-9);
    }

    #[test]
    fn unstable_scalar_keeps_gain() {
        let mut p = scalar(1.0, 1.0);
        p.lambda = 1.0;
        // along the rank-n manifold the loop moves like gradient descent
        // with step 1/ρ, so this instance needs a few thousand iterations
        let opts = AdmmOptions {
            max_outer: 10_000,
            ..AdmmOptions::default()
        };
        let r = run(&p, &opts).unwrap();
        assert!(r.k_truncated[(0, 0)] != 0.0);
        assert!(r.stability_margin < 0.0 && r.converged, "{r:?}");
        // reweighted fixed point: J'(s) = −λ/s at s = −k, which is s = 2
        assert!((r.k_dense[(0, 0)] + 2.0).abs() < 3e-2, "{r:?}");
    }

    #[test]
    fn unconverged_destabilizing_iterate_falls_back() {
        let p = scalar(1.0, 1.0);
        let opts = AdmmOptions::default();
        let mut s = admm_iterate(init_state(&p, &opts).unwrap(), &p, &opts).unwrap();
        let (it, k) = s.last_stabilizing.clone().expect("LQR iterate stabilizes");
        assert_eq!(it, 1);
        s.x_lifted.k_gain[(0, 0)] = 0.0;
        s.eps_current = 1.0;
        let r = finish(&p, &opts, &s, None).unwrap();
        assert_eq!(r.k_dense, k);
        assert!(r.stabilizing && !r.converged);
        s.eps_current = 0.0;
        assert!(matches!(finish(&p, &opts, &s, None), Err(Error::Unstabilizable(_))));
    }
}
