//! Cost bounds for the rank-constrained program: the PSD relaxation from
//! below, scaled-inverse surrogates from above.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::admm::{cardinality, evaluate_cost, reweight};
use crate::conic::{AffMat, LiftedHandles, Lin, SdpBuilder, SdpSettings, SolveReport, SolveStatus};
use crate::error::{Error, Result};
use crate::linalg::solve_care;
use crate::model::{AdmmOptions, SynthesisProblem};
use crate::serde_mat;

const REWEIGHT_ROUNDS: usize = 4;
/// Entries of a recovered gain below this fraction of its largest entry are
/// solver noise.
const ZERO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsReport {
    pub lower: f64,
    pub upper: f64,
    pub gap: f64,
}

impl BoundsReport {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            gap: upper - lower,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UpperBound {
    /// Quadratic part of the surrogate optimum plus `λ‖K‖₀`.
    pub value: f64,
    /// `J(K) + λ‖K‖₀` of the recovered gain.
    pub achieved: f64,
    #[serde(serialize_with = "serde_mat::rows")]
    pub k: DMatrix<f64>,
    pub sdp_objective: f64,
}

/// Optimum of the PSD relaxation. Dropping the rank constraint lets `K`
/// vanish from the objective and the constraints, so the optimum is the
/// unstructured LQR cost `Tr(P N)` regardless of `C`, the pattern and `λ`.
pub fn lower_bound(problem: &SynthesisProblem) -> Result<f64> {
    let s = &problem.system;
    let care = solve_care(&s.a, &s.b, &problem.q_weight, &problem.r_weight)
        .map_err(|e| Error::Infeasible(format!("relaxation: {e}")))?;
    Ok(care.cost(&problem.noise_cov))
}

/// The relaxation solved directly as an SDP.
pub fn relaxation_sdp(problem: &SynthesisProblem, opts: &AdmmOptions) -> Result<f64> {
    let s = &problem.system;
    let (n, m) = (problem.n(), problem.m());
    let mut b = SdpBuilder::new();
    let h = LiftedHandles::new(&mut b, n, m, &problem.pattern);
    b.eq_sym(&h.lyapunov_expr(&s.a, &s.b), &(-&problem.noise_cov));
    b.psd(&h.assembled(&s.c));
    b.minimize(&(&h.x11.expr().trace_with(&problem.q_weight) + &h.x22.expr().trace_with(&problem.r_weight)));
    let sol = b.compile().solve(&tight(opts));
    if !primal_ok(&sol.report) {
        return Err(Error::Infeasible("relaxation".into()));
    }
    Ok(sol.report.objective)
}

/// Converged, or stopped at the iteration cap on a primal-feasible point.
fn primal_ok(r: &SolveReport) -> bool {
    match r.status {
        SolveStatus::Converged => true,
        SolveStatus::MaxIters => r.primal_residual <= 1e-6,
        SolveStatus::Infeasible => false,
    }
}

fn tight(opts: &AdmmOptions) -> SdpSettings {
    SdpSettings {
        eps_abs: 1e-9,
        eps_rel: 1e-9,
        max_iter: 200_000,
        ..SdpSettings::from_options(opts)
    }
}

#[derive(Clone, Copy)]
enum Scaling {
    Diagonal,
    Scalar,
}

struct Round {
    quad: f64,
    k: DMatrix<f64>,
    sdp_objective: f64,
}

/// `min Tr QX11 + Tr RX22 + Σ w|K̃|` over the Lyapunov equality and
/// `[[X11, X12, Γ], [X12ᵀ, X22, K̃C], [Γ, (K̃C)ᵀ, 2Γ − X11]] ⪰ 0`.
///
/// Since `ΓX11⁻¹Γ ⪰ 2Γ − X11` with equality only at `X11 = Γ`, every
/// feasible point has `X11 = Γ` and `X12 = (K̃C)ᵀ`, and the block condition
/// reduces to `[[X22, K̃C], [(K̃C)ᵀ, Γ]] ⪰ 0`. The reduced form is solved: it
/// has the same feasible set and, unlike the original, an interior.
fn surrogate_round(
    problem: &SynthesisProblem,
    scaling: Scaling,
    weights: &DMatrix<f64>,
    opts: &AdmmOptions,
) -> Result<Round> {
    let s = &problem.system;
    let (n, m) = (problem.n(), problem.m());
    let mut b = SdpBuilder::new();
    let (gamma, alpha) = match scaling {
        Scaling::Diagonal => (b.diagonal(n).expr(), None),
        Scaling::Scalar => {
            let a = b.scalar();
            let diag = AffMat::from_fn(n, n, |i, j| if i == j { a.clone() } else { Lin::constant(0.0) });
            (diag, Some(a))
        }
    };
    let x22 = b.symmetric(m);
    let k_var = b.masked(&problem.pattern);
    let g = k_var.expr().right_mul(&s.c);
    let lyap = &(&gamma.left_mul(&s.a) + &g.left_mul(&s.b));
    b.eq_sym(&(lyap + &lyap.transpose()), &(-&problem.noise_cov));
    b.psd(&AffMat::blocks(&[
        vec![x22.expr(), g.clone()],
        vec![g.transpose(), gamma.clone()],
    ]));
    let floor = AffMat::constant(&(DMatrix::identity(n, n) * opts.strict_eps));
    b.psd(&(&gamma - &floor));
    let quad = &gamma.trace_with(&problem.q_weight) + &x22.expr().trace_with(&problem.r_weight);
    b.minimize(&quad);
    if problem.lambda > 0.0 {
        b.add_l1(&k_var.expr(), &(weights * problem.lambda));
    }
    let sol = b.compile().solve(&tight(opts));
    if !primal_ok(&sol.report) {
        log::debug!("surrogate: {:?}", sol.report);
        return Err(Error::Infeasible("upper-bound surrogate".into()));
    }
    let k_tilde = sol.value(&k_var);
    let gv = sol.eval(&gamma);
    let k = match alpha {
        None => DMatrix::from_fn(m, n, |i, j| k_tilde[(i, j)] / gv[(j, j)]),
        Some(a) => &k_tilde / sol.lin(&a),
    };
    let scale = k.amax();
    let k = problem
        .pattern
        .apply(&k.map(|v| if v.abs() <= ZERO_TOL * scale { 0.0 } else { v }));
    Ok(Round {
        quad: sol.lin(&quad),
        k,
        sdp_objective: sol.report.objective,
    })
}

fn upper_bound_with(problem: &SynthesisProblem, scaling: Scaling, opts: &AdmmOptions) -> Result<UpperBound> {
    let (m, p) = (problem.m(), problem.p());
    let mut weights = DMatrix::from_element(m, p, 1.0);
    let rounds = if problem.lambda > 0.0 { REWEIGHT_ROUNDS } else { 1 };
    let mut best: Option<UpperBound> = None;
    for _ in 0..rounds {
        let r = surrogate_round(problem, scaling, &weights, opts)?;
        let nnz = cardinality(&r.k) as f64;
        let achieved = match evaluate_cost(
            &problem.system,
            &r.k,
            &problem.q_weight,
            &problem.r_weight,
            &problem.noise_cov,
        ) {
            Ok((j, _)) => j + problem.lambda * nnz,
            Err(_) => f64::INFINITY,
        };
        let cand = UpperBound {
            value: (r.quad + problem.lambda * nnz).max(achieved),
            achieved,
            sdp_objective: r.sdp_objective,
            k: r.k,
        };
        weights = reweight(&cand.k, opts.reweight_delta);
        if achieved.is_finite() && best.as_ref().is_none_or(|b| cand.value < b.value) {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| Error::Infeasible("no stabilizing gain recovered from the surrogate".into()))
}

/// Diagonal-scaling surrogate for state feedback; `K = K̃Γ⁻¹`.
pub fn upper_bound_state(problem: &SynthesisProblem, opts: &AdmmOptions) -> Result<UpperBound> {
    if !problem.system.is_state_feedback() {
        return Err(Error::UnsupportedStructure(
            "diagonal-scaling upper bound needs C = I".into(),
        ));
    }
    upper_bound_with(problem, Scaling::Diagonal, opts)
}

/// Scalar-scaling surrogate for output feedback; `K = K̃/α`.
pub fn upper_bound_output(problem: &SynthesisProblem, opts: &AdmmOptions) -> Result<UpperBound> {
    upper_bound_with(problem, Scaling::Scalar, opts)
}

/// Lower bound together with the tighter of the available upper bounds.
pub fn bounds(problem: &SynthesisProblem, opts: &AdmmOptions) -> Result<BoundsReport> {
    let lower = lower_bound(problem)?;
    let upper = if problem.system.is_state_feedback() {
        upper_bound_state(problem, opts)?.value
    } else {
        upper_bound_output(problem, opts)?.value
    };
    Ok(BoundsReport::new(lower, upper))
}
