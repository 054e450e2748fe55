//! Input-norm-bounded synthesis: the lifted matrix gains a block row
//! `[γI, Y, W]` and the convex step carries the invariant-ellipsoid LMIs.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{finish, record_stabilizing, reweight, AdmmState, ControllerResult, HistoryEntry};
use crate::conic::{
    AffMat, LiftedHandles, Lin, MatVar, SdpBuilder, SdpProblem, SdpSettings, SolveStatus,
};
use crate::error::{Error, Result};
use crate::lifting::{ellipsoid_value, input_lmi_inf, input_lmi_two, is_identity, LiftedVariable};
use crate::linalg::{hurwitz_margin, min_eigenvalue, project_rank, solve_lyapunov, spd_inverse};
use crate::model::{AdmmOptions, InputBound, LtiSystem, NormKind, SynthesisProblem};

use super::{cardinality, evaluate_cost};

/// Relative tightening of `u_max` inside the synthesis, so that the gain
/// carries a strict certificate after the outer loop stops at `ε*`.
pub const INPUT_BACKOFF: f64 = 1e-2;

/// Residual tolerance for accepting an input certificate.
pub const CERTIFICATE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Serialize)]
pub struct InputCertificate {
    pub norm: &'static str,
    pub u_max: f64,
    pub gamma: f64,
    /// `max(0, −λ_min)` of the input LMI, plus the `V_ii ≤ u_max²` excess
    /// for the ∞-norm.
    pub lmi_residual: f64,
    pub ellipsoid_value: f64,
    /// `"lyapunov"` when `W = γ X11⁻¹` with the closed-loop covariance
    /// works, `"sdp"` when a separate ellipsoid search was needed.
    pub method: &'static str,
    pub certified: bool,
}

fn norm_name(kind: NormKind) -> &'static str {
    match kind {
        NormKind::Two => "two",
        NormKind::Inf => "inf",
    }
}

/// Residual of the input LMI for a gain with ellipsoid `{xᵀWx ≤ 1}`.
fn lmi_residual(kind: NormKind, w: &DMatrix<f64>, kc: &DMatrix<f64>, u_max: f64) -> f64 {
    match kind {
        NormKind::Two => (-min_eigenvalue(&input_lmi_two(w, kc, u_max))).max(0.0),
        NormKind::Inf => {
            // smallest admissible V is KC W⁻¹ (KC)ᵀ
            let v = kc * spd_inverse(w) * kc.transpose();
            let lmi = (-min_eigenvalue(&input_lmi_inf(&v, kc, w))).max(0.0);
            let excess = (0..v.nrows())
                .map(|i| v[(i, i)] - u_max * u_max)
                .fold(0.0f64, f64::max);
            lmi + excess
        }
    }
}

/// Certifies `sup_t ‖u(t)‖ ≤ u_max` from `x0` for `u = KCx`: first with
/// `W = γ X11⁻¹`, `X11` the closed-loop covariance for `noise` and
/// `γ = 1/(x0ᵀX11⁻¹x0)`; if that fails, by searching an invariant
/// ellipsoid through an SDP.
pub fn check_input_certificate(
    system: &LtiSystem,
    k: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    bound: &InputBound,
) -> Result<InputCertificate> {
    let acl = system.closed_loop(k);
    let margin = hurwitz_margin(&acl);
    if margin >= 0.0 {
        return Err(Error::NotHurwitz(margin));
    }
    let kc = k * &system.c;
    let x11 = solve_lyapunov(&acl, noise)?;
    let x_inv = spd_inverse(&x11);
    let gamma = 1.0 / ellipsoid_value(&x_inv, &bound.x0);
    let w = &x_inv * gamma;
    let residual = lmi_residual(bound.norm_kind, &w, &kc, bound.u_max);
    let mut cert = InputCertificate {
        norm: norm_name(bound.norm_kind),
        u_max: bound.u_max,
        gamma,
        lmi_residual: residual,
        ellipsoid_value: ellipsoid_value(&w, &bound.x0),
        method: "lyapunov",
        certified: residual <= CERTIFICATE_TOL,
    };
    if !cert.certified {
        if let Some((w, res)) = search_ellipsoid(&acl, &kc, bound) {
            if res < cert.lmi_residual {
                cert.lmi_residual = res;
                cert.ellipsoid_value = ellipsoid_value(&w, &bound.x0);
                cert.gamma = f64::NAN;
                cert.method = "sdp";
                cert.certified = res <= CERTIFICATE_TOL && cert.ellipsoid_value <= 1.0 + 1e-9;
            }
        }
    }
    Ok(cert)
}

/// Finds `S ≻ 0` with `AclᵀS + SAcl ⪯ 0`, `x0ᵀSx0 ≤ 1` and the input LMI
/// on `S`, with a small interior margin.
fn search_ellipsoid(
    acl: &DMatrix<f64>,
    kc: &DMatrix<f64>,
    bound: &InputBound,
) -> Option<(DMatrix<f64>, f64)> {
    let n = acl.nrows();
    let m = kc.nrows();
    let margin = 1e-6 * bound.u_max * bound.u_max;
    let mut b = SdpBuilder::new();
    let s = b.symmetric(n);
    let se = s.expr();
    let lyap = se.left_mul(&acl.transpose());
    b.psd(&(&lyap + &lyap.transpose()).scale(-1.0));
    b.psd(&(&se - &AffMat::constant(&DMatrix::identity(n, n).scale(1e-9))));
    b.le(
        &se.trace_with(&(&bound.x0 * bound.x0.transpose())),
        1.0 - 1e-6,
    );
    let kce = AffMat::constant(kc);
    match bound.norm_kind {
        NormKind::Two => {
            let u2 = DMatrix::identity(m, m) * (bound.u_max * bound.u_max - margin);
            b.psd(&AffMat::blocks(&[
                vec![se.clone(), kce.transpose()],
                vec![kce.clone(), AffMat::constant(&u2)],
            ]));
        }
        NormKind::Inf => {
            let v = b.symmetric(m);
            let ve = v.expr();
            b.psd(&AffMat::blocks(&[
                vec![ve.clone(), kce.clone()],
                vec![kce.transpose(), se.clone()],
            ]));
            for i in 0..m {
                b.le(ve.get(i, i), bound.u_max * bound.u_max - margin);
            }
        }
    }
    b.minimize(&se.trace());
    let settings = SdpSettings {
        eps_abs: 1e-10,
        eps_rel: 1e-10,
        ..SdpSettings::default()
    };
    let sol = b.compile().solve(&settings);
    if sol.report.status == SolveStatus::Infeasible {
        return None;
    }
    let w = crate::linalg::symmetrize(&sol.value(&s));
    if min_eigenvalue(&w) <= 0.0 {
        return None;
    }
    let res = lmi_residual(bound.norm_kind, &w, kc, bound.u_max);
    let ell = ellipsoid_value(&w, &bound.x0);
    let res = res + (ell - 1.0).max(0.0);
    let lyap = acl.transpose() * &w + &w * acl;
    let res = res + crate::linalg::max_eigenvalue(&crate::linalg::symmetrize(&lyap)).max(0.0);
    Some((w, res))
}

/// Decision variables of the augmented convex step.
struct Handles {
    lifted: LiftedHandles,
    kc: AffMat,
    gamma: Lin,
    w: MatVar,
    y_aux: MatVar,
}

impl Handles {
    fn augmented(&self, n: usize) -> AffMat {
        let x12 = self.lifted.x12.expr();
        let gi = AffMat::from_fn(n, n, |i, j| {
            if i == j {
                self.gamma.clone()
            } else {
                Lin::default()
            }
        });
        AffMat::blocks(&[
            vec![self.lifted.x11.expr(), x12.clone(), AffMat::identity(n)],
            vec![x12.transpose(), self.lifted.x22.expr(), self.kc.clone()],
            vec![
                AffMat::identity(n),
                self.kc.transpose(),
                self.lifted.z.expr(),
            ],
            vec![gi, self.y_aux.expr(), self.w.expr()],
        ])
    }
}

/// Builds the convex step: `Tr QX11 + Tr RX22 + λ‖W∘K‖₁ + (ρ/2)‖X − T‖²`
/// over the dynamics, `X11 ⪰ εI`, the PSD lifted matrix, the input LMI and
/// `x0ᵀWx0 ≤ 1`. The variable layout depends only on the problem, so the
/// objective vector of a rebuild can be swapped into a compiled program.
fn build(
    problem: &SynthesisProblem,
    bound: &InputBound,
    opts: &AdmmOptions,
    target: &DMatrix<f64>,
    rho: f64,
    weights: &DMatrix<f64>,
    lambda: f64,
) -> (SdpBuilder, Handles) {
    let sys = &problem.system;
    let (n, m) = (problem.n(), problem.m());
    let mut b = SdpBuilder::new();
    let lifted = LiftedHandles::new(&mut b, n, m, &problem.pattern);
    let kc = if is_identity(&sys.c) {
        lifted.k.expr()
    } else {
        let l = b.full(m, n);
        let le = l.expr();
        b.eq(
            &(&le - &lifted.k.expr().right_mul(&sys.c)),
            &DMatrix::zeros(m, n),
        );
        le
    };
    let gamma = b.scalar();
    let w = b.symmetric(n);
    let y_aux = b.full(n, m);
    let h = Handles {
        lifted,
        kc,
        gamma,
        w,
        y_aux,
    };

    b.eq_sym(
        &h.lifted.lyapunov_expr(&sys.a, &sys.b),
        &(-&problem.noise_cov),
    );
    b.psd(
        &(&h.lifted.x11.expr() - &AffMat::constant(&(DMatrix::identity(n, n) * opts.strict_eps))),
    );
    let aug = h.augmented(n);
    b.psd(&aug.view(0, 0, 2 * n + m, 2 * n + m));
    b.nonneg(&h.gamma);
    let we = h.w.expr();
    b.le(&we.trace_with(&(&bound.x0 * bound.x0.transpose())), 1.0);
    let u = bound.u_max * (1.0 - INPUT_BACKOFF);
    match bound.norm_kind {
        NormKind::Two => b.psd(&AffMat::blocks(&[
            vec![we.clone(), h.kc.transpose()],
            vec![
                h.kc.clone(),
                AffMat::constant(&(DMatrix::identity(m, m) * (u * u))),
            ],
        ])),
        NormKind::Inf => {
            let v = b.symmetric(m);
            let ve = v.expr();
            b.psd(&AffMat::blocks(&[
                vec![ve.clone(), h.kc.clone()],
                vec![h.kc.transpose(), we.clone()],
            ]));
            for i in 0..m {
                b.le(ve.get(i, i), u * u);
            }
        }
    }

    b.minimize(&h.lifted.x11.expr().trace_with(&problem.q_weight));
    b.minimize(&h.lifted.x22.expr().trace_with(&problem.r_weight));
    if lambda > 0.0 {
        b.add_l1(&h.lifted.k.expr(), &(weights * lambda));
    }
    b.add_prox(&aug, target, rho);
    (b, h)
}

struct Iterate {
    lifted: LiftedVariable,
    augmented: DMatrix<f64>,
    objective: f64,
    status: SolveStatus,
    iterations: usize,
}

fn extract(
    h: &Handles,
    sol: &crate::conic::SdpSolution,
    problem: &SynthesisProblem,
    weights: &DMatrix<f64>,
) -> Iterate {
    let n = problem.n();
    let lifted = h.lifted.extract(sol);
    let objective = (&problem.q_weight * &lifted.x11).trace()
        + (&problem.r_weight * &lifted.x22).trace()
        + problem.lambda
            * lifted
                .k_gain
                .zip_fold(weights, 0.0, |a, k, w| a + w * k.abs());
    Iterate {
        augmented: sol.eval(&h.augmented(n)),
        lifted,
        objective,
        status: sol.report.status,
        iterations: sol.report.iterations,
    }
}

/// Outer loop on the augmented matrix: convex step, rank-`n` SVD
/// projection of the rectangular matrix, dual ascent and reweighting.
pub fn run_input_bounded(
    problem: &SynthesisProblem,
    opts: &AdmmOptions,
    mut log: Option<&mut dyn Write>,
) -> Result<ControllerResult> {
    let bound = problem.input_bound.clone().ok_or_else(|| {
        Error::UnsupportedFeature("input-bounded run without an input bound".into())
    })?;
    let (n, m, p) = (problem.n(), problem.m(), problem.p());
    let rows = 3 * n + m;
    let cols = 2 * n + m;
    let settings = SdpSettings::from_options(opts);

    // relaxation with λ = 0 and a vanishing proximal regularizer
    let ones = DMatrix::from_element(m, p, 1.0);
    let zero = DMatrix::zeros(rows, cols);
    let (b0, h0) = build(problem, &bound, opts, &zero, 1e-6, &ones, 0.0);
    let sol0 = b0.compile().solve(&settings);
    if sol0.report.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible("input-bounded relaxation".into()));
    }
    let it0 = extract(&h0, &sol0, problem, &ones);

    let mut state = AdmmState {
        weight_matrix: reweight(&it0.lifted.k_gain, opts.reweight_delta),
        v_consensus: it0.augmented.clone(),
        v_previous: it0.augmented.clone(),
        x_assembled: it0.augmented,
        x_lifted: it0.lifted,
        y_dual: DMatrix::zeros(rows, cols),
        iteration: 0,
        eps_current: f64::INFINITY,
        history: Vec::new(),
        inner_status: None,
        last_stabilizing: None,
        warm: None,
    };
    record_stabilizing(&mut state, problem);
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "iteration,eps,objective,rank_residual")?;
    }

    let mut compiled: Option<SdpProblem> = None;
    while state.iteration < opts.max_outer && state.eps_current > opts.eps_star {
        let target = &state.v_consensus - &state.y_dual;
        let weights = state.weight_matrix.clone();
        let (b, h) = build(
            problem,
            &bound,
            opts,
            &target,
            opts.penalty_rho,
            &weights,
            problem.lambda,
        );
        let prog = compiled.get_or_insert_with(|| b.compile());
        prog.set_objective(b.objective_vector());
        let sol = prog.solve(&settings);
        if sol.report.status == SolveStatus::Infeasible {
            return Err(Error::Infeasible("input-bounded X-update".into()));
        }
        let it = extract(&h, &sol, problem, &weights);
        let xa = it.augmented;
        let v_new = project_rank(&(&xa + &state.y_dual), n);
        state.y_dual += &xa - &v_new;
        state.weight_matrix = reweight(&it.lifted.k_gain, opts.reweight_delta);
        let gap = (&xa - &v_new).norm();
        state.eps_current = gap.max((&v_new - &state.v_consensus).norm());
        state.iteration += 1;
        let entry = HistoryEntry {
            iteration: state.iteration,
            eps: state.eps_current,
            objective: it.objective,
            rank_residual: gap / xa.norm().max(f64::MIN_POSITIVE),
            inner_iterations: it.iterations,
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(
                w,
                "{},{:e},{:e},{:e}",
                entry.iteration, entry.eps, entry.objective, entry.rank_residual
            )?;
        }
        state.history.push(entry);
        state.v_previous = std::mem::replace(&mut state.v_consensus, v_new);
        state.x_lifted = it.lifted;
        state.x_assembled = xa;
        state.inner_status = Some(it.status);
        record_stabilizing(&mut state, problem);
    }

    let mut result = finish(problem, opts, &state, None)?;
    let sys = &problem.system;
    let mut cert = if result.stabilizing {
        Some(check_input_certificate(
            sys,
            &result.k_truncated,
            &problem.noise_cov,
            &bound,
        )?)
    } else {
        None
    };
    if !cert.as_ref().is_some_and(|c| c.certified) && result.k_truncated != result.k_dense {
        let dense = check_input_certificate(sys, &result.k_dense, &problem.noise_cov, &bound)?;
        if dense.certified {
            log::warn!("truncated gain lost the input certificate; reporting the dense gain");
            let (j, _) = evaluate_cost(
                sys,
                &result.k_dense,
                &problem.q_weight,
                &problem.r_weight,
                &problem.noise_cov,
            )?;
            result.k_truncated = result.k_dense.clone();
            result.j_achieved = j;
            result.density = cardinality(&result.k_truncated) as f64 / (m * p) as f64;
            result.stability_margin = hurwitz_margin(&sys.closed_loop(&result.k_truncated));
            result.stabilizing = true;
            cert = Some(dense);
        }
    }
    result.input_certificate = cert;
    Ok(result)
}

/// Ellipsoid matrix `W = γ X11⁻¹` for a gain, with `γ = 1/(x0ᵀX11⁻¹x0)`.
pub fn invariant_ellipsoid(
    system: &LtiSystem,
    k: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let x11 = solve_lyapunov(&system.closed_loop(k), noise)?;
    let x_inv = spd_inverse(&x11);
    let gamma = 1.0 / ellipsoid_value(&x_inv, x0);
    Ok(x_inv * gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::run;
    use nalgebra::{dmatrix, dvector};

    fn scalar_bounded(u_max: f64, kind: NormKind) -> SynthesisProblem {
        let sys = LtiSystem::new(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
        let mut p = SynthesisProblem::with_defaults(sys);
        p.input_bound = Some(InputBound {
            norm_kind: kind,
            u_max,
            x0: dvector![1.0],
        });
        p
    }

    #[test]
    fn scalar_certificate_formula() {
        // a_cl = −1: X11 = ½, γ = ½, W = 1; |k| x ≤ 2 on |x| ≤ 1
        let sys = LtiSystem::new(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
        let b = InputBound {
            norm_kind: NormKind::Two,
            u_max: 2.0,
            x0: dvector![1.0],
        };
        let c = check_input_certificate(&sys, &dmatrix![-2.0], &dmatrix![1.0], &b).unwrap();
        assert!(c.certified && c.method == "lyapunov");
        assert!((c.gamma - 0.5).abs() < 1e-12);
        let tight = InputBound { u_max: 1.5, ..b };
        let c = check_input_certificate(&sys, &dmatrix![-2.0], &dmatrix![1.0], &tight).unwrap();
        assert!(!c.certified);
    }

    #[test]
    fn bounded_scalar_respects_limit() {
        // LQR gain −(1+√2) needs |u| ≈ 2.41 from x0 = 1; cap at 2
        for kind in [NormKind::Two, NormKind::Inf] {
            let p = scalar_bounded(2.0, kind);
            let r = run(&p, &AdmmOptions::default()).unwrap();
            let cert = r.input_certificate.clone().unwrap();
            assert!(cert.certified, "{cert:?}");
            assert!(r.k_truncated[(0, 0)].abs() <= 2.0 + 1e-9);
            assert!(r.stabilizing);
        }
    }

    #[test]
    fn infinite_bound_matches_unconstrained() {
        let p = scalar_bounded(f64::INFINITY, NormKind::Two);
        let mut q = p.clone();
        q.input_bound = None;
        let a = run(&p, &AdmmOptions::default()).unwrap();
        let b = run(&q, &AdmmOptions::default()).unwrap();
        assert!((&a.k_truncated - &b.k_truncated).norm() <= 1e-6);
    }
}
