//! Structured stabilizability by alternating minimization of `Tr(YᵀX)`
//! over the lifted PSD cone and the multiplier set
//! `{0 ⪯ Y ⪯ I, Tr Y = n+m}`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::conic::{AffMat, LiftedHandles, SdpBuilder, SdpProblem, SdpSettings, SolveStatus};
use crate::lifting::{assemble, LiftedVariable};
use crate::linalg::{hurwitz_margin, min_eigenvalue, solve_lyapunov, spd_inverse, SpectralFactor};
use crate::model::{AdmmOptions, LtiSystem, StructurePattern};
use crate::serde_mat;

pub const FEAS_TOL: f64 = 1e-6;
const MAX_ALTERNATIONS: usize = 200;
const DECREASE_TOL: f64 = 1e-9;
const RESTARTS: usize = 10;
const STALL_LEVEL: f64 = 1e-2;
/// Residual above which an unconverged X-step is not a feasible point.
const PRIMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Feasible,
    Infeasible,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub objective: f64,
    pub verdict: Verdict,
    #[serde(serialize_with = "serde_mat::rows")]
    pub x_certificate: DMatrix<f64>,
    #[serde(serialize_with = "serde_mat::rows")]
    pub multiplier: DMatrix<f64>,
    pub iterations: usize,
    /// Stabilizing gain in the pattern, when one was recovered.
    #[serde(serialize_with = "serde_mat::opt_rows")]
    pub k_candidate: Option<DMatrix<f64>>,
}

/// Minimizer of `Tr(YᵀX)` over the multiplier set: the projector onto the
/// eigenvectors of the `k` smallest eigenvalues.
pub fn multiplier_step(x: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let f = SpectralFactor::new(x);
    let d = x.nrows();
    let u = f.eigenvectors.columns(d - k, k);
    u * u.transpose()
}

/// Random rank-`k` orthogonal projector of order `d`.
fn random_multiplier(d: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, k, |_, _| rng.random_range(-1.0..1.0));
    let q = g.qr().q();
    &q * q.transpose()
}

struct XStep {
    lifted: LiftedVariable,
    assembled: DMatrix<f64>,
    status: SolveStatus,
    primal_residual: f64,
}

/// `min Tr(YX)` over `AX11 + X11Aᵀ + BX12ᵀ + X12Bᵀ ⪯ −I`, `X11 ⪰ εI`,
/// `K ∈ 𝒦`, `X ⪰ 0`. The inequality is homogeneous in `(X11, X12)`, so
/// the right-hand side `−I` only fixes a scale.
/// `program` caches the compiled cone program across calls with the same
/// system, so later calls only swap the objective and warm start.
fn x_step(
    system: &LtiSystem,
    pattern: &StructurePattern,
    y: &DMatrix<f64>,
    opts: &AdmmOptions,
    program: &mut Option<SdpProblem>,
) -> XStep {
    let (n, m) = (system.n(), system.m());
    let mut b = SdpBuilder::new();
    let h = LiftedHandles::new(&mut b, n, m, pattern);
    let lyap = h.lyapunov_expr(&system.a, &system.b);
    b.psd(&(&lyap.scale(-1.0) - &AffMat::identity(n)));
    b.psd(&(&h.x11.expr() - &AffMat::constant(&(DMatrix::identity(n, n) * opts.strict_eps))));
    let x = h.assembled(&system.c);
    b.psd(&x);
    b.minimize(&x.trace_with(y));
    let settings = SdpSettings {
        eps_abs: 1e-9,
        eps_rel: 1e-9,
        ..SdpSettings::from_options(opts)
    };
    let prog = program.get_or_insert_with(|| b.compile());
    prog.set_objective(b.objective_vector());
    let sol = prog.solve(&settings);
    let lifted = h.extract(&sol);
    XStep {
        assembled: assemble(&lifted, &system.c),
        lifted,
        status: sol.report.status,
        primal_residual: sol.report.primal_residual,
    }
}

/// Exact rank-`n` lifted point for a stabilizing gain, scaled so that the
/// X-step constraints hold.
pub fn certificate_from_gain(system: &LtiSystem, k: &DMatrix<f64>, strict_eps: f64) -> Option<DMatrix<f64>> {
    let acl = system.closed_loop(k);
    if hurwitz_margin(&acl) >= 0.0 {
        return None;
    }
    let n = system.n();
    let x11 = solve_lyapunov(&acl, &DMatrix::identity(n, n)).ok()?;
    let lo = min_eigenvalue(&x11);
    if lo <= 0.0 {
        return None;
    }
    let x11 = &x11 * (strict_eps / lo).max(1.0);
    let z = spd_inverse(&x11);
    Some(assemble(&LiftedVariable::from_gain(k, &system.c, &x11, &z), &system.c))
}

struct Run {
    objective: f64,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    iterations: usize,
    k_candidate: Option<DMatrix<f64>>,
    infeasible: bool,
}

fn alternate(
    system: &LtiSystem,
    pattern: &StructurePattern,
    mut y: DMatrix<f64>,
    opts: &AdmmOptions,
) -> Run {
    let (n, m) = (system.n(), system.m());
    let k = n + m;
    let mut best = f64::INFINITY;
    let mut x = DMatrix::zeros(2 * n + m, 2 * n + m);
    let mut program = None;
    for it in 1..=MAX_ALTERNATIONS {
        let step = x_step(system, pattern, &y, opts, &mut program);
        let infeasible = step.status == SolveStatus::Infeasible;
        if infeasible || (step.status == SolveStatus::MaxIters && step.primal_residual > PRIMAL_TOL) {
            return Run {
                objective: f64::INFINITY,
                x: step.assembled,
                y,
                iterations: it,
                k_candidate: None,
                infeasible,
            };
        }
        x = step.assembled;
        let gain = pattern.apply(&step.lifted.k_gain);
        if let Some(cert) = certificate_from_gain(system, &gain, opts.strict_eps) {
            let y_cert = multiplier_step(&cert, k);
            return Run {
                objective: (&y_cert * &cert).trace().max(0.0),
                x: cert,
                y: y_cert,
                iterations: it,
                k_candidate: Some(gain),
                infeasible: false,
            };
        }
        y = multiplier_step(&x, k);
        let obj = (&y * &x).trace();
        let converged = best - obj < DECREASE_TOL;
        best = best.min(obj);
        if obj <= FEAS_TOL * (1.0 + x.norm()) || converged {
            return Run {
                objective: obj,
                x,
                y,
                iterations: it,
                k_candidate: None,
                infeasible: false,
            };
        }
    }
    Run {
        objective: best,
        x,
        y,
        iterations: MAX_ALTERNATIONS,
        k_candidate: None,
        infeasible: false,
    }
}

/// Alternates the convex X-step and the closed-form Y-step. Each X-step's
/// gain is tried as a stabilizing controller; success yields an exact
/// rank-`n` certificate. Infeasible is reported when the X-step cone is
/// certified empty, or when every restart stalls above `1e−2`.
pub fn feasibility_test(
    system: &LtiSystem,
    pattern: &StructurePattern,
    opts: &AdmmOptions,
    seed: u64,
) -> FeasibilityReport {
    let (n, m) = (system.n(), system.m());
    let d = 2 * n + m;
    let k = n + m;
    let y0 = DMatrix::identity(d, d) * (k as f64 / d as f64);
    let mut run = alternate(system, pattern, y0, opts);
    let mut iterations = run.iterations;
    let report = |run: Run, verdict, iterations| FeasibilityReport {
        objective: run.objective,
        verdict,
        x_certificate: run.x,
        multiplier: run.y,
        iterations,
        k_candidate: run.k_candidate,
    };
    if run.infeasible {
        return report(run, Verdict::Infeasible, iterations);
    }
    if feasible(&run) {
        return report(run, Verdict::Feasible, iterations);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all_stalled = run.objective > STALL_LEVEL;
    for _ in 0..RESTARTS {
        let r = alternate(system, pattern, random_multiplier(d, k, &mut rng), opts);
        iterations += r.iterations;
        if feasible(&r) {
            return report(r, Verdict::Feasible, iterations);
        }
        all_stalled &= r.objective > STALL_LEVEL;
        if r.objective < run.objective {
            run = r;
        }
    }
    let verdict = if all_stalled { Verdict::Infeasible } else { Verdict::Inconclusive };
    report(run, verdict, iterations)
}

/// Feasible only with a verified stabilizing gain; a small objective alone
/// is not trusted.
fn feasible(run: &Run) -> bool {
    run.k_candidate.is_some() && run.objective <= FEAS_TOL * (1.0 + run.x.norm())
}
