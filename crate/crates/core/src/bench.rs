//! Experiment generators, a closed-loop simulation oracle, parameter sweeps
//! and the input-bound experiment.
//!
//! Random draws come from `ChaCha8Rng::seed_from_u64(seed)`; every entry is
//! `rng.random_range(-1.0..1.0)` taken in row-major order over the support
//! of the matrix being generated (A first, then B).

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::admm::{run, ControllerResult};
use crate::error::{Error, Result, Violation};
use crate::linalg::{hurwitz_margin, solve_lyapunov, spectral_norm};
use crate::model::{AdmmOptions, InputBound, LtiSystem, NormKind, SynthesisProblem};

/// `side²` states on a `side × side` grid: `A` is supported on the
/// diagonal and the 4-neighbour couplings, `B = C = I`.
pub fn gen_lattice(side: usize, seed: u64) -> LtiSystem {
    let n = side * side;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if lattice_adjacent(side, i, j) {
                a[(i, j)] = rng.random_range(-1.0..1.0);
            }
        }
    }
    let eye = DMatrix::identity(n, n);
    LtiSystem::new(a, eye.clone(), eye).expect("lattice dimensions are consistent")
}

/// Diagonal or 4-neighbour pair on the grid (row-major numbering).
pub fn lattice_adjacent(side: usize, i: usize, j: usize) -> bool {
    let (ri, ci) = (i / side, i % side);
    let (rj, cj) = (j / side, j % side);
    ri.abs_diff(rj) + ci.abs_diff(cj) <= 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayParams {
    pub c_a: f64,
    pub c_b: f64,
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub beta_a: f64,
    pub beta_b: f64,
}

impl Default for DecayParams {
    fn default() -> Self {
        Self {
            c_a: 10.0,
            c_b: 2.0,
            alpha_a: 1.0,
            alpha_b: 0.4,
            beta_a: 3.0,
            beta_b: 0.9,
        }
    }
}

/// `a_ij = C_A 𝔞 exp(−α_A |i−j|^β_A)`, `b_ij = C_B 𝔟 exp(−α_B |i−j|^β_B)`
/// with `𝔞, 𝔟 ~ U(−1, 1)`; `B` is `n×n` and `C = I`.
pub fn gen_spatial_decay(n: usize, params: &DecayParams, seed: u64) -> LtiSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |c: f64, alpha: f64, beta: f64| {
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let d = i.abs_diff(j) as f64;
                out[(i, j)] = c * (-alpha * d.powf(beta)).exp() * rng.random_range(-1.0..1.0);
            }
        }
        out
    };
    let a = draw(params.c_a, params.alpha_a, params.beta_a);
    let b = draw(params.c_b, params.alpha_b, params.beta_b);
    LtiSystem::new(a, b, DMatrix::identity(n, n)).expect("decay dimensions are consistent")
}

#[derive(Debug, Clone, Serialize)]
pub struct Simulation {
    /// `∫ xᵀQx + uᵀRu dt` over the horizon.
    pub j_quadrature: f64,
    pub sup_u_2: f64,
    pub sup_u_inf: f64,
    pub steps: usize,
}

/// Largest admissible step: `1e−2 / ‖A + BKC‖₂`.
pub fn max_step(acl: &DMatrix<f64>) -> f64 {
    1e-2 / spectral_norm(acl).max(f64::MIN_POSITIVE)
}

/// Horizon of twelve slowest time constants.
pub fn default_horizon(acl: &DMatrix<f64>) -> f64 {
    12.0 / (-hurwitz_margin(acl))
}

/// Integrates `ẋ = (A+BKC)x` from `x0` with classical RK4 at fixed step,
/// carrying the running cost as an extra state; input norms are sampled at
/// every grid point.
pub fn simulate_closed_loop(
    system: &LtiSystem,
    k: &DMatrix<f64>,
    q_weight: &DMatrix<f64>,
    r_weight: &DMatrix<f64>,
    x0: &DVector<f64>,
    horizon: f64,
    dt: f64,
) -> Result<Simulation> {
    let acl = system.closed_loop(k);
    let margin = hurwitz_margin(&acl);
    if margin >= 0.0 {
        return Err(Error::NotHurwitz(margin));
    }
    let limit = max_step(&acl);
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::StepTooLarge { dt, limit });
    }
    let kc = k * &system.c;
    let weight = q_weight + kc.transpose() * r_weight * &kc;
    let steps = (horizon / dt).ceil() as usize;
    let mut x = x0.clone();
    let mut j = 0.0;
    let mut sup_2 = 0.0f64;
    let mut sup_inf = 0.0f64;
    let running = |x: &DVector<f64>| x.dot(&(&weight * x));
    let mut sample = |x: &DVector<f64>| {
        let u = &kc * x;
        sup_2 = sup_2.max(u.norm());
        sup_inf = sup_inf.max(u.amax());
    };
    sample(&x);
    for _ in 0..steps {
        let k1 = &acl * &x;
        let x2 = &x + &k1 * (0.5 * dt);
        let k2 = &acl * &x2;
        let x3 = &x + &k2 * (0.5 * dt);
        let k3 = &acl * &x3;
        let x4 = &x + &k3 * dt;
        let k4 = &acl * &x4;
        j += dt / 6.0 * (running(&x) + 2.0 * running(&x2) + 2.0 * running(&x3) + running(&x4));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        sample(&x);
    }
    Ok(Simulation {
        j_quadrature: j,
        sup_u_2: sup_2,
        sup_u_inf: sup_inf,
        steps,
    })
}

/// [`simulate_closed_loop`] at the largest admissible step and the default
/// horizon.
pub fn simulate_auto(
    system: &LtiSystem,
    k: &DMatrix<f64>,
    q_weight: &DMatrix<f64>,
    r_weight: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> Result<Simulation> {
    let acl = system.closed_loop(k);
    let margin = hurwitz_margin(&acl);
    if margin >= 0.0 {
        return Err(Error::NotHurwitz(margin));
    }
    simulate_closed_loop(
        system,
        k,
        q_weight,
        r_weight,
        x0,
        default_horizon(&acl),
        max_step(&acl),
    )
}

/// `x0ᵀ P x0` with `AclᵀP + P Acl + Q + (KC)ᵀR(KC) = 0`.
pub fn trace_cost_from(
    system: &LtiSystem,
    k: &DMatrix<f64>,
    q_weight: &DMatrix<f64>,
    r_weight: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> Result<f64> {
    let acl = system.closed_loop(k);
    let margin = hurwitz_margin(&acl);
    if margin >= 0.0 {
        return Err(Error::NotHurwitz(margin));
    }
    let kc = k * &system.c;
    let p = solve_lyapunov(
        &acl.transpose(),
        &(q_weight + kc.transpose() * r_weight * &kc),
    )?;
    Ok(x0.dot(&(p * x0)))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub penalty_rho: f64,
    pub j_achieved: f64,
    pub j_baseline: f64,
    pub performance_loss: f64,
    pub density: f64,
    pub converged: bool,
    pub wall_time: f64,
}

pub const SWEEP_HEADER: &str = "lambda,rho,J,J_base,loss,density,converged,seconds";

impl SweepRow {
    fn from_result(
        lambda: f64,
        rho: f64,
        j_baseline: f64,
        r: &Result<ControllerResult>,
        secs: f64,
    ) -> Self {
        match r {
            Ok(r) => Self {
                lambda,
                penalty_rho: rho,
                j_achieved: r.j_achieved,
                j_baseline,
                performance_loss: (r.j_achieved - j_baseline) / j_baseline,
                density: r.density,
                converged: r.converged,
                wall_time: secs,
            },
            Err(e) => {
                log::warn!("sweep point lambda={lambda} rho={rho} failed: {e}");
                Self {
                    lambda,
                    penalty_rho: rho,
                    j_achieved: f64::INFINITY,
                    j_baseline,
                    performance_loss: f64::INFINITY,
                    density: f64::NAN,
                    converged: false,
                    wall_time: secs,
                }
            }
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.lambda,
            self.penalty_rho,
            self.j_achieved,
            self.j_baseline,
            self.performance_loss,
            self.density,
            self.converged,
            self.wall_time
        )
    }
}

/// One [`run`] per `(λ, ρ)` grid point, λ outermost. Failed runs are kept
/// as rows with infinite cost.
pub fn sweep(
    template: &SynthesisProblem,
    lambda_grid: &[f64],
    rho_grid: &[f64],
    opts: &AdmmOptions,
) -> Result<Vec<SweepRow>> {
    if lambda_grid.is_empty() || rho_grid.is_empty() {
        return Err(Error::Invalid(vec![Violation::InvalidOption {
            field: "grid".into(),
            detail: "sweep grids must be nonempty".into(),
        }]));
    }
    let j_baseline = crate::admm::lqr_baseline(template)?;
    let mut rows = Vec::with_capacity(lambda_grid.len() * rho_grid.len());
    for &lambda in lambda_grid {
        for &rho in rho_grid {
            let problem = SynthesisProblem {
                lambda,
                ..template.clone()
            };
            let o = AdmmOptions {
                penalty_rho: rho,
                ..opts.clone()
            };
            let t = Instant::now();
            let r = run(&problem, &o);
            rows.push(SweepRow::from_result(
                lambda,
                rho,
                j_baseline,
                &r,
                t.elapsed().as_secs_f64(),
            ));
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignSummary {
    pub j_achieved: f64,
    pub performance_loss: f64,
    pub cardinality: usize,
    pub density: f64,
    pub sup_u_2: f64,
    pub sup_u_inf: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputBoundReport {
    pub unbounded: DesignSummary,
    pub u_max: f64,
    pub bounded: DesignSummary,
    /// `sup ‖u‖ ≤ u_max (1 + 1%)` in simulation.
    pub bound_respected: bool,
    pub certificate_residual: f64,
    pub certified: bool,
    #[serde(skip)]
    pub unbounded_result: Option<ControllerResult>,
    #[serde(skip)]
    pub bounded_result: Option<ControllerResult>,
}

fn summarize(
    problem: &SynthesisProblem,
    r: &ControllerResult,
    x0: &DVector<f64>,
) -> Result<DesignSummary> {
    let sim = simulate_auto(
        &problem.system,
        &r.k_truncated,
        &problem.q_weight,
        &problem.r_weight,
        x0,
    )?;
    Ok(DesignSummary {
        j_achieved: r.j_achieved,
        performance_loss: r.performance_loss(),
        cardinality: r.cardinality(),
        density: r.density,
        sup_u_2: sim.sup_u_2,
        sup_u_inf: sim.sup_u_inf,
    })
}

/// Unconstrained design, measured input peak from `x0`, then a redesign
/// with `u_max = fraction · peak` for the given norm.
pub fn input_bound_experiment(
    template: &SynthesisProblem,
    x0: &DVector<f64>,
    norm_kind: NormKind,
    fraction: f64,
    opts: &AdmmOptions,
) -> Result<InputBoundReport> {
    let free = SynthesisProblem {
        input_bound: None,
        ..template.clone()
    };
    let r0 = run(&free, opts)?;
    let unbounded = summarize(&free, &r0, x0)?;
    let peak = match norm_kind {
        NormKind::Two => unbounded.sup_u_2,
        NormKind::Inf => unbounded.sup_u_inf,
    };
    let u_max = fraction * peak;
    let bounded_problem = SynthesisProblem {
        input_bound: Some(InputBound {
            norm_kind,
            u_max,
            x0: x0.clone(),
        }),
        ..template.clone()
    };
    let r1 = run(&bounded_problem, opts)?;
    let bounded = summarize(&bounded_problem, &r1, x0)?;
    let measured = match norm_kind {
        NormKind::Two => bounded.sup_u_2,
        NormKind::Inf => bounded.sup_u_inf,
    };
    let cert = r1.input_certificate.clone();
    Ok(InputBoundReport {
        unbounded,
        u_max,
        bounded,
        bound_respected: measured <= u_max * 1.01,
        certificate_residual: cert.as_ref().map_or(f64::INFINITY, |c| c.lmi_residual),
        certified: cert.is_some_and(|c| c.certified),
        unbounded_result: Some(r0),
        bounded_result: Some(r1),
    })
}
