//! Sparsest stabilizing gain: a rank-penalized cardinality program on
//! `M = [[X11, X12], [I, (KC)ᵀ]]`, attacked by alternating a reweighted-ℓ1
//! convex step with singular-value projection onto rank `n`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::feasibility::{feasibility_test, Verdict};
use crate::admm::{cardinality, reweight, truncate_below, truncation_bound};
use crate::conic::{AffMat, SdpBuilder, SdpSettings, SolveStatus};
use crate::error::{Error, Result};
use crate::linalg::{hurwitz_margin, project_rank, solve_lyapunov};
use crate::model::{AdmmOptions, LtiSystem, StructurePattern};
use crate::serde_mat;

const RESTARTS: usize = 3;
const ALTERNATIONS: usize = 60;
const RANK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct SparsestResult {
    #[serde(serialize_with = "serde_mat::rows")]
    pub k: DMatrix<f64>,
    pub cardinality: usize,
    pub stability_margin: f64,
    /// Entries removed by support pruning after the rank-penalized search.
    pub pruned: usize,
}

/// Penalty weight `ν = m·n + 1`, the smallest integer admissible for the
/// rank-penalized reformulation.
pub fn rank_penalty(system: &LtiSystem) -> f64 {
    (system.m() * system.n() + 1) as f64
}

struct Step {
    m_value: DMatrix<f64>,
    k: DMatrix<f64>,
}

/// `min Σ w|K| + (ν/2)‖M − V‖²` over `AX11 + X11Aᵀ + BX12ᵀ + X12Bᵀ ⪯ −I`,
/// `X11 ⪰ εI`, `K ∈ 𝒦`, with `L = KC` carried as its own variable.
fn convex_step(
    system: &LtiSystem,
    pattern: &StructurePattern,
    anchor: &DMatrix<f64>,
    weights: &DMatrix<f64>,
    nu: f64,
    opts: &AdmmOptions,
) -> Option<Step> {
    let (n, m) = (system.n(), system.m());
    let mut b = SdpBuilder::new();
    let x11 = b.symmetric(n);
    let x12 = b.full(n, m);
    let k = b.masked(pattern);
    let l = b.full(m, n);
    b.eq(&(&l.expr() - &k.expr().right_mul(&system.c)), &DMatrix::zeros(m, n));
    let ax = x11.expr().left_mul(&system.a);
    let bx = x12.expr().transpose().left_mul(&system.b);
    let s = &ax + &bx;
    let lyap = &s + &s.transpose();
    b.psd(&(&lyap.scale(-1.0) - &AffMat::identity(n)));
    b.psd(&(&x11.expr() - &AffMat::constant(&(DMatrix::identity(n, n) * opts.strict_eps))));
    let mexpr = AffMat::blocks(&[
        vec![x11.expr(), x12.expr()],
        vec![AffMat::identity(n), l.expr().transpose()],
    ]);
    b.add_l1(&k.expr(), weights);
    b.add_prox(&mexpr, anchor, nu);
    let sol = b.compile().solve(&SdpSettings::from_options(opts));
    if sol.report.status == SolveStatus::Infeasible {
        return None;
    }
    Some(Step {
        m_value: sol.eval(&mexpr),
        k: pattern.apply(&sol.value(&k)),
    })
}

/// Certified truncation of a stabilizing gain, or `None` if `k` does not
/// stabilize.
fn certified_sparsify(system: &LtiSystem, k: &DMatrix<f64>, pattern: &StructurePattern) -> Option<DMatrix<f64>> {
    let acl = system.closed_loop(k);
    if hurwitz_margin(&acl) >= 0.0 {
        return None;
    }
    let n = system.n();
    let eye = DMatrix::identity(n, n);
    let x11 = solve_lyapunov(&acl, &eye).ok()?;
    let xi = truncation_bound(k, &x11, &eye, system);
    let kt = truncate_below(k, xi.min(f64::MAX), pattern);
    (hurwitz_margin(&system.closed_loop(&kt)) < 0.0).then_some(kt)
}

fn rank_search(
    system: &LtiSystem,
    pattern: &StructurePattern,
    start: DMatrix<f64>,
    opts: &AdmmOptions,
) -> Option<DMatrix<f64>> {
    let (n, m, p) = (system.n(), system.m(), system.p());
    let nu = rank_penalty(system);
    let mut anchor = start;
    let mut weights = DMatrix::from_element(m, p, 1.0);
    let mut best: Option<DMatrix<f64>> = None;
    for _ in 0..ALTERNATIONS {
        let step = convex_step(system, pattern, &anchor, &weights, nu, opts)?;
        if let Some(kt) = certified_sparsify(system, &step.k, pattern) {
            if best.as_ref().is_none_or(|b| cardinality(&kt) < cardinality(b)) {
                best = Some(kt);
            }
        }
        let v = project_rank(&step.m_value, n);
        let gap = (&step.m_value - &v).norm();
        weights = reweight(&step.k, opts.reweight_delta);
        anchor = v;
        if gap < RANK_TOL * (1.0 + step.m_value.norm()) && best.is_some() {
            break;
        }
    }
    best
}

fn support_without(k: &DMatrix<f64>, i: usize, j: usize) -> StructurePattern {
    let mut s = StructurePattern::support_of(k);
    s.set(i, j, false);
    s
}

/// Returns a stabilizing gain in the pattern of smallest cardinality found.
///
/// A Hurwitz `A` gives `K = 0`. Otherwise the rank-penalized search runs
/// from the feasibility certificate and from seeded random anchors; its
/// best certified-truncated gain is then pruned entry by entry, smallest
/// magnitude first, keeping each removal whose support passes
/// [`feasibility_test`].
pub fn sparsest_controller(
    system: &LtiSystem,
    pattern: &StructurePattern,
    opts: &AdmmOptions,
    seed: u64,
) -> Result<SparsestResult> {
    let (n, m, p) = (system.n(), system.m(), system.p());
    let margin0 = hurwitz_margin(&system.a);
    if margin0 < 0.0 {
        return Ok(SparsestResult {
            k: DMatrix::zeros(m, p),
            cardinality: 0,
            stability_margin: margin0,
            pruned: 0,
        });
    }
    let feas = feasibility_test(system, pattern, opts, seed);
    if feas.verdict == Verdict::Infeasible {
        return Err(Error::Infeasible("no stabilizing gain in the pattern".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = Vec::with_capacity(RESTARTS + 1);
    if let Some(k) = &feas.k_candidate {
        starts.push(two_column_start(system, k));
    }
    for _ in 0..RESTARTS {
        starts.push(DMatrix::from_fn(2 * n, n + m, |_, _| rng.random_range(-1.0..1.0)));
    }
    let mut best: Option<DMatrix<f64>> = feas
        .k_candidate
        .as_ref()
        .and_then(|k| certified_sparsify(system, k, pattern));
    for start in starts {
        if let Some(k) = rank_search(system, pattern, start, opts) {
            if best.as_ref().is_none_or(|b| cardinality(&k) < cardinality(b)) {
                best = Some(k);
            }
        }
    }
    let mut k = best.ok_or_else(|| Error::HeuristicFailure("no stabilizing gain found".into()))?;
    let before = cardinality(&k);
    loop {
        let mut entries: Vec<(usize, usize)> = (0..m)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .filter(|&(i, j)| k[(i, j)] != 0.0)
            .collect();
        entries.sort_by(|a, b| k[*a].abs().total_cmp(&k[*b].abs()));
        let mut improved = false;
        for (i, j) in entries {
            let sub = support_without(&k, i, j);
            let r = feasibility_test(system, &sub, opts, seed);
            if r.verdict != Verdict::Feasible {
                continue;
            }
            if let Some(kc) = r.k_candidate.and_then(|kc| certified_sparsify(system, &kc, &sub)) {
                k = kc;
                improved = true;
                break;
            }
        }
        if !improved {
            break;
        }
    }
    let card = cardinality(&k);
    Ok(SparsestResult {
        stability_margin: hurwitz_margin(&system.closed_loop(&k)),
        cardinality: card,
        pruned: before - card,
        k,
    })
}

/// `M` at the rank-`n` point generated by a stabilizing gain.
fn two_column_start(system: &LtiSystem, k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = system.n();
    let acl = system.closed_loop(k);
    let x11 = solve_lyapunov(&acl, &DMatrix::identity(n, n)).unwrap_or_else(|_| DMatrix::identity(n, n));
    let kc = k * &system.c;
    let x12 = &x11 * kc.transpose();
    let m = system.m();
    let mut out = DMatrix::zeros(2 * n, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(&x11);
    out.view_mut((0, n), (n, m)).copy_from(&x12);
    out.view_mut((n, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    out.view_mut((n, n), (n, m)).copy_from(&kc.transpose());
    out
}
