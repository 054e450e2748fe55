use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{hurwitz_margin, singular_values, solve_lyapunov, spectral_norm};
use crate::model::{LtiSystem, StructurePattern};

/// Stability-preserving truncation threshold
///
/// `σ_min(N) / Σ_ij ‖B E_ij C X11 + X11 (B E_ij C)ᵀ‖₂`,
///
/// where `(A+BKC) X11 + X11 (A+BKC)ᵀ + noise_like = 0`. Zeroing every entry
/// of `k` with magnitude strictly below the returned value keeps `A + BKC`
/// Hurwitz. Returns `+∞` when every term of the sum vanishes.
pub fn truncation_bound(
    k: &DMatrix<f64>,
    x11: &DMatrix<f64>,
    noise_like: &DMatrix<f64>,
    system: &LtiSystem,
) -> f64 {
    let (m, p) = k.shape();
    let sv = singular_values(noise_like);
    let sigma_min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let cx = &system.c * x11;
    let mut denom = 0.0;
    for i in 0..m {
        for j in 0..p {
            // B E_ij C X11 = b_i (C X11)_j  (outer product of column i and row j)
            let t = system.b.column(i) * cx.row(j);
            denom += spectral_norm(&(&t + t.transpose()));
        }
    }
    if denom == 0.0 {
        f64::INFINITY
    } else {
        sigma_min / denom
    }
}

/// Zeroes entries with `|k_ij| < xi`, and masked entries.
pub fn truncate_below(k: &DMatrix<f64>, xi: f64, pattern: &StructurePattern) -> DMatrix<f64> {
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| {
        if pattern.allows(i, j) && k[(i, j)].abs() >= xi {
            k[(i, j)]
        } else {
            0.0
        }
    })
}

/// Hard threshold at `√(2λ/ρ)`: the exact minimizer of
/// `λ‖K‖₀ + (ρ/2)‖K − anchor‖²` over the pattern. Entries exactly at the
/// threshold are zeroed.
pub fn truncate_l0(
    anchor: &DMatrix<f64>,
    lambda: f64,
    penalty_rho: f64,
    pattern: &StructurePattern,
) -> DMatrix<f64> {
    assert!(penalty_rho > 0.0);
    let thr = (2.0 * lambda / penalty_rho).sqrt();
    DMatrix::from_fn(anchor.nrows(), anchor.ncols(), |i, j| {
        let a = anchor[(i, j)];
        if pattern.allows(i, j) && a.abs() > thr {
            a
        } else {
            0.0
        }
    })
}

/// `J = Tr[Q X11] + Tr[R (KC) X11 (KC)ᵀ]` with `X11` the closed-loop
/// state covariance driven by `noise_cov`.
pub fn evaluate_cost(
    system: &LtiSystem,
    k: &DMatrix<f64>,
    q_weight: &DMatrix<f64>,
    r_weight: &DMatrix<f64>,
    noise_cov: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>)> {
    let acl = system.closed_loop(k);
    let margin = hurwitz_margin(&acl);
    if margin >= 0.0 {
        return Err(Error::NotHurwitz(margin));
    }
    let x11 = solve_lyapunov(&acl, noise_cov)?;
    let kc = k * &system.c;
    let j = (q_weight * &x11).trace() + (r_weight * &kc * &x11 * kc.transpose()).trace();
    Ok((j, x11))
}

/// `‖K‖₀`.
pub fn cardinality(k: &DMatrix<f64>) -> usize {
    k.iter().filter(|&&v| v != 0.0).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn unforced_plant_gives_infinite_bound() {
        let sys = LtiSystem::new(dmatrix![-1.0], dmatrix![0.0], dmatrix![1.0]).unwrap();
        assert_eq!(
            truncation_bound(&dmatrix![0.3], &dmatrix![0.5], &dmatrix![1.0], &sys),
            f64::INFINITY
        );
    }

    #[test]
    fn scalar_bound_formula() {
        // a = −1, b = c = 1, k = 0.1: closed loop −0.9, X11 = N/1.8.
        let sys = LtiSystem::new(dmatrix![-1.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
        let x11 = dmatrix![1.0 / 1.8];
        let xi = truncation_bound(&dmatrix![0.1], &x11, &dmatrix![1.0], &sys);
        assert!((xi - 0.9).abs() < 1e-12);
    }

    #[test]
    fn l0_threshold_examples() {
        let pat = StructurePattern::full(1, 3);
        let thr = 0.2f64.sqrt();
        let out = truncate_l0(&dmatrix![0.5, 0.4, thr], 10.0, 100.0, &pat);
        assert_eq!(out, dmatrix![0.5, 0.0, 0.0]);
        let a = dmatrix![1e-9, -3.0, 0.0];
        assert_eq!(truncate_l0(&a, 0.0, 100.0, &pat), a);
    }

    #[test]
    fn cost_examples() {
        let sys = LtiSystem::new(dmatrix![-1.0], dmatrix![0.0], dmatrix![1.0]).unwrap();
        let one = dmatrix![1.0];
        let (j, x) = evaluate_cost(&sys, &dmatrix![0.0], &one, &one, &one).unwrap();
        assert!((j - 0.5).abs() < 1e-14 && (x[(0, 0)] - 0.5).abs() < 1e-14);
        let sys = LtiSystem::new(dmatrix![0.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
        let (j, _) = evaluate_cost(&sys, &dmatrix![-1.0], &one, &one, &one).unwrap();
        assert!((j - 1.0).abs() < 1e-14);
        assert!(matches!(
            evaluate_cost(&sys, &dmatrix![1.0], &one, &one, &one),
            Err(Error::NotHurwitz(_))
        ));
    }
}
