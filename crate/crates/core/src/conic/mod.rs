//! Convex solvers: the structured X-update of the outer loop and a small
//! dense conic ADMM for the stand-alone semidefinite programs.

mod dynamics;
mod expr;
mod sdp;
mod subproblem;

pub use dynamics::{project_affine_dynamics, DynamicsProjector};
pub use expr::{AffMat, Lin};
pub use sdp::{
    solve_sdp, ConeKind, LiftedHandles, MatVar, SdpBuilder, SdpProblem, SdpSettings, SdpSolution,
    VarKind,
};
pub use subproblem::{solve_subproblem, ConvexSubproblem, SubproblemOutput, WarmStart};

use nalgebra::DMatrix;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    Infeasible,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub status: SolveStatus,
}

/// Entrywise soft threshold `sign(k)·max(|k| − step·w, 0)`.
///
/// Callers fold the regularization weight into `step` and zero masked
/// entries themselves.
pub fn prox_weighted_l1(k: &DMatrix<f64>, weights: &DMatrix<f64>, step: f64) -> DMatrix<f64> {
    assert_eq!(k.shape(), weights.shape());
    k.zip_map(weights, |x, w| soft_threshold(x, step * w))
}

pub(crate) fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn soft_threshold_examples() {
        let w = dmatrix![1.0, 1.0];
        let out = prox_weighted_l1(&dmatrix![1.0, -0.2], &w, 0.3);
        assert!((out[(0, 0)] - 0.7).abs() < 1e-15);
        assert_eq!(out[(0, 1)], 0.0);
    }

    #[test]
    fn matches_grid_minimizer() {
        // λw|x| + (1/2s)(x − k)², scanned on a 1e-4 grid.
        for &(k, w, s) in &[
            (1.3, 0.5, 0.4),
            (-0.7, 2.0, 0.1),
            (0.05, 1.0, 0.2),
            (-2.0, 0.3, 1.5),
        ] {
            let obj = |x: f64| w * x.abs() + (x - k) * (x - k) / (2.0 * s);
            let mut best = (f64::INFINITY, 0.0);
            let mut x = -3.0;
            while x <= 3.0 {
                let v = obj(x);
                if v < best.0 {
                    best = (v, x);
                }
                x += 1e-4;
            }
            let p = prox_weighted_l1(&dmatrix![k], &dmatrix![w], s)[(0, 0)];
            assert!(
                (p - best.1).abs() <= 1e-4,
                "k={k}: prox {p}, grid {}",
                best.1
            );
        }
    }
}
