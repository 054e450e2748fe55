use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::lifting::LiftedVariable;
use crate::linalg::symmetrize;
use crate::model::LtiSystem;

/// `svec` with the orthonormal basis of symmetric matrices: off-diagonal
/// entries are scaled by √2, so `⟨svec X, svec Y⟩ = ⟨X, Y⟩_F`.
pub(crate) fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut out = DVector::zeros(n * (n + 1) / 2);
    let mut idx = 0;
    for j in 0..n {
        for i in 0..=j {
            out[idx] = if i == j {
                m[(i, i)]
            } else {
                (m[(i, j)] + m[(j, i)]) * std::f64::consts::FRAC_1_SQRT_2
            };
            idx += 1;
        }
    }
    out
}

pub(crate) fn smat(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, n);
    let mut idx = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                out[(i, i)] = v[idx];
            } else {
                let x = v[idx] * std::f64::consts::FRAC_1_SQRT_2;
                out[(i, j)] = x;
                out[(j, i)] = x;
            }
            idx += 1;
        }
    }
    out
}

/// Euclidean projector onto `{(X11, X12) : A X11 + X11 Aᵀ + B X12ᵀ + X12 Bᵀ + N = 0}`.
///
/// Distances are measured as `‖ΔX11‖² + w‖ΔX12‖²`; `w = 2` matches the
/// Frobenius norm of the assembled lifted matrix, where `X12` appears twice.
/// The normal operator is factored once, so each projection costs a few
/// matrix products.
#[derive(Debug, Clone)]
pub struct DynamicsProjector {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    x12_scale: f64,
    normal_pinv: DMatrix<f64>,
    rank_deficient: bool,
}

impl DynamicsProjector {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, x12_weight: f64) -> Self {
        let n = a.nrows();
        let dim = n * (n + 1) / 2;
        let x12_scale = 2.0 / x12_weight;
        let mut t = DMatrix::zeros(dim, dim);
        let mut e = DVector::zeros(dim);
        for k in 0..dim {
            e.fill(0.0);
            e[k] = 1.0;
            let mu = smat(&e, n);
            let col = svec(&normal_op(a, b, x12_scale, &mu));
            t.set_column(k, &col);
        }
        let eig = SymmetricEigen::new(symmetrize(&t));
        let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let cut = 1e-12 * top.max(f64::MIN_POSITIVE);
        let mut rank_deficient = false;
        let mut scaled = eig.eigenvectors.clone();
        for (j, &w) in eig.eigenvalues.iter().enumerate() {
            let s = if w > cut {
                1.0 / w
            } else {
                rank_deficient = true;
                0.0
            };
            scaled.column_mut(j).scale_mut(s);
        }
        if rank_deficient {
            log::warn!("dynamics constraint is not surjective; projecting onto the nearest consistent point");
        }
        Self {
            a: a.clone(),
            b: b.clone(),
            x12_scale,
            normal_pinv: &scaled * eig.eigenvectors.transpose(),
            rank_deficient,
        }
    }

    /// True when the constraint map misses part of the symmetric matrices,
    /// so projections land on the nearest consistent point instead.
    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    /// `A X11 + X11 Aᵀ + B X12ᵀ + X12 Bᵀ + N`.
    pub fn residual(
        &self,
        x11: &DMatrix<f64>,
        x12: &DMatrix<f64>,
        noise: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let ax = &self.a * x11;
        let bx = &self.b * x12.transpose();
        &ax + ax.transpose() + &bx + bx.transpose() + noise
    }

    pub fn project(
        &self,
        x11: &DMatrix<f64>,
        x12: &DMatrix<f64>,
        noise: &DMatrix<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = x11.nrows();
        let x11 = symmetrize(x11);
        let r = symmetrize(&self.residual(&x11, x12, noise));
        let mu = smat(&(&self.normal_pinv * svec(&r)), n);
        let amu = self.a.transpose() * &mu;
        let new11 = symmetrize(&(&x11 - &amu - amu.transpose()));
        let new12 = x12 - (&mu * &self.b) * self.x12_scale;
        (new11, new12)
    }
}

fn normal_op(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x12_scale: f64,
    mu: &DMatrix<f64>,
) -> DMatrix<f64> {
    // L(L*(μ)) with L*(μ) = (Aᵀμ + μA, scale·μB)
    let d11 = a.transpose() * mu + mu * a;
    let d12 = mu * b * x12_scale;
    let ad = a * &d11;
    let bd = b * d12.transpose();
    &ad + ad.transpose() + &bd + bd.transpose()
}

/// Frobenius-nearest point (blockwise, unit weights) of `(X11, X12)` on the
/// dynamics constraint; the other blocks are returned untouched.
pub fn project_affine_dynamics(
    v: &LiftedVariable,
    system: &LtiSystem,
    noise_cov: &DMatrix<f64>,
) -> LiftedVariable {
    let proj = DynamicsProjector::new(&system.a, &system.b, 1.0);
    let (x11, x12) = proj.project(&v.x11, &v.x12, noise_cov);
    LiftedVariable {
        x11,
        x12,
        ..v.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn svec_round_trip() {
        let m = dmatrix![1.0, 2.0, 3.0; 2.0, 4.0, 5.0; 3.0, 5.0, 6.0];
        assert!((smat(&svec(&m), 3) - &m).norm() < 1e-14);
        assert!((svec(&m).norm() - m.norm()).abs() < 1e-12);
    }

    #[test]
    fn decoupled_scalar() {
        let sys = LtiSystem::new(dmatrix![-1.0], dmatrix![0.0], dmatrix![1.0]).unwrap();
        let mut v = LiftedVariable::zeros(1, 1, 1);
        v.x11 = dmatrix![7.0];
        v.x12 = dmatrix![0.3];
        let out = project_affine_dynamics(&v, &sys, &dmatrix![2.0]);
        assert!((out.x11[(0, 0)] - 1.0).abs() < 1e-14);
        assert_eq!(out.x12, v.x12);
    }
}
