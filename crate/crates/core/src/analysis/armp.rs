//! Block-diagonal affine rank minimization form of the sparsest-controller
//! program, and the discrete-time rank test.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    min_eigenvalue, numerical_rank, solve_discrete_lyapunov, spectral_radius, sqrtm_psd,
};
use crate::model::{LtiSystem, StructurePattern};

/// Fixed `ε` of the strict-positivity rank encoding.
pub const ARMP_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct ArmpInstance {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub nu: usize,
    pub rho_rank: usize,
    pub eps: f64,
    #[serde(skip)]
    pub c: DMatrix<f64>,
    #[serde(skip)]
    pub pattern: StructurePattern,
}

/// Values of the free variables: `K`, `X11`, `X12`, `N` and the `2n × 2n`
/// factor `D`.
#[derive(Debug, Clone)]
pub struct ArmpPoint {
    pub k: DMatrix<f64>,
    pub x11: DMatrix<f64>,
    pub x12: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

/// Checks `ν > m·n` and `ρ > m·n + ν·max(2n, n+m)`.
pub fn build_armp(
    system: &LtiSystem,
    pattern: &StructurePattern,
    nu: usize,
    rho_rank: usize,
    eps: f64,
) -> Result<ArmpInstance> {
    let (n, m, p) = (system.n(), system.m(), system.p());
    let mn = m * n;
    if nu <= mn {
        return Err(Error::ParameterTooSmall(format!("nu = {nu} must exceed m·n = {mn}")));
    }
    let need = mn + nu * (2 * n).max(n + m);
    if rho_rank <= need {
        return Err(Error::ParameterTooSmall(format!(
            "rho = {rho_rank} must exceed m·n + nu·max(2n, n+m) = {need}"
        )));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::ParameterTooSmall(format!("eps = {eps} must be positive")));
    }
    Ok(ArmpInstance {
        n,
        m,
        p,
        nu,
        rho_rank,
        eps,
        c: system.c.clone(),
        pattern: pattern.clone(),
    })
}

impl ArmpInstance {
    /// Order of the square `Ψ` blocks.
    pub fn psi_order(&self) -> usize {
        (2 * self.n).max(self.n + self.m)
    }

    /// Orders of `diag(vec K)`, the `ν` copies of `Ψ` and the `ρ` copies of `Φ`.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut out = vec![self.m * self.p];
        out.extend(std::iter::repeat_n(self.psi_order(), self.nu));
        out.extend(std::iter::repeat_n(4 * self.n, self.rho_rank));
        out
    }

    /// `[[X11, X12], [I, (KC)ᵀ]]` padded with zero columns (`m < n`) or zero
    /// rows (`m > n`) to a square matrix.
    pub fn psi(&self, pt: &ArmpPoint) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let q = self.psi_order();
        let kc = &pt.k * &self.c;
        let mut out = DMatrix::zeros(q, q);
        out.view_mut((0, 0), (n, n)).copy_from(&pt.x11);
        out.view_mut((0, n), (n, m)).copy_from(&pt.x12);
        out.view_mut((n, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
        out.view_mut((n, n), (n, m)).copy_from(&kc.transpose());
        out
    }

    /// `[[I, D], [Dᵀ, diag(X11, N) − εI]]`.
    pub fn phi(&self, pt: &ArmpPoint) -> DMatrix<f64> {
        let n = self.n;
        let mut out = DMatrix::zeros(4 * n, 4 * n);
        out.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&DMatrix::identity(2 * n, 2 * n));
        out.view_mut((0, 2 * n), (2 * n, 2 * n)).copy_from(&pt.d);
        out.view_mut((2 * n, 0), (2 * n, 2 * n)).copy_from(&pt.d.transpose());
        out.view_mut((2 * n, 2 * n), (2 * n, 2 * n)).copy_from(&self.shifted(pt));
        out
    }

    fn shifted(&self, pt: &ArmpPoint) -> DMatrix<f64> {
        let n = self.n;
        let mut s = DMatrix::zeros(2 * n, 2 * n);
        s.view_mut((0, 0), (n, n)).copy_from(&pt.x11);
        s.view_mut((n, n), (n, n)).copy_from(&pt.noise);
        s - DMatrix::identity(2 * n, 2 * n) * self.eps
    }

    /// `D = (diag(X11, N) − εI)^{1/2}`, which gives `Φ` rank `2n` whenever
    /// the shifted block is PSD.
    pub fn initial_d(&self, x11: &DMatrix<f64>, noise: &DMatrix<f64>) -> DMatrix<f64> {
        let pt = ArmpPoint {
            k: DMatrix::zeros(self.m, self.p),
            x11: x11.clone(),
            x12: DMatrix::zeros(self.n, self.m),
            noise: noise.clone(),
            d: DMatrix::zeros(2 * self.n, 2 * self.n),
        };
        sqrtm_psd(&self.shifted(&pt))
    }

    /// The block-diagonal matrix whose rank is the program objective.
    pub fn assemble(&self, pt: &ArmpPoint) -> DMatrix<f64> {
        let total: usize = self.block_sizes().iter().sum();
        let mut out = DMatrix::zeros(total, total);
        let mp = self.m * self.p;
        for j in 0..self.p {
            for i in 0..self.m {
                let r = j * self.m + i;
                out[(r, r)] = pt.k[(i, j)];
            }
        }
        let mut at = mp;
        let psi = self.psi(pt);
        for _ in 0..self.nu {
            out.view_mut((at, at), psi.shape()).copy_from(&psi);
            at += psi.nrows();
        }
        let phi = self.phi(pt);
        for _ in 0..self.rho_rank {
            out.view_mut((at, at), phi.shape()).copy_from(&phi);
            at += phi.nrows();
        }
        out
    }

    /// `‖K‖₀ + ν·rank Ψ + ρ·rank Φ`.
    pub fn objective(&self, pt: &ArmpPoint) -> usize {
        let nnz = pt.k.iter().filter(|v| **v != 0.0).count();
        nnz + self.nu * numerical_rank(&self.psi(pt)) + self.rho_rank * numerical_rank(&self.phi(pt))
    }
}

/// Discrete-time check: with `Yᵀ = BKC`, `X11` from
/// `(A+BKC)ᵀX11(A+BKC) − X11 + I = 0`, `X12 = X11·BKC` and
/// `X22 = (BKC)ᵀX11·BKC`, verifies the Lyapunov identity to `1e−8` and
/// that `[[X11, X12], [X12ᵀ, X22], [I, Yᵀ]]` has numerical rank `n`.
pub fn discrete_rank_test(system: &LtiSystem, pattern: &StructurePattern, k: &DMatrix<f64>) -> bool {
    if !pattern.contains(k) {
        return false;
    }
    let n = system.n();
    let acl = system.closed_loop(k);
    if spectral_radius(&acl) >= 1.0 {
        return false;
    }
    let eye = DMatrix::identity(n, n);
    let Ok(x11) = solve_discrete_lyapunov(&acl.transpose(), &eye) else {
        return false;
    };
    if min_eigenvalue(&x11) <= 0.0 {
        return false;
    }
    let a = &system.a;
    let yt = &system.b * k * &system.c;
    let x12 = &x11 * &yt;
    let x22 = yt.transpose() * &x11 * &yt;
    let residual = a.transpose() * &x11 * a + a.transpose() * &x12 + x12.transpose() * a + &x22 - &x11 + &eye;
    if residual.amax() > 1e-8 * (1.0 + x11.amax()) {
        return false;
    }
    let mut stacked = DMatrix::zeros(3 * n, 2 * n);
    stacked.view_mut((0, 0), (n, n)).copy_from(&x11);
    stacked.view_mut((0, n), (n, n)).copy_from(&x12);
    stacked.view_mut((n, 0), (n, n)).copy_from(&x12.transpose());
    stacked.view_mut((n, n), (n, n)).copy_from(&x22);
    stacked.view_mut((2 * n, 0), (n, n)).copy_from(&eye);
    stacked.view_mut((2 * n, n), (n, n)).copy_from(&yt);
    numerical_rank(&stacked) == n
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar() -> LtiSystem {
        LtiSystem::new(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0]).unwrap()
    }

    #[test]
    fn parameter_inequalities() {
        let s = scalar();
        let pat = StructurePattern::full(1, 1);
        // ν > 1 and ρ > 1 + ν·2
        assert!(build_armp(&s, &pat, 2, 6, ARMP_EPS).is_ok());
        assert!(build_armp(&s, &pat, 2, 7, ARMP_EPS).is_ok());
        assert!(matches!(build_armp(&s, &pat, 2, 5, ARMP_EPS), Err(Error::ParameterTooSmall(_))));
        assert!(matches!(build_armp(&s, &pat, 1, 100, ARMP_EPS), Err(Error::ParameterTooSmall(_))));
    }

    #[test]
    fn psi_padding_shapes() {
        // m < n: zero columns
        let s = LtiSystem::state_feedback(DMatrix::identity(3, 3), DMatrix::from_element(3, 1, 1.0)).unwrap();
        let inst = build_armp(&s, &StructurePattern::full(1, 3), 4, 100, ARMP_EPS).unwrap();
        let pt = ArmpPoint {
            k: dmatrix![1.0, 2.0, 3.0],
            x11: DMatrix::identity(3, 3) * 2.0,
            x12: DMatrix::from_element(3, 1, 0.5),
            noise: DMatrix::identity(3, 3),
            d: DMatrix::zeros(6, 6),
        };
        let psi = inst.psi(&pt);
        assert_eq!(psi.shape(), (6, 6));
        assert!(psi.columns(4, 2).iter().all(|v| *v == 0.0));
        assert_eq!(inst.block_sizes(), [vec![3], vec![6; 4], vec![12; 100]].concat());
    }

    #[test]
    fn rank_is_additive_over_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = LtiSystem::state_feedback(
            DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::from_fn(2, 1, |_, _| rng.random_range(-1.0..1.0)),
        )
        .unwrap();
        let inst = build_armp(&s, &StructurePattern::full(1, 2), 3, 15, ARMP_EPS).unwrap();
        for _ in 0..5 {
            let x11 = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let x11 = &x11 * x11.transpose() + DMatrix::identity(2, 2);
            let noise = DMatrix::identity(2, 2);
            let mut pt = ArmpPoint {
                k: dmatrix![rng.random_range(-1.0..1.0), 0.0],
                x12: DMatrix::from_fn(2, 1, |_, _| rng.random_range(-1.0..1.0)),
                d: DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0)),
                x11,
                noise,
            };
            let big = inst.assemble(&pt);
            assert_eq!(numerical_rank(&big), inst.objective(&pt));
            pt.d = inst.initial_d(&pt.x11, &pt.noise);
            assert_eq!(numerical_rank(&inst.phi(&pt)), 4);
        }
    }

    #[test]
    fn discrete_examples() {
        let s = LtiSystem::new(dmatrix![0.5], dmatrix![1.0], dmatrix![1.0]).unwrap();
        assert!(discrete_rank_test(&s, &StructurePattern::full(1, 1), &dmatrix![0.0]));
        let s = LtiSystem::new(dmatrix![2.0], dmatrix![0.0], dmatrix![1.0]).unwrap();
        assert!(!discrete_rank_test(&s, &StructurePattern::full(1, 1), &dmatrix![0.0]));
    }

    #[test]
    fn deadbeat_gain_passes() {
        // K = −A for B = C = I places every closed-loop pole at the origin
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0));
        let s = LtiSystem::state_feedback(a.clone(), DMatrix::identity(3, 3)).unwrap();
        assert!(discrete_rank_test(&s, &StructurePattern::full(3, 3), &(-&a * 0.9)));
        // a gain outside the pattern is rejected
        assert!(!discrete_rank_test(&s, &StructurePattern::empty(3, 3), &(-&a * 0.9)));
    }
}
