//! Dense matrix kernels: symmetric spectra, SVD truncation, cone projections,
//! Lyapunov and Riccati solvers.
//!
//! Everything here is a pure function of its inputs. Matrices are
//! `nalgebra::DMatrix<f64>`; symmetric inputs are symmetrized before any
//! symmetric factorization.

mod lyapunov;
mod riccati;

pub use lyapunov::{solve_discrete_lyapunov, solve_lyapunov};
pub use riccati::{care_residual, solve_care, CareSolution};

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

/// Relative threshold (times the largest singular value) below which a
/// singular value counts as zero when estimating rank.
pub const RANK_TAU: f64 = 1e-9;

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct SpectralFactor {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors, column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralFactor {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(symmetrize(m));
        let d = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let eigenvalues = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut eigenvectors = DMatrix::zeros(d, d);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Self {
            eigenvalues,
            eigenvectors,
        }
    }

    /// `V diag(f(w)) Vᵀ`.
    pub fn recompose_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = self.eigenvalues.len();
        let mut scaled = self.eigenvectors.clone();
        for j in 0..d {
            let s = f(self.eigenvalues[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        let out = &scaled * self.eigenvectors.transpose();
        symmetrize(&out)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Frobenius-nearest positive semidefinite matrix (eigenvalue clamping).
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    SpectralFactor::new(m).recompose_with(|w| w.max(0.0))
}

/// Eckart–Young truncation: keep the `r` leading singular dyads.
///
/// Ties among equal singular values are resolved by SVD order.
pub fn project_rank(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let k = m.nrows().min(m.ncols());
    if r >= k {
        return m.clone();
    }
    let svd = SVD::new(m.clone(), true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v requested");
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..r {
        let s = svd.singular_values[i];
        out += (u.column(i) * s) * vt.row(i);
    }
    out
}

/// Rank truncation for symmetric matrices. The input is symmetrized first;
/// the `r` eigenpairs of largest magnitude are kept, which is the SVD
/// truncation of a symmetric matrix and keeps the result exactly symmetric.
pub fn project_rank_symmetric(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let d = m.nrows();
    if r >= d {
        return symmetrize(m);
    }
    let f = SpectralFactor::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    // stable sort keeps the descending-eigenvalue order among ties
    order.sort_by(|&i, &j| f.eigenvalues[j].abs().total_cmp(&f.eigenvalues[i].abs()));
    let mut out = DMatrix::zeros(d, d);
    for &i in order.iter().take(r) {
        let v = f.eigenvectors.column(i);
        out += (v * f.eigenvalues[i]) * v.transpose();
    }
    symmetrize(&out)
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    SVD::new(m.clone(), false, false).singular_values
}

/// Number of singular values above `RANK_TAU · σ₁`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    rank_from_singular_values(&singular_values(m))
}

pub fn rank_from_singular_values(sv: &DVector<f64>) -> usize {
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TAU * top).count()
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().copied().fold(0.0, f64::max)
}

/// Spectral abscissa: the largest real part among the eigenvalues.
/// The matrix is Hurwitz iff the result is negative.
pub fn hurwitz_margin(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "hurwitz_margin needs a square matrix");
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    eigenvalues(m)
        .iter()
        .map(|z| z.0)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Spectral radius, used by the discrete-time checks.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m)
        .iter()
        .map(|z| z.0.hypot(z.1))
        .fold(0.0, f64::max)
}

/// Eigenvalues of a general real square matrix as `(re, im)` pairs, read off
/// the real Schur form.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let n = m.nrows();
    let t = match nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 100_000) {
        Some(s) => s.unpack().1,
        None => return vec![(f64::NAN, 0.0); n],
    };
    schur_block_eigenvalues(&t)
}

/// Eigenvalues of a quasi-upper-triangular matrix, block by block.
pub(crate) fn schur_block_eigenvalues(t: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let n = t.nrows();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if i + 1 < n && is_schur_coupled(t, i) {
            let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let tr = 0.5 * (a + d);
            let disc = 0.25 * (a - d) * (a - d) + b * c;
            if disc >= 0.0 {
                let s = disc.sqrt();
                out.push((tr + s, 0.0));
                out.push((tr - s, 0.0));
            } else {
                let s = (-disc).sqrt();
                out.push((tr, s));
                out.push((tr, -s));
            }
            i += 2;
        } else {
            out.push((t[(i, i)], 0.0));
            i += 1;
        }
    }
    out
}

pub(crate) fn is_schur_coupled(t: &DMatrix<f64>, i: usize) -> bool {
    let sub = t[(i + 1, i)].abs();
    let scale = t[(i, i)].abs() + t[(i + 1, i + 1)].abs();
    sub > f64::EPSILON * scale.max(f64::MIN_POSITIVE) * 4.0 && sub > 0.0
}

/// Sum of the `k` algebraically smallest eigenvalues of a symmetric matrix.
pub fn sum_smallest_eigs(m: &DMatrix<f64>, k: usize) -> f64 {
    let f = SpectralFactor::new(m);
    let d = f.eigenvalues.len();
    assert!(k <= d, "k = {k} exceeds dimension {d}");
    f.eigenvalues.iter().skip(d - k).sum()
}

/// Builds `M = [U V; Vᵀ W; I Yᵀ]` with `V = U Yᵀ` and `W = Y U Yᵀ`, optionally
/// perturbing `W` by `eta·I`, and returns its numerical rank and singular
/// values. With `eta = 0` the rank is `n` whenever `U ≻ 0`.
pub fn verify_lemma1(u: &DMatrix<f64>, y: &DMatrix<f64>, eta: f64) -> (usize, DVector<f64>) {
    let n = u.nrows();
    let m = y.nrows();
    assert_eq!(y.ncols(), n);
    let v = u * y.transpose();
    let mut w = y * u * y.transpose();
    for i in 0..m {
        w[(i, i)] += eta;
    }
    let mut big = DMatrix::zeros(2 * n + m, n + m);
    big.view_mut((0, 0), (n, n)).copy_from(u);
    big.view_mut((0, n), (n, m)).copy_from(&v);
    big.view_mut((n, 0), (m, n)).copy_from(&v.transpose());
    big.view_mut((n, n), (m, m)).copy_from(&w);
    big.view_mut((n + m, 0), (n, n)).fill_with_identity();
    big.view_mut((n + m, n), (n, m)).copy_from(&y.transpose());
    let sv = singular_values(&big);
    (rank_from_singular_values(&sv), sv)
}

/// Pseudo-inverse with relative cutoff `RANK_TAU`.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = SVD::new(m.clone(), true, true);
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    svd.pseudo_inverse(RANK_TAU * top.max(f64::MIN_POSITIVE))
        .expect("u and v were computed")
}

/// Inverse of a symmetric positive definite matrix via Cholesky, falling back
/// to the pseudo-inverse.
pub fn spd_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    match symmetrize(m).cholesky() {
        Some(c) => symmetrize(&c.inverse()),
        None => symmetrize(&pinv(m)),
    }
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clamped).
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    SpectralFactor::new(m).recompose_with(|w| w.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn psd_projection_clamps() {
        let p = project_psd(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])));
        assert!((p - DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).norm() < 1e-14);
        let a = dmatrix![2.0, 1.0; 1.0, 2.0];
        assert!((project_psd(&a) - &a).norm() < 1e-12);
    }

    #[test]
    fn rank_projection_drops_smallest() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 0.0]));
        assert!((project_rank(&d, 2) - &expect).norm() < 1e-12);
        assert!((project_rank_symmetric(&d, 2) - &expect).norm() < 1e-12);
    }

    #[test]
    fn symmetric_rank_projection_keeps_large_negative() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -3.0, 0.5]));
        let p = project_rank_symmetric(&d, 1);
        assert!((p[(1, 1)] + 3.0).abs() < 1e-12);
        assert!((project_rank(&d, 1) - p).norm() < 1e-12);
    }

    #[test]
    fn margins() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        assert!((hurwitz_margin(&d) + 1.0).abs() < 1e-12);
        let rot = dmatrix![0.0, 1.0; -1.0, 0.0];
        assert!(hurwitz_margin(&rot).abs() < 1e-12);
    }

    #[test]
    fn smallest_eigs() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0]));
        assert!((sum_smallest_eigs(&d, 2) - 3.0).abs() < 1e-12);
        assert!((sum_smallest_eigs(&DMatrix::identity(4, 4), 4) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn lemma1_identity_case() {
        let (r, _) = verify_lemma1(&DMatrix::identity(2, 2), &dmatrix![1.0, 0.0], 0.0);
        assert_eq!(r, 2);
    }

    #[test]
    fn spectral_factor_is_descending_and_orthonormal() {
        let m = dmatrix![4.0, 1.0, 0.5; 1.0, -2.0, 0.3; 0.5, 0.3, 1.0];
        let f = SpectralFactor::new(&m);
        for i in 1..3 {
            assert!(f.eigenvalues[i - 1] >= f.eigenvalues[i]);
        }
        let vtv = f.eigenvectors.transpose() * &f.eigenvectors;
        assert!((vtv - DMatrix::identity(3, 3)).norm() < 1e-10);
        assert!((f.recompose_with(|w| w) - &m).norm() < 1e-10 * (1.0 + m.norm()));
    }
}
