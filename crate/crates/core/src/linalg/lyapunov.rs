use nalgebra::{DMatrix, DVector};

use super::{eigenvalues, is_schur_coupled, symmetrize};
use crate::error::{Error, Result};

/// Spectrum condition tolerance: `a` and `-aᵀ` must not share an eigenvalue.
const SPECTRUM_TOL: f64 = 1e-10;

/// Solves `a X + X aᵀ + rhs = 0` by the Bartels–Stewart method on the real
/// Schur form of `a`, followed by one step of residual refinement.
pub fn solve_lyapunov(a: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    assert!(
        a.is_square() && rhs.shape() == (n, n),
        "solve_lyapunov: shape mismatch"
    );
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let schur = nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::NoUniqueSolution("Schur iteration did not converge".into()))?;
    let (u, t) = schur.unpack();
    check_sum_spectrum(&t, a.norm())?;

    let mut x = schur_solve(&u, &t, rhs)?;
    let resid = a * &x + &x * a.transpose() + rhs;
    if resid.norm() > 1e-14 * (1.0 + rhs.norm()) {
        let corr = schur_solve(&u, &t, &resid)?;
        x += corr;
    }
    Ok(symmetrize(&x))
}

fn check_sum_spectrum(t: &DMatrix<f64>, scale: f64) -> Result<()> {
    let eig = super::schur_block_eigenvalues(t);
    let tol = SPECTRUM_TOL * (1.0 + scale);
    for (i, &(ri, ii)) in eig.iter().enumerate() {
        for &(rj, ij) in &eig[i..] {
            if (ri + rj).hypot(ii + ij) <= tol {
                return Err(Error::NoUniqueSolution(format!(
                    "eigenvalues {ri}+{ii}i and {rj}+{ij}i sum to zero"
                )));
            }
        }
    }
    Ok(())
}

fn schur_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && is_schur_coupled(t, i) {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Solves `T Y + Y Tᵀ = -Uᵀ rhs U` block column by block column, last first,
/// and maps back with `X = U Y Uᵀ`.
fn schur_solve(u: &DMatrix<f64>, t: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = t.nrows();
    let c = -(u.transpose() * rhs * u);
    let blocks = schur_blocks(t);
    let mut y = DMatrix::<f64>::zeros(n, n);
    for (bi, &(j0, s)) in blocks.iter().enumerate().rev() {
        let mut r = c.columns(j0, s).into_owned();
        for &(k0, sk) in &blocks[bi + 1..] {
            // Σ_K Y_K (T_JK)ᵀ for the already-solved blocks to the right
            let tjk = t.view((j0, k0), (s, sk));
            r -= y.columns(k0, sk) * tjk.transpose();
        }
        let yj = if s == 1 {
            let mut sys = t.clone();
            let d = t[(j0, j0)];
            for i in 0..n {
                sys[(i, i)] += d;
            }
            sys.lu()
                .solve(&r)
                .ok_or_else(|| Error::NoUniqueSolution("singular shifted Schur factor".into()))?
        } else {
            // (I₂ ⊗ T + T_JJ ⊗ I) vec(Y_J) = vec(R)
            let tjj = t.view((j0, j0), (2, 2)).into_owned();
            let mut sys = DMatrix::<f64>::zeros(2 * n, 2 * n);
            for blk in 0..2 {
                sys.view_mut((blk * n, blk * n), (n, n)).copy_from(t);
            }
            for p in 0..2 {
                for q in 0..2 {
                    let v = tjj[(p, q)];
                    for i in 0..n {
                        sys[(p * n + i, q * n + i)] += v;
                    }
                }
            }
            let rv = DVector::from_column_slice(r.as_slice());
            let sol = sys
                .lu()
                .solve(&rv)
                .ok_or_else(|| Error::NoUniqueSolution("singular 2x2 Schur block system".into()))?;
            DMatrix::from_column_slice(n, 2, sol.as_slice())
        };
        y.columns_mut(j0, s).copy_from(&yj);
    }
    Ok(u * y * u.transpose())
}

/// Solves the discrete equation `a X aᵀ − X + q = 0` through its vectorized
/// form `(I − a⊗a) vec X = vec q`.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    assert!(a.is_square() && q.shape() == (n, n));
    let eig = eigenvalues(a);
    for (i, &(ri, ii)) in eig.iter().enumerate() {
        for &(rj, ij) in &eig[i..] {
            let (pr, pi) = (ri * rj - ii * ij, ri * ij + ii * rj);
            if (pr - 1.0).hypot(pi) <= SPECTRUM_TOL * (1.0 + a.norm()) {
                return Err(Error::NoUniqueSolution(
                    "eigenvalue pair of a has product one".into(),
                ));
            }
        }
    }
    let nn = n * n;
    let mut sys = DMatrix::<f64>::identity(nn, nn);
    sys -= a.kronecker(a);
    let rhs = DVector::from_column_slice(q.as_slice());
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoUniqueSolution("singular discrete Lyapunov operator".into()))?;
    Ok(symmetrize(&DMatrix::from_column_slice(
        n,
        n,
        sol.as_slice(),
    )))
}
