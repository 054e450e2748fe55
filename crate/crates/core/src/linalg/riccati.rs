use nalgebra::DMatrix;

use super::{hurwitz_margin, solve_lyapunov, spd_inverse, symmetrize};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CareSolution {
    /// Stabilizing solution of `AᵀP + PA − PBR⁻¹BᵀP + Q = 0`.
    pub p_matrix: DMatrix<f64>,
    /// `−R⁻¹BᵀP`, so that `A + B·k_lqr` is Hurwitz.
    pub k_lqr: DMatrix<f64>,
}

impl CareSolution {
    /// Expected LQR cost for `x0 ~ N(0, noise_cov)`: `Tr(P N)`.
    pub fn cost(&self, noise_cov: &DMatrix<f64>) -> f64 {
        (&self.p_matrix * noise_cov).trace()
    }
}

/// Continuous algebraic Riccati equation.
///
/// The stable invariant subspace of the Hamiltonian
/// `[[A, −BR⁻¹Bᵀ], [−Q, −Aᵀ]]` is extracted with the matrix sign function;
/// the resulting gain is refined by Newton–Kleinman iterations.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<CareSolution> {
    let n = a.nrows();
    let m = b.ncols();
    assert_eq!(b.nrows(), n);
    assert_eq!(q.shape(), (n, n));
    assert_eq!(r.shape(), (m, m));
    let r_inv = spd_inverse(r);
    let g = b * &r_inv * b.transpose();

    let p0 = sign_function_care(a, &g, q);
    let mut p = match p0 {
        Some(p) => p,
        None if hurwitz_margin(a) < 0.0 => DMatrix::zeros(n, n),
        None => {
            return Err(Error::NotStabilizable(
                "Hamiltonian has no graph-form stable subspace".into(),
            ))
        }
    };
    let mut k = -(&r_inv * b.transpose() * &p);
    if hurwitz_margin(&(a + b * &k)) >= 0.0 {
        return Err(Error::NotStabilizable(
            "Riccati solution does not stabilize the closed loop".into(),
        ));
    }
    for _ in 0..30 {
        let acl = a + b * &k;
        let rhs = q + k.transpose() * r * &k;
        let p_next = solve_lyapunov(&acl.transpose(), &rhs)?;
        let delta = (&p_next - &p).norm();
        p = p_next;
        k = -(&r_inv * b.transpose() * &p);
        if delta <= 1e-14 * (1.0 + p.norm()) {
            break;
        }
    }
    if hurwitz_margin(&(a + b * &k)) >= 0.0 {
        return Err(Error::NotStabilizable(
            "Newton refinement lost stability".into(),
        ));
    }
    Ok(CareSolution {
        p_matrix: symmetrize(&p),
        k_lqr: k,
    })
}

/// Residual `AᵀP + PA − PBR⁻¹BᵀP + Q`.
pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> DMatrix<f64> {
    a.transpose() * p + p * a - p * b * spd_inverse(r) * b.transpose() * p + q
}

fn sign_function_care(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut z = h;
    let dim = (2 * n) as f64;
    let mut converged = false;
    for _ in 0..200 {
        let lu = z.clone().lu();
        let det = lu.determinant();
        if !det.is_finite() || det == 0.0 {
            return None;
        }
        let z_inv = lu.try_inverse()?;
        let c = det.abs().powf(1.0 / dim);
        let next = (&z / c + &z_inv * c) * 0.5;
        let delta = (&next - &z).norm();
        z = next;
        if !z.iter().all(|v| v.is_finite()) {
            return None;
        }
        if delta <= 1e-13 * z.norm() {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }
    // (W + I) [I; P] = 0
    let mut lhs = DMatrix::zeros(2 * n, n);
    let mut rhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n))
        .copy_from(&z.view((0, n), (n, n)));
    let mut w22 = z.view((n, n), (n, n)).into_owned();
    for i in 0..n {
        w22[(i, i)] += 1.0;
    }
    lhs.view_mut((n, 0), (n, n)).copy_from(&w22);
    let mut w11 = z.view((0, 0), (n, n)).into_owned();
    for i in 0..n {
        w11[(i, i)] += 1.0;
    }
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-w11));
    rhs.view_mut((n, 0), (n, n))
        .copy_from(&(-z.view((n, 0), (n, n)).into_owned()));
    let svd = lhs.svd(true, true);
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let low = svd
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if top == 0.0 || low <= 1e-10 * top {
        return None;
    }
    let p = svd.solve(&rhs, 1e-14 * top).ok()?;
    if !p.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(symmetrize(&p))
}
