//! The lifted matrix
//!
//! ```text
//!     [ X11   X12   I  ]
//! X = [ X12ᵀ  X22   KC ]
//!     [ I    (KC)ᵀ  Z  ]
//! ```
//!
//! whose rank is `n` exactly when `X12ᵀ = KC·X11`, `X22 = KC·X11·(KC)ᵀ` and
//! `Z = X11⁻¹`, plus the augmented rectangular variant carrying an invariant
//! ellipsoid for input-norm bounds.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{pinv, symmetrize};
use crate::model::StructurePattern;

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedVariable {
    pub x11: DMatrix<f64>,
    pub x12: DMatrix<f64>,
    pub x22: DMatrix<f64>,
    pub k_gain: DMatrix<f64>,
    pub z_block: DMatrix<f64>,
}

impl LiftedVariable {
    pub fn zeros(n: usize, m: usize, p: usize) -> Self {
        Self {
            x11: DMatrix::zeros(n, n),
            x12: DMatrix::zeros(n, m),
            x22: DMatrix::zeros(m, m),
            k_gain: DMatrix::zeros(m, p),
            z_block: DMatrix::zeros(n, n),
        }
    }

    /// The rank-`n` point generated by a gain and a state covariance.
    pub fn from_gain(
        k: &DMatrix<f64>,
        c: &DMatrix<f64>,
        x11: &DMatrix<f64>,
        z: &DMatrix<f64>,
    ) -> Self {
        let kc = k * c;
        Self {
            x12: x11 * kc.transpose(),
            x22: symmetrize(&(&kc * x11 * kc.transpose())),
            x11: x11.clone(),
            k_gain: k.clone(),
            z_block: z.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.x11.nrows()
    }

    pub fn m(&self) -> usize {
        self.x22.nrows()
    }

    pub fn dim(&self) -> usize {
        2 * self.n() + self.m()
    }
}

/// Block layout `[[X11, X12, I], [X12ᵀ, X22, KC], [I, (KC)ᵀ, Z]]`.
pub fn assemble(v: &LiftedVariable, c: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (v.n(), v.m());
    let kc = &v.k_gain * c;
    let d = 2 * n + m;
    let mut x = DMatrix::zeros(d, d);
    x.view_mut((0, 0), (n, n)).copy_from(&symmetrize(&v.x11));
    x.view_mut((0, n), (n, m)).copy_from(&v.x12);
    x.view_mut((n, 0), (m, n)).copy_from(&v.x12.transpose());
    x.view_mut((n, n), (m, m)).copy_from(&symmetrize(&v.x22));
    x.view_mut((0, n + m), (n, n)).fill_with_identity();
    x.view_mut((n + m, 0), (n, n)).fill_with_identity();
    x.view_mut((n, n + m), (m, n)).copy_from(&kc);
    x.view_mut((n + m, n), (n, m)).copy_from(&kc.transpose());
    x.view_mut((n + m, n + m), (n, n))
        .copy_from(&symmetrize(&v.z_block));
    x
}

/// Frobenius-nearest lifted variable: symmetric blocks are averaged with
/// their transposes, off-diagonal pairs are averaged, and the gain is the
/// masked least-squares fit of the averaged `KC` block.
pub fn decompose(
    mat: &DMatrix<f64>,
    c: &DMatrix<f64>,
    pattern: &StructurePattern,
) -> LiftedVariable {
    let (m, p) = pattern.shape();
    let n = c.ncols();
    assert_eq!(c.nrows(), p);
    assert_eq!(
        mat.shape(),
        (2 * n + m, 2 * n + m),
        "lifted matrix has wrong size"
    );
    let x11 = symmetrize(&mat.view((0, 0), (n, n)).into_owned());
    let x12 = (mat.view((0, n), (n, m)) + mat.view((n, 0), (m, n)).transpose()) * 0.5;
    let x22 = symmetrize(&mat.view((n, n), (m, m)).into_owned());
    let z_block = symmetrize(&mat.view((n + m, n + m), (n, n)).into_owned());
    let kc_hat = (mat.view((n, n + m), (m, n)) + mat.view((n + m, n), (n, m)).transpose()) * 0.5;
    let k_gain = fit_gain(&kc_hat, c, pattern);
    LiftedVariable {
        x11,
        x12,
        x22,
        k_gain,
        z_block,
    }
}

/// `argmin ‖K C − target‖_F` over gains supported on `pattern`, solved row
/// by row; the minimum-norm solution is taken when the selected rows of `C`
/// are dependent.
pub fn fit_gain(
    target: &DMatrix<f64>,
    c: &DMatrix<f64>,
    pattern: &StructurePattern,
) -> DMatrix<f64> {
    let (m, p) = pattern.shape();
    let n = c.ncols();
    assert_eq!(target.shape(), (m, n));
    let mut k = DMatrix::zeros(m, p);
    if is_identity(c) {
        for i in 0..m {
            for j in 0..p {
                if pattern.allows(i, j) {
                    k[(i, j)] = target[(i, j)];
                }
            }
        }
        return k;
    }
    for i in 0..m {
        let cols: Vec<usize> = (0..p).filter(|&j| pattern.allows(i, j)).collect();
        if cols.is_empty() {
            continue;
        }
        let cj = c.select_rows(cols.iter());
        // k_J C_J ≈ t_i  ⇔  C_Jᵀ k_Jᵀ ≈ t_iᵀ
        let sol = pinv(&cj.transpose()) * target.row(i).transpose();
        for (s, &j) in cols.iter().enumerate() {
            k[(i, j)] = sol[s];
        }
    }
    k
}

pub(crate) fn is_identity(c: &DMatrix<f64>) -> bool {
    c.is_square()
        && c.iter().enumerate().all(|(idx, &v)| {
            let (i, j) = (idx % c.nrows(), idx / c.nrows());
            v == if i == j { 1.0 } else { 0.0 }
        })
}

/// `assemble(decompose(mat))`: the nearest matrix with the lifted block
/// structure.
pub fn consistency_project(
    mat: &DMatrix<f64>,
    c: &DMatrix<f64>,
    pattern: &StructurePattern,
) -> DMatrix<f64> {
    assemble(&decompose(mat, c, pattern), c)
}

/// Lifted variable plus the invariant-ellipsoid blocks of the input-bounded
/// problems: an extra block row `[γI, Y, W]` with `W = γ X11⁻¹` at rank `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedLifted {
    pub base: LiftedVariable,
    pub gamma: f64,
    pub w_inv: DMatrix<f64>,
    /// `n×m`; equals `γ (KC)ᵀ` at rank `n`.
    pub y_aux: DMatrix<f64>,
    /// Bound matrix of the ∞-norm variant, `V_ii ≤ u_max²`.
    pub v_diag: Option<DMatrix<f64>>,
}

/// The `(3n+m)×(2n+m)` matrix obtained by stacking `[γI, Y, W]` under the
/// lifted matrix.
pub fn assemble_augmented(v: &AugmentedLifted, c: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (v.base.n(), v.base.m());
    let top = assemble(&v.base, c);
    let mut x = DMatrix::zeros(3 * n + m, 2 * n + m);
    x.view_mut((0, 0), (2 * n + m, 2 * n + m)).copy_from(&top);
    let r = 2 * n + m;
    for i in 0..n {
        x[(r + i, i)] = v.gamma;
    }
    x.view_mut((r, n), (n, m)).copy_from(&v.y_aux);
    x.view_mut((r, n + m), (n, n))
        .copy_from(&symmetrize(&v.w_inv));
    x
}

/// Inverse of [`assemble_augmented`] with the same structure repair as
/// [`decompose`]; `γ` is the mean diagonal of the `(4,1)` block.
pub fn decompose_augmented(
    mat: &DMatrix<f64>,
    c: &DMatrix<f64>,
    pattern: &StructurePattern,
) -> AugmentedLifted {
    let (m, _) = pattern.shape();
    let n = c.ncols();
    let r = 2 * n + m;
    assert_eq!(
        mat.shape(),
        (3 * n + m, 2 * n + m),
        "augmented matrix has wrong size"
    );
    let base = decompose(&mat.view((0, 0), (r, r)).into_owned(), c, pattern);
    let gamma = (0..n).map(|i| mat[(r + i, i)]).sum::<f64>() / n as f64;
    AugmentedLifted {
        base,
        gamma,
        y_aux: mat.view((r, n), (n, m)).into_owned(),
        w_inv: symmetrize(&mat.view((r, n + m), (n, n)).into_owned()),
        v_diag: None,
    }
}

/// `[[W, (KC)ᵀ], [KC, u_max² I]]`, PSD iff the ellipsoid `{xᵀWx ≤ 1}` maps
/// into the input ball of radius `u_max`.
pub fn input_lmi_two(w: &DMatrix<f64>, kc: &DMatrix<f64>, u_max: f64) -> DMatrix<f64> {
    let (m, n) = kc.shape();
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(&symmetrize(w));
    out.view_mut((0, n), (n, m)).copy_from(&kc.transpose());
    out.view_mut((n, 0), (m, n)).copy_from(kc);
    for i in 0..m {
        out[(n + i, n + i)] = u_max * u_max;
    }
    out
}

/// `[[V, KC], [(KC)ᵀ, W]]`, used with `V_ii ≤ u_max²` for the ∞-norm bound.
pub fn input_lmi_inf(v: &DMatrix<f64>, kc: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = kc.shape();
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (m, m)).copy_from(&symmetrize(v));
    out.view_mut((0, m), (m, n)).copy_from(kc);
    out.view_mut((m, 0), (n, m)).copy_from(&kc.transpose());
    out.view_mut((m, m), (n, n)).copy_from(&symmetrize(w));
    out
}

/// `x0ᵀ W x0`.
pub fn ellipsoid_value(w: &DMatrix<f64>, x0: &DVector<f64>) -> f64 {
    (x0.transpose() * w * x0)[(0, 0)]
}

/// The two-block-column matrix `[[X11, X12], [X12ᵀ, X22], [I, (KC)ᵀ]]`.
pub fn two_column_matrix(v: &LiftedVariable, c: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (v.n(), v.m());
    let kc = &v.k_gain * c;
    let mut out = DMatrix::zeros(2 * n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(&v.x11);
    out.view_mut((0, n), (n, m)).copy_from(&v.x12);
    out.view_mut((n, 0), (m, n)).copy_from(&v.x12.transpose());
    out.view_mut((n, n), (m, m)).copy_from(&v.x22);
    out.view_mut((n + m, 0), (n, n)).fill_with_identity();
    out.view_mut((n + m, n), (n, m)).copy_from(&kc.transpose());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{numerical_rank, spd_inverse};
    use nalgebra::dmatrix;

    #[test]
    fn scalar_all_ones() {
        let one = dmatrix![1.0];
        let v = LiftedVariable {
            x11: one.clone(),
            x12: one.clone(),
            x22: one.clone(),
            k_gain: one.clone(),
            z_block: one.clone(),
        };
        assert_eq!(assemble(&v, &one), DMatrix::from_element(3, 3, 1.0));
    }

    #[test]
    fn zero_blocks_leave_identity() {
        let v = LiftedVariable::zeros(2, 1, 2);
        let x = assemble(&v, &DMatrix::identity(2, 2));
        let mut expect = DMatrix::zeros(5, 5);
        for i in 0..2 {
            expect[(i, 3 + i)] = 1.0;
            expect[(3 + i, i)] = 1.0;
        }
        assert_eq!(x, expect);
    }

    #[test]
    fn pinned_identity_is_restored() {
        let c = dmatrix![1.0];
        let pat = StructurePattern::full(1, 1);
        let mut x = assemble(&LiftedVariable::zeros(1, 1, 1), &c);
        x[(0, 2)] = 0.9;
        x[(2, 0)] = 0.9;
        let y = consistency_project(&x, &c, &pat);
        assert_eq!(y[(0, 2)], 1.0);
        assert_eq!(y[(2, 0)], 1.0);
    }

    #[test]
    fn state_feedback_gain_is_masked_average() {
        let c = DMatrix::identity(2, 2);
        let pat = StructurePattern::from_rows(&[vec![true, false]]).unwrap();
        let mut x = DMatrix::zeros(5, 5);
        x[(2, 3)] = 1.0;
        x[(3, 2)] = 3.0;
        x[(2, 4)] = 5.0;
        let v = decompose(&x, &c, &pat);
        assert_eq!(v.k_gain, dmatrix![2.0, 0.0]);
    }

    #[test]
    fn augmented_scalar_ones() {
        let one = dmatrix![1.0];
        let base = LiftedVariable {
            x11: one.clone(),
            x12: one.clone(),
            x22: one.clone(),
            k_gain: one.clone(),
            z_block: one.clone(),
        };
        let v = AugmentedLifted {
            base,
            gamma: 1.0,
            w_inv: one.clone(),
            y_aux: one.clone(),
            v_diag: None,
        };
        let x = assemble_augmented(&v, &one);
        assert_eq!(x, DMatrix::from_element(4, 3, 1.0));
        let back = decompose_augmented(&x, &one, &StructurePattern::full(1, 1));
        assert_eq!(back, v);
    }

    #[test]
    fn augmented_rank_forces_w() {
        // X11 = 2, γ = 1, K = 0: rank one needs W = γ/X11.
        let c = dmatrix![1.0];
        let x11 = dmatrix![2.0];
        let base = LiftedVariable::from_gain(&dmatrix![0.0], &c, &x11, &spd_inverse(&x11));
        let mut v = AugmentedLifted {
            base,
            gamma: 1.0,
            w_inv: dmatrix![0.5],
            y_aux: dmatrix![0.0],
            v_diag: None,
        };
        assert_eq!(numerical_rank(&assemble_augmented(&v, &c)), 1);
        v.w_inv = dmatrix![0.6];
        assert_eq!(numerical_rank(&assemble_augmented(&v, &c)), 2);
    }
}
