//! Affine expressions over the flat decision vector of an [`SdpBuilder`].
//!
//! [`SdpBuilder`]: super::SdpBuilder

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

/// `constant + Σ coef·x[var]`, terms sorted by variable index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lin {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Lin {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(i: usize) -> Self {
        Self {
            terms: vec![(i, 1.0)],
            constant: 0.0,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    /// `self + s·other`.
    pub fn add_scaled(&self, other: &Lin, s: f64) -> Lin {
        let mut terms = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0, 0);
        while i < self.terms.len() || j < other.terms.len() {
            let take_left = j >= other.terms.len()
                || (i < self.terms.len() && self.terms[i].0 < other.terms[j].0);
            let take_right = i >= self.terms.len()
                || (j < other.terms.len() && other.terms[j].0 < self.terms[i].0);
            if take_left {
                terms.push(self.terms[i]);
                i += 1;
            } else if take_right {
                terms.push((other.terms[j].0, s * other.terms[j].1));
                j += 1;
            } else {
                let v = self.terms[i].1 + s * other.terms[j].1;
                if v != 0.0 {
                    terms.push((self.terms[i].0, v));
                }
                i += 1;
                j += 1;
            }
        }
        Lin {
            terms,
            constant: self.constant + s * other.constant,
        }
    }

    pub fn scale(&self, s: f64) -> Lin {
        if s == 0.0 {
            return Lin::default();
        }
        Lin {
            terms: self.terms.iter().map(|&(i, c)| (i, c * s)).collect(),
            constant: self.constant * s,
        }
    }

    fn from_unsorted(mut terms: Vec<(usize, f64)>, constant: f64) -> Lin {
        terms.sort_unstable_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (i, c) in terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        Lin {
            terms: out,
            constant,
        }
    }
}

impl Add<&Lin> for &Lin {
    type Output = Lin;
    fn add(self, rhs: &Lin) -> Lin {
        self.add_scaled(rhs, 1.0)
    }
}

impl Sub<&Lin> for &Lin {
    type Output = Lin;
    fn sub(self, rhs: &Lin) -> Lin {
        self.add_scaled(rhs, -1.0)
    }
}

/// Matrix of affine expressions, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AffMat {
    rows: usize,
    cols: usize,
    data: Vec<Lin>,
}

impl AffMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Lin::default(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Lin) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn constant(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| Lin::constant(m[(i, j)]))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(&DMatrix::identity(n, n))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Lin {
        &self.data[j * self.rows + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Lin) {
        self.data[j * self.rows + i] = v;
    }

    pub fn transpose(&self) -> AffMat {
        AffMat::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn scale(&self, s: f64) -> AffMat {
        AffMat::from_fn(self.rows, self.cols, |i, j| self.get(i, j).scale(s))
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(x))
    }

    pub fn view(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> AffMat {
        AffMat::from_fn(rows, cols, |i, j| self.get(r0 + i, c0 + j).clone())
    }

    /// `m · self`.
    pub fn left_mul(&self, m: &DMatrix<f64>) -> AffMat {
        assert_eq!(m.ncols(), self.rows, "left_mul shape mismatch");
        AffMat::from_fn(m.nrows(), self.cols, |i, j| {
            let mut terms = Vec::new();
            let mut constant = 0.0;
            for k in 0..self.rows {
                let a = m[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let e = self.get(k, j);
                constant += a * e.constant;
                terms.extend(e.terms.iter().map(|&(v, c)| (v, a * c)));
            }
            Lin::from_unsorted(terms, constant)
        })
    }

    /// `self · m`.
    pub fn right_mul(&self, m: &DMatrix<f64>) -> AffMat {
        self.transpose().left_mul(&m.transpose()).transpose()
    }

    /// `Tr(M · self)`.
    pub fn trace_with(&self, m: &DMatrix<f64>) -> Lin {
        assert_eq!(m.shape(), (self.cols, self.rows));
        let mut terms = Vec::new();
        let mut constant = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = m[(j, i)];
                if a == 0.0 {
                    continue;
                }
                let e = self.get(i, j);
                constant += a * e.constant;
                terms.extend(e.terms.iter().map(|&(v, c)| (v, a * c)));
            }
        }
        Lin::from_unsorted(terms, constant)
    }

    pub fn trace(&self) -> Lin {
        let n = self.rows.min(self.cols);
        let mut out = Lin::default();
        for i in 0..n {
            out = &out + self.get(i, i);
        }
        out
    }

    /// Block matrix from rows of blocks; block heights must agree within a
    /// block row and widths within a block column.
    pub fn blocks(grid: &[Vec<AffMat>]) -> AffMat {
        let heights: Vec<usize> = grid.iter().map(|r| r[0].rows).collect();
        let widths: Vec<usize> = grid[0].iter().map(|b| b.cols).collect();
        let rows: usize = heights.iter().sum();
        let cols: usize = widths.iter().sum();
        let mut out = AffMat::zeros(rows, cols);
        let mut r0 = 0;
        for (bi, row) in grid.iter().enumerate() {
            assert_eq!(row.len(), widths.len(), "ragged block grid");
            let mut c0 = 0;
            for (bj, blk) in row.iter().enumerate() {
                assert_eq!(
                    blk.shape(),
                    (heights[bi], widths[bj]),
                    "block ({bi},{bj}) has wrong shape"
                );
                for j in 0..blk.cols {
                    for i in 0..blk.rows {
                        out.set(r0 + i, c0 + j, blk.get(i, j).clone());
                    }
                }
                c0 += widths[bj];
            }
            r0 += heights[bi];
        }
        out
    }
}

impl Add<&AffMat> for &AffMat {
    type Output = AffMat;
    fn add(self, rhs: &AffMat) -> AffMat {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        AffMat::from_fn(self.rows, self.cols, |i, j| self.get(i, j) + rhs.get(i, j))
    }
}

impl Sub<&AffMat> for &AffMat {
    type Output = AffMat;
    fn sub(self, rhs: &AffMat) -> AffMat {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        AffMat::from_fn(self.rows, self.cols, |i, j| self.get(i, j) - rhs.get(i, j))
    }
}

impl Neg for &AffMat {
    type Output = AffMat;
    fn neg(self) -> AffMat {
        self.scale(-1.0)
    }
}

impl Mul<&AffMat> for &DMatrix<f64> {
    type Output = AffMat;
    fn mul(self, rhs: &AffMat) -> AffMat {
        rhs.left_mul(self)
    }
}

impl Mul<&DMatrix<f64>> for &AffMat {
    type Output = AffMat;
    fn mul(self, rhs: &DMatrix<f64>) -> AffMat {
        self.right_mul(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn products_match_dense_evaluation() {
        let x = AffMat::from_fn(2, 2, |i, j| Lin::var(2 * j + i));
        let a = dmatrix![1.0, 2.0; 0.0, -1.0];
        let vals = [0.5, -1.0, 2.0, 3.0];
        let xv = x.eval(&vals);
        let e = &(&a * &x) + &(&x * &a.transpose());
        assert!((e.eval(&vals) - (&a * &xv + &xv * a.transpose())).norm() < 1e-14);
        let t = x.trace_with(&a).eval(&vals);
        assert!((t - (&a * &xv).trace()).abs() < 1e-14);
    }

    #[test]
    fn cancellation_drops_terms() {
        let a = Lin::var(3);
        assert!((&a - &a).terms.is_empty());
    }
}
