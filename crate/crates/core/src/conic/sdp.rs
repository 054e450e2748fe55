//! Dense conic ADMM for small semidefinite programs
//!
//! ```text
//! minimize   ½ xᵀ P x + qᵀ x     (P diagonal)
//! subject to A x + s = b,  s ∈ {0}ᵃ × S₊ × … × ℝ₊ᵇ
//! ```
//!
//! Iterations follow the operator-splitting scheme with a quasi-definite
//! linear system, reduced to the normal matrix `P + σI + Aᵀ diag(ρ) A` and
//! factored by Cholesky. Primal infeasibility is detected from the
//! limiting dual step.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::dynamics::{smat, svec};
use super::expr::{AffMat, Lin};
use super::{SolveReport, SolveStatus};
use crate::lifting::LiftedVariable;
use crate::linalg::project_psd;
use crate::model::{AdmmOptions, StructurePattern};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Symmetric,
    Full,
    Diagonal,
}

/// Handle to a matrix block of the decision vector; entries that are not
/// decision variables (masked or off-diagonal) are fixed at zero.
#[derive(Debug, Clone)]
pub struct MatVar {
    pub kind: VarKind,
    rows: usize,
    cols: usize,
    index: Vec<Option<usize>>,
}

impl MatVar {
    pub fn expr(&self) -> AffMat {
        AffMat::from_fn(self.rows, self.cols, |i, j| {
            match self.index[j * self.rows + i] {
                Some(v) => Lin::var(v),
                None => Lin::default(),
            }
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| {
            match self.index[j * self.rows + i] {
                Some(v) => x[v],
                None => 0.0,
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    Zero,
    /// Symmetric matrices of the given order, in `svec` coordinates.
    Psd(usize),
    Nonneg,
}

#[derive(Debug, Clone)]
struct Cone {
    kind: ConeKind,
    start: usize,
    len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SdpBuilder {
    nvars: usize,
    cost: Vec<(usize, f64)>,
    p_diag: Vec<(usize, f64)>,
    rows: Vec<Lin>,
    cones: Vec<Cone>,
}

impl SdpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.nvars
    }

    fn fresh(&mut self) -> usize {
        self.nvars += 1;
        self.nvars - 1
    }

    pub fn symmetric(&mut self, n: usize) -> MatVar {
        let mut index = vec![None; n * n];
        for j in 0..n {
            for i in 0..=j {
                let v = self.fresh();
                index[j * n + i] = Some(v);
                index[i * n + j] = Some(v);
            }
        }
        MatVar {
            kind: VarKind::Symmetric,
            rows: n,
            cols: n,
            index,
        }
    }

    pub fn full(&mut self, rows: usize, cols: usize) -> MatVar {
        let index = (0..rows * cols).map(|_| Some(self.fresh())).collect();
        MatVar {
            kind: VarKind::Full,
            rows,
            cols,
            index,
        }
    }

    /// Full matrix whose entries outside `pattern` are fixed at zero.
    pub fn masked(&mut self, pattern: &StructurePattern) -> MatVar {
        let (rows, cols) = pattern.shape();
        let mut index = vec![None; rows * cols];
        for j in 0..cols {
            for i in 0..rows {
                if pattern.allows(i, j) {
                    index[j * rows + i] = Some(self.fresh());
                }
            }
        }
        MatVar {
            kind: VarKind::Full,
            rows,
            cols,
            index,
        }
    }

    pub fn diagonal(&mut self, n: usize) -> MatVar {
        let mut index = vec![None; n * n];
        for i in 0..n {
            index[i * n + i] = Some(self.fresh());
        }
        MatVar {
            kind: VarKind::Diagonal,
            rows: n,
            cols: n,
            index,
        }
    }

    pub fn scalar(&mut self) -> Lin {
        Lin::var(self.fresh())
    }

    /// Adds a linear term to the objective (its constant is ignored).
    pub fn minimize(&mut self, f: &Lin) {
        self.cost.extend_from_slice(&f.terms);
    }

    /// Adds `½ w ‖E − T‖²_F` for an expression whose entries each involve
    /// at most one variable.
    pub fn add_prox(&mut self, e: &AffMat, target: &DMatrix<f64>, w: f64) {
        assert_eq!(e.shape(), target.shape());
        for j in 0..e.ncols() {
            for i in 0..e.nrows() {
                let entry = e.get(i, j);
                match entry.terms.as_slice() {
                    [] => {}
                    [(v, a)] => {
                        self.p_diag.push((*v, w * a * a));
                        self.cost
                            .push((*v, w * a * (entry.constant - target[(i, j)])));
                    }
                    _ => panic!("add_prox needs single-variable entries"),
                }
            }
        }
    }

    /// Adds `Σ w_ij |E_ij|` through epigraph variables.
    pub fn add_l1(&mut self, e: &AffMat, weights: &DMatrix<f64>) {
        assert_eq!(e.shape(), weights.shape());
        for j in 0..e.ncols() {
            for i in 0..e.nrows() {
                let entry = e.get(i, j);
                if entry.is_constant() && entry.constant == 0.0 {
                    continue;
                }
                let t = self.scalar();
                self.nonneg(&(&t - entry));
                self.nonneg(&(&t + entry));
                self.cost.push((t.terms[0].0, weights[(i, j)]));
            }
        }
    }

    fn push_cone(&mut self, kind: ConeKind, rows: Vec<Lin>) {
        if rows.is_empty() {
            return;
        }
        // merge consecutive cones of the same elementwise kind
        if let Some(last) = self.cones.last_mut() {
            if last.kind == kind && !matches!(kind, ConeKind::Psd(_)) {
                last.len += rows.len();
                self.rows.extend(rows);
                return;
            }
        }
        self.cones.push(Cone {
            kind,
            start: self.rows.len(),
            len: rows.len(),
        });
        self.rows.extend(rows);
    }

    pub fn eq_lin(&mut self, e: &Lin, rhs: f64) {
        self.push_cone(
            ConeKind::Zero,
            vec![e.add_scaled(&Lin::constant(rhs), -1.0)],
        );
    }

    /// `E = rhs` entrywise.
    pub fn eq(&mut self, e: &AffMat, rhs: &DMatrix<f64>) {
        assert_eq!(e.shape(), rhs.shape());
        let mut rows = Vec::new();
        for j in 0..e.ncols() {
            for i in 0..e.nrows() {
                let r = e.get(i, j).add_scaled(&Lin::constant(rhs[(i, j)]), -1.0);
                if !(r.is_constant() && r.constant == 0.0) {
                    rows.push(r);
                }
            }
        }
        self.push_cone(ConeKind::Zero, rows);
    }

    /// `E = rhs` on the upper triangle of a symmetric expression.
    pub fn eq_sym(&mut self, e: &AffMat, rhs: &DMatrix<f64>) {
        let n = e.nrows();
        let mut rows = Vec::new();
        for j in 0..n {
            for i in 0..=j {
                let avg = (e.get(i, j) + e.get(j, i)).scale(0.5);
                let r = avg.add_scaled(&Lin::constant(0.5 * (rhs[(i, j)] + rhs[(j, i)])), -1.0);
                if !(r.is_constant() && r.constant == 0.0) {
                    rows.push(r);
                }
            }
        }
        self.push_cone(ConeKind::Zero, rows);
    }

    /// `sym(E) ⪰ 0`.
    pub fn psd(&mut self, e: &AffMat) {
        let n = e.nrows();
        assert_eq!(e.ncols(), n, "psd needs a square expression");
        let mut rows = Vec::with_capacity(n * (n + 1) / 2);
        for j in 0..n {
            for i in 0..=j {
                if i == j {
                    rows.push(e.get(i, i).clone());
                } else {
                    rows.push((e.get(i, j) + e.get(j, i)).scale(std::f64::consts::FRAC_1_SQRT_2));
                }
            }
        }
        self.push_cone(ConeKind::Psd(n), rows);
    }

    /// `e ≥ 0`.
    pub fn nonneg(&mut self, e: &Lin) {
        self.push_cone(ConeKind::Nonneg, vec![e.clone()]);
    }

    /// `e ≤ c`.
    pub fn le(&mut self, e: &Lin, c: f64) {
        self.nonneg(&Lin::constant(c).add_scaled(e, -1.0));
    }

    /// Objective vector `q` of the current builder state.
    pub fn objective_vector(&self) -> DVector<f64> {
        let mut q = DVector::zeros(self.nvars);
        for &(v, c) in &self.cost {
            q[v] += c;
        }
        q
    }

    pub fn compile(&self) -> SdpProblem {
        let nv = self.nvars;
        let mut p = DVector::zeros(nv);
        for &(v, w) in &self.p_diag {
            p[v] += w;
        }
        let q = self.objective_vector();
        // rows r(x) = a·x + c ∈ K  ⇔  (−a)·x + s = c
        let a_rows: Vec<Vec<(usize, f64)>> = self
            .rows
            .iter()
            .map(|r| r.terms.iter().map(|&(v, c)| (v, -c)).collect())
            .collect();
        let b = DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.constant));

        // Row equilibration: one factor per PSD cone, one per scalar row.
        let norms: Vec<f64> = a_rows
            .iter()
            .map(|r| r.iter().map(|t| t.1 * t.1).sum::<f64>().sqrt())
            .collect();
        let mut d = vec![1.0; a_rows.len()];
        for cone in &self.cones {
            let range = cone.start..cone.start + cone.len;
            match cone.kind {
                ConeKind::Psd(_) => {
                    let nz: Vec<f64> = norms[range.clone()]
                        .iter()
                        .copied()
                        .filter(|&x| x > 0.0)
                        .collect();
                    let mean = if nz.is_empty() {
                        1.0
                    } else {
                        nz.iter().sum::<f64>() / nz.len() as f64
                    };
                    for r in range {
                        d[r] = 1.0 / mean;
                    }
                }
                _ => {
                    for r in range {
                        d[r] = if norms[r] > 0.0 { 1.0 / norms[r] } else { 1.0 };
                    }
                }
            }
        }
        let q_norm = q.amax().max(p.amax());
        let cost_scale = if q_norm > 0.0 {
            1.0 / q_norm.max(1e-4)
        } else {
            1.0
        };
        SdpProblem {
            nvars: nv,
            p_diag: p,
            q,
            a_rows,
            b,
            cones: self.cones.clone(),
            row_scale: d,
            cost_scale,
            factor: None,
            warm: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub rho: f64,
    pub eps_infeasible: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-7,
            eps_rel: 1e-7,
            max_iter: 50_000,
            sigma: 1e-6,
            alpha: 1.6,
            rho: 0.1,
            eps_infeasible: 1e-6,
        }
    }
}

impl SdpSettings {
    pub fn from_options(opts: &AdmmOptions) -> Self {
        Self {
            eps_abs: opts.inner_tol.min(1e-6),
            eps_rel: opts.inner_tol.min(1e-6),
            max_iter: (10 * opts.inner_max).max(20_000),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
struct Factor {
    rho_base: f64,
    rho: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
}

#[derive(Debug, Clone)]
struct Iterate {
    x: DVector<f64>,
    s: DVector<f64>,
    y: DVector<f64>,
}

/// A compiled program; keeps its factorization and last iterate so that
/// re-solves with a new objective vector start warm.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    nvars: usize,
    p_diag: DVector<f64>,
    q: DVector<f64>,
    a_rows: Vec<Vec<(usize, f64)>>,
    b: DVector<f64>,
    cones: Vec<Cone>,
    row_scale: Vec<f64>,
    cost_scale: f64,
    factor: Option<Factor>,
    warm: Option<Iterate>,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    pub report: SolveReport,
}

impl SdpSolution {
    pub fn value(&self, v: &MatVar) -> DMatrix<f64> {
        v.value(&self.x)
    }

    pub fn eval(&self, e: &AffMat) -> DMatrix<f64> {
        e.eval(&self.x)
    }

    pub fn lin(&self, e: &Lin) -> f64 {
        e.eval(&self.x)
    }
}

impl SdpProblem {
    /// Replaces the linear objective (same variable layout required).
    pub fn set_objective(&mut self, q: DVector<f64>) {
        assert_eq!(q.len(), self.nvars);
        self.q = q;
    }

    pub fn num_rows(&self) -> usize {
        self.a_rows.len()
    }

    fn scaled_a_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.a_rows.len(),
            self.a_rows
                .iter()
                .zip(&self.row_scale)
                .map(|(r, d)| d * r.iter().map(|&(v, c)| c * x[v]).sum::<f64>()),
        )
    }

    fn scaled_at_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nvars);
        for (r, (row, d)) in self.a_rows.iter().zip(&self.row_scale).enumerate() {
            let yr = y[r] * d;
            if yr != 0.0 {
                for &(v, c) in row {
                    out[v] += c * yr;
                }
            }
        }
        out
    }

    fn factorize(&self, sigma: f64, rho: &[f64]) -> Option<Cholesky<f64, Dyn>> {
        let nv = self.nvars;
        let mut m = DMatrix::<f64>::zeros(nv, nv);
        for i in 0..nv {
            m[(i, i)] = self.cost_scale * self.p_diag[i] + sigma;
        }
        for (r, row) in self.a_rows.iter().enumerate() {
            let w = rho[r] * self.row_scale[r] * self.row_scale[r];
            for &(i, ci) in row {
                for &(j, cj) in row {
                    m[(i, j)] += w * ci * cj;
                }
            }
        }
        Cholesky::new(m)
    }

    fn rho_vector(&self, rho: f64) -> Vec<f64> {
        let mut out = vec![rho; self.a_rows.len()];
        for cone in &self.cones {
            if cone.kind == ConeKind::Zero {
                out[cone.start..cone.start + cone.len].fill(1e3 * rho);
            }
        }
        out
    }

    fn project(&self, v: &mut DVector<f64>) {
        for cone in &self.cones {
            let range = cone.start..cone.start + cone.len;
            match cone.kind {
                ConeKind::Zero => {
                    for r in range {
                        v[r] = 0.0;
                    }
                }
                ConeKind::Nonneg => {
                    for r in range {
                        v[r] = v[r].max(0.0);
                    }
                }
                ConeKind::Psd(n) => {
                    // uniform scaling inside a cone keeps svec coordinates valid
                    let seg = DVector::from_iterator(cone.len, range.clone().map(|r| v[r]));
                    let p = svec(&project_psd(&smat(&seg, n)));
                    for (k, r) in range.enumerate() {
                        v[r] = p[k];
                    }
                }
            }
        }
    }

    /// Distance of the unscaled vector `y` from the dual cone `K*`.
    fn dual_cone_distance(&self, y: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for cone in &self.cones {
            let range = cone.start..cone.start + cone.len;
            match cone.kind {
                ConeKind::Zero => {}
                ConeKind::Nonneg => {
                    for r in range {
                        worst = worst.max(-y[r]);
                    }
                }
                ConeKind::Psd(n) => {
                    let seg = DVector::from_iterator(cone.len, range.map(|r| y[r]));
                    let m = smat(&seg, n);
                    worst = worst.max((project_psd(&m) - m).norm());
                }
            }
        }
        worst
    }

    pub fn solve(&mut self, settings: &SdpSettings) -> SdpSolution {
        let nv = self.nvars;
        let nr = self.a_rows.len();
        let cs = self.cost_scale;
        let d = DVector::from_vec(self.row_scale.clone());
        let bs = self.b.component_mul(&d);
        let qs = &self.q * cs;

        let mut rho_base = self.factor.as_ref().map_or(settings.rho, |f| f.rho_base);
        let mut rho = self.rho_vector(rho_base);
        let mut chol = match self.factor.take() {
            Some(f) if f.rho == rho => f.chol,
            _ => match self.factorize(settings.sigma, &rho) {
                Some(c) => c,
                None => {
                    return self.failed(SolveStatus::MaxIters, nv);
                }
            },
        };

        let (mut x, mut s, mut y) = match self.warm.take() {
            Some(w) => (w.x, w.s, w.y),
            None => (DVector::zeros(nv), DVector::zeros(nr), DVector::zeros(nr)),
        };
        let sigma = settings.sigma;
        let alpha = settings.alpha;
        let mut status = SolveStatus::MaxIters;
        let (mut pres, mut dres) = (f64::INFINITY, f64::INFINITY);
        let mut iterations = 0;
        let mut last_refactor = 0;
        let mut stall_ref = f64::INFINITY;

        for it in 1..=settings.max_iter {
            iterations = it;
            let rho_v = DVector::from_column_slice(&rho);
            let w = (&bs - &s).component_mul(&rho_v) + &y;
            let rhs = &x * sigma - &qs + self.scaled_at_mul(&w);
            let xt = chol.solve(&rhs);
            let st = &bs - self.scaled_a_mul(&xt);
            x = &xt * alpha + &x * (1.0 - alpha);
            let s_relax = &st * alpha + &s * (1.0 - alpha);
            let mut s_new = &s_relax + y.component_div(&rho_v);
            self.project(&mut s_new);
            let y_prev = y.clone();
            y += (&s_relax - &s_new).component_mul(&rho_v);
            s = s_new;

            if it % 10 != 0 && it != settings.max_iter {
                continue;
            }
            // unscaled residuals
            let ax = self.scaled_a_mul(&x).component_div(&d);
            let s_u = s.component_div(&d);
            let r_p = &ax + &s_u - &self.b;
            let aty = self.scaled_at_mul(&(&y / cs));
            let px = self.p_diag.component_mul(&x);
            let r_d = &px + &self.q - &aty;
            pres = r_p.amax();
            dres = r_d.amax();
            let p_scale = ax.amax().max(s_u.amax()).max(self.b.amax());
            let d_scale = px.amax().max(aty.amax()).max(self.q.amax());
            let p_ok = pres <= settings.eps_abs + settings.eps_rel * p_scale;
            let d_ok = dres <= settings.eps_abs + settings.eps_rel * d_scale;
            if p_ok && d_ok {
                status = SolveStatus::Converged;
                break;
            }

            if it % 50 == 0 {
                let dy = (&y - &y_prev).component_mul(&d) / cs;
                if self.certifies_infeasibility(&dy, settings.eps_infeasible)
                    || self.certifies_infeasibility(&-&dy, settings.eps_infeasible)
                {
                    status = SolveStatus::Infeasible;
                    break;
                }
            }
            if it % 2000 == 0 {
                let rel = pres / (1.0 + p_scale);
                if rel > 1e-3 && rel > 0.99 * stall_ref {
                    status = SolveStatus::Infeasible;
                    break;
                }
                stall_ref = rel;
            }
            if it % 50 == 0 && it - last_refactor >= 200 {
                let ratio =
                    ((pres / (1e-12 + p_scale)) / (dres / (1e-12 + d_scale)).max(1e-300)).sqrt();
                if !(0.2..=5.0).contains(&ratio) && ratio.is_finite() {
                    let next = (rho_base * ratio).clamp(1e-6, 1e6);
                    let next_v = self.rho_vector(next);
                    if let Some(c) = self.factorize(sigma, &next_v) {
                        chol = c;
                        rho_base = next;
                        rho = next_v;
                        last_refactor = it;
                    }
                }
            }
        }

        let objective = 0.5 * x.dot(&self.p_diag.component_mul(&x)) + x.dot(&self.q);
        self.factor = Some(Factor {
            rho_base,
            rho,
            chol,
        });
        self.warm = Some(Iterate { x: x.clone(), s, y });
        SdpSolution {
            x: x.as_slice().to_vec(),
            report: SolveReport {
                iterations,
                primal_residual: pres,
                dual_residual: dres,
                objective,
                status,
            },
        }
    }

    fn certifies_infeasibility(&self, dy: &DVector<f64>, eps: f64) -> bool {
        let norm = dy.amax();
        if norm <= 1e-12 {
            return false;
        }
        let u = dy / norm;
        let bu = self.b.dot(&u);
        if bu >= -eps {
            return false;
        }
        // Aᵀu with unscaled rows
        let mut atu = DVector::<f64>::zeros(self.nvars);
        for (r, row) in self.a_rows.iter().enumerate() {
            for &(v, c) in row {
                atu[v] += c * u[r];
            }
        }
        atu.amax() <= eps * bu.abs().max(1.0) && self.dual_cone_distance(&u) <= eps
    }

    fn failed(&self, status: SolveStatus, nv: usize) -> SdpSolution {
        SdpSolution {
            x: vec![0.0; nv],
            report: SolveReport {
                iterations: 0,
                primal_residual: f64::INFINITY,
                dual_residual: f64::INFINITY,
                objective: f64::NAN,
                status,
            },
        }
    }
}

/// Compiles and solves a builder once.
pub fn solve_sdp(builder: &SdpBuilder, settings: &SdpSettings) -> SdpSolution {
    builder.compile().solve(settings)
}

/// Variables `X11, X12, X22, K, Z` of a lifted matrix inside a builder.
#[derive(Debug, Clone)]
pub struct LiftedHandles {
    pub x11: MatVar,
    pub x12: MatVar,
    pub x22: MatVar,
    pub k: MatVar,
    pub z: MatVar,
}

impl LiftedHandles {
    pub fn new(b: &mut SdpBuilder, n: usize, m: usize, pattern: &StructurePattern) -> Self {
        Self {
            x11: b.symmetric(n),
            x12: b.full(n, m),
            x22: b.symmetric(m),
            k: b.masked(pattern),
            z: b.symmetric(n),
        }
    }

    /// The assembled lifted matrix as an affine expression.
    pub fn assembled(&self, c: &DMatrix<f64>) -> AffMat {
        let n = self.x11.shape().0;
        let kc = self.k.expr().right_mul(c);
        let x12 = self.x12.expr();
        AffMat::blocks(&[
            vec![self.x11.expr(), x12.clone(), AffMat::identity(n)],
            vec![x12.transpose(), self.x22.expr(), kc.clone()],
            vec![AffMat::identity(n), kc.transpose(), self.z.expr()],
        ])
    }

    /// `A X11 + X11 Aᵀ + B X12ᵀ + X12 Bᵀ`.
    pub fn lyapunov_expr(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> AffMat {
        let ax = self.x11.expr().left_mul(a);
        let bx = self.x12.expr().transpose().left_mul(b);
        let s = &ax + &bx;
        &s + &s.transpose()
    }

    pub fn extract(&self, sol: &SdpSolution) -> LiftedVariable {
        LiftedVariable {
            x11: sol.value(&self.x11),
            x12: sol.value(&self.x12),
            x22: sol.value(&self.x22),
            k_gain: sol.value(&self.k),
            z_block: sol.value(&self.z),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn scalar_lp() {
        // min x s.t. x ≥ 2
        let mut b = SdpBuilder::new();
        let x = b.scalar();
        b.minimize(&x);
        b.nonneg(&x.add_scaled(&Lin::constant(2.0), -1.0));
        let sol = solve_sdp(&b, &SdpSettings::default());
        assert_eq!(sol.report.status, SolveStatus::Converged);
        assert!((sol.lin(&x) - 2.0).abs() < 1e-5);
    }

    #[test]
    fn trace_minimization_over_psd() {
        // min Tr X s.t. X ⪰ 0, X11 = 1, X22 = 2, giving X12 ∈ [−√2, √2]: Tr = 3
        let mut b = SdpBuilder::new();
        let x = b.symmetric(2);
        let e = x.expr();
        b.minimize(&e.trace());
        b.psd(&e);
        b.eq_lin(e.get(0, 0), 1.0);
        b.eq_lin(e.get(1, 1), 2.0);
        b.le(e.get(0, 1), -1.0);
        let sol = solve_sdp(&b, &SdpSettings::default());
        assert_eq!(sol.report.status, SolveStatus::Converged);
        let v = sol.value(&x);
        assert!((v.trace() - 3.0).abs() < 1e-5);
        assert!(v[(0, 1)] <= -1.0 + 1e-5);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        // X ⪰ I and X ⪯ 0.5 I
        let mut b = SdpBuilder::new();
        let x = b.symmetric(2);
        let e = x.expr();
        b.minimize(&e.trace());
        b.psd(&(&e - &AffMat::identity(2)));
        b.psd(&(&AffMat::constant(&(DMatrix::identity(2, 2) * 0.5)) - &e));
        let sol = solve_sdp(&b, &SdpSettings::default());
        assert_eq!(sol.report.status, SolveStatus::Infeasible);
    }

    #[test]
    fn prox_term_pulls_to_target() {
        let mut b = SdpBuilder::new();
        let x = b.full(1, 2);
        b.add_prox(&x.expr(), &dmatrix![1.0, -3.0], 2.0);
        b.nonneg(&Lin::var(1));
        let sol = solve_sdp(&b, &SdpSettings::default());
        let v = sol.value(&x);
        assert!(
            (v[(0, 0)] - 1.0).abs() < 1e-5 && v[(0, 1)].abs() < 1e-5,
            "{v}"
        );
    }
}
