//! Problem data: plant, weights, gain structure, optional input bound and
//! solver options, with validation and a JSON file format.

mod file;

pub use file::{load_problem, parse_override, serialize_problem, ProblemFile};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Violation;
use crate::linalg::min_eigenvalue;

/// Eigenvalue tolerance for the PSD/PD checks on weights.
pub const CONE_TOL: f64 = 1e-9;

/// Continuous-time plant `ẋ = Ax + Bu`, `y = Cx`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self, Vec<Violation>> {
        let sys = Self { a, b, c };
        let v = sys.violations();
        if v.is_empty() {
            Ok(sys)
        } else {
            Err(v)
        }
    }

    /// State feedback plant (`C = I`).
    pub fn state_feedback(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, Vec<Violation>> {
        let n = a.nrows();
        Self::new(a, b, DMatrix::identity(n, n))
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_state_feedback(&self) -> bool {
        self.c.is_square() && (&self.c - DMatrix::identity(self.n(), self.n())).norm() == 0.0
    }

    /// `A + B K C`.
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + &self.b * k * &self.c
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.a.nrows();
        if n == 0 || !self.a.is_square() {
            out.push(Violation::DimensionMismatch {
                field: "A".into(),
                detail: format!("A must be square and nonempty, got {:?}", self.a.shape()),
            });
        }
        if self.b.nrows() != n || self.b.ncols() == 0 {
            out.push(Violation::DimensionMismatch {
                field: "B".into(),
                detail: format!("B is {:?}, expected {n}×m with m ≥ 1", self.b.shape()),
            });
        }
        if self.c.ncols() != n || self.c.nrows() == 0 {
            out.push(Violation::DimensionMismatch {
                field: "C".into(),
                detail: format!("C is {:?}, expected p×{n} with p ≥ 1", self.c.shape()),
            });
        }
        for (name, m) in [("A", &self.a), ("B", &self.b), ("C", &self.c)] {
            if m.iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFinite { field: name.into() });
            }
        }
        out
    }
}

/// Admissible gain support: `mask[i][j] = true` lets `K_ij` be nonzero.
///
/// The induced set `{K : K_ij = 0 wherever the mask is false}` is a linear
/// subspace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructurePattern {
    rows: usize,
    cols: usize,
    mask: Vec<bool>,
}

impl StructurePattern {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            mask: vec![true; rows * cols],
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            mask: vec![false; rows * cols],
        }
    }

    /// From row-major `rows` of flags; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<bool>]) -> Option<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return None;
        }
        Some(Self {
            rows: r,
            cols: c,
            mask: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut mask = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                mask.push(f(i, j));
            }
        }
        Self { rows, cols, mask }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, allowed: bool) {
        self.mask[i * self.cols + j] = allowed;
    }

    pub fn allowed_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn rows(&self) -> Vec<Vec<bool>> {
        self.mask
            .chunks(self.cols.max(1))
            .map(|r| r.to_vec())
            .collect()
    }

    /// Zeroes the entries the pattern forbids.
    pub fn apply(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(k.shape(), (self.rows, self.cols), "pattern shape mismatch");
        DMatrix::from_fn(self.rows, self.cols, |i, j| {
            if self.allows(i, j) {
                k[(i, j)]
            } else {
                0.0
            }
        })
    }

    pub fn contains(&self, k: &DMatrix<f64>) -> bool {
        k.shape() == (self.rows, self.cols)
            && (0..self.rows).all(|i| (0..self.cols).all(|j| self.allows(i, j) || k[(i, j)] == 0.0))
    }

    /// Support of `k` (entries with nonzero value) as a pattern.
    pub fn support_of(k: &DMatrix<f64>) -> Self {
        Self::from_fn(k.nrows(), k.ncols(), |i, j| k[(i, j)] != 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// `sup_t ‖u(t)‖₂`
    Two,
    /// `sup_t ‖u(t)‖∞`
    Inf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputBound {
    pub norm_kind: NormKind,
    pub u_max: f64,
    pub x0: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisProblem {
    pub system: LtiSystem,
    pub q_weight: DMatrix<f64>,
    pub r_weight: DMatrix<f64>,
    pub lambda: f64,
    pub noise_cov: DMatrix<f64>,
    pub pattern: StructurePattern,
    pub input_bound: Option<InputBound>,
}

impl SynthesisProblem {
    /// Identity `Q`, `R`, `N`, full pattern, `λ = 0`, no input bound.
    pub fn with_defaults(system: LtiSystem) -> Self {
        let (n, m, p) = (system.n(), system.m(), system.p());
        Self {
            q_weight: DMatrix::identity(n, n),
            r_weight: DMatrix::identity(m, m),
            lambda: 0.0,
            noise_cov: DMatrix::identity(n, n),
            pattern: StructurePattern::full(m, p),
            input_bound: None,
            system,
        }
    }

    pub fn n(&self) -> usize {
        self.system.n()
    }
    pub fn m(&self) -> usize {
        self.system.m()
    }
    pub fn p(&self) -> usize {
        self.system.p()
    }
}

/// Checks every invariant of the problem and reports all violations.
pub fn validate(problem: &SynthesisProblem) -> Result<&SynthesisProblem, Vec<Violation>> {
    let mut out = problem.system.violations();
    let (n, m, p) = (problem.n(), problem.m(), problem.p());
    check_square("Q", &problem.q_weight, n, &mut out);
    check_square("R", &problem.r_weight, m, &mut out);
    check_square("N", &problem.noise_cov, n, &mut out);
    if out.is_empty() {
        check_cone("Q", &problem.q_weight, false, &mut out);
        check_cone("R", &problem.r_weight, true, &mut out);
        check_cone("N", &problem.noise_cov, true, &mut out);
    }
    if problem.pattern.shape() != (m, p) {
        out.push(Violation::DimensionMismatch {
            field: "pattern".into(),
            detail: format!(
                "pattern is {:?}, expected ({m}, {p})",
                problem.pattern.shape()
            ),
        });
    }
    if !problem.lambda.is_finite() || problem.lambda < 0.0 {
        out.push(Violation::NegativeParameter {
            field: "lambda".into(),
            value: problem.lambda,
        });
    }
    if let Some(ib) = &problem.input_bound {
        if !(ib.u_max.is_finite() && ib.u_max > 0.0) && ib.u_max != f64::INFINITY {
            out.push(Violation::NegativeParameter {
                field: "input_bound.u_max".into(),
                value: ib.u_max,
            });
        }
        if ib.x0.len() != n {
            out.push(Violation::DimensionMismatch {
                field: "input_bound.x0".into(),
                detail: format!("x0 has length {}, expected {n}", ib.x0.len()),
            });
        } else if ib.x0.iter().any(|v| !v.is_finite()) {
            out.push(Violation::NonFinite {
                field: "input_bound.x0".into(),
            });
        }
    }
    if out.is_empty() {
        Ok(problem)
    } else {
        Err(out)
    }
}

fn check_square(name: &str, m: &DMatrix<f64>, dim: usize, out: &mut Vec<Violation>) {
    if m.shape() != (dim, dim) {
        out.push(Violation::DimensionMismatch {
            field: name.into(),
            detail: format!("{name} is {:?}, expected ({dim}, {dim})", m.shape()),
        });
    } else if m.iter().any(|v| !v.is_finite()) {
        out.push(Violation::NonFinite { field: name.into() });
    }
}

fn check_cone(name: &str, m: &DMatrix<f64>, strict: bool, out: &mut Vec<Violation>) {
    let asym = (m - m.transpose()).norm();
    if asym > CONE_TOL * (1.0 + m.norm()) {
        out.push(Violation::NotSymmetric {
            field: name.into(),
            asym,
        });
        return;
    }
    let min_eig = min_eigenvalue(m);
    if strict && min_eig <= CONE_TOL {
        out.push(Violation::NotPositiveDefinite {
            field: name.into(),
            min_eig,
        });
    } else if !strict && min_eig < -CONE_TOL {
        out.push(Violation::NotPositiveSemidefinite {
            field: name.into(),
            min_eig,
        });
    }
}

/// How the dense ADMM gain is truncated into the reported sparse gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    /// Zero entries below the stability-preserving threshold.
    Certified,
    /// Hard threshold `√(2λ/ρ)` on the K block of `V* − Y*`.
    L0Threshold,
    /// Zero entries with magnitude below the given value.
    Manual(f64),
}

/// Outer-loop and inner-solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmOptions {
    pub penalty_rho: f64,
    pub reweight_delta: f64,
    pub eps_star: f64,
    pub max_outer: usize,
    pub inner_tol: f64,
    pub inner_max: usize,
    /// `X11 ≻ 0` is enforced as `X11 ⪰ strict_eps·I`.
    pub strict_eps: f64,
    pub truncation_mode: TruncationMode,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            penalty_rho: 100.0,
            reweight_delta: 1e-4,
            eps_star: 1e-4,
            max_outer: 1000,
            inner_tol: 1e-6,
            inner_max: 5000,
            strict_eps: 1e-7,
            truncation_mode: TruncationMode::Certified,
        }
    }
}

impl AdmmOptions {
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        for (name, v) in [
            ("penalty_rho", self.penalty_rho),
            ("reweight_delta", self.reweight_delta),
            ("eps_star", self.eps_star),
            ("inner_tol", self.inner_tol),
            ("strict_eps", self.strict_eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push(Violation::NegativeParameter {
                    field: format!("options.{name}"),
                    value: v,
                });
            }
        }
        if self.eps_star >= 1.0 {
            out.push(Violation::InvalidOption {
                field: "options.eps_star".into(),
                detail: "must be below 1".into(),
            });
        }
        if self.max_outer == 0 {
            out.push(Violation::InvalidOption {
                field: "options.max_outer".into(),
                detail: "must be positive".into(),
            });
        }
        if self.inner_max == 0 {
            out.push(Violation::InvalidOption {
                field: "options.inner_max".into(),
                detail: "must be positive".into(),
            });
        }
        if let TruncationMode::Manual(xi) = self.truncation_mode {
            if !(xi.is_finite() && xi >= 0.0) {
                out.push(Violation::NegativeParameter {
                    field: "options.truncation_mode.manual".into(),
                    value: xi,
                });
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}
