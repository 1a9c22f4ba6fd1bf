use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// One second-order cone constraint `||F z + f||_2 <= h'z + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub f_mat: DMatrix<f64>,
    pub f_vec: DVector<f64>,
    pub h: DVector<f64>,
    pub s: f64,
}

impl SocConstraint {
    /// `h'z + s - ||F z + f||`, nonnegative iff the constraint holds.
    pub fn slack(&self, z: &DVector<f64>) -> f64 {
        self.h.dot(z) + self.s - (&self.f_mat * z + &self.f_vec).norm()
    }
}

/// `min cost'z` subject to `E z = e`, `lo <= B z + offset <= hi` and a list
/// of second-order cone constraints. Box bounds may be infinite; rows with
/// `lo == hi` are treated as equalities by the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    pub cost: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub box_matrix: DMatrix<f64>,
    pub box_offset: DVector<f64>,
    pub box_lo: DVector<f64>,
    pub box_hi: DVector<f64>,
    pub cones: Vec<SocConstraint>,
}

impl ConicProblem {
    /// Unconstrained problem over `m` variables; add constraints with the
    /// `with_*` builders.
    pub fn new(cost: DVector<f64>) -> Self {
        let m = cost.len();
        ConicProblem {
            cost,
            eq_matrix: DMatrix::zeros(0, m),
            eq_rhs: DVector::zeros(0),
            box_matrix: DMatrix::zeros(0, m),
            box_offset: DVector::zeros(0),
            box_lo: DVector::zeros(0),
            box_hi: DVector::zeros(0),
            cones: Vec::new(),
        }
    }

    pub fn with_equalities(mut self, matrix: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.eq_matrix = matrix;
        self.eq_rhs = rhs;
        self
    }

    pub fn with_box(
        mut self,
        matrix: DMatrix<f64>,
        offset: DVector<f64>,
        lo: DVector<f64>,
        hi: DVector<f64>,
    ) -> Self {
        self.box_matrix = matrix;
        self.box_offset = offset;
        self.box_lo = lo;
        self.box_hi = hi;
        self
    }

    pub fn with_cone(mut self, cone: SocConstraint) -> Self {
        self.cones.push(cone);
        self
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_matrix.nrows()
    }

    pub fn num_box(&self) -> usize {
        self.box_matrix.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_vars();
        let bad = |msg: String| Err(Error::InvalidArgument(format!("conic problem: {msg}")));
        if m == 0 {
            return bad("no variables".into());
        }
        if self.eq_matrix.ncols() != m || self.eq_rhs.len() != self.eq_matrix.nrows() {
            return bad("equality block has inconsistent dimensions".into());
        }
        let p = self.box_matrix.nrows();
        if self.box_matrix.ncols() != m
            || self.box_offset.len() != p
            || self.box_lo.len() != p
            || self.box_hi.len() != p
        {
            return bad("box block has inconsistent dimensions".into());
        }
        for i in 0..p {
            if self.box_lo[i] > self.box_hi[i] || self.box_lo[i].is_nan() || self.box_hi[i].is_nan() {
                return bad(format!("box row {i} has lo > hi"));
            }
        }
        for (i, c) in self.cones.iter().enumerate() {
            if c.f_mat.ncols() != m || c.f_mat.nrows() != c.f_vec.len() || c.h.len() != m {
                return bad(format!("cone {i} has inconsistent dimensions"));
            }
            if c.f_mat.nrows() == 0 {
                return bad(format!("cone {i} is empty"));
            }
        }
        let finite = self.cost.iter().all(|v| v.is_finite())
            && self.eq_matrix.iter().all(|v| v.is_finite())
            && self.eq_rhs.iter().all(|v| v.is_finite())
            && self.box_matrix.iter().all(|v| v.is_finite())
            && self.box_offset.iter().all(|v| v.is_finite())
            && self
                .cones
                .iter()
                .all(|c| c.f_mat.iter().chain(c.f_vec.iter()).chain(c.h.iter()).all(|v| v.is_finite()) && c.s.is_finite());
        if !finite {
            return bad("non-finite data".into());
        }
        Ok(())
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        self.cost.dot(z)
    }
}

/// Multipliers of a [`ConicProblem`]: `lambda` for the equalities, `(u_i, mu_i)`
/// for each cone with `||u_i|| <= mu_i`, and `nu_lo`/`nu_hi` for the box.
///
/// Stationarity reads
/// `cost + E'lambda + B'(nu_hi - nu_lo) + sum_i (F_i'u_i - mu_i h_i) = 0`,
/// and the dual objective is
/// `-e'lambda + sum_i (u_i'f_i - mu_i s_i) + offset'(nu_hi - nu_lo) - hi'nu_hi + lo'nu_lo`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualSolution {
    pub lambda: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub nu_lo: Vec<f64>,
    pub nu_hi: Vec<f64>,
    pub dual_value: f64,
}

impl DualSolution {
    pub fn zeros(problem: &ConicProblem) -> Self {
        DualSolution {
            lambda: vec![0.0; problem.num_eq()],
            u: problem.cones.iter().map(|c| vec![0.0; c.f_vec.len()]).collect(),
            mu: vec![0.0; problem.cones.len()],
            nu_lo: vec![0.0; problem.num_box()],
            nu_hi: vec![0.0; problem.num_box()],
            dual_value: 0.0,
        }
    }

    /// Evaluates the dual objective; infinite bounds contribute nothing when
    /// their multiplier is zero.
    pub fn objective(&self, problem: &ConicProblem) -> f64 {
        let mut val = -problem
            .eq_rhs
            .iter()
            .zip(&self.lambda)
            .map(|(e, l)| e * l)
            .sum::<f64>();
        for (i, c) in problem.cones.iter().enumerate() {
            val += c.f_vec.iter().zip(&self.u[i]).map(|(f, u)| f * u).sum::<f64>() - self.mu[i] * c.s;
        }
        for i in 0..problem.num_box() {
            let (nl, nh) = (self.nu_lo[i], self.nu_hi[i]);
            val += problem.box_offset[i] * (nh - nl);
            if nh != 0.0 {
                val -= problem.box_hi[i] * nh;
            }
            if nl != 0.0 {
                val += problem.box_lo[i] * nl;
            }
        }
        val
    }
}

/// Diagnostics for a primal/dual pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualResidualReport {
    /// Max-norm of the stationarity equation.
    pub stationarity: f64,
    /// Largest `||u_i|| - mu_i` (positive means a cone violation).
    pub cone_violation: f64,
    /// Most negative box multiplier, reported as a positive number.
    pub sign_violation: f64,
    /// Largest complementarity product over cones and box rows.
    pub complementarity: f64,
}

impl DualResidualReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.cone_violation)
            .max(self.sign_violation)
            .max(self.complementarity)
    }
}

pub fn dual_residuals(problem: &ConicProblem, z: &DVector<f64>, dual: &DualSolution) -> Result<DualResidualReport> {
    problem.validate()?;
    let m = problem.num_vars();
    if z.len() != m
        || dual.lambda.len() != problem.num_eq()
        || dual.mu.len() != problem.cones.len()
        || dual.u.len() != problem.cones.len()
        || dual.nu_lo.len() != problem.num_box()
        || dual.nu_hi.len() != problem.num_box()
    {
        return Err(Error::InvalidArgument("dual residuals: dimension mismatch".into()));
    }
    let mut grad = problem.cost.clone();
    grad += problem.eq_matrix.transpose() * DVector::from_column_slice(&dual.lambda);
    let nu: DVector<f64> = DVector::from_iterator(
        problem.num_box(),
        dual.nu_hi.iter().zip(&dual.nu_lo).map(|(h, l)| h - l),
    );
    grad += problem.box_matrix.transpose() * nu;
    let mut cone_violation = f64::NEG_INFINITY;
    let mut complementarity: f64 = 0.0;
    for (i, c) in problem.cones.iter().enumerate() {
        let u = DVector::from_column_slice(&dual.u[i]);
        grad += c.f_mat.transpose() * &u - &c.h * dual.mu[i];
        cone_violation = cone_violation.max(u.norm() - dual.mu[i]);
        // <(h'z + s, F z + f), (mu, -u)>
        let head = c.h.dot(z) + c.s;
        let tail = &c.f_mat * z + &c.f_vec;
        complementarity = complementarity.max((head * dual.mu[i] - tail.dot(&u)).abs());
    }
    let mut sign_violation: f64 = 0.0;
    let bz = &problem.box_matrix * z + &problem.box_offset;
    for i in 0..problem.num_box() {
        sign_violation = sign_violation.max(-dual.nu_lo[i]).max(-dual.nu_hi[i]);
        if problem.box_hi[i].is_finite() {
            complementarity = complementarity.max((dual.nu_hi[i] * (problem.box_hi[i] - bz[i])).abs());
        }
        if problem.box_lo[i].is_finite() {
            complementarity = complementarity.max((dual.nu_lo[i] * (bz[i] - problem.box_lo[i])).abs());
        }
    }
    Ok(DualResidualReport {
        stationarity: grad.amax(),
        cone_violation: cone_violation.max(0.0),
        sign_violation,
        complementarity,
    })
}
