//! Convex quadratic programs with ranged linear constraints, an operator-splitting
//! solver for them, and the exposure-matching allocation problem built on top.

mod admm;
pub mod allocation;
pub mod linsys;
pub mod sparse;
pub mod synthetic;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use admm::{solve_qp, solve_qp_warm};
pub use allocation::{
    build_allocation_problem, evaluate_allocation_objective, solve_allocation, AllocVar, AllocationProblem,
    AllocationResult, BlockPlan,
};
pub use sparse::CsrMatrix;

use crate::error::{Error, Result};

/// `minimize ½ xᵀPx + qᵀx + constant  subject to  l ≤ Ax ≤ u`.
///
/// `P` is stored in full (both triangles). Infinite bounds are allowed.
#[derive(Clone, Debug)]
pub struct QpProblem {
    pub p: CsrMatrix,
    pub q: Vec<f64>,
    pub constant: f64,
    pub a: CsrMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

impl QpProblem {
    pub fn n_vars(&self) -> usize {
        self.q.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.l.len()
    }

    /// Checks dimensions, symmetry of `P`, `l ≤ u` and that every variable is constrained.
    pub fn check(&self) -> Result<()> {
        let n = self.n_vars();
        let m = self.n_constraints();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(Error::Solver(format!("P is {}x{}, expected {n}x{n}", self.p.nrows(), self.p.ncols())));
        }
        if self.a.ncols() != n || self.a.nrows() != m || self.u.len() != m {
            return Err(Error::Solver("constraint dimensions disagree".into()));
        }
        let scale = self.p.triplets().fold(1.0_f64, |s, (_, _, v)| s.max(v.abs()));
        if self.p.asymmetry() > 1e-12 * scale {
            return Err(Error::Solver("P is not symmetric".into()));
        }
        if let Some(k) = (0..m).find(|&k| !(self.l[k] <= self.u[k])) {
            return Err(Error::Solver(format!("row {k}: lower bound {} exceeds upper bound {}", self.l[k], self.u[k])));
        }
        let mut seen = vec![false; n];
        for (_, c, _) in self.a.triplets() {
            seen[c] = true;
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(Error::Solver(format!("variable {v} appears in no constraint row")));
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut px = vec![0.0; x.len()];
        self.p.mul_vec(x, &mut px);
        let quad: f64 = px.iter().zip(x).map(|(a, b)| a * b).sum();
        let lin: f64 = self.q.iter().zip(x).map(|(a, b)| a * b).sum();
        0.5 * quad + lin + self.constant
    }

    /// Plain-text dump for cross-checking with external solvers:
    /// a `qp n m` header line, then `P i j v`, `q i v`, `A i j v`, `l i v`,
    /// `u i v` and `c v` records.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "qp {} {}", self.n_vars(), self.n_constraints())?;
        for (i, j, v) in self.p.triplets() {
            writeln!(w, "P {i} {j} {v:e}")?;
        }
        for (i, v) in self.q.iter().enumerate() {
            writeln!(w, "q {i} {v:e}")?;
        }
        for (i, j, v) in self.a.triplets() {
            writeln!(w, "A {i} {j} {v:e}")?;
        }
        for (i, v) in self.l.iter().enumerate() {
            writeln!(w, "l {i} {v:e}")?;
        }
        for (i, v) in self.u.iter().enumerate() {
            writeln!(w, "u {i} {v:e}")?;
        }
        writeln!(w, "c {:e}", self.constant)?;
        w.flush()
    }
}

/// Solver and block-iteration settings. Field names double as the JSON keys.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpConfig {
    pub rho: f64,
    pub sigma: f64,
    pub relax_alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub k_blocks: usize,
    pub max_outer: usize,
}

impl Default for QpConfig {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            relax_alpha: 1.6,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 4000,
            k_blocks: 1000,
            max_outer: 10,
        }
    }
}

impl QpConfig {
    pub fn check(&self) -> Result<()> {
        let positive = [self.rho, self.sigma, self.eps_abs + self.eps_rel];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || self.eps_abs < 0.0 || self.eps_rel < 0.0 {
            return Err(Error::Parameter("rho, sigma must be positive and tolerances non-negative".into()));
        }
        if !(self.relax_alpha > 0.0 && self.relax_alpha < 2.0) {
            return Err(Error::Parameter(format!("relax_alpha must lie in (0, 2), got {}", self.relax_alpha)));
        }
        if self.max_iter == 0 || self.k_blocks == 0 || self.max_outer == 0 {
            return Err(Error::Parameter("max_iter, k_blocks and max_outer must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIter,
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Constraint multipliers; positive on active upper bounds, negative on active lower bounds.
    pub y: Vec<f64>,
    pub objective_value: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub status: QpStatus,
    /// Norm of the infeasibility certificate when `status` is `Infeasible`.
    pub certificate_norm: Option<f64>,
    pub factor_nnz: usize,
    pub refactorizations: usize,
}
