//! Primal-dual interior-point solver for linear objectives over variable
//! bounds, linear equalities and second-order cones.
//!
//! Solves
//!
//! ```text
//! minimize    c'x
//! subject to  A x = b
//!             lower_i <= x_i <= upper_i      (per-variable bounds)
//!             h_k - G_k x  in  SOC(d_k)      (second-order cone blocks)
//! ```
//!
//! using a homogeneous self-dual embedding with Nesterov-Todd scaling and a
//! Mehrotra predictor-corrector. The Newton systems are reduced to a small
//! dense system by eliminating every variable that appears in no cone block,
//! so the cost per iteration is linear in the number of such variables. This
//! suits problems with many bounded variables, few equality rows and a few
//! small cones.

mod cones;
mod ipm;
mod kkt;

use thiserror::Error;

pub use ipm::solve;

#[derive(Debug, Error, PartialEq)]
pub enum ConicError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite problem data in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub var: usize,
    pub side: BoundSide,
    pub value: f64,
}

/// Cone block `h - G x[vars] in SOC(h.len())`; `g` is row-major
/// `h.len() x vars.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocBlock {
    pub vars: Vec<usize>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConicProblem {
    pub num_vars: usize,
    pub c: Vec<f64>,
    /// Sparse equality rows `(column, coefficient)`.
    pub eq_rows: Vec<Vec<(usize, f64)>>,
    pub b: Vec<f64>,
    pub bounds: Vec<BoundRow>,
    pub socs: Vec<SocBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConicSettings {
    /// Relative primal and dual residual tolerance.
    pub feas_tol: f64,
    /// Relative duality gap tolerance.
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Non-cone variables kept in the dense block (the ones closest to
    /// being basic), for numerical stability of the reduced system.
    pub dense_extra: usize,
    pub refine_steps: usize,
}

impl Default for ConicSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 100,
            dense_extra: 24,
            refine_steps: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConicStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    /// Step length collapsed or the reduced system became singular.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub x: Vec<f64>,
    /// Multipliers of the equality rows.
    pub y: Vec<f64>,
    /// Multipliers of the bound rows, in input order.
    pub z_bounds: Vec<f64>,
    /// Multipliers of each cone block.
    pub z_socs: Vec<Vec<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// Relative primal residual.
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Relative duality gap.
    pub gap: f64,
    pub iterations: usize,
}

impl ConicProblem {
    pub(crate) fn check(&self) -> Result<(), ConicError> {
        let n = self.num_vars;
        if self.c.len() != n {
            return Err(ConicError::Dimension(format!(
                "c has {} entries for {n} variables",
                self.c.len()
            )));
        }
        if self.b.len() != self.eq_rows.len() {
            return Err(ConicError::Dimension("b and equality rows differ".into()));
        }
        if self.c.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(ConicError::NonFinite("objective or rhs"));
        }
        for row in &self.eq_rows {
            if row.iter().any(|&(j, a)| j >= n || !a.is_finite()) {
                return Err(ConicError::Dimension("equality row column out of range".into()));
            }
        }
        for bound in &self.bounds {
            if bound.var >= n || !bound.value.is_finite() {
                return Err(ConicError::Dimension(format!("bad bound {bound:?}")));
            }
        }
        for block in &self.socs {
            if block.h.len() < 2
                || block.g.len() != block.h.len() * block.vars.len()
                || block.vars.iter().any(|&j| j >= n)
            {
                return Err(ConicError::Dimension("malformed cone block".into()));
            }
            if block.g.iter().chain(&block.h).any(|v| !v.is_finite()) {
                return Err(ConicError::NonFinite("cone block"));
            }
        }
        Ok(())
    }
}
