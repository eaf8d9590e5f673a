//! Linear programming: problem representation, a bounded-variable two-phase
//! revised simplex solver, exhaustive vertex enumeration for small polytopes,
//! and a plain-text model dump.
//!
//! The representation is deliberately dense. Balance models have at most a
//! few hundred rows, so the row matrix and one column-major copy inside the
//! solver stay well within desk-scale memory, and the formulations whose row
//! counts would explode are excluded upstream by a size guard.

mod dump;
mod simplex;
mod vertices;

pub use dump::write_model;
pub use simplex::{solve_lp, Simplex};
pub use vertices::{enumerate_vertices, Vertex, VertexConfig, VertexSet};

use thiserror::Error;

/// Constraint sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "le",
            Relation::Eq => "eq",
            Relation::Ge => "ge",
        }
    }
}

/// One dense constraint row `coeffs . x (rel) rhs`.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub coeffs: Vec<f64>,
    pub rel: Relation,
    pub rhs: f64,
}

/// A minimization problem over box-bounded variables.
///
/// Bounds may be infinite (`f64::NEG_INFINITY` / `f64::INFINITY`).
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub name: String,
    /// Number of structural variables.
    pub n: usize,
    /// Objective coefficients, minimized.
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Optional variable names for dumps and reports.
    pub var_names: Option<Vec<String>>,
}

impl LinearProgram {
    /// Structural consistency check run by every consumer.
    pub fn check(&self) -> Result<(), LpError> {
        let n = self.n;
        if self.objective.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Malformed(format!(
                "vector lengths (obj {}, lo {}, hi {}) do not match n = {}",
                self.objective.len(),
                self.lower.len(),
                self.upper.len(),
                n
            )));
        }
        if let Some(names) = &self.var_names {
            if names.len() != n {
                return Err(LpError::Malformed(format!(
                    "{} variable names for {} variables",
                    names.len(),
                    n
                )));
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(LpError::Malformed(format!(
                    "row {i} has {} coefficients, expected {n}",
                    c.coeffs.len()
                )));
            }
            if !c.rhs.is_finite() {
                return Err(LpError::Malformed(format!("row {i} has non-finite rhs")));
            }
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] {
                return Err(LpError::Malformed(format!(
                    "variable {j} has empty bound interval [{}, {}]",
                    self.lower[j], self.upper[j]
                )));
            }
            if self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(LpError::Malformed(format!("variable {j} has NaN bound")));
            }
        }
        Ok(())
    }

    /// Name of variable `j` for reports.
    pub fn var_name(&self, j: usize) -> String {
        match &self.var_names {
            Some(names) => names[j].clone(),
            None => format!("x{j}"),
        }
    }

    /// Largest constraint violation of `x` (bounds excluded).
    pub fn row_residual(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let viol = match c.rel {
                Relation::Le => (lhs - c.rhs).max(0.0),
                Relation::Ge => (c.rhs - lhs).max(0.0),
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }
}

/// Solver outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of [`solve_lp`].
///
/// `x`, `objective_value` and `basis` are meaningful only when `status` is
/// [`LpStatus::Optimal`]. Optimal solutions are always basic feasible
/// solutions, i.e. vertices of the feasible region, so `is_vertex` is true
/// for every optimal result.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    /// Basic column indices; structural variables are `0..n`, the slack of
    /// row `i` is `n + i`.
    pub basis: Vec<usize>,
    pub is_vertex: bool,
    pub iterations: u64,
}

/// Simplex tolerances and safeguards.
#[derive(Debug, Clone)]
pub struct SimplexConfig {
    /// Bound and row feasibility tolerance.
    pub feas_tol: f64,
    /// Reduced-cost optimality tolerance.
    pub cost_tol: f64,
    /// Steps smaller than this count as degenerate.
    pub degen_tol: f64,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: u64,
    /// Pivots between basis refactorizations.
    pub refactor_every: u64,
    /// Hard iteration cap.
    pub max_iters: u64,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        SimplexConfig {
            feas_tol: 1e-8,
            cost_tol: 1e-8,
            degen_tol: 1e-10,
            bland_after: 1000,
            refactor_every: 200,
            max_iters: 1_000_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("numerical instability: {0}")]
    NumericalInstability(String),
    #[error("iteration limit of {0} reached")]
    IterationLimit(u64),
}
