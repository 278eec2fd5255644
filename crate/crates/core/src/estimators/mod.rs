//! Per-arm regression solvers.
//!
//! The Lasso objective used throughout is
//! `(1/n) * ||y - X b||_2^2 + lambda * ||b||_1`, with no intercept.
//! Two entry points exist for each estimator: a batch fit over a
//! [`RegressionProblem`] and an incremental form ([`GramStats`],
//! [`IncrementalLeastSquares`]) for online refits where one row arrives at a
//! time.

mod incremental;
mod lasso;
mod ols;

pub use incremental::IncrementalLeastSquares;
pub use lasso::{
    lasso_fit, lasso_fit_gram, lasso_fit_traced, lasso_fit_warm, lasso_objective, soft_threshold, GramFit, GramStats,
    LassoOptions,
};
pub use ols::{ols_fit, SINGULAR_VALUE_CUTOFF};

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

/// A least-squares problem with an optional L1 penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    design: DMatrix<f64>,
    targets: DVector<f64>,
    penalty: f64,
}

impl RegressionProblem {
    pub fn new(design: DMatrix<f64>, targets: DVector<f64>, penalty: f64) -> Result<Self> {
        let (n, p) = design.shape();
        if n == 0 || p == 0 {
            return Err(invalid(format!("design must be non-empty, got {n}x{p}")));
        }
        if targets.len() != n {
            return Err(invalid(format!("design has {n} rows but targets has {} entries", targets.len())));
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(invalid("design contains non-finite entries"));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(invalid("targets contain non-finite entries"));
        }
        if !(penalty >= 0.0 && penalty.is_finite()) {
            return Err(invalid(format!("penalty must be finite and >= 0, got {penalty}")));
        }
        Ok(Self { design, targets, penalty })
    }

    /// Builds a problem from row-major context rows.
    pub fn from_rows(rows: &[Vec<f64>], targets: &[f64], penalty: f64) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(invalid("rows have inconsistent lengths"));
        }
        let design = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(design, DVector::from_column_slice(targets), penalty)
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn with_penalty(mut self, penalty: f64) -> Result<Self> {
        if !(penalty >= 0.0 && penalty.is_finite()) {
            return Err(invalid(format!("penalty must be finite and >= 0, got {penalty}")));
        }
        self.penalty = penalty;
        Ok(self)
    }
}

/// Output of a solver.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientEstimate {
    pub coefficients: DVector<f64>,
    /// Objective value at `coefficients`, evaluated directly on the data.
    pub objective_value: f64,
    pub iterations_used: usize,
    pub converged: bool,
}
