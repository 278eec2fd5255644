use nalgebra::DVector;

use super::{lasso_objective, CoefficientEstimate, RegressionProblem};
use crate::error::{invalid, Result};

/// Singular values below this fraction of the largest are treated as zero.
pub const SINGULAR_VALUE_CUTOFF: f64 = 1e-10;

/// Minimum-norm least squares via a thin SVD. The penalty is ignored.
pub fn ols_fit(problem: &RegressionProblem) -> Result<CoefficientEstimate> {
    let x = problem.design();
    let y = problem.targets();
    let svd = x.clone().svd(true, true);
    let (u, vt) = match (&svd.u, &svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(invalid("singular value decomposition failed")),
    };
    let largest = svd.singular_values.max();
    let cutoff = SINGULAR_VALUE_CUTOFF * largest;

    let uty = u.tr_mul(y);
    let mut coefficients = DVector::zeros(problem.p());
    for (k, &sv) in svd.singular_values.iter().enumerate() {
        if sv > cutoff && sv > 0.0 {
            coefficients += vt.row(k).transpose() * (uty[k] / sv);
        }
    }
    let objective_value = lasso_objective(problem, &coefficients, 0.0);
    Ok(CoefficientEstimate { coefficients, objective_value, iterations_used: 1, converged: true })
}
