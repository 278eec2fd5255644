use nalgebra::DVector;

use super::{CoefficientEstimate, RegressionProblem};
use crate::error::{invalid, Result};

/// `sign(z) * max(|z| - threshold, 0)`.
#[inline]
pub fn soft_threshold(z: f64, threshold: f64) -> f64 {
    debug_assert!(threshold >= 0.0);
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    }
}

/// Evaluates `(1/n) * ||y - X b||^2 + penalty * ||b||_1` directly from the data.
pub fn lasso_objective(problem: &RegressionProblem, coefficients: &DVector<f64>, penalty: f64) -> f64 {
    let residual = problem.targets() - problem.design() * coefficients;
    residual.norm_squared() / problem.n() as f64 + penalty * coefficients.lp_norm(1)
}

/// Convergence controls for coordinate descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Stop once the largest coefficient change in a sweep is at most this.
    pub tolerance: f64,
    /// Maximum number of full coordinate sweeps.
    pub max_iterations: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self { tolerance: 1e-7, max_iterations: 10_000 }
    }
}

impl LassoOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(invalid(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be >= 1"));
        }
        Ok(())
    }
}

/// Sufficient statistics `X'X`, `X'y`, `y'y` and `n` of a growing regression.
///
/// Rows can be appended one at a time at `O(p^2)` cost, after which
/// [`lasso_fit_gram`] refits without touching the raw rows again.
#[derive(Debug, Clone, PartialEq)]
pub struct GramStats {
    p: usize,
    n: usize,
    /// Row-major `p x p`, symmetric.
    gram: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
}

impl GramStats {
    pub fn new(p: usize) -> Self {
        Self { p, n: 0, gram: vec![0.0; p * p], xty: vec![0.0; p], yty: 0.0 }
    }

    pub fn from_problem(problem: &RegressionProblem) -> Self {
        let x = problem.design();
        let y = problem.targets();
        let p = problem.p();
        let xtx = x.tr_mul(x);
        let xty = x.tr_mul(y);
        let mut gram = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                gram[i * p + j] = xtx[(i, j)];
            }
        }
        Self { p, n: problem.n(), gram, xty: xty.iter().copied().collect(), yty: y.norm_squared() }
    }

    pub fn push(&mut self, row: &[f64], target: f64) {
        assert_eq!(row.len(), self.p, "row length must equal dimension");
        let p = self.p;
        for (i, &xi) in row.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let g = &mut self.gram[i * p..(i + 1) * p];
            for (gij, &xj) in g.iter_mut().zip(row) {
                *gij += xi * xj;
            }
            self.xty[i] += xi * target;
        }
        self.yty += target * target;
        self.n += 1;
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Objective value from the sufficient statistics. Subject to cancellation
    /// when the residual is tiny relative to `y'y`.
    pub fn objective(&self, coefficients: &[f64], penalty: f64) -> f64 {
        if self.n == 0 {
            return penalty * coefficients.iter().map(|b| b.abs()).sum::<f64>();
        }
        let p = self.p;
        let mut quad = 0.0;
        let mut lin = 0.0;
        for i in 0..p {
            let bi = coefficients[i];
            if bi == 0.0 {
                continue;
            }
            lin += self.xty[i] * bi;
            let row = &self.gram[i * p..(i + 1) * p];
            quad += bi * row.iter().zip(coefficients).map(|(g, b)| g * b).sum::<f64>();
        }
        let rss = (self.yty - 2.0 * lin + quad).max(0.0);
        rss / self.n as f64 + penalty * coefficients.iter().map(|b| b.abs()).sum::<f64>()
    }
}

/// Outcome of [`lasso_fit_gram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GramFit {
    pub iterations_used: usize,
    pub converged: bool,
}

/// Cyclic coordinate descent on sufficient statistics, in place.
///
/// `coefficients` is used as the warm start and receives the solution. The
/// update for coordinate `j` is
/// `soft_threshold((2/n) x_j' r_{-j}, penalty) / ((2/n) ||x_j||^2)`, and a
/// zero-norm column is pinned to zero.
pub fn lasso_fit_gram(stats: &GramStats, penalty: f64, coefficients: &mut [f64], options: LassoOptions) -> GramFit {
    coordinate_descent(stats, penalty, coefficients, options, |_| {})
}

fn coordinate_descent(
    stats: &GramStats,
    penalty: f64,
    coef: &mut [f64],
    options: LassoOptions,
    mut after_sweep: impl FnMut(&[f64]),
) -> GramFit {
    let p = stats.p;
    assert_eq!(coef.len(), p, "coefficient length must equal dimension");
    if stats.n == 0 {
        coef.iter_mut().for_each(|b| *b = 0.0);
        return GramFit { iterations_used: 0, converged: true };
    }
    let scale = 2.0 / stats.n as f64;
    let gram = &stats.gram;

    // q = G b, kept in sync as coordinates move.
    let mut q = vec![0.0; p];
    for (j, &bj) in coef.iter().enumerate() {
        if bj != 0.0 {
            for (qi, g) in q.iter_mut().zip(&gram[j * p..(j + 1) * p]) {
                *qi += g * bj;
            }
        }
    }

    for sweep in 1..=options.max_iterations {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            let gjj = gram[j * p + j];
            let old = coef[j];
            let new = if gjj > 0.0 {
                let partial = stats.xty[j] - q[j] + gjj * old;
                soft_threshold(scale * partial, penalty) / (scale * gjj)
            } else {
                0.0
            };
            if new != old {
                let delta = new - old;
                for (qi, g) in q.iter_mut().zip(&gram[j * p..(j + 1) * p]) {
                    *qi += g * delta;
                }
                coef[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        after_sweep(coef);
        if max_change <= options.tolerance {
            return GramFit { iterations_used: sweep, converged: true };
        }
    }
    GramFit { iterations_used: options.max_iterations, converged: false }
}

fn prepare(
    problem: &RegressionProblem,
    options: LassoOptions,
    init: Option<&DVector<f64>>,
) -> Result<(GramStats, Vec<f64>)> {
    options.validate()?;
    let start = match init {
        Some(b) if b.len() != problem.p() => {
            return Err(invalid(format!("warm start has length {} but problem has {} columns", b.len(), problem.p())))
        }
        Some(b) if b.iter().any(|v| !v.is_finite()) => return Err(invalid("warm start contains non-finite entries")),
        Some(b) => b.iter().copied().collect(),
        None => vec![0.0; problem.p()],
    };
    Ok((GramStats::from_problem(problem), start))
}

/// Fits the Lasso by cyclic coordinate descent from a zero start.
pub fn lasso_fit(problem: &RegressionProblem, tolerance: f64, max_iterations: usize) -> Result<CoefficientEstimate> {
    lasso_fit_warm(problem, LassoOptions { tolerance, max_iterations }, None)
}

/// Fits the Lasso starting from `init` (zeros when `None`).
pub fn lasso_fit_warm(
    problem: &RegressionProblem,
    options: LassoOptions,
    init: Option<&DVector<f64>>,
) -> Result<CoefficientEstimate> {
    let (stats, mut coef) = prepare(problem, options, init)?;
    let fit = lasso_fit_gram(&stats, problem.penalty(), &mut coef, options);
    Ok(finish(problem, coef, fit))
}

/// As [`lasso_fit_warm`], also returning the objective after every sweep.
pub fn lasso_fit_traced(
    problem: &RegressionProblem,
    options: LassoOptions,
    init: Option<&DVector<f64>>,
) -> Result<(CoefficientEstimate, Vec<f64>)> {
    let (stats, mut coef) = prepare(problem, options, init)?;
    let mut trace = Vec::new();
    let penalty = problem.penalty();
    let fit = coordinate_descent(&stats, penalty, &mut coef, options, |b| {
        trace.push(lasso_objective(problem, &DVector::from_column_slice(b), penalty));
    });
    Ok((finish(problem, coef, fit), trace))
}

fn finish(problem: &RegressionProblem, coef: Vec<f64>, fit: GramFit) -> CoefficientEstimate {
    let coefficients = DVector::from_vec(coef);
    let objective_value = lasso_objective(problem, &coefficients, problem.penalty());
    CoefficientEstimate {
        coefficients,
        objective_value,
        iterations_used: fit.iterations_used,
        converged: fit.converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, p: usize, penalty: f64) -> RegressionProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        RegressionProblem::new(x, y, penalty).unwrap()
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(-1.0, 2.0), 0.0);
        assert_eq!(soft_threshold(-5.0, 2.0), -3.0);
        for x in [-3.5, 0.0, 1e-300, 7.25] {
            assert_eq!(soft_threshold(x, 0.0), x);
        }
    }

    proptest! {
        #[test]
        fn soft_threshold_is_odd_and_lipschitz(a in -1e3f64..1e3, b in -1e3f64..1e3, t in 0.0f64..100.0) {
            prop_assert_eq!(soft_threshold(-a, t), -soft_threshold(a, t));
            prop_assert!((soft_threshold(a, t) - soft_threshold(b, t)).abs() <= (a - b).abs() + 1e-12);
        }
    }

    #[test]
    fn identity_design_unpenalized() {
        let p = RegressionProblem::new(DMatrix::identity(2, 2), DVector::from_vec(vec![3.0, 0.0]), 0.0).unwrap();
        let fit = lasso_fit(&p, 1e-10, 100).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-12);
        assert_eq!(fit.coefficients[1], 0.0);
    }

    #[test]
    fn identity_design_zeroed_at_threshold() {
        // With n = 2 the first coordinate update is soft_threshold(3, lambda) / 1,
        // so everything vanishes once lambda >= 3; lambda = 6 is well past that.
        let p = RegressionProblem::new(DMatrix::identity(2, 2), DVector::from_vec(vec![3.0, 0.0]), 6.0).unwrap();
        let fit = lasso_fit(&p, 1e-10, 100).unwrap();
        assert_eq!(fit.coefficients.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_column_is_pinned_to_zero() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, -1.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let p = RegressionProblem::new(x, y, 0.01).unwrap();
        let init = DVector::from_vec(vec![0.0, 5.0]);
        let fit = lasso_fit_warm(&p, LassoOptions::default(), Some(&init)).unwrap();
        assert_eq!(fit.coefficients[1], 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = DMatrix::from_element(3, 2, 1.0);
        assert!(RegressionProblem::new(x.clone(), DVector::zeros(2), 0.1).is_err());
        let mut bad = x.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(RegressionProblem::new(bad, DVector::zeros(3), 0.1).is_err());
        assert!(RegressionProblem::new(x.clone(), DVector::from_element(3, f64::INFINITY), 0.1).is_err());
        assert!(RegressionProblem::new(x.clone(), DVector::zeros(3), -1.0).is_err());
        let ok = RegressionProblem::new(x, DVector::zeros(3), 0.1).unwrap();
        assert!(lasso_fit(&ok, 0.0, 10).is_err());
        assert!(lasso_fit(&ok, 1e-6, 0).is_err());
        let wrong = DVector::zeros(5);
        assert!(lasso_fit_warm(&ok, LassoOptions::default(), Some(&wrong)).is_err());
    }

    #[test]
    fn objective_never_increases_across_sweeps() {
        for seed in 0..20 {
            let problem = random_problem(seed, 12 + seed as usize, 30, 0.05);
            let (fit, trace) = lasso_fit_traced(&problem, LassoOptions::default(), None).unwrap();
            assert!(fit.converged);
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "seed {seed}: {} -> {}", w[0], w[1]);
            }
            let last = *trace.last().unwrap();
            assert!((last - fit.objective_value).abs() <= 1e-10 * fit.objective_value.abs().max(1e-300));
        }
    }

    #[test]
    fn kkt_conditions_hold_at_solution() {
        let tol = 1e-7;
        for seed in 0..20 {
            let problem = random_problem(100 + seed, 25, 10, 0.1);
            let fit = lasso_fit(&problem, tol, 10_000).unwrap();
            let n = problem.n() as f64;
            let residual = problem.targets() - problem.design() * &fit.coefficients;
            for j in 0..problem.p() {
                let g = 2.0 / n * problem.design().column(j).dot(&residual);
                let b = fit.coefficients[j];
                if b != 0.0 {
                    assert!((g - problem.penalty() * b.signum()).abs() <= 10.0 * tol);
                } else {
                    assert!(g.abs() <= problem.penalty() + 10.0 * tol);
                }
            }
        }
    }

    #[test]
    fn unpenalized_square_system_matches_direct_solve() {
        let problem = random_problem(7, 6, 6, 0.0);
        let fit = lasso_fit(&problem, 1e-13, 200_000).unwrap();
        let direct = problem.design().clone().lu().solve(problem.targets()).unwrap();
        assert!((fit.coefficients - direct).amax() < 1e-8);
    }

    #[test]
    fn support_shrinks_as_penalty_grows() {
        // Well-conditioned designs (n >> p, independent columns), where the
        // path has no variables re-entering.
        for seed in 0..10 {
            let base = random_problem(300 + seed, 400, 8, 0.0);
            let mut prev = usize::MAX;
            for k in 0..10 {
                let lambda = 0.01 * 1.6f64.powi(k);
                let problem = base.clone().with_penalty(lambda).unwrap();
                let fit = lasso_fit(&problem, 1e-10, 100_000).unwrap();
                let nnz = fit.coefficients.iter().filter(|b| **b != 0.0).count();
                assert!(nnz <= prev, "seed {seed} lambda {lambda}: {nnz} > {prev}");
                prev = nnz;
            }
        }
    }

    #[test]
    fn incremental_stats_match_batch() {
        let problem = random_problem(11, 9, 4, 0.2);
        let mut stats = GramStats::new(4);
        for i in 0..9 {
            let row: Vec<f64> = problem.design().row(i).iter().copied().collect();
            stats.push(&row, problem.targets()[i]);
        }
        let batch = GramStats::from_problem(&problem);
        assert_eq!(stats.n(), batch.n());
        for (a, b) in stats.gram.iter().zip(&batch.gram) {
            assert!((a - b).abs() < 1e-12);
        }
        let b = DVector::from_vec(vec![0.3, -0.1, 0.0, 0.7]);
        let direct = lasso_objective(&problem, &b, 0.2);
        assert!((stats.objective(b.as_slice(), 0.2) - direct).abs() < 1e-12);
    }
}
