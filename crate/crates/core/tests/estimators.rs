use hdbandit_core::estimators::{
    lasso_fit, lasso_fit_traced, lasso_objective, ols_fit, GramStats, IncrementalLeastSquares, LassoOptions,
    RegressionProblem,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Accelerated proximal gradient with adaptive restart on the same objective.
/// Stops once the duality gap certifies the objective to within `gap_tol`.
fn fista(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, gap_tol: f64) -> DVector<f64> {
    let n = x.nrows() as f64;
    let gram = x.tr_mul(x) * (2.0 / n);
    let xty = x.tr_mul(y) * (2.0 / n);
    let lipschitz = gram.symmetric_eigenvalues().max().max(1e-12);
    let step = 1.0 / lipschitz;
    let objective = |b: &DVector<f64>| (y - x * b).norm_squared() / n + lambda * b.lp_norm(1);
    let prox = |z: DVector<f64>| z.map(|v| v.signum() * (v.abs() - lambda * step).max(0.0));
    // Dual of (1/2)||y - Xb||^2 + (lambda n / 2) ||b||_1 at the rescaled
    // residual, converted back to the (1/n) scaling.
    let gap = |b: &DVector<f64>| {
        let r = y - x * b;
        let alpha = lambda * n / 2.0;
        let corr = x.tr_mul(&r).amax();
        let theta = if corr > alpha { &r * (alpha / corr) } else { r.clone() };
        let dual = 0.5 * y.norm_squared() - 0.5 * (y - theta).norm_squared();
        let primal = 0.5 * r.norm_squared() + alpha * b.lp_norm(1);
        2.0 * (primal - dual) / n
    };

    let p = x.ncols();
    let mut b = DVector::zeros(p);
    let mut z = b.clone();
    let mut momentum = 1.0f64;
    let mut last = objective(&b);
    for it in 0..5_000_000 {
        let grad = &gram * &z - &xty;
        let next = prox(&z - grad * step);
        let value = objective(&next);
        if value > last && momentum > 1.0 {
            // Restart: drop the momentum and take a plain step from b.
            momentum = 1.0;
            z = b.clone();
            continue;
        }
        let m_next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        z = &next + (&next - &b) * ((momentum - 1.0) / m_next);
        b = next;
        last = value;
        momentum = m_next;
        if it % 25 == 0 && gap(&b) <= gap_tol {
            break;
        }
    }
    b
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize, p: usize, lambda: f64) -> RegressionProblem {
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let truth = DVector::from_fn(p, |j, _| if j < 3 { rng.random_range(-2.0..2.0) } else { 0.0 });
    let y = &x * truth + DVector::from_fn(n, |_, _| rng.random_range(-0.1..0.1));
    RegressionProblem::new(x, y, lambda).unwrap()
}

fn kkt_violation(problem: &RegressionProblem, b: &DVector<f64>) -> f64 {
    let n = problem.n() as f64;
    let lambda = problem.penalty();
    let grad = problem.design().tr_mul(&(problem.targets() - problem.design() * b)) * (2.0 / n);
    grad.iter()
        .zip(b.iter())
        .map(|(g, bj)| if *bj != 0.0 { (g - lambda * bj.signum()).abs() } else { (g.abs() - lambda).max(0.0) })
        .fold(0.0, f64::max)
}

#[test]
fn random_eight_by_five_matches_proximal_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(85);
    let problem = random_problem(&mut rng, 8, 5, 0.1);
    let fit = lasso_fit(&problem, 1e-7, 10_000).unwrap();
    let oracle = fista(problem.design(), problem.targets(), 0.1, 1e-10);
    let oracle_value = lasso_objective(&problem, &oracle, 0.1);
    assert!((fit.objective_value - oracle_value).abs() < 1e-6, "{} vs {oracle_value}", fit.objective_value);
    assert!(fit.converged);
}

#[test]
fn zeroing_threshold_matches_scalar_brute_force() {
    // With X = I and n = 2 the objective separates; coordinate 1 is
    // f(b) = (3 - b)^2 / 2 + lambda |b|. Minimize it on a fine grid.
    let scalar_argmin = |lambda: f64| {
        (-40_000..=40_000)
            .map(|i| i as f64 * 1e-4)
            .map(|b| (b, (3.0 - b).powi(2) / 2.0 + lambda * b.abs()))
            .fold((0.0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc })
            .0
    };
    // Smallest penalty on a 0.01 grid whose brute-force minimizer is zero.
    let threshold = (1..=1000).map(|k| k as f64 * 0.01).find(|&l| scalar_argmin(l).abs() < 1e-9).unwrap();
    assert!((threshold - 3.0).abs() < 1e-9, "brute-force threshold {threshold}");

    for lambda in [2.5, 2.99, 3.0, 4.0, 6.0] {
        let problem =
            RegressionProblem::new(DMatrix::identity(2, 2), DVector::from_vec(vec![3.0, 0.0]), lambda).unwrap();
        let fit = lasso_fit(&problem, 1e-12, 1000).unwrap();
        assert!((fit.coefficients[0] - scalar_argmin(lambda)).abs() < 1e-3, "lambda {lambda}");
        assert_eq!(fit.coefficients[1], 0.0);
        assert_eq!(fit.coefficients[0] == 0.0, lambda >= 3.0, "lambda {lambda}");
    }
}

#[test]
fn underdetermined_ols_is_the_minimum_norm_solution() {
    // Orthogonal rows: the pseudo-inverse is X' (X X')^{-1}.
    let x = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, -1.0]);
    let y = DVector::from_vec(vec![3.0, 5.0]);
    let fit = ols_fit(&RegressionProblem::new(x.clone(), y.clone(), 0.0).unwrap()).unwrap();
    let xxt = &x * x.transpose();
    let oracle = x.transpose() * xxt.try_inverse().unwrap() * &y;
    assert!((&fit.coefficients - &oracle).amax() < 1e-12);
    assert!((&y - &x * &fit.coefficients).norm() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let x = DMatrix::from_fn(3, 7, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let fit = ols_fit(&RegressionProblem::new(x.clone(), y.clone(), 0.0).unwrap()).unwrap();
        let oracle = x.transpose() * (&x * x.transpose()).try_inverse().unwrap() * &y;
        assert!((&fit.coefficients - &oracle).amax() < 1e-9);
    }
}

#[test]
fn unpenalized_lasso_equals_ols_on_square_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        // Diagonally dominant, so well conditioned.
        let x = DMatrix::from_fn(6, 6, |i, j| if i == j { 3.0 } else { rng.random_range(-0.5..0.5) });
        let y = DVector::from_fn(6, |_, _| rng.random_range(-2.0..2.0));
        let problem = RegressionProblem::new(x, y, 0.0).unwrap();
        let lasso = lasso_fit(&problem, 1e-13, 100_000).unwrap();
        let ols = ols_fit(&problem).unwrap();
        assert!((&lasso.coefficients - &ols.coefficients).amax() < 1e-8);
    }
}

#[test]
fn incremental_least_squares_tracks_batch_ols_through_rank_growth() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = 6;
    let mut inc = IncrementalLeastSquares::new(p);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut ys = Vec::new();
    for i in 0..30 {
        // Every third row repeats an earlier one, so rank lags n for a while.
        let row: Vec<f64> =
            if i % 3 == 2 { rows[i - 1].clone() } else { (0..p).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let y = rng.random_range(-1.0..1.0);
        inc.push(&row, y);
        rows.push(row);
        ys.push(y);
        let batch = ols_fit(&RegressionProblem::from_rows(&rows, &ys, 0.0).unwrap()).unwrap();
        let diff = (inc.solution() - &batch.coefficients).amax();
        assert!(diff < 1e-8, "after {} rows: {diff}", i + 1);
    }
    assert_eq!(inc.rank(), p);
}

#[test]
fn gram_objective_matches_direct_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let problem = random_problem(&mut rng, 15, 9, 0.3);
    let stats = GramStats::from_problem(&problem);
    let b = DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.0));
    let direct = lasso_objective(&problem, &b, 0.3);
    assert!((stats.objective(b.as_slice(), 0.3) - direct).abs() < 1e-10 * direct.max(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lasso_agrees_with_proximal_gradient(seed in 0u64..10_000, n in 5usize..30, p in 2usize..25, lambda in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problem = random_problem(&mut rng, n, p, lambda);
        let fit = lasso_fit(&problem, 1e-7, 10_000).unwrap();
        let oracle = fista(problem.design(), problem.targets(), lambda, 1e-10);
        let gap = (fit.objective_value - lasso_objective(&problem, &oracle, lambda)).abs();
        prop_assert!(gap < 1e-6, "objective gap {}", gap);
        prop_assert!(kkt_violation(&problem, &fit.coefficients) < 1e-6);
    }

    #[test]
    fn objective_trace_is_non_increasing(seed in 0u64..10_000, lambda in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problem = random_problem(&mut rng, 12, 20, lambda);
        let (_, trace) = lasso_fit_traced(&problem, LassoOptions::default(), None).unwrap();
        for pair in trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12);
        }
    }
}
