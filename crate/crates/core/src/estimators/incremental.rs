use nalgebra::DVector;

/// Minimum-norm least squares updated one row at a time.
///
/// Keeps an orthonormal basis `Q` of the row space of `X` (re-orthogonalised
/// Gram-Schmidt) and an upper-triangular factor `S` of the coordinates
/// `L = X Q`, maintained with Givens rotations. The minimum-norm solution is
/// `Q z` where `S z` equals the rotated targets. A push costs `O(p r + r^2)` for
/// rank `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalLeastSquares {
    p: usize,
    n: usize,
    basis: Vec<Vec<f64>>,
    /// Row `i` holds columns `i..r` of `S`.
    tri: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    max_row_norm: f64,
}

impl IncrementalLeastSquares {
    /// Rows whose component outside the current row space is below this
    /// fraction of the largest row norm seen do not extend the basis.
    pub const RANK_TOLERANCE: f64 = 1e-10;

    pub fn new(p: usize) -> Self {
        Self { p, n: 0, basis: Vec::new(), tri: Vec::new(), rhs: Vec::new(), max_row_norm: 0.0 }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn push(&mut self, row: &[f64], target: f64) {
        assert_eq!(row.len(), self.p, "row length must equal dimension");
        self.n += 1;
        let row_norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.max_row_norm = self.max_row_norm.max(row_norm);

        let mut residual = row.to_vec();
        let mut coords = vec![0.0; self.basis.len()];
        for _ in 0..2 {
            for (c, q) in coords.iter_mut().zip(&self.basis) {
                let proj: f64 = q.iter().zip(&residual).map(|(a, b)| a * b).sum();
                *c += proj;
                residual.iter_mut().zip(q).for_each(|(r, qi)| *r -= proj * qi);
            }
        }
        let gamma = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gamma > Self::RANK_TOLERANCE * self.max_row_norm && gamma > 0.0 {
            residual.iter_mut().for_each(|v| *v /= gamma);
            self.basis.push(residual);
            coords.push(gamma);
            for r in &mut self.tri {
                r.push(0.0);
            }
            self.tri.push(vec![0.0]);
            self.rhs.push(0.0);
        }
        self.rotate_in(coords, target);
    }

    fn rotate_in(&mut self, mut a: Vec<f64>, mut b: f64) {
        let r = a.len();
        for i in 0..r {
            if a[i] == 0.0 {
                continue;
            }
            let row = &mut self.tri[i];
            let diag = row[0];
            if diag == 0.0 {
                row.copy_from_slice(&a[i..]);
                self.rhs[i] = b;
                return;
            }
            let rho = diag.hypot(a[i]);
            let (c, s) = (diag / rho, a[i] / rho);
            for (k, t) in row.iter_mut().enumerate() {
                let ak = a[i + k];
                let old = *t;
                *t = c * old + s * ak;
                a[i + k] = -s * old + c * ak;
            }
            let old = self.rhs[i];
            self.rhs[i] = c * old + s * b;
            b = -s * old + c * b;
        }
    }

    /// Current minimum-norm solution.
    pub fn solution(&self) -> DVector<f64> {
        let r = self.basis.len();
        let mut z = vec![0.0; r];
        for i in (0..r).rev() {
            let row = &self.tri[i];
            let mut acc = self.rhs[i];
            for k in 1..row.len() {
                acc -= row[k] * z[i + k];
            }
            z[i] = if row[0] != 0.0 { acc / row[0] } else { 0.0 };
        }
        let mut beta = DVector::zeros(self.p);
        for (q, zi) in self.basis.iter().zip(&z) {
            for (b, qi) in beta.iter_mut().zip(q) {
                *b += zi * qi;
            }
        }
        beta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{ols_fit, RegressionProblem};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check(n: usize, p: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let mut inc = IncrementalLeastSquares::new(p);
        for i in 0..n {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            inc.push(&row, y[i]);
        }
        let batch = ols_fit(&RegressionProblem::new(x, y, 0.0).unwrap()).unwrap();
        let diff = (inc.solution() - &batch.coefficients).amax();
        assert!(diff < 1e-8, "n={n} p={p}: diff {diff}");
        assert_eq!(inc.rank(), n.min(p));
    }

    #[test]
    fn matches_batch_underdetermined() {
        check(10, 20, 1);
        check(1, 5, 2);
    }

    #[test]
    fn matches_batch_overdetermined() {
        check(40, 20, 3);
        check(100, 3, 4);
    }

    #[test]
    fn repeated_rows_do_not_grow_rank() {
        let mut inc = IncrementalLeastSquares::new(3);
        for k in 0..5 {
            inc.push(&[1.0, 1.0, 0.0], k as f64);
        }
        assert_eq!(inc.rank(), 1);
        // Mean of the targets, split evenly over the two identical coordinates.
        let b = inc.solution();
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 1.0).abs() < 1e-12 && b[2] == 0.0);
    }
}
