//! Closed-form regret-bound evaluators and a small-instance compatibility
//! constant estimate.
//!
//! All evaluators return raw formula values. Probability bounds may exceed 1;
//! [`p_beta_clamped`] gives the trivially valid `min(value, 1)`.

use std::f64::consts::SQRT_2;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::policy::unclamped_lambda;

/// Multiplier of `X_max` in the dominance threshold, `12 + 2 sqrt(2)`.
pub const DOMINANCE_FACTOR: f64 = 12.0 + 2.0 * SQRT_2;

/// Largest `p` accepted by [`compatibility_diagnostic`].
pub const COMPATIBILITY_MAX_P: usize = 12;

/// Constants entering the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    pub theta_x: f64,
    pub sigma: f64,
    pub phi0: f64,
    pub s0: usize,
    /// Bound on the entrywise deviation of the sample covariance.
    pub b: f64,
    /// Margin constant.
    pub c_m: f64,
    /// Lipschitz constant of the reward in the action.
    pub h: f64,
    /// Largest distance between two actions.
    pub tau_w: f64,
    pub c_lambda: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub v: usize,
    pub w: usize,
    pub p: usize,
    #[serde(rename = "T")]
    pub horizon: u64,
}

impl Default for BoundInputs {
    /// A parameter set inside the dominance regime.
    fn default() -> Self {
        Self {
            theta_x: 1.0,
            sigma: 0.05,
            phi0: 20.0,
            s0: 1,
            b: 10.0,
            c_m: 50.0,
            h: 1.0,
            tau_w: 0.1,
            c_lambda: 1.0,
            lambda_min: 1.0,
            lambda_max: 2.0,
            v: 30,
            w: 10,
            p: 2,
            horizon: 10_000,
        }
    }
}

impl BoundInputs {
    /// Checks positivity, `phi0 > sqrt(32 b s0)` and
    /// `C_m <= phi0^2 / (8 theta_x s0 lambda_min)`.
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("theta_x", self.theta_x),
            ("sigma", self.sigma),
            ("phi0", self.phi0),
            ("b", self.b),
            ("c_m", self.c_m),
            ("h", self.h),
            ("tau_w", self.tau_w),
            ("c_lambda", self.c_lambda),
            ("lambda_min", self.lambda_min),
            ("lambda_max", self.lambda_max),
        ];
        for (name, value) in reals {
            if !(value > 0.0 && value.is_finite()) {
                return Err(invalid(format!("{name} must be finite and > 0, got {value}")));
            }
        }
        let counts = [("s0", self.s0), ("v", self.v), ("w", self.w), ("p", self.p)];
        for (name, value) in counts {
            if value == 0 {
                return Err(invalid(format!("{name} must be >= 1")));
            }
        }
        if self.horizon == 0 {
            return Err(invalid("T must be >= 1"));
        }
        if self.lambda_min > self.lambda_max {
            return Err(invalid(format!(
                "lambda_min ({}) must not exceed lambda_max ({})",
                self.lambda_min, self.lambda_max
            )));
        }
        let phi_floor = (32.0 * self.b * self.s0 as f64).sqrt();
        if self.phi0 <= phi_floor {
            return Err(invalid(format!("phi0 must exceed sqrt(32 b s0) = {phi_floor}, got {}", self.phi0)));
        }
        let cm_cap = self.c_m_cap();
        if self.c_m > cm_cap {
            return Err(invalid(format!(
                "c_m must not exceed phi0^2 / (8 theta_x s0 lambda_min) = {cm_cap}, got {}",
                self.c_m
            )));
        }
        Ok(())
    }

    /// `phi0^2 / (8 theta_x s0 lambda_min)`.
    pub fn c_m_cap(&self) -> f64 {
        self.phi0 * self.phi0 / (8.0 * self.theta_x * self.s0 as f64 * self.lambda_min)
    }

    fn log_2p(&self) -> f64 {
        (2.0 * self.p as f64).ln()
    }

    fn scale(&self) -> f64 {
        self.w as f64 * self.theta_x * self.h * self.tau_w
    }

    fn init_steps(&self) -> u64 {
        (self.v * self.w) as u64
    }

    /// Penalty schedule at step `t`, clamped to `[lambda_min, lambda_max]`.
    pub fn lambda_at(&self, t: u64) -> f64 {
        unclamped_lambda(t, self.p, self.c_lambda, self.sigma).clamp(self.lambda_min, self.lambda_max)
    }

    /// Pull-count proxy used inside the envelopes: `max(v, floor(t / w))`.
    pub fn pulls_at(&self, t: u64) -> usize {
        self.v.max((t / self.w as u64) as usize)
    }
}

/// `(log 2p / n) (C1 / lambda^2 + C2) + C3 sqrt(log 2p / n)` with
/// `C1 = 128 sigma^2 theta_x^2`, `C2 = theta_x^2 / b`, `C3 = sqrt(2) C2`.
pub fn p_beta(inputs: &BoundInputs, n_pulls: usize, lambda: f64) -> Result<f64> {
    if n_pulls == 0 {
        return Err(invalid("n_pulls must be >= 1"));
    }
    if !(lambda > 0.0) {
        return Err(invalid(format!("lambda must be > 0, got {lambda}")));
    }
    let c1 = 128.0 * inputs.sigma.powi(2) * inputs.theta_x.powi(2);
    let c2 = inputs.theta_x.powi(2) / inputs.b;
    let c3 = SQRT_2 * c2;
    let ratio = inputs.log_2p() / n_pulls as f64;
    Ok(ratio * (c1 / (lambda * lambda) + c2) + c3 * ratio.sqrt())
}

/// [`p_beta`] capped at 1.
pub fn p_beta_clamped(inputs: &BoundInputs, n_pulls: usize, lambda: f64) -> Result<f64> {
    Ok(p_beta(inputs, n_pulls, lambda)?.min(1.0))
}

/// `4 theta_x s0 lambda / phi0^2 + theta_x h tau_w`.
pub fn x_theta(inputs: &BoundInputs, lambda: f64) -> f64 {
    4.0 * inputs.theta_x * inputs.s0 as f64 * lambda / inputs.phi0.powi(2) + inputs.theta_x * inputs.h * inputs.tau_w
}

/// Same expression as [`x_theta`]; kept separate because it plays a
/// different role (the precondition `D <= w (1 - P_beta)`).
pub fn d_theta(inputs: &BoundInputs, lambda: f64) -> f64 {
    x_theta(inputs, lambda)
}

/// The dominance threshold and whether the configured `w` reaches it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominanceThreshold {
    pub x_max: f64,
    pub threshold: f64,
    /// `w >= threshold` (inclusive).
    pub satisfied: bool,
}

/// `(12 + 2 sqrt 2) X_max` with `X_max = x_theta(lambda_max)`.
pub fn dominance_threshold(inputs: &BoundInputs) -> DominanceThreshold {
    let x_max = x_theta(inputs, inputs.lambda_max);
    let threshold = threshold_for(x_max);
    DominanceThreshold { x_max, threshold, satisfied: inputs.w as f64 >= threshold }
}

/// `(12 + 2 sqrt 2) x_max`.
pub fn threshold_for(x_max: f64) -> f64 {
    DOMINANCE_FACTOR * x_max
}

/// `v w theta_x h tau_w`.
pub fn initialization_regret_bound(inputs: &BoundInputs) -> f64 {
    inputs.v as f64 * inputs.scale()
}

fn check_grid(inputs: &BoundInputs, t_grid: &[u64]) -> Result<()> {
    let vw = inputs.init_steps();
    if let Some(t) = t_grid.iter().find(|&&t| t <= vw) {
        return Err(invalid(format!("grid point t = {t} must exceed v * w = {vw}")));
    }
    Ok(())
}

fn hd_point(inputs: &BoundInputs, t: u64) -> f64 {
    let v = inputs.v as f64;
    let vw = inputs.init_steps() as f64;
    let tm1 = (t - 1) as f64;
    let slope = 16.0
        * inputs.c_m
        * inputs.theta_x
        * inputs.s0 as f64
        * inputs.c_lambda
        * inputs.sigma
        * (2.0 * inputs.log_2p()).sqrt()
        / inputs.phi0.powi(2);
    let roots = tm1.sqrt() - vw.sqrt() + 1.0 / tm1.sqrt() - 1.0 / vw.sqrt();
    inputs.scale() * (v + v * (tm1 / vw).ln() + slope * roots)
}

/// Cumulative-regret envelope of the plain rule at each `T` in `t_grid`.
pub fn hd_regret_envelope(inputs: &BoundInputs, t_grid: &[u64]) -> Result<Vec<f64>> {
    check_grid(inputs, t_grid)?;
    Ok(t_grid.iter().map(|&t| hd_point(inputs, t)).collect())
}

/// `w exp{-(2/w) [w (1 - P_beta) - X]^2}` at step `t`, with `P_beta` at
/// `max(v, floor(t/w))` pulls and `X` at `lambda_t`. The conservative
/// correction is negative exactly when this is below 1.
pub fn conservative_factor(inputs: &BoundInputs, t: u64) -> Result<f64> {
    let lambda = inputs.lambda_at(t);
    let pb = p_beta(inputs, inputs.pulls_at(t), lambda)?;
    let w = inputs.w as f64;
    let gap = w * (1.0 - pb) - x_theta(inputs, lambda);
    Ok(w * (-(2.0 / w) * gap * gap).exp())
}

/// The plain envelope plus
/// `w theta_x h tau_w [v s log((T-1)/(vw)) (conservative_factor - 1)]`.
pub fn chd_regret_envelope(inputs: &BoundInputs, s: f64, t_grid: &[u64]) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&s) {
        return Err(invalid(format!("s must lie in [0, 1), got {s}")));
    }
    check_grid(inputs, t_grid)?;
    let v = inputs.v as f64;
    let vw = inputs.init_steps() as f64;
    t_grid
        .iter()
        .map(|&t| {
            let factor = conservative_factor(inputs, t)?;
            let log_term = ((t - 1) as f64 / vw).ln();
            Ok(hd_point(inputs, t) + inputs.scale() * v * s * log_term * (factor - 1.0))
        })
        .collect()
}

/// Whether `t` lies in the regime where the dominance argument applies:
/// `P_beta <= 1/4` at that step.
pub fn in_dominance_regime(inputs: &BoundInputs, t: u64) -> Result<bool> {
    Ok(p_beta(inputs, inputs.pulls_at(t), inputs.lambda_at(t))? <= 0.25)
}

/// Sampling estimate of the compatibility constant of `design` on `support`.
///
/// Draws `n_directions` vectors in the cone
/// `||b[S^c]||_1 <= 3 ||b[S]||_1` and returns the smallest
/// `sqrt(s0 b' S b) / ||b[S]||_1` with `S = X'X / n`. This is an upper bound
/// on the true constant. Draw `i` depends only on `seed` and `i`, so the
/// estimate never increases with `n_directions`.
pub fn compatibility_diagnostic(
    design: &DMatrix<f64>,
    support: &[usize],
    n_directions: usize,
    seed: u64,
) -> Result<f64> {
    let (n, p) = design.shape();
    if p > COMPATIBILITY_MAX_P {
        return Err(invalid(format!("compatibility diagnostic needs p <= {COMPATIBILITY_MAX_P}, got {p}")));
    }
    if n == 0 || p == 0 {
        return Err(invalid("design matrix is empty"));
    }
    if support.is_empty() {
        return Err(invalid("support set is empty"));
    }
    let mut in_support = vec![false; p];
    for &j in support {
        if j >= p {
            return Err(invalid(format!("support index {j} out of range for p = {p}")));
        }
        if in_support[j] {
            return Err(invalid(format!("support index {j} repeated")));
        }
        in_support[j] = true;
    }
    if n_directions == 0 {
        return Err(invalid("n_directions must be >= 1"));
    }
    let sigma = design.transpose() * design / n as f64;
    let s0 = support.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    let mut beta = vec![0.0; p];
    for _ in 0..n_directions {
        let mut l1_s = 0.0;
        let mut l1_sc = 0.0;
        for (j, b) in beta.iter_mut().enumerate() {
            *b = rng.sample::<f64, _>(StandardNormal);
            if in_support[j] {
                l1_s += b.abs();
            } else {
                l1_sc += b.abs();
            }
        }
        // Fraction of the cone budget used by the off-support block; a fifth
        // of the draws sit on the boundary.
        let u: f64 = (1.25 * rng.random::<f64>()).min(1.0);
        if l1_s == 0.0 {
            continue;
        }
        let off_scale = if l1_sc > 0.0 { u * 3.0 * l1_s / l1_sc } else { 0.0 };
        for (j, b) in beta.iter_mut().enumerate() {
            if !in_support[j] {
                *b *= off_scale;
            }
        }
        let mut quad = 0.0;
        for i in 0..p {
            for j in 0..p {
                quad += beta[i] * sigma[(i, j)] * beta[j];
            }
        }
        let ratio = (s0 * quad.max(0.0)).sqrt() / l1_s;
        best = best.min(ratio);
    }
    Ok(best)
}
