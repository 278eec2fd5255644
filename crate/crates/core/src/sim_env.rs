//! Synthetic sparse linear worlds, the full-knowledge regret oracle, and a
//! multi-replicate runner.
//!
//! Seeding: replicate `i` of a batch uses the world seed `base_seed + i`.
//! From that seed, stream 0 draws the true coefficients, stream 1 draws
//! contexts and reward noise, and stream `2 + variant.index()` drives the
//! policy. Every variant of a replicate therefore sees the same world and the
//! same context sequence.

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimators::LassoOptions;
use crate::policy::{argmax, Branch, PolicyState, ScheduleParams, Variant};

const STREAM_WORLD: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_POLICY: u64 = 2;

/// Size and noise parameters of a synthetic world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldShape {
    pub w: usize,
    pub p: usize,
    pub s0: usize,
    pub theta_x: f64,
    /// Variance of the Gaussian reward noise.
    pub noise_variance: f64,
    #[serde(rename = "T", alias = "horizon")]
    pub horizon: u64,
}

impl Default for WorldShape {
    fn default() -> Self {
        Self { w: 10, p: 200, s0: 5, theta_x: 1.0, noise_variance: 0.05, horizon: 2000 }
    }
}

impl WorldShape {
    pub fn validate(&self) -> Result<()> {
        if self.w < 2 {
            return Err(invalid(format!("w must be >= 2, got {}", self.w)));
        }
        if self.p == 0 {
            return Err(invalid("p must be >= 1"));
        }
        if self.s0 == 0 || self.s0 > self.p {
            return Err(invalid(format!("s0 must satisfy 1 <= s0 <= p = {}, got {}", self.p, self.s0)));
        }
        if !(self.theta_x > 0.0 && self.theta_x.is_finite()) {
            return Err(invalid(format!("theta_x must be > 0, got {}", self.theta_x)));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(invalid(format!("noise_variance must be >= 0, got {}", self.noise_variance)));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon must be >= 1"));
        }
        Ok(())
    }
}

/// A fully specified world: true arm coefficients plus the sampling setup.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub w: usize,
    pub p: usize,
    pub s0: usize,
    pub theta_x: f64,
    pub noise_variance: f64,
    pub horizon: u64,
    pub true_betas: Vec<DVector<f64>>,
    pub seed: u64,
}

impl WorldSpec {
    pub fn shape(&self) -> WorldShape {
        WorldShape {
            w: self.w,
            p: self.p,
            s0: self.s0,
            theta_x: self.theta_x,
            noise_variance: self.noise_variance,
            horizon: self.horizon,
        }
    }

    /// `(b_0' x, ..., b_{w-1}' x)`.
    pub fn expected_rewards(&self, context: &[f64]) -> Vec<f64> {
        self.true_betas.iter().map(|b| dot(b.as_slice(), context)).collect()
    }

    fn check_arm(&self, arm: usize) -> Result<()> {
        if arm >= self.w {
            return Err(invalid(format!("arm {arm} out of range for w = {}", self.w)));
        }
        Ok(())
    }

    fn check_context(&self, context: &[f64]) -> Result<()> {
        if context.len() != self.p {
            return Err(invalid(format!("context has length {}, world has p = {}", context.len(), self.p)));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws a world: each arm gets a uniformly random support of size `s0`
/// filled with independent Uniform(0, 1) values.
pub fn make_world(shape: &WorldShape, seed: u64) -> Result<WorldSpec> {
    shape.validate()?;
    let mut rng = stream(seed, STREAM_WORLD);
    let true_betas = (0..shape.w)
        .map(|_| {
            let mut beta = DVector::zeros(shape.p);
            let mut support = sample(&mut rng, shape.p, shape.s0).into_vec();
            support.sort_unstable();
            for j in support {
                // Open interval: redraw an exact zero.
                beta[j] = loop {
                    let u: f64 = rng.random();
                    if u > 0.0 {
                        break u;
                    }
                };
            }
            beta
        })
        .collect();
    Ok(WorldSpec {
        w: shape.w,
        p: shape.p,
        s0: shape.s0,
        theta_x: shape.theta_x,
        noise_variance: shape.noise_variance,
        horizon: shape.horizon,
        true_betas,
        seed,
    })
}

/// i.i.d. standard normal coordinates, each redrawn until `|x_j| <= theta_x`.
pub fn sample_context<R: Rng + ?Sized>(world: &WorldSpec, rng: &mut R) -> Vec<f64> {
    (0..world.p)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= world.theta_x {
                break z;
            }
        })
        .collect()
}

/// `b_arm' x + e` with `e ~ N(0, noise_variance)`. One normal draw is
/// consumed even when the variance is zero.
pub fn step_reward<R: Rng + ?Sized>(world: &WorldSpec, arm: usize, context: &[f64], rng: &mut R) -> Result<f64> {
    world.check_arm(arm)?;
    world.check_context(context)?;
    let z: f64 = rng.sample(StandardNormal);
    Ok(dot(world.true_betas[arm].as_slice(), context) + world.noise_variance.sqrt() * z)
}

/// Best arm by expected reward (lowest index on ties) and the expected gap to
/// the chosen arm.
pub fn oracle_regret(world: &WorldSpec, context: &[f64], chosen: usize) -> Result<(usize, f64)> {
    world.check_arm(chosen)?;
    world.check_context(context)?;
    let expected = world.expected_rewards(context);
    let best = argmax(&expected);
    Ok((best, expected[best] - expected[chosen]))
}

/// One row of a [`RegretLedger`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: u64,
    pub chosen_arm: usize,
    pub best_arm: usize,
    pub instantaneous_regret: f64,
    pub hit: bool,
    pub branch: Branch,
}

/// Per-step log of one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretLedger {
    records: Vec<StepRecord>,
    cumulative: Vec<f64>,
}

impl RegretLedger {
    pub fn push(&mut self, record: StepRecord) {
        let prev = self.cumulative.last().copied().unwrap_or(0.0);
        self.cumulative.push(prev + record.instantaneous_regret);
        self.records.push(record);
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    /// Running sum of instantaneous regret, aligned with `records`.
    pub fn cumulative_regret(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_cumulative_regret(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Hit frequency over steps with `t > after`; `None` if there are none.
    pub fn hit_rate_after(&self, after: u64) -> Option<f64> {
        let tail: Vec<_> = self.records.iter().filter(|r| r.t > after).collect();
        if tail.is_empty() {
            None
        } else {
            Some(tail.iter().filter(|r| r.hit).count() as f64 / tail.len() as f64)
        }
    }
}

/// Solver knobs shared by every episode of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeOptions {
    pub lasso: LassoOptions,
}

/// Runs one episode with default solver settings.
pub fn run_episode(world: &WorldSpec, variant: Variant, params: &ScheduleParams) -> Result<RegretLedger> {
    run_episode_with(world, variant, params, &EpisodeOptions::default())
}

pub fn run_episode_with(
    world: &WorldSpec,
    variant: Variant,
    params: &ScheduleParams,
    options: &EpisodeOptions,
) -> Result<RegretLedger> {
    if params.w != world.w {
        return Err(invalid(format!("schedule has w = {} but the world has w = {}", params.w, world.w)));
    }
    if world.horizon <= params.initialization_steps() {
        return Err(invalid(format!(
            "horizon ({}) must exceed v * w = {}",
            world.horizon,
            params.initialization_steps()
        )));
    }
    let mut env = stream(world.seed, STREAM_ENV);
    let mut policy =
        PolicyState::with_rng(variant, *params, world.p, stream(world.seed, STREAM_POLICY + variant.index()))?
            .with_theta_x(world.theta_x)?
            .with_lasso_options(options.lasso);

    let mut ledger = RegretLedger::default();
    for t in 1..=world.horizon {
        let context = sample_context(world, &mut env);
        let decision = policy.select_action(&context)?;
        let reward = step_reward(world, decision.chosen_arm, &context, &mut env)?;
        let (best_arm, instantaneous_regret) = oracle_regret(world, &context, decision.chosen_arm)?;
        policy.update(&decision, &context, reward)?;
        ledger.push(StepRecord {
            t,
            chosen_arm: decision.chosen_arm,
            best_arm,
            instantaneous_regret,
            hit: decision.chosen_arm == best_arm,
            branch: decision.branch,
        });
    }
    Ok(ledger)
}

/// Replicate-averaged curves for one variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantCurves {
    pub variant: Variant,
    pub mean_instantaneous_regret: Vec<f64>,
    pub mean_cumulative_regret: Vec<f64>,
    /// Fraction of replicates that played the best arm at each step.
    pub hit_rate: Vec<f64>,
    /// Per-replicate hit rate over `t > v w`, averaged.
    pub post_init_hit_rate: f64,
    pub replicate_final_regret: Vec<f64>,
    pub replicate_post_init_hit_rate: Vec<f64>,
}

impl VariantCurves {
    pub fn final_cumulative_regret(&self) -> f64 {
        self.mean_cumulative_regret.last().copied().unwrap_or(0.0)
    }

    /// Averages equally long ledgers; `init_steps` delimits the post-init window.
    pub fn from_ledgers(variant: Variant, ledgers: &[RegretLedger], init_steps: u64) -> Result<Self> {
        let first = ledgers.first().ok_or_else(|| invalid("need at least one ledger"))?;
        let len = first.len();
        if ledgers.iter().any(|l| l.len() != len) {
            return Err(invalid("ledgers have different lengths"));
        }
        let n = ledgers.len() as f64;
        let mut inst = vec![0.0; len];
        let mut cum = vec![0.0; len];
        let mut hits = vec![0.0; len];
        for ledger in ledgers {
            for (i, (r, c)) in ledger.records().iter().zip(ledger.cumulative_regret()).enumerate() {
                inst[i] += r.instantaneous_regret;
                cum[i] += c;
                hits[i] += f64::from(u8::from(r.hit));
            }
        }
        for v in inst.iter_mut().chain(cum.iter_mut()).chain(hits.iter_mut()) {
            *v /= n;
        }
        let replicate_post_init_hit_rate: Vec<f64> =
            ledgers.iter().map(|l| l.hit_rate_after(init_steps).unwrap_or(f64::NAN)).collect();
        Ok(Self {
            variant,
            mean_instantaneous_regret: inst,
            mean_cumulative_regret: cum,
            hit_rate: hits,
            post_init_hit_rate: replicate_post_init_hit_rate.iter().sum::<f64>() / n,
            replicate_final_regret: ledgers.iter().map(RegretLedger::final_cumulative_regret).collect(),
            replicate_post_init_hit_rate,
        })
    }
}

/// Runs `n_sim` replicates of every variant. Replicate `i` uses world seed
/// `base_seed + i`. Episodes run in parallel; results are reduced in
/// replicate order so the output does not depend on scheduling.
pub fn run_batch(
    base_seed: u64,
    n_sim: usize,
    variants: &[Variant],
    shape: &WorldShape,
    params: &ScheduleParams,
    options: &EpisodeOptions,
) -> Result<Vec<VariantCurves>> {
    if n_sim == 0 {
        return Err(invalid("n_sim must be >= 1"));
    }
    if variants.is_empty() {
        return Err(invalid("no variants requested"));
    }
    shape.validate()?;
    params.validate()?;
    let worlds = (0..n_sim as u64).map(|i| make_world(shape, base_seed.wrapping_add(i))).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..variants.len()).flat_map(|v| (0..n_sim).map(move |i| (v, i))).collect();
    let ledgers = jobs
        .par_iter()
        .map(|&(v, i)| run_episode_with(&worlds[i], variants[v], params, options))
        .collect::<Result<Vec<_>>>()?;
    ledgers
        .chunks(n_sim)
        .zip(variants)
        .map(|(chunk, &variant)| VariantCurves::from_ledgers(variant, chunk, params.initialization_steps()))
        .collect()
}
