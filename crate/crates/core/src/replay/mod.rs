//! Offline replay of logged recommendation data.
//!
//! Pipeline: [`read_table`] parses the CSV, [`build_dataset`] keeps the
//! configured vendors, splits train/test and imputes missing originals,
//! [`engineer_features`] appends the five derived features, and
//! [`scale_features`] min-max scales on training. [`run_initialization`]
//! then shows every vendor to every training customer (full information),
//! and [`run_replay`] walks the test stream under bandit feedback.

mod features;
mod load;
pub mod synthetic;

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DVector;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use features::{
    coordinate_distance, engineer_features, median, scale_features, scale_value, AGE_OF_CUSTOMER_REGISTER,
    AGE_OF_VENDOR_REGISTER, CUSTOMER_VENDOR_DISTANCE, FREQUENT_CUSTOMER, FREQUENT_VENDOR,
};
pub use load::{read_table, read_table_from, RawRow, RawTable, ReplaySchema};

use crate::error::{invalid, Error, Result};
use crate::policy::{ArmHistory, Branch, PolicyState, ScheduleParams, Variant};

/// One logged interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub customer_id: String,
    pub vendor_id: String,
    /// Arrival order among kept rows.
    pub index: usize,
    /// Arm of the logged vendor.
    pub arm: usize,
    /// Feature values in `ReplayDataset::feature_schema` order.
    pub features: Vec<f64>,
    pub raw: RawRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DatasetStage {
    Imputed,
    Engineered,
    Scaled,
}

/// What happened to the data on the way in.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DatasetReport {
    /// Rows dropped for unparseable fields or missing ids.
    pub dropped_rows: usize,
    pub drop_reasons: Vec<String>,
    /// Rows whose vendor is outside the configured set.
    pub filtered_rows: usize,
    /// Imputed value counts per feature.
    pub imputed: BTreeMap<String, usize>,
    pub flags: Vec<String>,
}

/// Train/test split over a fixed vendor set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayDataset {
    pub training: Vec<InteractionRecord>,
    pub testing: Vec<InteractionRecord>,
    /// Vendor id of each arm.
    pub vendors: Vec<String>,
    pub vendor_index: BTreeMap<String, usize>,
    pub feature_schema: Vec<String>,
    /// Per-feature training `(min, max)`; empty until scaled.
    pub scaling: Vec<(f64, f64)>,
    /// Date register ages are measured against when a row has no order date.
    pub reference_date: Option<NaiveDate>,
    pub report: DatasetReport,
    pub(crate) stage: DatasetStage,
}

impl ReplayDataset {
    pub fn w(&self) -> usize {
        self.vendors.len()
    }

    pub fn is_scaled(&self) -> bool {
        self.stage == DatasetStage::Scaled
    }
}

/// Keeps rows of the given vendors (arm `k` is `vendors[k]`), splits them,
/// and imputes empty original features with training medians.
pub fn build_dataset(table: &RawTable, schema: &ReplaySchema, vendors: &[String]) -> Result<ReplayDataset> {
    schema.validate()?;
    if vendors.is_empty() {
        return Err(Error::Load("vendor set is empty".into()));
    }
    let mut vendor_index = BTreeMap::new();
    for (k, v) in vendors.iter().enumerate() {
        if vendor_index.insert(v.clone(), k).is_some() {
            return Err(Error::Load(format!("vendor `{v}` listed twice")));
        }
    }
    let mut kept = Vec::new();
    let mut filtered_rows = 0;
    for row in &table.rows {
        match vendor_index.get(&row.vendor_id) {
            Some(&arm) => kept.push((arm, row)),
            None => filtered_rows += 1,
        }
    }
    if kept.is_empty() {
        return Err(Error::Load("no rows belong to the configured vendors".into()));
    }

    let reference_date = match &schema.reference_date {
        Some(s) => Some(schema.parse_date(s).ok_or_else(|| Error::Load(format!("cannot parse reference_date `{s}`")))?),
        None => {
            kept.iter().flat_map(|(_, r)| [r.order_date, r.customer_registered, r.vendor_registered]).flatten().max()
        }
    };

    let n = kept.len();
    let n_train_by_fraction = ((schema.train_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut training = Vec::new();
    let mut testing = Vec::new();
    for (index, (arm, row)) in kept.into_iter().enumerate() {
        let is_training = match row.training {
            Some(flag) => flag,
            None if schema.split_column.is_some() => unreachable!("split flag parsed for every row"),
            None => index < n_train_by_fraction,
        };
        let record = InteractionRecord {
            customer_id: row.customer_id.clone(),
            vendor_id: row.vendor_id.clone(),
            index,
            arm,
            features: Vec::new(),
            raw: row.clone(),
        };
        if is_training {
            training.push(record);
        } else {
            testing.push(record);
        }
    }
    if training.is_empty() {
        return Err(Error::Load("training split is empty".into()));
    }

    let mut report = DatasetReport {
        dropped_rows: table.dropped_rows,
        drop_reasons: table.drop_reasons.clone(),
        filtered_rows,
        ..DatasetReport::default()
    };
    for (j, name) in schema.features.iter().enumerate() {
        let present: Vec<f64> = training.iter().filter_map(|r| r.raw.features[j]).collect();
        let fill = median(&present).unwrap_or(0.0);
        let mut missing = 0;
        for r in training.iter_mut().chain(testing.iter_mut()) {
            let value = r.raw.features[j].unwrap_or_else(|| {
                missing += 1;
                fill
            });
            r.features.push(value);
        }
        if missing > 0 {
            report.imputed.insert(name.clone(), missing);
            if present.is_empty() {
                report.flags.push(format!("{name}: no training values, filled with 0"));
            }
        }
    }

    Ok(ReplayDataset {
        training,
        testing,
        vendors: vendors.to_vec(),
        vendor_index,
        feature_schema: schema.features.clone(),
        scaling: Vec::new(),
        reference_date,
        report,
        stage: DatasetStage::Imputed,
    })
}

/// Vendors named in the schema, or every vendor (most frequent first).
pub fn schema_vendors(table: &RawTable, schema: &ReplaySchema) -> Vec<String> {
    match &schema.vendors {
        Some(v) => v.clone(),
        None => table.vendor_counts().into_iter().map(|(v, _)| v).collect(),
    }
}

/// Reads, splits, engineers and scales in one go.
pub fn load_dataset(path: &Path, schema: &ReplaySchema) -> Result<ReplayDataset> {
    let table = read_table(path, schema)?;
    prepare(&table, schema, &schema_vendors(&table, schema))
}

/// [`build_dataset`], [`engineer_features`] and [`scale_features`].
pub fn prepare(table: &RawTable, schema: &ReplaySchema, vendors: &[String]) -> Result<ReplayDataset> {
    scale_features(engineer_features(build_dataset(table, schema, vendors)?)?)
}

/// Policy settings for a replay run. `v` and `w` come from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayParams {
    pub c: f64,
    pub d: f64,
    pub s: f64,
    pub kappa: usize,
    pub c_lambda: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Refit an arm every `k`-th pull.
    pub refit_every: usize,
    /// Fixed noise scale; estimated from initialization residuals when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl Default for ReplayParams {
    fn default() -> Self {
        let base = ScheduleParams::with_arms(8);
        Self {
            c: base.c,
            d: base.d,
            s: base.s,
            kappa: base.kappa,
            c_lambda: base.c_lambda,
            lambda_min: 1e-4,
            lambda_max: 1.0,
            refit_every: 1,
            sigma: None,
        }
    }
}

impl ReplayParams {
    pub fn schedule(&self, v: usize, w: usize, sigma: f64) -> ScheduleParams {
        ScheduleParams {
            c: self.c,
            d: self.d,
            v,
            w,
            s: self.s,
            kappa: self.kappa,
            c_lambda: self.c_lambda,
            sigma,
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max,
        }
    }
}

fn policy_rng(seed: u64, variant: Variant) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 + variant.index());
    rng
}

/// Full-information initialization: every training record is shown to every
/// arm with reward `1{arm == logged}`; all arms are fitted once.
///
/// Unless `params.sigma` is set, the noise scale is estimated as the mean
/// over arms of the residual standard deviation of a preliminary fit (whose
/// scale is the mean Bernoulli standard deviation of the arm shares), and all
/// arms are refitted with it.
pub fn run_initialization(
    ds: &ReplayDataset,
    variant: Variant,
    params: &ReplayParams,
    seed: u64,
) -> Result<PolicyState> {
    if ds.training.is_empty() {
        return Err(invalid("empty training set"));
    }
    if !ds.is_scaled() {
        return Err(invalid("features must be engineered and scaled before initialization"));
    }
    let w = ds.w();
    let p = ds.feature_schema.len();
    let n = ds.training.len();
    let mut histories: Vec<ArmHistory> = (0..w).map(|k| ArmHistory::new(k, p)).collect();
    for r in &ds.training {
        for (k, h) in histories.iter_mut().enumerate() {
            h.push(&r.features, f64::from(u8::from(r.arm == k)));
        }
    }
    let prelim_sigma = params.sigma.unwrap_or_else(|| {
        let mean_sd = histories
            .iter()
            .map(|h| {
                let share = h.mean_reward().unwrap_or(0.0);
                (share * (1.0 - share)).sqrt()
            })
            .sum::<f64>()
            / w as f64;
        mean_sd.max(1e-6)
    });
    let schedule = params.schedule(n, w, prelim_sigma);
    let mut state = PolicyState::from_full_information(variant, schedule, histories, policy_rng(seed, variant))?
        .with_refit_every(params.refit_every)?;
    if params.sigma.is_none() {
        let sigma = residual_sigma(&state);
        state.set_sigma(sigma.max(1e-6))?;
        state.refit_all();
    }
    Ok(state)
}

/// Mean over arms of the residual standard deviation of the current fit.
fn residual_sigma(state: &PolicyState) -> f64 {
    let w = state.histories().len();
    state
        .histories()
        .iter()
        .zip(state.estimates())
        .map(|(h, b)| {
            let n = h.pull_count().max(1) as f64;
            let rss: f64 = h
                .contexts()
                .zip(h.rewards())
                .map(|(x, y)| {
                    let fit: f64 = x.iter().zip(b.iter()).map(|(a, c)| a * c).sum();
                    (y - fit).powi(2)
                })
                .sum();
            (rss / n).sqrt()
        })
        .sum::<f64>()
        / w as f64
}

/// One test-stream step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplayStep {
    pub t: u64,
    pub recommended_arm: usize,
    pub logged_arm: usize,
    pub hit: bool,
    pub branch: Branch,
}

/// Per-feature variable-selection summary across arms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Number of arms with a nonzero coefficient on the feature.
    pub relevance: Vec<usize>,
    /// Sum over arms of absolute coefficients.
    pub strength: Vec<f64>,
    /// `strength - mean(strength)`.
    pub demeaned_strength: Vec<f64>,
}

/// [`coefficient_diagnostics`] of the current estimates.
pub fn diagnostics(state: &PolicyState) -> Diagnostics {
    coefficient_diagnostics(state.estimates())
}

/// Relevance `r_j = sum_k 1{b_kj != 0}` and strength `s_j = sum_k |b_kj|`.
pub fn coefficient_diagnostics(estimates: &[DVector<f64>]) -> Diagnostics {
    let p = estimates.first().map_or(0, |b| b.len());
    let mut relevance = vec![0; p];
    let mut strength = vec![0.0; p];
    for b in estimates {
        for (j, v) in b.iter().enumerate() {
            if *v != 0.0 {
                relevance[j] += 1;
                strength[j] += v.abs();
            }
        }
    }
    let mean = if p == 0 { 0.0 } else { strength.iter().sum::<f64>() / p as f64 };
    let demeaned_strength = strength.iter().map(|s| s - mean).collect();
    Diagnostics { relevance, strength, demeaned_strength }
}

/// Result of one replay run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayOutcome {
    pub variant: Variant,
    pub vendors: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    /// Noise scale used by the penalty schedule.
    pub sigma: f64,
    pub hit_rate_post_init: f64,
    pub steps: Vec<ReplayStep>,
    pub feature_names: Vec<String>,
    pub diagnostics: Diagnostics,
}

impl ReplayOutcome {
    pub fn relevance(&self) -> &[usize] {
        &self.diagnostics.relevance
    }

    pub fn strength(&self) -> &[f64] {
        &self.diagnostics.strength
    }
}

/// Walks the test stream: recommend, reward `1{recommended == logged}`,
/// update only the recommended arm.
pub fn run_replay(mut state: PolicyState, ds: &ReplayDataset) -> Result<ReplayOutcome> {
    if ds.testing.is_empty() {
        return Err(invalid("empty test set"));
    }
    if state.params().w != ds.w() || state.dim() != ds.feature_schema.len() {
        return Err(invalid("policy state does not match the dataset"));
    }
    let mut steps = Vec::with_capacity(ds.testing.len());
    for r in &ds.testing {
        let t = state.step();
        let decision = state.select_action(&r.features)?;
        let hit = decision.chosen_arm == r.arm;
        state.update(&decision, &r.features, f64::from(u8::from(hit)))?;
        steps.push(ReplayStep {
            t,
            recommended_arm: decision.chosen_arm,
            logged_arm: r.arm,
            hit,
            branch: decision.branch,
        });
    }
    let hits = steps.iter().filter(|s| s.hit).count();
    Ok(ReplayOutcome {
        variant: state.variant(),
        vendors: ds.vendors.clone(),
        n_train: ds.training.len(),
        n_test: ds.testing.len(),
        sigma: state.params().sigma,
        hit_rate_post_init: hits as f64 / steps.len() as f64,
        steps,
        feature_names: ds.feature_schema.clone(),
        diagnostics: diagnostics(&state),
    })
}

/// Initialization followed by replay.
pub fn run_pipeline(ds: &ReplayDataset, variant: Variant, params: &ReplayParams, seed: u64) -> Result<ReplayOutcome> {
    run_replay(run_initialization(ds, variant, params, seed)?, ds)
}

/// Sample standard deviation over mean; `None` for fewer than one value or
/// a zero mean. A single value gives 0.
pub fn coefficient_of_variation(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return None;
    }
    if values.len() == 1 {
        return Some(0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(var.sqrt() / mean)
}

/// One run of [`random_vendor_subsample`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsampleRun {
    pub seed: u64,
    pub vendors: Vec<String>,
    pub outcome: ReplayOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsampleReport {
    pub runs: Vec<SubsampleRun>,
    pub hit_rates: Vec<f64>,
    pub mean_hit_rate: f64,
    pub coefficient_of_variation: Option<f64>,
}

/// Vendor subset for run seed `seed`: `size` distinct vendors drawn
/// uniformly from `available`, kept in the order of `available`.
pub fn draw_vendor_subset(available: &[String], size: usize, seed: u64) -> Result<Vec<String>> {
    if available.len() < size {
        return Err(invalid(format!("{} vendors available, need {size}", available.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, available.len(), size).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| available[i].clone()).collect())
}

/// Repeats the full pipeline on `n_runs` random vendor subsets of size
/// `subset_size`. Run `r` draws its subset with seed `seed + r` and drives
/// the policy with the same seed. Runs execute in parallel.
pub fn random_vendor_subsample(
    table: &RawTable,
    schema: &ReplaySchema,
    variant: Variant,
    params: &ReplayParams,
    n_runs: usize,
    subset_size: usize,
    seed: u64,
) -> Result<SubsampleReport> {
    if n_runs == 0 {
        return Err(invalid("n_runs must be >= 1"));
    }
    let available: Vec<String> = table.vendor_counts().into_iter().map(|(v, _)| v).collect();
    if available.len() < subset_size {
        return Err(invalid(format!("{} vendors available, cannot draw subsets of {subset_size}", available.len())));
    }
    let runs = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| {
            let run_seed = seed.wrapping_add(r);
            let vendors = draw_vendor_subset(&available, subset_size, run_seed)?;
            let ds = prepare(table, schema, &vendors)?;
            let outcome = run_pipeline(&ds, variant, params, run_seed)?;
            Ok(SubsampleRun { seed: run_seed, vendors, outcome })
        })
        .collect::<Result<Vec<_>>>()?;
    let hit_rates: Vec<f64> = runs.iter().map(|r| r.outcome.hit_rate_post_init).collect();
    Ok(SubsampleReport {
        mean_hit_rate: hit_rates.iter().sum::<f64>() / hit_rates.len() as f64,
        coefficient_of_variation: coefficient_of_variation(&hit_rates),
        hit_rates,
        runs,
    })
}
