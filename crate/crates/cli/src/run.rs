//! Mode dispatch.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use hdbandit_core::bounds::{
    chd_regret_envelope, dominance_threshold, hd_regret_envelope, in_dominance_regime, initialization_regret_bound,
};
use hdbandit_core::policy::{ScheduleParams, Variant};
use hdbandit_core::replay::{
    prepare, random_vendor_subsample, read_table, run_pipeline, schema_vendors, RawTable, ReplaySchema,
};
use hdbandit_core::sim_env::{run_batch, EpisodeOptions, VariantCurves, WorldShape};

use crate::config::{ExperimentConfig, Mode};
use crate::output::{bounds_csv, curves_csv, replay_steps_csv, subsample_csv, OutputSet};

/// What a finished run wrote.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

#[derive(Debug, Serialize)]
struct VariantSummary {
    variant: Variant,
    final_cumulative_regret: f64,
    post_init_hit_rate: f64,
    replicate_final_regret: Vec<f64>,
}

fn summarize(curves: &[VariantCurves]) -> Vec<VariantSummary> {
    curves
        .iter()
        .map(|c| VariantSummary {
            variant: c.variant,
            final_cumulative_regret: c.final_cumulative_regret(),
            post_init_hit_rate: c.post_init_hit_rate,
            replicate_final_regret: c.replicate_final_regret.clone(),
        })
        .collect()
}

/// Runs the configured mode and writes its outputs plus `summary.json` into
/// `config.output_dir`. Nothing is written if any part of the run fails.
pub fn run(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let started = Instant::now();
    let mut out = OutputSet::new();
    let results = match config.mode {
        Mode::Simulate | Mode::Compare => run_simulation(config, &mut out)?,
        Mode::Sensitivity => run_sensitivity(config, &mut out)?,
        Mode::Replay => run_replay_mode(config, &mut out)?,
        Mode::Bounds => run_bounds(config, &mut out)?,
    };
    let summary = json!({
        "mode": config.mode,
        "seed": config.base_seed,
        "n_sim": config.n_sim,
        "wall_time_seconds": started.elapsed().as_secs_f64(),
        "exploration_tied": config.exploration_tied(),
        "files": out.names().collect::<Vec<_>>(),
        "results": results,
        "config": config,
    });
    out.add_json("summary.json", &summary)?;
    let files = out.commit(&config.output_dir)?;
    Ok(RunReport { files, summary })
}

fn batch(config: &ExperimentConfig, shape: &WorldShape, params: &ScheduleParams) -> Result<Vec<VariantCurves>> {
    log::info!("running {} replicates of {:?} at w = {}", config.n_sim, config.variants(), shape.w);
    Ok(run_batch(config.base_seed, config.n_sim, &config.variants(), shape, params, &EpisodeOptions::default())?)
}

fn run_simulation(config: &ExperimentConfig, out: &mut OutputSet) -> Result<Value> {
    let curves = batch(config, &config.world, &config.schedule_params())?;
    out.add("curves.csv", curves_csv(&curves)?);
    Ok(json!({ "variants": summarize(&curves) }))
}

fn run_sensitivity(config: &ExperimentConfig, out: &mut OutputSet) -> Result<Value> {
    let mut points = Vec::new();
    for point in config.sweep_points() {
        let shape = WorldShape { w: point.w, ..config.world };
        let curves = batch(config, &shape, &config.point_params(&point))?;
        let file = format!("curves_{}.csv", point.label());
        out.add(file.clone(), curves_csv(&curves)?);
        points.push(json!({
            "label": point.label(),
            "w": point.w,
            "s": point.s,
            "kappa": point.kappa,
            "file": file,
            "variants": summarize(&curves),
        }));
    }
    Ok(json!({ "points": points }))
}

fn load_schema(config: &ExperimentConfig) -> Result<ReplaySchema> {
    let Some(path) = &config.replay.schema else {
        return Ok(ReplaySchema::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read schema {}", path.display()))?;
    let schema = if text.trim_start().starts_with('{') {
        serde_json::from_str(&text).with_context(|| format!("invalid schema {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("invalid schema {}", path.display()))?
    };
    Ok(schema)
}

fn replay_vendors(config: &ExperimentConfig, table: &RawTable, schema: &ReplaySchema) -> Result<Vec<String>> {
    if let Some(v) = &config.replay.vendors {
        return Ok(v.clone());
    }
    let all = schema_vendors(table, schema);
    match config.replay.top_vendors {
        Some(n) if n > all.len() => bail!("[replay] top_vendors = {n} but the data has {} vendors", all.len()),
        Some(n) => Ok(all[..n].to_vec()),
        None => Ok(all),
    }
}

fn run_replay_mode(config: &ExperimentConfig, out: &mut OutputSet) -> Result<Value> {
    let data = config.replay.data.as_ref().context("[replay] data is required")?;
    let schema = load_schema(config)?;
    let table = read_table(data, &schema)?;
    let vendors = replay_vendors(config, &table, &schema)?;
    let ds = prepare(&table, &schema, &vendors)?;
    let params = &config.replay.policy;

    let mut outcomes = Vec::new();
    for variant in config.variants() {
        let outcome = run_pipeline(&ds, variant, params, config.base_seed)?;
        let file = format!("replay_steps_{}.csv", variant.name());
        out.add(file.clone(), replay_steps_csv(&outcome.steps)?);
        outcomes.push(outcome);
    }
    let variants: Vec<Value> = outcomes
        .iter()
        .map(|o| {
            json!({
                "variant": o.variant,
                "hit_rate_post_init": o.hit_rate_post_init,
                "sigma": o.sigma,
                "steps_file": format!("replay_steps_{}.csv", o.variant.name()),
            })
        })
        .collect();
    let outcome_json: Vec<Value> = outcomes
        .iter()
        .map(|o| {
            json!({
                "variant": o.variant,
                "hit_rate_post_init": o.hit_rate_post_init,
                "sigma": o.sigma,
                "feature_names": o.feature_names,
                "diagnostics": o.diagnostics,
            })
        })
        .collect();
    out.add_json(
        "replay_outcome.json",
        &json!({
            "vendors": ds.vendors,
            "n_train": ds.training.len(),
            "n_test": ds.testing.len(),
            "scaling": ds.scaling,
            "report": ds.report,
            "outcomes": outcome_json,
        }),
    )?;

    let mut subsample = Vec::new();
    if config.replay.subsample_runs > 0 {
        let mut reports = Vec::new();
        for variant in config.variants() {
            let report = random_vendor_subsample(
                &table,
                &schema,
                variant,
                params,
                config.replay.subsample_runs,
                config.replay.subset_size,
                config.base_seed,
            )?;
            subsample.push(json!({
                "variant": variant,
                "mean_hit_rate": report.mean_hit_rate,
                "coefficient_of_variation": report.coefficient_of_variation,
                "hit_rates": report.hit_rates,
            }));
            reports.push((variant.name().to_string(), report));
        }
        out.add("subsample.csv", subsample_csv(&reports)?);
    }

    Ok(json!({
        "vendors": ds.vendors,
        "n_train": ds.training.len(),
        "n_test": ds.testing.len(),
        "dropped_rows": ds.report.dropped_rows,
        "variants": variants,
        "subsample": subsample,
    }))
}

fn run_bounds(config: &ExperimentConfig, out: &mut OutputSet) -> Result<Value> {
    let inputs = config.bounds.inputs();
    let grid = config.bounds.grid();
    let hd = hd_regret_envelope(&inputs, &grid)?;
    let chd = chd_regret_envelope(&inputs, config.bounds.s, &grid)?;
    let threshold = dominance_threshold(&inputs);
    let regime = grid.iter().map(|&t| in_dominance_regime(&inputs, t)).collect::<Result<Vec<_>, _>>()?;

    let empirical = if config.bounds.empirical {
        let curves = batch(config, &config.world, &config.schedule_params())?;
        let chd_curve =
            curves.iter().find(|c| c.variant == Variant::Chd).or_else(|| curves.first()).context("no curves")?;
        Some(grid.iter().map(|&t| chd_curve.mean_cumulative_regret.get(t as usize - 1).copied()).collect::<Vec<_>>())
    } else {
        None
    };
    out.add("bounds.csv", bounds_csv(&grid, &hd, &chd, empirical.as_deref())?);

    let dominates = hd.iter().zip(&chd).all(|(h, c)| c <= h);
    Ok(json!({
        "dominance_threshold": threshold,
        "initialization_regret_bound": initialization_regret_bound(&inputs),
        "chd_dominates_on_grid": dominates,
        "grid_points_in_regime": regime.iter().filter(|&&r| r).count(),
        "grid_points": grid.len(),
    }))
}
