use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use hdbandit_core::bounds::BoundInputs;
use hdbandit_core::policy::{ScheduleParams, Variant};
use hdbandit_core::replay::ReplayParams;
use hdbandit_core::sim_env::WorldShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Simulate,
    Compare,
    Sensitivity,
    Replay,
    Bounds,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Simulate => "simulate",
            Mode::Compare => "compare",
            Mode::Sensitivity => "sensitivity",
            Mode::Replay => "replay",
            Mode::Bounds => "bounds",
        };
        f.write_str(s)
    }
}

/// Exploration and penalty schedule. `None` fields are filled per mode by
/// [`ExperimentConfig::resolve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    pub v: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<usize>,
    pub c_lambda: f64,
    /// Defaults to `sqrt(noise_variance)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Set `c = v d^2`.
    pub tie_exploration: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let base = ScheduleParams::with_arms(10);
        Self {
            c: None,
            d: None,
            v: base.v,
            s: None,
            kappa: None,
            c_lambda: base.c_lambda,
            sigma: None,
            lambda_min: base.lambda_min,
            lambda_max: base.lambda_max,
            tie_exploration: false,
        }
    }
}

impl ScheduleConfig {
    /// Schedule for `w` arms; call after [`ExperimentConfig::resolve`].
    pub fn params(&self, w: usize) -> ScheduleParams {
        let base = ScheduleParams::with_arms(w);
        let mut p = ScheduleParams {
            c: self.c.unwrap_or(base.c),
            d: self.d.unwrap_or(base.d),
            v: self.v,
            w,
            s: self.s.unwrap_or(base.s),
            kappa: self.kappa.unwrap_or(base.kappa),
            c_lambda: self.c_lambda,
            sigma: self.sigma.unwrap_or(base.sigma),
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max,
        };
        if self.tie_exploration {
            p = p.tie_exploration_to_initialization();
        }
        p
    }
}

/// Bound constants plus the conservative weight and the evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    pub theta_x: f64,
    pub sigma: f64,
    pub phi0: f64,
    pub s0: usize,
    pub b: f64,
    pub c_m: f64,
    pub h: f64,
    pub tau_w: f64,
    pub c_lambda: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub v: usize,
    pub w: usize,
    pub p: usize,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub s: f64,
    /// Explicit grid; defaults to `grid_points` geometric points in `(v w, T]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<u64>>,
    pub grid_points: usize,
    /// Also simulate CHD on the `[world]` setup and report its mean
    /// cumulative regret next to the envelopes.
    pub empirical: bool,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        let b = BoundInputs::default();
        Self {
            theta_x: b.theta_x,
            sigma: b.sigma,
            phi0: b.phi0,
            s0: b.s0,
            b: b.b,
            c_m: b.c_m,
            h: b.h,
            tau_w: b.tau_w,
            c_lambda: b.c_lambda,
            lambda_min: b.lambda_min,
            lambda_max: b.lambda_max,
            v: b.v,
            w: b.w,
            p: b.p,
            horizon: b.horizon,
            s: 0.2,
            t_grid: None,
            grid_points: 50,
            empirical: false,
        }
    }
}

impl BoundsConfig {
    pub fn inputs(&self) -> BoundInputs {
        BoundInputs {
            theta_x: self.theta_x,
            sigma: self.sigma,
            phi0: self.phi0,
            s0: self.s0,
            b: self.b,
            c_m: self.c_m,
            h: self.h,
            tau_w: self.tau_w,
            c_lambda: self.c_lambda,
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max,
            v: self.v,
            w: self.w,
            p: self.p,
            horizon: self.horizon,
        }
    }

    /// The configured grid, or a deduplicated geometric grid on `(v w, T]`.
    pub fn grid(&self) -> Vec<u64> {
        if let Some(g) = &self.t_grid {
            return g.clone();
        }
        let lo = (self.v * self.w) as f64 + 1.0;
        let hi = self.horizon as f64;
        let n = self.grid_points.max(2);
        let mut grid: Vec<u64> =
            (0..n).map(|i| (lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).round() as u64).collect();
        grid.dedup();
        grid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// TOML or JSON column mapping; the built-in layout when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    /// Explicit vendor ids, in arm order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vendors: Option<Vec<String>>,
    /// Keep the `n` most frequent vendors.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_vendors: Option<usize>,
    /// Random vendor-subset repetitions; 0 disables.
    pub subsample_runs: usize,
    pub subset_size: usize,
    pub policy: ReplayParams,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            data: None,
            schema: None,
            vendors: None,
            top_vendors: None,
            subsample_runs: 0,
            subset_size: 8,
            policy: ReplayParams::default(),
        }
    }
}

/// One-knob-at-a-time sweep around the baseline, or the full product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub w: Vec<usize>,
    pub s: Vec<f64>,
    pub kappa: Vec<usize>,
    pub product: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { w: vec![5, 10, 15], s: Vec::new(), kappa: Vec::new(), product: false }
    }
}

/// A labelled sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub w: usize,
    pub s: f64,
    pub kappa: usize,
}

impl SweepPoint {
    pub fn label(&self) -> String {
        format!("w{}_s{}_kappa{}", self.w, self.s, self.kappa)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub n_sim: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<Variant>>,
    pub world: WorldShape,
    pub schedule: ScheduleConfig,
    pub bounds: BoundsConfig,
    pub replay: ReplayConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Simulate,
            n_sim: 50,
            base_seed: 1,
            output_dir: PathBuf::from("out"),
            variants: None,
            world: WorldShape::default(),
            schedule: ScheduleConfig::default(),
            bounds: BoundsConfig::default(),
            replay: ReplayConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub n_sim: Option<usize>,
    pub horizon: Option<u64>,
    pub variants: Option<Vec<Variant>>,
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Comma-separated ids, or a count of most frequent vendors.
    pub vendors: Option<String>,
    pub subsample_runs: Option<usize>,
    pub t_grid: Option<Vec<u64>>,
    pub product: Option<bool>,
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn from_str_any(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).context("invalid JSON config")
        } else {
            toml::from_str(text).context("invalid TOML config")
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(s) = o.seed {
            self.base_seed = s;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(n) = o.n_sim {
            self.n_sim = n;
        }
        if let Some(t) = o.horizon {
            self.world.horizon = t;
            self.bounds.horizon = t;
        }
        if let Some(v) = &o.variants {
            self.variants = Some(v.clone());
        }
        if let Some(d) = &o.data {
            self.replay.data = Some(d.clone());
        }
        if let Some(s) = &o.schema {
            self.replay.schema = Some(s.clone());
        }
        if let Some(v) = &o.vendors {
            match v.trim().parse::<usize>() {
                Ok(n) => {
                    self.replay.top_vendors = Some(n);
                    self.replay.vendors = None;
                }
                Err(_) => {
                    self.replay.vendors = Some(v.split(',').map(|s| s.trim().to_string()).collect());
                    self.replay.top_vendors = None;
                }
            }
        }
        if let Some(n) = o.subsample_runs {
            self.replay.subsample_runs = n;
        }
        if let Some(g) = &o.t_grid {
            self.bounds.t_grid = Some(g.clone());
        }
        if let Some(p) = o.product {
            self.sweep.product = p;
        }
        Ok(())
    }

    /// Fills mode-dependent defaults: the variant list, and `s`, `kappa`
    /// (0.1 and 5 in compare mode, 0.2 and 2 otherwise) and `sigma`.
    pub fn resolve(&mut self) {
        let compare = self.mode == Mode::Compare;
        if self.variants.is_none() {
            self.variants = Some(match self.mode {
                Mode::Compare => vec![Variant::Chd, Variant::Hd, Variant::Hdo, Variant::Chdo, Variant::ExpFirst],
                Mode::Sensitivity | Mode::Bounds => vec![Variant::Chd],
                Mode::Replay => vec![Variant::Chd, Variant::Hd, Variant::Naive],
                Mode::Simulate => Variant::ALL.to_vec(),
            });
        }
        let base = ScheduleParams::with_arms(self.world.w);
        self.schedule.s.get_or_insert(if compare { 0.1 } else { base.s });
        self.schedule.kappa.get_or_insert(if compare { 5 } else { base.kappa });
        self.schedule.sigma.get_or_insert(self.world.noise_variance.sqrt().max(1e-6));
    }

    pub fn variants(&self) -> Vec<Variant> {
        self.variants.clone().unwrap_or_default()
    }

    pub fn schedule_params(&self) -> ScheduleParams {
        self.schedule.params(self.world.w)
    }

    /// Sweep points in run order.
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        let base = self.schedule_params();
        let baseline = SweepPoint { w: base.w, s: base.s, kappa: base.kappa };
        let ws = if self.sweep.w.is_empty() { vec![baseline.w] } else { self.sweep.w.clone() };
        let ss = if self.sweep.s.is_empty() { vec![baseline.s] } else { self.sweep.s.clone() };
        let ks = if self.sweep.kappa.is_empty() { vec![baseline.kappa] } else { self.sweep.kappa.clone() };
        let mut points = Vec::new();
        if self.sweep.product {
            for &w in &ws {
                for &s in &ss {
                    for &kappa in &ks {
                        points.push(SweepPoint { w, s, kappa });
                    }
                }
            }
        } else {
            points.extend(self.sweep.w.iter().map(|&w| SweepPoint { w, ..baseline }));
            points.extend(self.sweep.s.iter().map(|&s| SweepPoint { s, ..baseline }));
            points.extend(self.sweep.kappa.iter().map(|&kappa| SweepPoint { kappa, ..baseline }));
            if points.is_empty() {
                points.push(baseline);
            }
        }
        points
    }

    /// Schedule for one sweep point.
    pub fn point_params(&self, point: &SweepPoint) -> ScheduleParams {
        ScheduleParams { s: point.s, kappa: point.kappa, ..self.schedule.params(point.w) }
    }

    /// Checks every block the mode uses. Messages name the block and key.
    pub fn validate(&self) -> Result<()> {
        if self.n_sim == 0 {
            bail!("n_sim must be >= 1");
        }
        let variants = self.variants();
        if variants.is_empty() && self.mode != Mode::Bounds {
            bail!("variants must not be empty");
        }
        match self.mode {
            Mode::Simulate | Mode::Compare | Mode::Sensitivity => {
                self.world.validate().context("[world]")?;
                let points = if self.mode == Mode::Sensitivity {
                    self.sweep_points()
                } else {
                    let p = self.schedule_params();
                    vec![SweepPoint { w: p.w, s: p.s, kappa: p.kappa }]
                };
                for point in points {
                    let params = self.point_params(&point);
                    params.validate().with_context(|| format!("[schedule] at w = {}", point.w))?;
                    if self.world.horizon <= params.initialization_steps() {
                        bail!(
                            "[world] T = {} must exceed v * w = {}",
                            self.world.horizon,
                            params.initialization_steps()
                        );
                    }
                }
            }
            Mode::Replay => {
                if self.replay.data.is_none() {
                    bail!("[replay] data: a CSV path is required in replay mode");
                }
                if self.replay.vendors.is_some() && self.replay.top_vendors.is_some() {
                    bail!("[replay] set either vendors or top_vendors, not both");
                }
                if self.replay.top_vendors == Some(0) {
                    bail!("[replay] top_vendors must be >= 1");
                }
                if self.replay.policy.refit_every == 0 {
                    bail!("[replay.policy] refit_every must be >= 1");
                }
                if self.replay.subsample_runs > 0 && self.replay.subset_size < 2 {
                    bail!("[replay] subset_size must be >= 2");
                }
            }
            Mode::Bounds => {
                self.bounds.inputs().validate().context("[bounds]")?;
                if !(0.0..1.0).contains(&self.bounds.s) {
                    bail!("[bounds] s must lie in [0, 1)");
                }
                let vw = (self.bounds.v * self.bounds.w) as u64;
                if self.bounds.horizon <= vw {
                    bail!("[bounds] T = {} must exceed v * w = {vw}", self.bounds.horizon);
                }
                if let Some(t) = self.bounds.grid().iter().find(|&&t| t <= vw) {
                    bail!("[bounds] t_grid: point {t} must exceed v * w = {vw}");
                }
                if self.bounds.empirical {
                    self.world.validate().context("[world]")?;
                    self.schedule_params().validate().context("[schedule]")?;
                }
            }
        }
        Ok(())
    }

    /// Whether the schedule keeps `c / d^2 = v`.
    pub fn exploration_tied(&self) -> bool {
        self.schedule_params().exploration_tied()
    }
}

/// Loads the file (if any), applies overrides, fills defaults and
/// validates.
pub fn parse_config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            ExperimentConfig::from_str_any(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    config.apply(overrides)?;
    config.resolve();
    config.validate()?;
    if (config.schedule.c.is_some() || config.schedule.d.is_some()) && !config.exploration_tied() {
        let p = config.schedule_params();
        log::warn!(
            "c / d^2 = {} differs from v = {}; exploration is not continuous at the end of initialization",
            p.c / (p.d * p.d),
            p.v
        );
    }
    Ok(config)
}

/// Effective config as TOML.
pub fn to_toml(config: &ExperimentConfig) -> Result<String> {
    toml::to_string(config).context("cannot serialize config")
}
