//! Experiment configuration files (TOML).
//!
//! One file fully determines a run. Unknown keys are rejected, and the
//! SHA-256 of the raw file bytes identifies the configuration in every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ctsa_core::advdiff::N_PARAMS;
use ctsa_core::twotimescale::{Bound, LearningRateSchedule, ProjectionSet, Rates};
use ctsa_core::TimeGrid;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BenesJoint,
    BenesAveraged,
    BenesTracking,
    LinearScalar,
    AdvdiffJoint,
    GradientCheck,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::BenesJoint => "benes-joint",
            ExperimentKind::BenesAveraged => "benes-averaged",
            ExperimentKind::BenesTracking => "benes-tracking",
            ExperimentKind::LinearScalar => "linear-scalar",
            ExperimentKind::AdvdiffJoint => "advdiff-joint",
            ExperimentKind::GradientCheck => "gradient-check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    /// Size of the worker pool; the command line takes precedence.
    pub workers: Option<usize>,
    pub output_dir: PathBuf,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    pub grid: GridConfig,
    pub benes: Option<BenesConfig>,
    pub scalar: Option<ScalarConfig>,
    pub advdiff: Option<AdvDiffConfig>,
    #[serde(default)]
    pub init: Vec<InitConfig>,
    #[serde(default)]
    pub schedule: Vec<ScheduleConfig>,
    pub bounds: Option<BoundsConfig>,
    #[serde(default)]
    pub jump: Vec<JumpConfig>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub acceptance: AcceptanceConfig,
}

fn default_record_every() -> u64 {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dt: f64,
    pub horizon: f64,
}

/// Truth of the Beneš model. `sigma` is the diffusion scale, so the signal
/// noise has incremental variance `sigma²`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenesConfig {
    pub mu: f64,
    pub sigma: f64,
    pub c: f64,
    pub tau2: f64,
    pub o0: f64,
}

/// Scalar Ornstein-Uhlenbeck truth `dx = -θ x dt + dv`, `r(o) = τ² + (o - o0)²`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarConfig {
    pub theta: f64,
    pub o0: f64,
    pub tau2: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub sigma0: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvDiffConfig {
    /// `(ρ0, σ², ζ, ρ1, γ, α, μx, μy, τ²)`.
    pub theta: Vec<f64>,
    #[serde(default = "default_k_max")]
    pub k_max: i32,
    #[serde(default = "default_radius")]
    pub radius: f64,
    pub targets: Vec<[f64; 2]>,
    /// Target and initial sensor coordinates are divided by this.
    #[serde(default = "default_divisor")]
    pub coordinate_divisor: f64,
    #[serde(default = "default_psd_every")]
    pub psd_check_every: u64,
}

fn default_k_max() -> i32 {
    3
}
fn default_radius() -> f64 {
    1.0 / 24.0
}
fn default_divisor() -> f64 {
    1.0
}
fn default_psd_every() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub theta: Vec<f64>,
    pub o: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateModeConfig {
    Decay,
    Constant,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub mode: RateModeConfig,
    #[serde(default)]
    pub gamma0: f64,
    #[serde(default = "one")]
    pub delta: f64,
    #[serde(default = "one")]
    pub eta: f64,
}

fn one() -> f64 {
    1.0
}

impl RateConfig {
    pub fn build(&self) -> ctsa_core::Result<LearningRateSchedule> {
        match self.mode {
            RateModeConfig::Decay => LearningRateSchedule::decay(self.gamma0, self.delta, self.eta),
            RateModeConfig::Constant => LearningRateSchedule::constant(self.gamma0),
            RateModeConfig::Zero => Ok(LearningRateSchedule::zero()),
        }
    }
}

/// Learning rates for both timescales. A single entry applies to every
/// coordinate; otherwise one entry per coordinate.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub name: String,
    pub slow: Vec<RateConfig>,
    pub fast: Vec<RateConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default)]
    pub theta: Vec<[f64; 2]>,
    #[serde(default)]
    pub o: Vec<[f64; 2]>,
    /// Wrap sensor coordinates instead of rejecting steps that leave the box.
    #[serde(default)]
    pub o_periodic: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpConfig {
    pub time: f64,
    pub theta: Option<Vec<f64>>,
    pub anchor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Log-log slopes are fitted over `[t_end / slope_window, t_end]`.
    #[serde(default = "default_window")]
    pub slope_window: f64,
    pub stationarity: Option<StationarityConfig>,
    /// Finite-difference step for `gradient-check`.
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Path length of the tangent-filter finite-difference comparison.
    #[serde(default = "default_fd_horizon")]
    pub fd_horizon: f64,
    /// Add an `objective_truth` column: the asymptotic sensor objective at
    /// the true parameter and the recorded sensor positions.
    #[serde(default)]
    pub true_objective: bool,
}

fn default_window() -> f64 {
    10.0
}
fn default_fd_step() -> f64 {
    1e-4
}
fn default_fd_horizon() -> f64 {
    10.0
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            slope_window: default_window(),
            stationarity: None,
            fd_step: default_fd_step(),
            fd_horizon: default_fd_horizon(),
            true_objective: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarityConfig {
    pub horizon: f64,
    pub burn_in: f64,
    #[serde(default = "default_batches")]
    pub batches: usize,
}

fn default_batches() -> usize {
    50
}

/// Pass/fail thresholds. Every field is optional; absent checks are skipped.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceConfig {
    /// Column name to bound on the seed-averaged `|final - truth|`.
    #[serde(default)]
    pub final_tolerance: BTreeMap<String, f64>,
    /// Averaged L1 slopes of distinct schedules must agree within this.
    pub slope_agreement: Option<f64>,
    #[serde(default)]
    pub slope_columns: Vec<String>,
    /// Fraction of the run treated as the tail in tracking checks.
    pub tail_fraction: Option<f64>,
    #[serde(default)]
    pub tail_tolerance: BTreeMap<String, f64>,
    /// Gradient estimates must lie within this many standard errors of zero.
    pub stationarity_k: Option<f64>,
    pub spearman_max: Option<f64>,
    #[serde(default = "default_objective_column")]
    pub objective_column: String,
    pub sensor_distance: Option<f64>,
    pub min_sensors: Option<usize>,
    pub gradient_tolerance: Option<f64>,
    pub matrix_tolerance: Option<f64>,
}

fn default_objective_column() -> String {
    "objective_window".into()
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        Self {
            final_tolerance: BTreeMap::new(),
            slope_agreement: None,
            slope_columns: Vec::new(),
            tail_fraction: None,
            tail_tolerance: BTreeMap::new(),
            stationarity_k: None,
            spearman_max: None,
            objective_column: default_objective_column(),
            sensor_distance: None,
            min_sensors: None,
            gradient_tolerance: None,
            matrix_tolerance: None,
        }
    }
}

/// A parsed configuration with the hash of its source bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
    pub source: PathBuf,
}

pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| CliError::Config(format!("{}: not valid UTF-8: {e}", path.display())))?;
    let config = parse(text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok(LoadedConfig {
        config,
        hash: config_hash(&bytes),
        source: path.to_path_buf(),
    })
}

pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn broadcast<T: Clone>(items: &[T], n: usize, what: &str) -> Result<Vec<T>> {
    match items.len() {
        1 => Ok(vec![items[0].clone(); n]),
        len if len == n => Ok(items.to_vec()),
        len => Err(bad(format!("{what}: expected 1 or {n} entries, got {len}"))),
    }
}

impl ExperimentConfig {
    /// Dimensions `(n_θ, n_o)` of the model this experiment uses.
    pub fn dims(&self) -> Result<(usize, usize)> {
        match self.model()? {
            ModelRef::Benes(_) => Ok((3, 1)),
            ModelRef::Scalar(_) => Ok((1, 1)),
            ModelRef::AdvDiff(a) => Ok((N_PARAMS, 2 * a.targets.len())),
        }
    }

    pub fn model(&self) -> Result<ModelRef<'_>> {
        let present = [self.benes.is_some(), self.scalar.is_some(), self.advdiff.is_some()];
        if present.iter().filter(|p| **p).count() != 1 {
            return Err(bad("exactly one of [benes], [scalar], [advdiff] must be given"));
        }
        Ok(if let Some(b) = &self.benes {
            ModelRef::Benes(b)
        } else if let Some(s) = &self.scalar {
            ModelRef::Scalar(s)
        } else {
            ModelRef::AdvDiff(self.advdiff.as_ref().expect("checked above"))
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(bad("seeds: at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(bad("seeds: duplicate seed"));
        }
        if self.workers == Some(0) {
            return Err(bad("workers must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(bad("record_every must be at least 1"));
        }
        self.time_grid()?;
        let model = self.model()?;
        match (self.experiment, &model) {
            (
                ExperimentKind::BenesJoint | ExperimentKind::BenesAveraged | ExperimentKind::BenesTracking,
                ModelRef::Benes(_),
            )
            | (ExperimentKind::LinearScalar, ModelRef::Scalar(_))
            | (ExperimentKind::AdvdiffJoint, ModelRef::AdvDiff(_))
            | (ExperimentKind::GradientCheck, _) => {}
            _ => {
                return Err(bad(format!(
                    "experiment {} does not use the {} model",
                    self.experiment.name(),
                    model.name()
                )))
            }
        }
        if let ModelRef::AdvDiff(a) = model {
            if a.theta.len() != N_PARAMS {
                return Err(bad(format!("advdiff.theta: expected {N_PARAMS} values, got {}", a.theta.len())));
            }
            if a.targets.is_empty() {
                return Err(bad("advdiff.targets: at least one target is required"));
            }
            if !(a.coordinate_divisor > 0.0) {
                return Err(bad("advdiff.coordinate_divisor must be positive"));
            }
        }
        let (nt, no) = self.dims()?;
        if self.init.is_empty() {
            return Err(bad("at least one [[init]] block is required"));
        }
        for (i, init) in self.init.iter().enumerate() {
            if init.theta.len() != nt || init.o.len() != no {
                return Err(bad(format!(
                    "init[{i}]: expected {nt} parameters and {no} sensor coordinates, got {} and {}",
                    init.theta.len(),
                    init.o.len()
                )));
            }
        }
        if self.experiment != ExperimentKind::GradientCheck {
            if self.schedule.is_empty() {
                return Err(bad("at least one [[schedule]] block is required"));
            }
            let mut names: Vec<&str> = self.schedule.iter().map(|s| s.name.as_str()).collect();
            names.sort_unstable();
            names.dedup();
            if names.len() != self.schedule.len() {
                return Err(bad("schedule names must be unique"));
            }
            for s in &self.schedule {
                if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
                    return Err(bad(format!("schedule name `{}` must be non-empty ASCII [A-Za-z0-9._-]", s.name)));
                }
                self.rates(s)?;
            }
            self.projection()?;
        }
        for (i, j) in self.jump.iter().enumerate() {
            if !(j.time >= 0.0 && j.time <= self.grid.horizon) {
                return Err(bad(format!("jump[{i}].time must lie in [0, horizon]")));
            }
            if let Some(t) = &j.theta {
                if t.len() != nt {
                    return Err(bad(format!("jump[{i}].theta: expected {nt} values, got {}", t.len())));
                }
            }
            if j.anchor.is_some() && matches!(model, ModelRef::AdvDiff(_)) {
                return Err(bad(format!("jump[{i}].anchor: the advection-diffusion model has no anchor")));
            }
        }
        if !(self.diagnostics.slope_window > 1.0) {
            return Err(bad("diagnostics.slope_window must exceed 1"));
        }
        if !(self.diagnostics.fd_step > 0.0) {
            return Err(bad("diagnostics.fd_step must be positive"));
        }
        if !(self.diagnostics.fd_horizon > 0.0) {
            return Err(bad("diagnostics.fd_horizon must be positive"));
        }
        if self.diagnostics.true_objective && matches!(model, ModelRef::Benes(_)) {
            return Err(bad("diagnostics.true_objective needs a linear-Gaussian model"));
        }
        if let Some(s) = &self.diagnostics.stationarity {
            if !(s.horizon > s.burn_in && s.burn_in >= 0.0) {
                return Err(bad("diagnostics.stationarity: need horizon > burn_in >= 0"));
            }
        }
        if let Some(f) = self.acceptance.tail_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(bad("acceptance.tail_fraction must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::from_horizon(self.grid.dt, self.grid.horizon).map_err(|e| bad(format!("grid: {e}")))
    }

    pub fn rates(&self, s: &ScheduleConfig) -> Result<Rates> {
        let (nt, no) = self.dims()?;
        let build = |list: &[RateConfig], n: usize, what: &str| -> Result<Vec<LearningRateSchedule>> {
            broadcast(list, n, what)?
                .iter()
                .map(|r| r.build().map_err(|e| bad(format!("{what}: {e}"))))
                .collect()
        };
        Ok(Rates {
            slow: build(&s.slow, nt, &format!("schedule `{}` slow", s.name))?,
            fast: build(&s.fast, no, &format!("schedule `{}` fast", s.name))?,
        })
    }

    pub fn projection(&self) -> Result<ProjectionSet> {
        let (nt, no) = self.dims()?;
        let Some(b) = &self.bounds else {
            return Ok(match self.model()? {
                ModelRef::AdvDiff(_) => ProjectionSet {
                    alpha: vec![Bound::Free; nt],
                    beta: vec![Bound::Periodic(0.0, 1.0); no],
                },
                _ => ProjectionSet::free(nt, no),
            });
        };
        let alpha = if b.theta.is_empty() {
            vec![Bound::Free; nt]
        } else {
            broadcast(&b.theta, nt, "bounds.theta")?
                .into_iter()
                .map(|[lo, hi]| Bound::Interval(lo, hi))
                .collect()
        };
        let beta = if b.o.is_empty() {
            vec![Bound::Free; no]
        } else {
            broadcast(&b.o, no, "bounds.o")?
                .into_iter()
                .map(|[lo, hi]| if b.o_periodic { Bound::Periodic(lo, hi) } else { Bound::Interval(lo, hi) })
                .collect()
        };
        let set = ProjectionSet { alpha, beta };
        set.validate().map_err(|e| bad(format!("bounds: {e}")))?;
        Ok(set)
    }

    /// Worker count: command line, then config, then one per available core.
    pub fn worker_count(&self, cli: Option<usize>) -> usize {
        cli.or(self.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
            .max(1)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ModelRef<'a> {
    Benes(&'a BenesConfig),
    Scalar(&'a ScalarConfig),
    AdvDiff(&'a AdvDiffConfig),
}

impl ModelRef<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            ModelRef::Benes(_) => "benes",
            ModelRef::Scalar(_) => "scalar",
            ModelRef::AdvDiff(_) => "advdiff",
        }
    }
}
