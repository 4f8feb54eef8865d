//! Seed sweeps over `(schedule, init, seed)` and their acceptance checks.

use std::path::{Path, PathBuf};

use ctsa_core::diagnostics::{ergodic_estimates, l1_error_curve, spearman, FixedPointEstimates, SlopeFit};
use ctsa_core::advdiff::torus_distance;
use ctsa_core::twotimescale::{run_joint, IterateState, JointRunConfig};
use ctsa_core::{TimeGrid, TrajectoryRecord};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind, LoadedConfig, ModelRef};
use crate::csvio::{format_f64, write_record, write_table};
use crate::error::{CliError, Result};
use crate::models::{build_bundle, initial_iterates, iterate_names, to_jump, true_objective, truth_at};
use crate::summary::{Check, Summary};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seeds of the fixed-iterate ergodic estimates are derived from the run seed
/// so they never share noise with the run itself.
const ESTIMATION_SEED_MASK: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub schedule: usize,
    pub init: usize,
    pub seed: u64,
}

impl RunSpec {
    pub fn label(&self, cfg: &ExperimentConfig) -> String {
        format!("{}__init{}__seed{}", cfg.schedule[self.schedule].name, self.init, self.seed)
    }

    pub fn group(&self, cfg: &ExperimentConfig) -> String {
        format!("{}__init{}", cfg.schedule[self.schedule].name, self.init)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub spec: RunSpec,
    pub label: String,
    pub record: TrajectoryRecord,
    pub final_state: IterateState,
    pub stationarity: Option<FixedPointEstimates>,
}

/// Options that do not change results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    /// Root under which `output_dir` is resolved.
    pub output_root: Option<PathBuf>,
}

pub fn output_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    match &opts.output_root {
        Some(root) => root.join(&cfg.output_dir),
        None => cfg.output_dir.clone(),
    }
}

/// Every run in deterministic order: schedules, then initialisations, then seeds.
pub fn run_specs(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let mut out = Vec::new();
    for schedule in 0..cfg.schedule.len() {
        for init in 0..cfg.init.len() {
            for &seed in &cfg.seeds {
                out.push(RunSpec { schedule, init, seed });
            }
        }
    }
    out
}

pub fn joint_config(cfg: &ExperimentConfig, schedule: usize) -> Result<JointRunConfig> {
    let grid = cfg.time_grid()?;
    let mut jc = JointRunConfig::new(cfg.rates(&cfg.schedule[schedule])?, cfg.projection()?, grid, cfg.record_every);
    jc.jumps = cfg
        .jump
        .iter()
        .map(|j| (step_of(&grid, j.time), to_jump(j)))
        .collect();
    let (t, o) = iterate_names(cfg)?;
    jc.theta_names = t;
    jc.o_names = o;
    Ok(jc)
}

fn step_of(grid: &TimeGrid, t: f64) -> u64 {
    ((t - grid.t0) / grid.dt).round().max(0.0) as u64
}

pub fn execute_run(loaded: &LoadedConfig, spec: RunSpec, dir: &Path) -> Result<RunResult> {
    let cfg = &loaded.config;
    let label = spec.label(cfg);
    let (theta0, o0) = initial_iterates(cfg, &cfg.init[spec.init])?;
    let jc = joint_config(cfg, spec.schedule)?;
    let mut bundle = build_bundle(cfg, &theta0, spec.seed)?;
    let run = run_joint(bundle.as_mut(), IterateState::new(theta0.clone(), o0), &jc)
        .map_err(|e| CliError::from_core(&label, e))?;
    let record = if cfg.diagnostics.true_objective {
        with_true_objective(cfg, run.record)?
    } else {
        run.record
    };
    let record = record
        .with_metadata("config_hash", &loaded.hash)
        .with_metadata("experiment", cfg.experiment.name())
        .with_metadata("schedule", &cfg.schedule[spec.schedule].name)
        .with_metadata("init", spec.init)
        .with_metadata("seed", spec.seed)
        .with_metadata("tool_version", TOOL_VERSION);
    write_record(&dir.join(format!("{label}.csv")), &record)?;

    let stationarity = match &cfg.diagnostics.stationarity {
        Some(st) => {
            let grid = TimeGrid::from_horizon(cfg.grid.dt, st.horizon).map_err(|e| CliError::Config(e.to_string()))?;
            let burn = step_of(&grid, st.burn_in);
            let fin = &run.final_state;
            let mut est_bundle = build_bundle(cfg, &fin.alpha, spec.seed ^ ESTIMATION_SEED_MASK)?;
            let est = ergodic_estimates(est_bundle.as_mut(), &fin.alpha, &fin.beta, &grid, burn, st.batches)
                .map_err(|e| CliError::from_core(&label, e))?;
            write_estimates(&dir.join(format!("{label}__ergodic.csv")), loaded, spec, &est)?;
            Some(est)
        }
        None => None,
    };
    Ok(RunResult {
        spec,
        label,
        record,
        final_state: run.final_state,
        stationarity,
    })
}

/// Append `objective_truth`, evaluated at the sensor columns of each row.
fn with_true_objective(cfg: &ExperimentConfig, rec: TrajectoryRecord) -> Result<TrajectoryRecord> {
    let (_, o_names) = iterate_names(cfg)?;
    let idx: Vec<usize> = o_names
        .iter()
        .map(|n| rec.column_index(n).ok_or_else(|| CliError::Config(format!("no column `{n}` in the run records"))))
        .collect::<Result<_>>()?;
    let mut columns = rec.columns().to_vec();
    columns.push("objective_truth".into());
    let mut rows = Vec::with_capacity(rec.len());
    for row in rec.rows() {
        let o: Vec<f64> = idx.iter().map(|&i| row[i]).collect();
        let j = true_objective(cfg, row[0], &o)?.unwrap_or(f64::NAN);
        let mut r = row.clone();
        r.push(j);
        rows.push(r);
    }
    let mut out = TrajectoryRecord::from_parts(columns, rows).map_err(|e| CliError::from_core("objective_truth", e))?;
    out.metadata = rec.metadata;
    Ok(out)
}

fn write_estimates(path: &Path, loaded: &LoadedConfig, spec: RunSpec, est: &FixedPointEstimates) -> Result<()> {
    let header: Vec<String> = ["quantity", "index", "value", "std_error", "horizon", "burn_in", "batches"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for (name, e) in [
        ("loglik", &est.loglik),
        ("sensor_objective", &est.sensor_objective),
        ("grad_theta", &est.grad_theta),
        ("grad_o", &est.grad_o),
    ] {
        for (i, (v, s)) in e.value.iter().zip(&e.mc_std_error).enumerate() {
            rows.push(vec![
                name.to_string(),
                i.to_string(),
                format_f64(*v),
                format_f64(*s),
                format_f64(e.horizon),
                format_f64(e.burn_in),
                e.n_batches.to_string(),
            ]);
        }
    }
    let meta = vec![
        ("config_hash".to_string(), loaded.hash.clone()),
        ("seed".to_string(), spec.seed.to_string()),
        ("tool_version".to_string(), TOOL_VERSION.to_string()),
    ];
    write_table(path, &meta, &header, &rows)
}

/// Execute every run on a pool of `workers` threads. Results come back in
/// [`run_specs`] order whatever the pool size.
pub fn execute_all(loaded: &LoadedConfig, opts: &RunOptions) -> Result<(PathBuf, Vec<RunResult>)> {
    let cfg = &loaded.config;
    let dir = output_dir(cfg, opts);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let specs = run_specs(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count(opts.workers))
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<RunResult>> =
        pool.install(|| specs.par_iter().map(|s| execute_run(loaded, *s, &dir)).collect());
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((dir, results))
}

/// Run a configured sweep, write `summary.csv`, and return the summary.
pub fn run_experiment(loaded: &LoadedConfig, opts: &RunOptions) -> Result<Summary> {
    if loaded.config.experiment == ExperimentKind::GradientCheck {
        return crate::gradcheck::run_gradient_check(loaded, opts);
    }
    let (dir, results) = execute_all(loaded, opts)?;
    let summary = evaluate(&loaded.config, &results)?;
    summary.write(&dir.join("summary.csv"), loaded)?;
    Ok(summary)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Groups of runs sharing `(schedule, init)`, in run order.
fn groups<'a>(cfg: &ExperimentConfig, results: &'a [RunResult]) -> Vec<(String, Vec<&'a RunResult>)> {
    let mut out: Vec<(String, Vec<&RunResult>)> = Vec::new();
    for r in results {
        let g = r.spec.group(cfg);
        match out.last_mut() {
            Some((name, v)) if *name == g => v.push(r),
            _ => out.push((g, vec![r])),
        }
    }
    out
}

/// Final iterates of every run and all configured acceptance checks.
pub fn evaluate(cfg: &ExperimentConfig, results: &[RunResult]) -> Result<Summary> {
    let mut s = Summary::default();
    let (theta_names, o_names) = iterate_names(cfg)?;
    let horizon = cfg.time_grid()?.horizon();
    let truth_end = truth_at(cfg, horizon)?;
    let acc = &cfg.acceptance;

    for r in results {
        for n in theta_names.iter().chain(&o_names) {
            for col in [n.clone(), format!("avg_{n}")] {
                let v = r.record.final_value(&col).unwrap_or(f64::NAN);
                s.value("final", &r.label, &col, v);
            }
        }
    }

    let grouped = groups(cfg, results);

    for (col, tol) in &acc.final_tolerance {
        let truth = *truth_end
            .get(col.trim_start_matches("avg_"))
            .ok_or_else(|| CliError::Config(format!("acceptance.final_tolerance: no truth for column `{col}`")))?;
        for (g, runs) in &grouped {
            let errs: Vec<f64> = runs
                .iter()
                .map(|r| (r.record.final_value(col).unwrap_or(f64::NAN) - truth).abs())
                .collect();
            s.check(Check::below(g, &format!("mean_abs_final_error_{col}"), mean(&errs), *tol));
        }
    }

    if let Some(frac) = acc.tail_fraction {
        let t_start = horizon * (1.0 - frac);
        let truth_tail = truth_at(cfg, t_start)?;
        for (col, tol) in &acc.tail_tolerance {
            let truth = *truth_tail
                .get(col.trim_start_matches("avg_"))
                .ok_or_else(|| CliError::Config(format!("acceptance.tail_tolerance: no truth for column `{col}`")))?;
            for (g, runs) in &grouped {
                let mut tails = Vec::new();
                for r in runs {
                    let tail = tail_mean(&r.record, col, t_start)?;
                    s.value("tail_mean", &r.label, col, tail);
                    tails.push(tail);
                }
                s.check(Check::below(g, &format!("tail_mean_error_{col}"), (mean(&tails) - truth).abs(), *tol));
            }
        }
    }

    if let Some(agree) = acc.slope_agreement {
        slope_checks(cfg, results, &truth_end, agree, &mut s)?;
    }

    if let Some(k) = acc.stationarity_k {
        for r in results {
            let est = r
                .stationarity
                .as_ref()
                .ok_or_else(|| CliError::Config("acceptance.stationarity_k needs [diagnostics.stationarity]".into()))?;
            for (name, e) in [("grad_theta", &est.grad_theta), ("grad_o", &est.grad_o)] {
                for (i, (v, se)) in e.value.iter().zip(&e.mc_std_error).enumerate() {
                    s.check(Check::at_most(&r.label, &format!("abs_{name}{i}"), v.abs(), k * se));
                }
            }
        }
    }

    if let Some(rho_max) = acc.spearman_max {
        for (g, runs) in &grouped {
            let mut passed = 0;
            for r in runs {
                let rho = objective_trend(&r.record, &acc.objective_column)?;
                let c = Check::below(&r.label, "objective_spearman", rho, rho_max);
                passed += c.pass as usize;
                s.check_detail(c);
            }
            s.check(Check::majority(g, "objective_spearman_majority", passed, runs.len()));
        }
    }

    if let (Some(dist), Some(min_sensors)) = (acc.sensor_distance, acc.min_sensors) {
        let ModelRef::AdvDiff(a) = cfg.model()? else {
            return Err(CliError::Config("acceptance.sensor_distance needs the advdiff model".into()));
        };
        let targets: Vec<[f64; 2]> = a
            .targets
            .iter()
            .map(|p| [p[0] / a.coordinate_divisor, p[1] / a.coordinate_divisor])
            .collect();
        for (g, runs) in &grouped {
            let mut passed = 0;
            for r in runs {
                let near = r
                    .final_state
                    .beta
                    .chunks(2)
                    .filter(|p| targets.iter().any(|t| torus_distance([p[0], p[1]], *t) < dist))
                    .count();
                let c = Check::at_least(&r.label, "sensors_near_targets", near as f64, min_sensors as f64);
                passed += c.pass as usize;
                s.check_detail(c);
            }
            s.check(Check::majority(g, "sensors_near_targets_majority", passed, runs.len()));
        }
    }
    Ok(s)
}

fn tail_mean(rec: &TrajectoryRecord, col: &str, t_start: f64) -> Result<f64> {
    let vals = rec
        .column(col)
        .ok_or_else(|| CliError::Config(format!("no column `{col}` in the run records")))?;
    let tail: Vec<f64> = rec
        .times()
        .iter()
        .zip(vals)
        .filter(|(t, _)| **t >= t_start)
        .map(|(_, v)| v)
        .collect();
    Ok(mean(&tail))
}

/// Spearman correlation of the recorded objective against time, skipping
/// points where it is undefined.
pub fn objective_trend(rec: &TrajectoryRecord, col: &str) -> Result<f64> {
    let vals = rec
        .column(col)
        .ok_or_else(|| CliError::Config(format!("no column `{col}` in the run records")))?;
    let (t, v): (Vec<f64>, Vec<f64>) = rec.times().into_iter().zip(vals).filter(|(_, v)| v.is_finite()).unzip();
    spearman(&t, &v).map_err(|e| CliError::Config(format!("objective trend: {e}")))
}

fn slope_checks(
    cfg: &ExperimentConfig,
    results: &[RunResult],
    truth: &std::collections::BTreeMap<String, f64>,
    agree: f64,
    s: &mut Summary,
) -> Result<()> {
    if cfg.schedule.len() < 2 {
        return Err(CliError::Config("acceptance.slope_agreement needs at least two schedules".into()));
    }
    let columns = if cfg.acceptance.slope_columns.is_empty() {
        iterate_names(cfg)?.1
    } else {
        cfg.acceptance.slope_columns.clone()
    };
    let tr: Vec<f64> = columns
        .iter()
        .map(|c| {
            truth
                .get(c)
                .copied()
                .ok_or_else(|| CliError::Config(format!("acceptance.slope_columns: no truth for `{c}`")))
        })
        .collect::<Result<_>>()?;
    let avg_cols: Vec<String> = columns.iter().map(|c| format!("avg_{c}")).collect();
    let mut raw = Vec::new();
    let mut avg = Vec::new();
    for (i, sched) in cfg.schedule.iter().enumerate() {
        let recs: Vec<TrajectoryRecord> = results
            .iter()
            .filter(|r| r.spec.schedule == i)
            .map(|r| r.record.clone())
            .collect();
        let fit = |cols: &[String]| -> Result<f64> {
            let names: Vec<&str> = cols.iter().map(String::as_str).collect();
            let curve = l1_error_curve(&recs, &names, &tr, cfg.diagnostics.slope_window)
                .map_err(|e| CliError::Config(format!("L1 curve: {e}")))?;
            Ok(match curve.slope {
                SlopeFit::Slope(v) => v,
                _ => f64::NAN,
            })
        };
        let (r, a) = (fit(&columns)?, fit(&avg_cols)?);
        s.value("l1_slope", &sched.name, "raw", r);
        s.value("l1_slope", &sched.name, "averaged", a);
        raw.push(r);
        avg.push(a);
    }
    let spread = |v: &[f64]| {
        if v.iter().any(|x| !x.is_finite()) {
            return f64::NAN;
        }
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let min_gap = |v: &[f64]| {
        let mut g = f64::INFINITY;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                g = g.min((v[i] - v[j]).abs());
            }
        }
        if g.is_finite() {
            g
        } else {
            f64::NAN
        }
    };
    s.check(Check::below("all", "averaged_slope_spread", spread(&avg), agree));
    s.check(Check::above("all", "raw_slope_min_gap", min_gap(&raw), agree));
    Ok(())
}
