//! Steady-state filter quantities: the reference values the joint iterates
//! are compared against.

use ctsa_core::benes::BenesModel;
use ctsa_core::bundle::{LinearFamily, ScalarFamily};
use ctsa_core::linear::{riccati_steady_state, trace_product};

use crate::config::{LoadedConfig, ModelRef};
use crate::csvio::{format_f64, write_table};
use crate::error::{CliError, Result};
use crate::models::{advdiff_family, initial_iterates};
use crate::runner::{output_dir, RunOptions, TOOL_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub point: String,
    pub quantity: String,
    pub value: f64,
}

pub fn oracle_rows(loaded: &LoadedConfig) -> Result<Vec<OracleRow>> {
    let cfg = &loaded.config;
    let core = |e| CliError::from_core("riccati", e);
    let mut rows = Vec::new();
    let mut push = |point: String, quantity: &str, value: f64| {
        rows.push(OracleRow {
            point,
            quantity: quantity.to_string(),
            value,
        })
    };
    match cfg.model()? {
        ModelRef::Scalar(s) => {
            let family = ScalarFamily { o0: s.o0, tau2: s.tau2 };
            let mut at = |point: String, theta: &[f64], o: &[f64]| -> Result<()> {
                let model = family.model(theta, o, false).map_err(core)?;
                let sigma = riccati_steady_state(&model).map_err(core)?;
                push(point, "sigma_inf", sigma[(0, 0)]);
                Ok(())
            };
            at("truth".into(), &[s.theta], &[s.o0])?;
            for (i, init) in cfg.init.iter().enumerate() {
                let (theta, o) = initial_iterates(cfg, init)?;
                at(format!("init{i}"), &theta, &o)?;
            }
        }
        ModelRef::Benes(b) => {
            let m = BenesModel::new(b.mu, b.sigma, b.c, b.tau2, b.o0, b.o0).map_err(core)?;
            push("truth".into(), "p_inf", m.p_limit());
            for (i, init) in cfg.init.iter().enumerate() {
                let (theta, o) = initial_iterates(cfg, init)?;
                let m = BenesModel::new(theta[0], theta[1], theta[2], b.tau2, b.o0, o[0]).map_err(core)?;
                push(format!("init{i}"), "p_inf", m.p_limit());
            }
        }
        ModelRef::AdvDiff(a) => {
            let family = advdiff_family(cfg)?.expect("advdiff model");
            let objective = |o: &[f64]| -> Result<f64> {
                let model = family.model(&a.theta, o, false).map_err(core)?;
                let sigma = riccati_steady_state(&model).map_err(core)?;
                Ok(trace_product(&model.h, &sigma))
            };
            let targets: Vec<f64> = family.targets.iter().flat_map(|p| [p[0], p[1]]).collect();
            push("targets".into(), "objective", objective(&targets)?);
            for (i, init) in cfg.init.iter().enumerate() {
                let (_, o) = initial_iterates(cfg, init)?;
                push(format!("init{i}"), "objective", objective(&o)?);
            }
        }
    }
    Ok(rows)
}

pub fn run_riccati(loaded: &LoadedConfig, opts: &RunOptions) -> Result<Vec<OracleRow>> {
    let rows = oracle_rows(loaded)?;
    let dir = output_dir(&loaded.config, opts);
    let header: Vec<String> = ["point", "quantity", "value"].iter().map(|s| s.to_string()).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.point.clone(), r.quantity.clone(), format_f64(r.value)])
        .collect();
    let meta = vec![
        ("config_hash".to_string(), loaded.hash.clone()),
        ("tool_version".to_string(), TOOL_VERSION.to_string()),
    ];
    write_table(&dir.join("riccati.csv"), &meta, &header, &body)?;
    Ok(rows)
}
