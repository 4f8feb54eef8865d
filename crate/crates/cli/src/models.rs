//! Bundles, column names and truth values for each configured model.

use std::collections::BTreeMap;

use ctsa_core::advdiff::PARAM_NAMES;
use ctsa_core::benes::BenesModel;
use ctsa_core::bundle::{
    advdiff_bundle, scalar_linear_bundle, AdvDiffFamily, BenesBundle, JointBundle, Jump, LinearFamily, ScalarFamily,
};
use ctsa_core::linear::{riccati_steady_state, trace_product};

use crate::config::{ExperimentConfig, InitConfig, JumpConfig, ModelRef};
use crate::error::{CliError, Result};

pub type DynBundle = Box<dyn JointBundle + Send>;

/// Parameter and sensor column names.
pub fn iterate_names(cfg: &ExperimentConfig) -> Result<(Vec<String>, Vec<String>)> {
    let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    Ok(match cfg.model()? {
        ModelRef::Benes(_) => (own(&["mu", "sigma", "c"]), own(&["o"])),
        ModelRef::Scalar(_) => (own(&["theta"]), own(&["o"])),
        ModelRef::AdvDiff(a) => (
            own(&PARAM_NAMES),
            (1..=a.targets.len())
                .flat_map(|i| [format!("o{i}_x"), format!("o{i}_y")])
                .collect(),
        ),
    })
}

pub fn advdiff_family(cfg: &ExperimentConfig) -> Result<Option<AdvDiffFamily>> {
    let ModelRef::AdvDiff(a) = cfg.model()? else {
        return Ok(None);
    };
    let targets = a
        .targets
        .iter()
        .map(|p| [p[0] / a.coordinate_divisor, p[1] / a.coordinate_divisor])
        .collect();
    AdvDiffFamily::new(a.k_max, a.radius, targets)
        .map(Some)
        .map_err(|e| CliError::Config(format!("advdiff: {e}")))
}

/// Initial iterates in model units.
pub fn initial_iterates(cfg: &ExperimentConfig, init: &InitConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let o = match cfg.model()? {
        ModelRef::AdvDiff(a) => init.o.iter().map(|v| v / a.coordinate_divisor).collect(),
        _ => init.o.clone(),
    };
    Ok((init.theta.clone(), o))
}

/// Data-generating bundle for one run. `theta0` seeds the initial filter
/// covariance of the advection-diffusion model.
pub fn build_bundle(cfg: &ExperimentConfig, theta0: &[f64], seed: u64) -> Result<DynBundle> {
    let wrap = |e: ctsa_core::Error| CliError::Config(format!("model: {e}"));
    Ok(match cfg.model()? {
        ModelRef::Benes(b) => {
            let truth = BenesModel::new(b.mu, b.sigma, b.c, b.tau2, b.o0, b.o0).map_err(wrap)?;
            Box::new(BenesBundle::new(truth, seed))
        }
        ModelRef::Scalar(s) => Box::new(scalar_linear_bundle(s.theta, s.o0, s.tau2, s.x0, s.sigma0, seed).map_err(wrap)?),
        ModelRef::AdvDiff(a) => {
            let family = advdiff_family(cfg)?.expect("advdiff model");
            let mut bundle = advdiff_bundle(family, &a.theta, theta0, seed).map_err(wrap)?;
            bundle.psd_check_every = a.psd_check_every;
            Box::new(bundle)
        }
    })
}

pub fn to_jump(j: &JumpConfig) -> Jump {
    Jump {
        theta_star: j.theta.clone(),
        anchor: j.anchor,
    }
}

/// True parameter and sensor anchor at time `t`, after the jumps scheduled
/// at or before `t`.
pub fn truth_parameters(cfg: &ExperimentConfig, t: f64) -> Result<(Vec<f64>, Option<f64>)> {
    let (mut theta, mut anchor) = match cfg.model()? {
        ModelRef::Benes(b) => (vec![b.mu, b.sigma, b.c], Some(b.o0)),
        ModelRef::Scalar(s) => (vec![s.theta], Some(s.o0)),
        ModelRef::AdvDiff(a) => (a.theta.clone(), None),
    };
    let mut jumps: Vec<&JumpConfig> = cfg.jump.iter().filter(|j| j.time <= t).collect();
    jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
    for j in jumps {
        if let Some(th) = &j.theta {
            theta = th.clone();
        }
        if j.anchor.is_some() {
            anchor = j.anchor;
        }
    }
    Ok((theta, anchor))
}

/// True value of every named iterate column at time `t`. Sensor columns of
/// the advection-diffusion model have no single true value and are omitted.
pub fn truth_at(cfg: &ExperimentConfig, t: f64) -> Result<BTreeMap<String, f64>> {
    let (theta_names, o_names) = iterate_names(cfg)?;
    let (theta, anchor) = truth_parameters(cfg, t)?;
    let mut out: BTreeMap<String, f64> = theta_names.into_iter().zip(theta).collect();
    if let Some(a) = anchor {
        for n in o_names {
            out.insert(n, a);
        }
    }
    Ok(out)
}

/// Asymptotic sensor objective `Tr[H Σ∞(θ*, o)]` at the true parameter of
/// time `t`. `None` for the Beneš model, whose filter has no Riccati limit
/// in this form.
pub fn true_objective(cfg: &ExperimentConfig, t: f64, o: &[f64]) -> Result<Option<f64>> {
    let (theta, anchor) = truth_parameters(cfg, t)?;
    let model = match cfg.model()? {
        ModelRef::Benes(_) => return Ok(None),
        ModelRef::Scalar(s) => ScalarFamily {
            o0: anchor.unwrap_or(s.o0),
            tau2: s.tau2,
        }
        .model(&theta, o, false),
        ModelRef::AdvDiff(_) => advdiff_family(cfg)?.expect("advdiff model").model(&theta, o, false),
    }
    .map_err(|e| CliError::from_core("true objective", e))?;
    let sigma = riccati_steady_state(&model).map_err(|e| CliError::from_core("true objective", e))?;
    Ok(Some(trace_product(&model.h, &sigma)))
}
