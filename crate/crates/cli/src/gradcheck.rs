//! Tangent filters and model derivatives against central finite differences.
//!
//! Every perturbed filter consumes the same observation increments, generated
//! once at the initial iterates, so the comparison is free of Monte Carlo noise.

use ctsa_core::benes::{benes_posterior_moments, BenesModel};
use ctsa_core::bundle::{advdiff_bundle, scalar_linear_bundle, BenesBundle, JointBundle, LinearBundle, LinearFamily};
use ctsa_core::linear::ModelDerivative;
use nalgebra::{DMatrix, DVector};

use crate::config::{ExperimentConfig, LoadedConfig, ModelRef};
use crate::csvio::{format_f64, write_table};
use crate::error::{CliError, Result};
use crate::models::{advdiff_family, build_bundle, initial_iterates, iterate_names};
use crate::runner::{output_dir, RunOptions, TOOL_VERSION};
use crate::summary::{Check, Summary};

pub const DEFAULT_TANGENT_TOLERANCE: f64 = 1e-2;
pub const DEFAULT_MATRIX_TOLERANCE: f64 = 1e-6;

/// Filter state flattened to a vector, with one flattened tangent per
/// coordinate of `(θ, o)`.
pub trait TangentProbe: JointBundle {
    fn probe(&self, theta: &[f64], o: &[f64]) -> ctsa_core::Result<(Vec<f64>, Vec<Vec<f64>>)>;
}

/// Beneš sufficient statistics `(m, P)` and the posterior mean and variance.
impl TangentProbe for BenesBundle {
    fn probe(&self, theta: &[f64], o: &[f64]) -> ctsa_core::Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let f = &self.filter;
        let mom = benes_posterior_moments(&self.filter_model(theta, o)?, f);
        let tangents = (0..4)
            .map(|i| vec![f.m_grad[i], f.p_grad[i], mom.x_hat_grad[i], mom.sigma_hat_grad[i]])
            .collect();
        Ok((vec![f.m, f.p, mom.x_hat, mom.sigma_hat], tangents))
    }
}

impl<F: LinearFamily> TangentProbe for LinearBundle<F> {
    fn probe(&self, _theta: &[f64], _o: &[f64]) -> ctsa_core::Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let flat = |x: &DVector<f64>, s: &DMatrix<f64>| x.iter().chain(s.iter()).copied().collect::<Vec<f64>>();
        let mut tangents = Vec::new();
        for tan in [&self.tangent_theta, &self.tangent_o] {
            for i in 0..tan.n_param() {
                tangents.push(flat(&tan.x_hat_grad.column(i).into_owned(), &tan.sigma_grad[i]));
            }
        }
        Ok((flat(&self.filter.x_hat, &self.filter.sigma), tangents))
    }
}

fn amax(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `max |a - b| / max |b|`, falling back to the absolute error when `b` vanishes.
pub fn scaled_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = amax(b);
    if scale > 1e-12 {
        amax(&diff) / scale
    } else {
        amax(&diff)
    }
}

/// Worst scaled error of each tangent against central differences of the
/// filter state along `dys`.
pub fn tangent_errors<B, M>(make: M, theta: &[f64], o: &[f64], dys: &[DVector<f64>], dt: f64, h: f64) -> ctsa_core::Result<Vec<f64>>
where
    B: TangentProbe,
    M: Fn() -> ctsa_core::Result<B>,
{
    let run = |th: &[f64], oo: &[f64]| -> ctsa_core::Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut b = make()?;
        for dy in dys {
            b.filter_step(th, oo, dy, dt)?;
        }
        b.probe(th, oo)
    };
    let (_, tangents) = run(theta, o)?;
    let mut errors = Vec::with_capacity(tangents.len());
    for (i, tan) in tangents.iter().enumerate() {
        let shifted = |sign: f64| {
            let (mut th, mut oo) = (theta.to_vec(), o.to_vec());
            if i < th.len() {
                th[i] += sign * h;
            } else {
                oo[i - theta.len()] += sign * h;
            }
            run(&th, &oo).map(|r| r.0)
        };
        let (up, dn) = (shifted(1.0)?, shifted(-1.0)?);
        let fd: Vec<f64> = up.iter().zip(&dn).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        errors.push(scaled_error(tan, &fd));
    }
    Ok(errors)
}

/// Scaled error of each analytic derivative block of a linear family.
pub fn matrix_errors<F: LinearFamily>(family: &F, theta: &[f64], o: &[f64], h: f64) -> ctsa_core::Result<Vec<f64>> {
    let base = family.model(theta, o, true)?;
    let blocks = |m: &ctsa_core::linear::LinearGaussianModel| [m.a.to_dense(), m.q.clone(), m.c.clone(), m.r.clone()];
    let analytic = |d: &ModelDerivative, like: &[DMatrix<f64>; 4]| {
        [
            d.a.as_ref().map(|a| a.to_dense()),
            d.q.clone(),
            d.c.clone(),
            d.r.clone(),
        ]
        .into_iter()
        .zip(like)
        .map(|(m, l)| m.unwrap_or_else(|| DMatrix::zeros(l.nrows(), l.ncols())))
        .collect::<Vec<_>>()
    };
    let like = blocks(&base);
    let derivs: Vec<&ModelDerivative> = base.d_theta.iter().chain(&base.d_sensor).collect();
    let mut out = Vec::with_capacity(derivs.len());
    for (i, d) in derivs.into_iter().enumerate() {
        let shifted = |sign: f64| {
            let (mut th, mut oo) = (theta.to_vec(), o.to_vec());
            if i < th.len() {
                th[i] += sign * h;
            } else {
                oo[i - theta.len()] += sign * h;
            }
            family.model(&th, &oo, false).map(|m| blocks(&m))
        };
        let (up, dn) = (shifted(1.0)?, shifted(-1.0)?);
        let an = analytic(d, &like);
        let mut worst = 0.0f64;
        for k in 0..4 {
            let fd = (&up[k] - &dn[k]) / (2.0 * h);
            worst = worst.max(scaled_error(an[k].as_slice(), fd.as_slice()));
        }
        out.push(worst);
    }
    Ok(out)
}

/// Observation increments generated at the initial iterates.
fn observation_path(cfg: &ExperimentConfig, theta0: &[f64], o: &[f64], seed: u64, n: u64, dt: f64) -> Result<Vec<DVector<f64>>> {
    let mut bundle = build_bundle(cfg, theta0, seed)?;
    (0..n)
        .map(|k| bundle.synthesize(o, k, dt).map_err(|e| CliError::from_core("observation path", e)))
        .collect()
}

pub fn run_gradient_check(loaded: &LoadedConfig, opts: &RunOptions) -> Result<Summary> {
    let cfg = &loaded.config;
    let dir = output_dir(cfg, opts);
    let dt = cfg.grid.dt;
    let h = cfg.diagnostics.fd_step;
    let n = (cfg.diagnostics.fd_horizon / dt).round().max(1.0) as u64;
    let tol = cfg.acceptance.gradient_tolerance.unwrap_or(DEFAULT_TANGENT_TOLERANCE);
    let mtol = cfg.acceptance.matrix_tolerance.unwrap_or(DEFAULT_MATRIX_TOLERANCE);
    let (theta_names, o_names) = iterate_names(cfg)?;
    let names: Vec<&String> = theta_names.iter().chain(&o_names).collect();
    let mut summary = Summary::default();
    let mut rows = Vec::new();
    let core = |e| CliError::from_core("gradient check", e);

    for (i, init) in cfg.init.iter().enumerate() {
        let (theta, o) = initial_iterates(cfg, init)?;
        for &seed in &cfg.seeds {
            let group = format!("init{i}__seed{seed}");
            let dys = observation_path(cfg, &theta, &o, seed, n, dt)?;
            let tangent = match cfg.model()? {
                ModelRef::Benes(b) => {
                    let truth = BenesModel::new(b.mu, b.sigma, b.c, b.tau2, b.o0, b.o0).map_err(core)?;
                    tangent_errors(|| Ok(BenesBundle::new(truth, seed)), &theta, &o, &dys, dt, h)
                }
                ModelRef::Scalar(s) => tangent_errors(
                    || scalar_linear_bundle(s.theta, s.o0, s.tau2, s.x0, s.sigma0, seed),
                    &theta,
                    &o,
                    &dys,
                    dt,
                    h,
                ),
                ModelRef::AdvDiff(a) => {
                    let family = advdiff_family(cfg)?.expect("advdiff model");
                    tangent_errors(|| advdiff_bundle(family.clone(), &a.theta, &theta, seed), &theta, &o, &dys, dt, h)
                }
            }
            .map_err(core)?;
            for (name, e) in names.iter().zip(&tangent) {
                let c = Check::below(&group, &format!("tangent_{name}"), *e, tol);
                rows.push(vec![group.clone(), "tangent".into(), name.to_string(), format_f64(*e), format_f64(tol), c.pass.to_string()]);
                summary.check(c);
            }
        }
        let matrices = match cfg.model()? {
            ModelRef::Scalar(s) => Some(matrix_errors(&ctsa_core::bundle::ScalarFamily { o0: s.o0, tau2: s.tau2 }, &theta, &o, 1e-5)),
            ModelRef::AdvDiff(_) => Some(matrix_errors(&advdiff_family(cfg)?.expect("advdiff model"), &theta, &o, 1e-5)),
            ModelRef::Benes(_) => None,
        };
        if let Some(m) = matrices {
            let group = format!("init{i}");
            for (name, e) in names.iter().zip(&m.map_err(core)?) {
                let c = Check::below(&group, &format!("matrix_{name}"), *e, mtol);
                rows.push(vec![group.clone(), "matrix".into(), name.to_string(), format_f64(*e), format_f64(mtol), c.pass.to_string()]);
                summary.check(c);
            }
        }
    }

    let header: Vec<String> = ["group", "kind", "wrt", "scaled_error", "tolerance", "pass"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let meta = vec![
        ("config_hash".to_string(), loaded.hash.clone()),
        ("tool_version".to_string(), TOOL_VERSION.to_string()),
        ("fd_step".to_string(), format_f64(h)),
        ("fd_horizon".to_string(), format_f64(cfg.diagnostics.fd_horizon)),
    ];
    write_table(&dir.join("gradient_check.csv"), &meta, &header, &rows)?;
    summary.write(&dir.join("summary.csv"), loaded)?;
    Ok(summary)
}

