//! Ergodic estimators, finite differences and convergence-rate diagnostics.
//!
//! Nothing here calls the online algorithms: estimates at fixed `(θ, o)` only
//! drive a bundle's signal and filter.

use nalgebra::DVector;

use crate::bundle::JointBundle;
use crate::record::TrajectoryRecord;
use crate::sde::TimeGrid;
use crate::{Error, Result};

pub const MIN_BATCHES: usize = 20;

/// Time average with a batch-means standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicEstimate {
    pub value: Vec<f64>,
    pub mc_std_error: Vec<f64>,
    pub horizon: f64,
    pub burn_in: f64,
    pub n_batches: usize,
}

impl ErgodicEstimate {
    /// `|value| ≤ k · SE` in every component.
    pub fn within_std_errors(&self, k: f64) -> bool {
        self.value
            .iter()
            .zip(&self.mc_std_error)
            .all(|(v, s)| v.abs() <= k * s)
    }
}

/// Accumulates per-step integrals `∫ f ds` into equal-length batches.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    dim: usize,
    steps_per_batch: u64,
    dt: f64,
    current: Vec<f64>,
    in_current: u64,
    batches: Vec<Vec<f64>>,
}

impl BatchMeans {
    pub fn new(dim: usize, total_steps: u64, n_batches: usize, dt: f64) -> Result<Self> {
        if n_batches < MIN_BATCHES {
            return Err(Error::Config(format!("need at least {MIN_BATCHES} batches, got {n_batches}")));
        }
        let steps_per_batch = total_steps / n_batches as u64;
        if steps_per_batch == 0 {
            return Err(Error::Config("fewer steps than batches".into()));
        }
        Ok(Self {
            dim,
            steps_per_batch,
            dt,
            current: vec![0.0; dim],
            in_current: 0,
            batches: Vec::with_capacity(n_batches),
        })
    }

    /// Add one step's increment `f ds` (already multiplied by `dt` where needed).
    pub fn push(&mut self, increment: &[f64]) {
        for (c, v) in self.current.iter_mut().zip(increment) {
            *c += v;
        }
        self.in_current += 1;
        if self.in_current == self.steps_per_batch {
            let len = self.steps_per_batch as f64 * self.dt;
            self.batches.push(self.current.iter().map(|v| v / len).collect());
            self.current.iter_mut().for_each(|v| *v = 0.0);
            self.in_current = 0;
        }
    }

    /// Mean of the completed batches and the standard error of that mean.
    pub fn finish(&self) -> (Vec<f64>, Vec<f64>) {
        let nb = self.batches.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for b in &self.batches {
            for (m, v) in mean.iter_mut().zip(b) {
                *m += v / nb;
            }
        }
        let mut se = vec![0.0; self.dim];
        for b in &self.batches {
            for ((s, v), m) in se.iter_mut().zip(b).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in se.iter_mut() {
            *s = (*s / (nb - 1.0) / nb).sqrt();
        }
        (mean, se)
    }
}

/// All ergodic estimates at fixed iterates from one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointEstimates {
    /// `(1/t) L_t`.
    pub loglik: ErgodicEstimate,
    /// `(1/t) ∫ Tr[H Σ̂] ds`.
    pub sensor_objective: ErgodicEstimate,
    /// `(1/t) ∫ [ψ_C^θ]ᵀ R⁻¹ (dy - ψ_C ds)`, the gradient of the asymptotic log-likelihood.
    pub grad_theta: ErgodicEstimate,
    /// `(1/t) ∫ ψ_j^o ds`, the gradient of the asymptotic sensor objective.
    pub grad_o: ErgodicEstimate,
}

/// Run signal and filter at fixed `(θ, o)` over `grid`, discarding the first
/// `burn_in_steps` steps.
pub fn ergodic_estimates<B: JointBundle + ?Sized>(
    bundle: &mut B,
    theta: &[f64],
    o: &[f64],
    grid: &TimeGrid,
    burn_in_steps: u64,
    n_batches: usize,
) -> Result<FixedPointEstimates> {
    if burn_in_steps >= grid.n_steps {
        return Err(Error::Config("burn-in must be shorter than the horizon".into()));
    }
    let dt = grid.dt;
    let post = grid.n_steps - burn_in_steps;
    let (nt, no) = (bundle.n_theta(), bundle.n_o());
    let mut ll = BatchMeans::new(1, post, n_batches, dt)?;
    let mut obj = BatchMeans::new(1, post, n_batches, dt)?;
    let mut gt = BatchMeans::new(nt, post, n_batches, dt)?;
    let mut go = BatchMeans::new(no, post, n_batches, dt)?;
    for k in 0..grid.n_steps {
        let dy = bundle.synthesize(o, k, dt)?;
        let rd = bundle.filter_step(theta, o, &dy, dt)?;
        if k < burn_in_steps {
            continue;
        }
        ll.push(&[rd.loglik_increment(&dy, dt)]);
        obj.push(&[rd.psi_j * dt]);
        gt.push(rd.likelihood_gradient_increment(&dy, dt).as_slice());
        go.push((&rd.psi_j_o * dt).as_slice());
    }
    let wrap = |b: &BatchMeans| {
        let (value, mc_std_error) = b.finish();
        ErgodicEstimate {
            value,
            mc_std_error,
            horizon: grid.horizon() - grid.t0,
            burn_in: burn_in_steps as f64 * dt,
            n_batches,
        }
    };
    Ok(FixedPointEstimates {
        loglik: wrap(&ll),
        sensor_objective: wrap(&obj),
        grad_theta: wrap(&gt),
        grad_o: wrap(&go),
    })
}

pub fn estimate_asymptotic_loglik<B: JointBundle + ?Sized>(
    bundle: &mut B,
    theta: &[f64],
    o: &[f64],
    grid: &TimeGrid,
    burn_in_steps: u64,
    n_batches: usize,
) -> Result<ErgodicEstimate> {
    Ok(ergodic_estimates(bundle, theta, o, grid, burn_in_steps, n_batches)?.loglik)
}

pub fn estimate_asymptotic_sensor_objective<B: JointBundle + ?Sized>(
    bundle: &mut B,
    theta: &[f64],
    o: &[f64],
    grid: &TimeGrid,
    burn_in_steps: u64,
    n_batches: usize,
) -> Result<ErgodicEstimate> {
    Ok(ergodic_estimates(bundle, theta, o, grid, burn_in_steps, n_batches)?.sensor_objective)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {h}")));
    }
    let mut xp = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let dn = f(&xp);
        xp[i] = x[i];
        out.push((up - dn) / (2.0 * h));
    }
    Ok(out)
}

/// Relative error `|a - b| / max(|b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlopeFit {
    Slope(f64),
    /// Every error in the fit window is exactly zero.
    ConvergedExactly,
    /// Too few positive points to fit.
    Insufficient,
}

impl SlopeFit {
    pub fn value(&self) -> Option<f64> {
        match self {
            SlopeFit::Slope(s) => Some(*s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Curve {
    pub t: Vec<f64>,
    pub error: Vec<f64>,
    pub slope: SlopeFit,
}

/// Least-squares slope of `log e` on `log t` over `t ≥ t_end / decades_back`.
pub fn loglog_slope(t: &[f64], e: &[f64], window_ratio: f64) -> SlopeFit {
    let Some(&t_end) = t.last() else {
        return SlopeFit::Insufficient;
    };
    let lo = t_end / window_ratio;
    let in_window: Vec<(f64, f64)> = t
        .iter()
        .zip(e)
        .filter(|(ti, _)| **ti >= lo && **ti > 0.0)
        .map(|(a, b)| (*a, *b))
        .collect();
    if !in_window.is_empty() && in_window.iter().all(|(_, ei)| *ei == 0.0) {
        return SlopeFit::ConvergedExactly;
    }
    let pts: Vec<(f64, f64)> = in_window
        .into_iter()
        .filter(|(_, ei)| *ei > 0.0)
        .map(|(ti, ei)| (ti.ln(), ei.ln()))
        .collect();
    if pts.len() < 2 {
        return SlopeFit::Insufficient;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return SlopeFit::Insufficient;
    }
    SlopeFit::Slope(sxy / sxx)
}

/// Seed-averaged `Σ_i |x_i(t) - truth_i|` over the named columns, with a
/// log-log slope over the final `window_ratio` factor of time (10 = one decade).
pub fn l1_error_curve(
    records: &[TrajectoryRecord],
    columns: &[&str],
    truth: &[f64],
    window_ratio: f64,
) -> Result<L1Curve> {
    if records.len() < 2 {
        return Err(Error::Config("need at least two runs".into()));
    }
    if columns.len() != truth.len() {
        return Err(Error::Dimension {
            what: "truth",
            expected: columns.len(),
            got: truth.len(),
        });
    }
    let t = records[0].times();
    for r in &records[1..] {
        if r.times() != t {
            return Err(Error::Alignment("records have different time grids".into()));
        }
    }
    let mut error = vec![0.0; t.len()];
    for r in records {
        for (c, tr) in columns.iter().zip(truth) {
            let col = r
                .column(c)
                .ok_or_else(|| Error::Alignment(format!("missing column `{c}`")))?;
            for (e, v) in error.iter_mut().zip(col) {
                *e += (v - tr).abs();
            }
        }
    }
    let n = records.len() as f64;
    error.iter_mut().for_each(|e| *e /= n);
    let slope = loglog_slope(&t, &error, window_ratio);
    Ok(L1Curve { t, error, slope })
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Dimension {
            what: "rank correlation inputs",
            expected: x.len().max(2),
            got: y.len(),
        });
    }
    let (rx, ry) = (ranks(x), ranks(y));
    Ok(pearson(&rx, &ry))
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (a, b) = (DVector::from_column_slice(x), DVector::from_column_slice(y));
    let (ma, mb) = (a.mean(), b.mean());
    let da = a.add_scalar(-ma);
    let db = b.add_scalar(-mb);
    da.dot(&db) / (da.norm() * db.norm())
}

/// Sample mean and unbiased standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}
