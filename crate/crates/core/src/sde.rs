//! Euler–Maruyama integration of Itô systems `dX = b(t, X) dt + s(t, X) dW`.

use nalgebra::{DMatrix, DVector};

use crate::error::check_finite;
use crate::noise::NoiseStream;
use crate::record::TrajectoryRecord;
use crate::{Error, Result};

/// Uniform time grid. Grid times are always `t0 + k * dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: u64,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: u64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(Error::Config("n_steps must be at least 1".into()));
        }
        Ok(Self { t0, dt, n_steps })
    }

    /// Grid covering `[0, horizon]`, rounding the step count to the nearest integer.
    pub fn from_horizon(dt: f64, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        Self::new(0.0, dt, (horizon / dt).round() as u64)
    }

    pub fn time(&self, k: u64) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.n_steps)
    }
}

pub trait SdeSystem {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64>;
    /// `dim x noise_dim` matrix.
    fn diffusion(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64>;
}

/// An [`SdeSystem`] assembled from closures.
pub struct FnSde<D, S> {
    dim: usize,
    noise_dim: usize,
    drift: D,
    diffusion: S,
}

impl<D, S> FnSde<D, S>
where
    D: Fn(f64, &DVector<f64>) -> DVector<f64>,
    S: Fn(f64, &DVector<f64>) -> DMatrix<f64>,
{
    pub fn new(dim: usize, noise_dim: usize, drift: D, diffusion: S) -> Self {
        Self {
            dim,
            noise_dim,
            drift,
            diffusion,
        }
    }
}

impl<D, S> SdeSystem for FnSde<D, S>
where
    D: Fn(f64, &DVector<f64>) -> DVector<f64>,
    S: Fn(f64, &DVector<f64>) -> DMatrix<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(t, x)
    }
    fn diffusion(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        (self.diffusion)(t, x)
    }
}

/// One step: `x + b(t, x) dt + s(t, x) dW`.
pub fn euler_maruyama_step<S: SdeSystem + ?Sized>(
    system: &S,
    state: &DVector<f64>,
    t: f64,
    dt: f64,
    dw: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (n, m) = (system.dim(), system.noise_dim());
    if state.len() != n {
        return Err(Error::Dimension {
            what: "state",
            expected: n,
            got: state.len(),
        });
    }
    if dw.len() != m {
        return Err(Error::Dimension {
            what: "noise increment",
            expected: m,
            got: dw.len(),
        });
    }
    let b = system.drift(t, state);
    if b.len() != n {
        return Err(Error::Dimension {
            what: "drift output",
            expected: n,
            got: b.len(),
        });
    }
    check_finite("drift", b.as_slice())?;
    let s = system.diffusion(t, state);
    if s.nrows() != n || s.ncols() != m {
        return Err(Error::Dimension {
            what: "diffusion output",
            expected: n * m,
            got: s.nrows() * s.ncols(),
        });
    }
    if let Some(idx) = s.iter().position(|v| !v.is_finite()) {
        // column-major index -> row is the state component
        return Err(Error::NumericBlowup {
            what: "diffusion",
            component: idx % n.max(1),
            step: None,
        });
    }
    let next = state + b * dt + s * dw;
    check_finite("state", next.as_slice())?;
    Ok(next)
}

/// Integrate over `grid`, recording the state every `record_every` steps
/// (always including step 0 and the final step).
pub fn simulate_path<S: SdeSystem + ?Sized>(
    system: &S,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    stream: &NoiseStream,
    record_every: u64,
) -> Result<TrajectoryRecord> {
    if record_every == 0 {
        return Err(Error::Config("record_every must be at least 1".into()));
    }
    if stream.dim != system.noise_dim() {
        return Err(Error::Dimension {
            what: "noise stream",
            expected: system.noise_dim(),
            got: stream.dim,
        });
    }
    let names: Vec<String> = (0..system.dim()).map(|i| format!("x{i}")).collect();
    let mut rec = TrajectoryRecord::new(&names);
    rec.push(grid.time(0), x0.as_slice())?;

    let mut cursor = stream.cursor();
    let mut dw = DVector::zeros(system.noise_dim());
    let mut x = x0.clone();
    for k in 0..grid.n_steps {
        cursor.next_into(grid.dt, dw.as_mut_slice());
        x = euler_maruyama_step(system, &x, grid.time(k), grid.dt, &dw).map_err(|e| e.at_step(k))?;
        let done = k + 1;
        if done % record_every == 0 || done == grid.n_steps {
            rec.push(grid.time(done), x.as_slice())?;
        }
    }
    Ok(rec)
}
