//! Spectral Galerkin model of a stochastic advection-diffusion equation on the
//! unit torus, observed through disc-averaging sensors.
//!
//! Fourier modes `k` and `-k` are paired into the real basis
//! `√2 cos(2πk·s)`, `√2 sin(2πk·s)`, so mode `j` of the grid occupies real
//! coordinates `(2j, 2j+1)`. The operator acts on each pair as a rotation-scaling
//! block and the Matérn noise is diagonal.

use std::f64::consts::{PI, SQRT_2, TAU};

use nalgebra::DMatrix;

use crate::linear::{LinearGaussianModel, ModelDerivative, StateOperator};
use crate::{Error, Result};

pub const RHO0: usize = 0;
pub const SIGMA2: usize = 1;
pub const ZETA: usize = 2;
pub const RHO1: usize = 3;
pub const GAMMA: usize = 4;
pub const ALPHA: usize = 5;
pub const MU_X: usize = 6;
pub const MU_Y: usize = 7;
pub const TAU2: usize = 8;
pub const N_PARAMS: usize = 9;

pub const PARAM_NAMES: [&str; N_PARAMS] = ["rho0", "sigma2", "zeta", "rho1", "gamma", "alpha", "mu_x", "mu_y", "tau2"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvDiffParams {
    pub rho0: f64,
    pub sigma2: f64,
    pub zeta: f64,
    pub rho1: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub mu_x: f64,
    pub mu_y: f64,
    pub tau2: f64,
}

impl AdvDiffParams {
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != N_PARAMS {
            return Err(Error::Dimension {
                what: "advection-diffusion parameters",
                expected: N_PARAMS,
                got: v.len(),
            });
        }
        Ok(Self {
            rho0: v[RHO0],
            sigma2: v[SIGMA2],
            zeta: v[ZETA],
            rho1: v[RHO1],
            gamma: v[GAMMA],
            alpha: v[ALPHA],
            mu_x: v[MU_X],
            mu_y: v[MU_Y],
            tau2: v[TAU2],
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.rho0,
            self.sigma2,
            self.zeta,
            self.rho1,
            self.gamma,
            self.alpha,
            self.mu_x,
            self.mu_y,
            self.tau2,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho0", self.rho0),
            ("sigma2", self.sigma2),
            ("zeta", self.zeta),
            ("rho1", self.rho1),
            ("gamma", self.gamma),
            ("tau2", self.tau2),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=PI / 2.0).contains(&self.alpha) {
            return Err(Error::Domain(format!("alpha must lie in [0, pi/2], got {}", self.alpha)));
        }
        if !self.mu_x.is_finite() || !self.mu_y.is_finite() {
            return Err(Error::Domain("drift must be finite".into()));
        }
        Ok(())
    }
}

/// Half-plane of wavevectors `|k|∞ ≤ k_max`: `k1 > 0`, or `k1 = 0` and `k2 > 0`.
/// Each listed `k` stands for the conjugate pair `{k, -k}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpectralGrid {
    pub k_max: i32,
    pub modes: Vec<[i32; 2]>,
}

impl SpectralGrid {
    pub fn new(k_max: i32) -> Result<Self> {
        if k_max < 1 {
            return Err(Error::Config(format!("k_max must be at least 1, got {k_max}")));
        }
        let mut modes = Vec::new();
        for k2 in 1..=k_max {
            modes.push([0, k2]);
        }
        for k1 in 1..=k_max {
            for k2 in -k_max..=k_max {
                modes.push([k1, k2]);
            }
        }
        Ok(Self { k_max, modes })
    }

    /// Real state dimension (two coordinates per conjugate pair).
    pub fn dim(&self) -> usize {
        2 * self.modes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorConfig {
    pub locations: Vec<[f64; 2]>,
    pub radius: f64,
    pub targets: Vec<[f64; 2]>,
}

impl SensorConfig {
    pub fn new(locations: Vec<[f64; 2]>, radius: f64, targets: Vec<[f64; 2]>) -> Result<Self> {
        if !(radius > 0.0 && radius < 0.5) {
            return Err(Error::Config(format!("sensor radius must lie in (0, 0.5), got {radius}")));
        }
        Ok(Self {
            locations: locations.into_iter().map(wrap_point).collect(),
            radius,
            targets: targets.into_iter().map(wrap_point).collect(),
        })
    }

    /// Flattened coordinates `[o1x, o1y, o2x, ...]`.
    pub fn flat(&self) -> Vec<f64> {
        self.locations.iter().flat_map(|p| p.iter().copied()).collect()
    }
}

pub fn wrap_point(p: [f64; 2]) -> [f64; 2] {
    [p[0].rem_euclid(1.0), p[1].rem_euclid(1.0)]
}

/// Distance on the unit torus.
pub fn torus_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = |x: f64, y: f64| {
        let t = (x - y).rem_euclid(1.0);
        t.min(1.0 - t)
    };
    d(a[0], b[0]).hypot(d(a[1], b[1]))
}

/// `kᵀΣk` for `Σ⁻¹ = ρ1⁻² MᵀM`, `M = [[cos α, sin α], [-γ sin α, cos α]]`,
/// with its derivatives in `(ρ1, γ, α)`.
fn diffusion_form(p: &AdvDiffParams, k: [i32; 2]) -> (f64, [f64; 3]) {
    let (k1, k2) = (k[0] as f64, k[1] as f64);
    let (sa, ca) = p.alpha.sin_cos();
    let g = p.gamma;
    let u = ca * k1 + g * sa * k2;
    let v = -sa * k1 + ca * k2;
    let s = u * u + v * v;
    let d = ca * ca + g * sa * sa;
    let d2 = d * d;
    let d3 = d2 * d;
    let rho2 = p.rho1 * p.rho1;
    let value = rho2 * s / d2;

    let d_rho1 = 2.0 * p.rho1 * s / d2;

    let s_g = 2.0 * u * sa * k2;
    let d_g = sa * sa;
    let d_gamma = rho2 * (s_g / d2 - 2.0 * s * d_g / d3);

    let u_a = -sa * k1 + g * ca * k2;
    let v_a = -ca * k1 - sa * k2;
    let s_a = 2.0 * (u * u_a + v * v_a);
    let d_a = 2.0 * sa * ca * (g - 1.0);
    let d_alpha = rho2 * (s_a / d2 - 2.0 * s * d_a / d3);

    (value, [d_rho1, d_gamma, d_alpha])
}

/// State operator and its derivative in each of the nine parameters.
pub fn assemble_operator(params: &AdvDiffParams, grid: &SpectralGrid) -> (StateOperator, Vec<Option<StateOperator>>) {
    let fpi2 = 4.0 * PI * PI;
    let n = grid.modes.len();
    let mut blocks = Vec::with_capacity(n);
    let mut d_blocks: Vec<Vec<[f64; 4]>> = (0..N_PARAMS).map(|_| Vec::with_capacity(n)).collect();
    for &k in &grid.modes {
        let (form, d_form) = diffusion_form(params, k);
        let a = -fpi2 * form - params.zeta;
        let b = TAU * (params.mu_x * k[0] as f64 + params.mu_y * k[1] as f64);
        blocks.push([a, -b, b, a]);

        let diag = |v: f64| [v, 0.0, 0.0, v];
        let rot = |v: f64| [0.0, -v, v, 0.0];
        d_blocks[RHO0].push([0.0; 4]);
        d_blocks[SIGMA2].push([0.0; 4]);
        d_blocks[ZETA].push(diag(-1.0));
        d_blocks[RHO1].push(diag(-fpi2 * d_form[0]));
        d_blocks[GAMMA].push(diag(-fpi2 * d_form[1]));
        d_blocks[ALPHA].push(diag(-fpi2 * d_form[2]));
        d_blocks[MU_X].push(rot(TAU * k[0] as f64));
        d_blocks[MU_Y].push(rot(TAU * k[1] as f64));
        d_blocks[TAU2].push([0.0; 4]);
    }
    let derivs = d_blocks
        .into_iter()
        .enumerate()
        .map(|(i, b)| match i {
            RHO0 | SIGMA2 | TAU2 => None,
            _ => Some(StateOperator::BlockDiag2(b)),
        })
        .collect();
    (StateOperator::BlockDiag2(blocks), derivs)
}

/// Complex eigenvalue `(re, im)` of mode `j`: `-4π²kᵀΣk - ζ - 2πi μᵀk`.
pub fn mode_eigenvalue(params: &AdvDiffParams, k: [i32; 2]) -> (f64, f64) {
    let (form, _) = diffusion_form(params, k);
    let re = -4.0 * PI * PI * form - params.zeta;
    let im = -TAU * (params.mu_x * k[0] as f64 + params.mu_y * k[1] as f64);
    (re, im)
}

/// Per-mode noise variance `η²_k` with derivatives in `(ρ0, σ²)`.
pub fn matern_mode(params: &AdvDiffParams, k: [i32; 2]) -> (f64, f64, f64) {
    let kk = (k[0] * k[0] + k[1] * k[1]) as f64;
    let w = kk + 1.0 / (params.rho0 * params.rho0);
    let scale = 1.0 / (4.0 * PI * PI);
    let eta2 = params.sigma2 * scale / (w * w);
    let d_sigma2 = eta2 / params.sigma2;
    let d_rho0 = params.sigma2 * scale * 4.0 / (w * w * w * params.rho0.powi(3));
    (eta2, d_rho0, d_sigma2)
}

/// Diagonal of `Q` and its `(ρ0, σ²)` derivatives, in the real packing.
pub fn matern_spectrum(params: &AdvDiffParams, grid: &SpectralGrid) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = grid.dim();
    let (mut q, mut dr, mut ds) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for &k in &grid.modes {
        let (e, a, b) = matern_mode(params, k);
        q.extend([e, e]);
        dr.extend([a, a]);
        ds.extend([b, b]);
    }
    (q, dr, ds)
}

/// `2 J₁(z) / z`, the disc average of a plane wave with `z = 2π r |k|`.
pub fn disc_factor(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - z * z / 8.0
    } else {
        2.0 * libm::j1(z) / z
    }
}

/// Disc-average evaluation rows at `points`.
pub fn evaluation_matrix(points: &[[f64; 2]], radius: f64, grid: &SpectralGrid) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(points.len(), grid.dim());
    for (i, p) in points.iter().enumerate() {
        for (j, k) in grid.modes.iter().enumerate() {
            let (k1, k2) = (k[0] as f64, k[1] as f64);
            let amp = SQRT_2 * disc_factor(TAU * radius * k1.hypot(k2));
            let (s, co) = (TAU * (k1 * p[0] + k2 * p[1])).sin_cos();
            c[(i, 2 * j)] = amp * co;
            c[(i, 2 * j + 1)] = amp * s;
        }
    }
    c
}

/// Observation matrix and its derivative in each sensor coordinate, ordered
/// `(o1x, o1y, o2x, ...)`. Each derivative has a single non-zero row.
pub fn observation_matrix(sensors: &SensorConfig, grid: &SpectralGrid) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let c = evaluation_matrix(&sensors.locations, sensors.radius, grid);
    let n_y = sensors.locations.len();
    let mut derivs = Vec::with_capacity(2 * n_y);
    for (i, _) in sensors.locations.iter().enumerate() {
        for d in 0..2 {
            let mut dc = DMatrix::zeros(n_y, grid.dim());
            for (j, k) in grid.modes.iter().enumerate() {
                let f = TAU * k[d] as f64;
                // d/do of (cos φ, sin φ) is f · (-sin φ, cos φ)
                dc[(i, 2 * j)] = -f * c[(i, 2 * j + 1)];
                dc[(i, 2 * j + 1)] = f * c[(i, 2 * j)];
            }
            derivs.push(dc);
        }
    }
    (c, derivs)
}

/// `H = ΦᵀΦ` with `Φ` the disc-average evaluation at the targets.
pub fn target_weight(sensors: &SensorConfig, grid: &SpectralGrid) -> DMatrix<f64> {
    let phi = evaluation_matrix(&sensors.targets, sensors.radius, grid);
    phi.tr_mul(&phi)
}

/// Stationary covariance of the signal (diagonal, `η²/(2|Re λ|)`).
pub fn stationary_covariance(params: &AdvDiffParams, grid: &SpectralGrid) -> DMatrix<f64> {
    let mut diag = Vec::with_capacity(grid.dim());
    for &k in &grid.modes {
        let (e, _, _) = matern_mode(params, k);
        let (re, _) = mode_eigenvalue(params, k);
        let v = e / (-2.0 * re);
        diag.extend([v, v]);
    }
    DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag))
}

/// Package everything as a [`LinearGaussianModel`]. `h` is passed in because
/// it depends only on the targets and is usually computed once.
pub fn build_linear_model(
    params: &AdvDiffParams,
    sensors: &SensorConfig,
    grid: &SpectralGrid,
    h: &DMatrix<f64>,
    with_derivatives: bool,
) -> Result<LinearGaussianModel> {
    params.validate()?;
    let n = grid.dim();
    if h.nrows() != n || h.ncols() != n {
        return Err(Error::Dimension {
            what: "H",
            expected: n,
            got: h.nrows(),
        });
    }
    let n_y = sensors.locations.len();
    let (a, d_a) = assemble_operator(params, grid);
    let (q, dq_rho0, dq_sigma2) = matern_spectrum(params, grid);
    let diag = |v: Vec<f64>| DMatrix::from_diagonal(&nalgebra::DVector::from_vec(v));
    let (c, d_c) = observation_matrix(sensors, grid);
    let r = DMatrix::identity(n_y, n_y) * params.tau2;

    let (d_theta, d_sensor) = if with_derivatives {
        let mut d_theta: Vec<ModelDerivative> = d_a
            .into_iter()
            .map(|a| ModelDerivative {
                a,
                ..Default::default()
            })
            .collect();
        d_theta[RHO0].q = Some(diag(dq_rho0));
        d_theta[SIGMA2].q = Some(diag(dq_sigma2));
        d_theta[TAU2].r = Some(DMatrix::identity(n_y, n_y));
        let d_sensor = d_c
            .into_iter()
            .map(|c| ModelDerivative {
                c: Some(c),
                ..Default::default()
            })
            .collect();
        (d_theta, d_sensor)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(LinearGaussianModel {
        a,
        q: diag(q),
        c,
        r,
        h: h.clone(),
        d_theta,
        d_sensor,
    })
}
