//! A data-generating signal paired with a filter and its tangents.
//!
//! The online algorithms and the ergodic estimators only see a
//! [`JointBundle`]: they ask it for the next observation increment, then for
//! the filter readouts at the current iterates, and never touch the model
//! internals.

use nalgebra::{DMatrix, DVector};

use crate::advdiff::{self, AdvDiffParams, SensorConfig, SpectralGrid};
use crate::benes::{self, BenesFilterState, BenesModel};
use crate::error::check_finite;
use crate::linear::{
    kb_step_with, kb_tangent_step_with, KbState, KbStepContext, KbTangent, LinearGaussianModel, Wrt,
};
use crate::noise::{NoiseCursor, NoiseStream};
use crate::{Error, Result};

/// Stream ids used by every bundle for a given seed.
pub const SIGNAL_STREAM: u64 = 0;
pub const OBSERVATION_STREAM: u64 = 1;
pub const INITIAL_STREAM: u64 = 2;

/// Filter quantities the algorithms consume, evaluated at the pre-step state.
#[derive(Debug, Clone, PartialEq)]
pub struct Readouts {
    /// `ψ_C`, length `n_y`.
    pub psi_c: DVector<f64>,
    /// `ψ_C^θ`, `n_y × n_θ`.
    pub psi_c_theta: DMatrix<f64>,
    pub r_inv: DMatrix<f64>,
    /// `ψ_j = Tr[H Σ̂]`.
    pub psi_j: f64,
    /// `ψ_j^o`, length `n_o`.
    pub psi_j_o: DVector<f64>,
}

impl Readouts {
    /// `[ψ_C^θ]ᵀ R⁻¹ (dy - ψ_C dt)`: the ascent direction of the log-likelihood.
    pub fn likelihood_gradient_increment(&self, dy: &DVector<f64>, dt: f64) -> DVector<f64> {
        let innov = dy - &self.psi_c * dt;
        self.psi_c_theta.tr_mul(&(&self.r_inv * innov))
    }

    /// `ψ_Cᵀ R⁻¹ dy - ½ ψ_Cᵀ R⁻¹ ψ_C dt`.
    pub fn loglik_increment(&self, dy: &DVector<f64>, dt: f64) -> f64 {
        let w = &self.r_inv * &self.psi_c;
        w.dot(dy) - 0.5 * w.dot(&self.psi_c) * dt
    }
}

/// Change of the data-generating truth during a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Jump {
    pub theta_star: Option<Vec<f64>>,
    /// Location that minimises the observation noise (scalar models only).
    pub anchor: Option<f64>,
}

pub trait JointBundle {
    fn n_theta(&self) -> usize;
    fn n_o(&self) -> usize;
    fn n_y(&self) -> usize;

    /// Observation increment for step `step` from the beginning-of-step
    /// signal, then advance the signal. `o` is the current sensor iterate.
    fn synthesize(&mut self, o: &[f64], step: u64, dt: f64) -> Result<DVector<f64>>;

    /// Readouts at the pre-step filter state, then advance filter and tangents
    /// at `(θ, o)`.
    fn filter_step(&mut self, theta: &[f64], o: &[f64], dy: &DVector<f64>, dt: f64) -> Result<Readouts>;

    fn summary_names(&self) -> Vec<String>;
    fn summary(&self) -> Vec<f64>;

    fn apply_jump(&mut self, jump: &Jump) -> Result<()>;
}

/// Seek-aware sequential reader; random access falls back to seeking.
#[derive(Debug, Clone)]
struct Stream {
    cursor: NoiseCursor,
    buf: Vec<f64>,
}

impl Stream {
    fn new(seed: u64, id: u64, dim: usize) -> Self {
        Self {
            cursor: NoiseStream::new(seed, id, dim).cursor(),
            buf: vec![0.0; dim],
        }
    }

    fn draw(&mut self, step: u64, dt: f64) -> &[f64] {
        if self.cursor.step() != step {
            self.cursor.seek(step);
        }
        self.cursor.next_into(dt, &mut self.buf);
        &self.buf
    }
}

// ---------------------------------------------------------------------------
// Linear-Gaussian models

/// Maps iterates `(θ, o)` to a linear-Gaussian model.
pub trait LinearFamily {
    fn n_theta(&self) -> usize;
    fn n_o(&self) -> usize;
    fn model(&self, theta: &[f64], o: &[f64], with_derivatives: bool) -> Result<LinearGaussianModel>;
    /// Move the noise-minimising sensor anchor, if the family has one.
    fn set_anchor(&mut self, _anchor: f64) -> Result<()> {
        Err(Error::Config("this model has no sensor anchor".into()))
    }
}

/// The scalar model with `θ` the mean-reversion rate and `r(o) = τ² + (o - o0)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarFamily {
    pub o0: f64,
    pub tau2: f64,
}

impl LinearFamily for ScalarFamily {
    fn n_theta(&self) -> usize {
        1
    }
    fn n_o(&self) -> usize {
        1
    }
    fn model(&self, theta: &[f64], o: &[f64], _with_derivatives: bool) -> Result<LinearGaussianModel> {
        if theta.len() != 1 || o.len() != 1 {
            return Err(Error::Dimension {
                what: "scalar model iterates",
                expected: 2,
                got: theta.len() + o.len(),
            });
        }
        Ok(LinearGaussianModel::scalar(theta[0], o[0], self.o0, self.tau2))
    }
    fn set_anchor(&mut self, anchor: f64) -> Result<()> {
        self.o0 = anchor;
        Ok(())
    }
}

/// Advection-diffusion model with sensors wrapped onto the torus.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvDiffFamily {
    pub grid: SpectralGrid,
    pub radius: f64,
    pub targets: Vec<[f64; 2]>,
    pub h: DMatrix<f64>,
}

impl AdvDiffFamily {
    pub fn new(k_max: i32, radius: f64, targets: Vec<[f64; 2]>) -> Result<Self> {
        let grid = SpectralGrid::new(k_max)?;
        let cfg = SensorConfig::new(Vec::new(), radius, targets)?;
        let h = advdiff::target_weight(&cfg, &grid);
        Ok(Self {
            grid,
            radius,
            targets: cfg.targets,
            h,
        })
    }

    pub fn sensors(&self, o: &[f64]) -> Result<SensorConfig> {
        if !o.len().is_multiple_of(2) {
            return Err(Error::Dimension {
                what: "sensor coordinates",
                expected: o.len() + 1,
                got: o.len(),
            });
        }
        let locs = o.chunks(2).map(|p| [p[0], p[1]]).collect();
        SensorConfig::new(locs, self.radius, self.targets.clone())
    }
}

impl LinearFamily for AdvDiffFamily {
    fn n_theta(&self) -> usize {
        advdiff::N_PARAMS
    }
    fn n_o(&self) -> usize {
        2 * self.targets.len()
    }
    fn model(&self, theta: &[f64], o: &[f64], with_derivatives: bool) -> Result<LinearGaussianModel> {
        let params = AdvDiffParams::from_slice(theta)?;
        let sensors = self.sensors(o)?;
        advdiff::build_linear_model(&params, &sensors, &self.grid, &self.h, with_derivatives)
    }
}

pub struct LinearBundle<F: LinearFamily> {
    pub family: F,
    pub theta_star: Vec<f64>,
    pub x: DVector<f64>,
    pub filter: KbState,
    pub tangent_theta: KbTangent,
    pub tangent_o: KbTangent,
    /// Full eigenvalue check of the covariance every this many filter steps.
    pub psd_check_every: u64,
    steps: u64,
    q_sqrt: DMatrix<f64>,
    signal: Stream,
    obs: Stream,
}

impl<F: LinearFamily> LinearBundle<F> {
    pub fn new(family: F, theta_star: Vec<f64>, x0: DVector<f64>, filter: KbState, seed: u64) -> Result<Self> {
        let (n_t, n_o) = (family.n_theta(), family.n_o());
        if theta_star.len() != n_t {
            return Err(Error::Dimension {
                what: "true parameters",
                expected: n_t,
                got: theta_star.len(),
            });
        }
        let n = filter.x_hat.len();
        if x0.len() != n {
            return Err(Error::Dimension {
                what: "initial signal",
                expected: n,
                got: x0.len(),
            });
        }
        let probe = family.model(&theta_star, &vec![0.0; n_o], false)?;
        let q_sqrt = psd_sqrt(&probe.q)?;
        let n_y = probe.n_y();
        Ok(Self {
            theta_star,
            x: x0,
            tangent_theta: KbTangent::zeros(n, n_t),
            tangent_o: KbTangent::zeros(n, n_o),
            filter,
            psd_check_every: 100,
            steps: 0,
            q_sqrt,
            signal: Stream::new(seed, SIGNAL_STREAM, n),
            obs: Stream::new(seed, OBSERVATION_STREAM, n_y),
            family,
        })
    }

    fn noise_factor(family: &F, theta_star: &[f64], n_o: usize) -> Result<DMatrix<f64>> {
        let model = family.model(theta_star, &vec![0.0; n_o], false)?;
        psd_sqrt(&model.q)
    }
}

/// Lower Cholesky factor, allowing zero rows for singular diagonal matrices.
fn psd_sqrt(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = q.nrows();
    let is_diag = (0..n).all(|i| (0..n).all(|j| i == j || q[(i, j)] == 0.0));
    if is_diag {
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            if q[(i, i)] < 0.0 {
                return Err(Error::Config("signal noise covariance has a negative entry".into()));
            }
            out[(i, i)] = q[(i, i)].sqrt();
        }
        return Ok(out);
    }
    q.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Config("signal noise covariance is not positive definite".into()))
}

impl<F: LinearFamily> JointBundle for LinearBundle<F> {
    fn n_theta(&self) -> usize {
        self.family.n_theta()
    }
    fn n_o(&self) -> usize {
        self.family.n_o()
    }
    fn n_y(&self) -> usize {
        self.obs.buf.len()
    }

    fn synthesize(&mut self, o: &[f64], step: u64, dt: f64) -> Result<DVector<f64>> {
        let truth = self.family.model(&self.theta_star, o, false)?;
        let r_sqrt = psd_sqrt(&truth.r)?;
        let dv = DVector::from_column_slice(self.obs.draw(step, dt));
        let dy = &truth.c * &self.x * dt + r_sqrt * dv;
        let dw = DVector::from_column_slice(self.signal.draw(step, dt));
        let x_next = &self.x + truth.a.mul_vec(&self.x) * dt + &self.q_sqrt * dw;
        check_finite("signal", x_next.as_slice()).map_err(|e| e.at_step(step))?;
        check_finite("observation", dy.as_slice()).map_err(|e| e.at_step(step))?;
        self.x = x_next;
        Ok(dy)
    }

    fn filter_step(&mut self, theta: &[f64], o: &[f64], dy: &DVector<f64>, dt: f64) -> Result<Readouts> {
        let model = self.family.model(theta, o, true)?;
        let ctx = KbStepContext::new(&model, &self.filter, dy, dt)?;
        let readouts = Readouts {
            psi_c: self.filter.psi_c(&model),
            psi_c_theta: self.tangent_theta.psi_c_grad(&model, &self.filter, Wrt::Parameters),
            r_inv: ctx.rinv.clone(),
            psi_j: self.filter.psi_j(&model),
            psi_j_o: self.tangent_o.psi_j_grad(&model),
        };
        let next = kb_step_with(&model, &self.filter, &ctx)?;
        self.tangent_theta = kb_tangent_step_with(&model, &self.filter, &self.tangent_theta, &ctx, Wrt::Parameters)?;
        self.tangent_o = kb_tangent_step_with(&model, &self.filter, &self.tangent_o, &ctx, Wrt::Sensors)?;
        self.filter = next;
        self.steps += 1;
        if self.psd_check_every > 0 && self.steps.is_multiple_of(self.psd_check_every) {
            self.filter.check_psd()?;
        }
        Ok(readouts)
    }

    fn summary_names(&self) -> Vec<String> {
        vec!["signal0".into(), "x_hat0".into(), "sigma_hat00".into()]
    }

    fn summary(&self) -> Vec<f64> {
        vec![self.x[0], self.filter.x_hat[0], self.filter.sigma[(0, 0)]]
    }

    fn apply_jump(&mut self, jump: &Jump) -> Result<()> {
        if let Some(t) = &jump.theta_star {
            if t.len() != self.family.n_theta() {
                return Err(Error::Dimension {
                    what: "jump parameters",
                    expected: self.family.n_theta(),
                    got: t.len(),
                });
            }
            self.theta_star = t.clone();
            self.q_sqrt = Self::noise_factor(&self.family, &self.theta_star, self.family.n_o())?;
        }
        if let Some(a) = jump.anchor {
            self.family.set_anchor(a)?;
        }
        Ok(())
    }
}

/// Scalar linear bundle started from `x0` with filter `(0, Σ0)`.
pub fn scalar_linear_bundle(
    theta_star: f64,
    o0: f64,
    tau2: f64,
    x0: f64,
    sigma0: f64,
    seed: u64,
) -> Result<LinearBundle<ScalarFamily>> {
    LinearBundle::new(
        ScalarFamily { o0, tau2 },
        vec![theta_star],
        DVector::from_element(1, x0),
        KbState::new(DVector::zeros(1), DMatrix::from_element(1, 1, sigma0)),
        seed,
    )
}

/// Advection-diffusion bundle: signal drawn from the stationary law at `θ*`,
/// filter started at mean zero with the stationary covariance at `θ0`.
pub fn advdiff_bundle(
    family: AdvDiffFamily,
    theta_star: &[f64],
    theta0: &[f64],
    seed: u64,
) -> Result<LinearBundle<AdvDiffFamily>> {
    let p_star = AdvDiffParams::from_slice(theta_star)?;
    let p0 = AdvDiffParams::from_slice(theta0)?;
    p_star.validate()?;
    p0.validate()?;
    let n = family.grid.dim();
    let stat = advdiff::stationary_covariance(&p_star, &family.grid);
    let z = NoiseStream::new(seed, INITIAL_STREAM, n).increments(0, 1.0);
    let x0 = DVector::from_iterator(n, (0..n).map(|i| stat[(i, i)].sqrt() * z[i]));
    let sigma0 = advdiff::stationary_covariance(&p0, &family.grid);
    LinearBundle::new(family, theta_star.to_vec(), x0, KbState::new(DVector::zeros(n), sigma0), seed)
}

// ---------------------------------------------------------------------------
// Beneš model

/// Beneš signal and filter. `θ = (μ, σ, c)`, `o` is a single coordinate.
pub struct BenesBundle {
    pub truth: BenesModel,
    pub x: f64,
    pub filter: BenesFilterState,
    signal: Stream,
    obs: Stream,
}

impl BenesBundle {
    /// `truth.o` is ignored; the sensor location always comes from the iterate.
    pub fn new(truth: BenesModel, seed: u64) -> Self {
        Self {
            truth,
            x: 0.0,
            filter: BenesFilterState::default(),
            signal: Stream::new(seed, SIGNAL_STREAM, 1),
            obs: Stream::new(seed, OBSERVATION_STREAM, 1),
        }
    }

    pub fn filter_model(&self, theta: &[f64], o: &[f64]) -> Result<BenesModel> {
        if theta.len() != 3 || o.len() != 1 {
            return Err(Error::Dimension {
                what: "Beneš iterates",
                expected: 4,
                got: theta.len() + o.len(),
            });
        }
        BenesModel::new(theta[0], theta[1], theta[2], self.truth.tau2, self.truth.o0, o[0])
    }
}

impl JointBundle for BenesBundle {
    fn n_theta(&self) -> usize {
        3
    }
    fn n_o(&self) -> usize {
        1
    }
    fn n_y(&self) -> usize {
        1
    }

    fn synthesize(&mut self, o: &[f64], step: u64, dt: f64) -> Result<DVector<f64>> {
        let mut truth = self.truth;
        truth.o = o[0];
        let dv = self.obs.draw(step, dt)[0];
        let dy = truth.c * self.x * dt + truth.r().sqrt() * dv;
        let dw = self.signal.draw(step, dt)[0];
        let x_next = self.x + truth.signal_drift(self.x) * dt + truth.sigma * dw;
        if !x_next.is_finite() || !dy.is_finite() {
            return Err(Error::NumericBlowup {
                what: "Beneš signal",
                component: 0,
                step: Some(step),
            });
        }
        self.x = x_next;
        Ok(DVector::from_element(1, dy))
    }

    fn filter_step(&mut self, theta: &[f64], o: &[f64], dy: &DVector<f64>, dt: f64) -> Result<Readouts> {
        let model = self.filter_model(theta, o)?;
        let mo = benes::benes_posterior_moments(&model, &self.filter);
        let c = model.c;
        let readouts = Readouts {
            psi_c: DVector::from_element(1, c * mo.x_hat),
            psi_c_theta: DMatrix::from_row_slice(
                1,
                3,
                &[
                    c * mo.x_hat_grad[benes::MU],
                    c * mo.x_hat_grad[benes::SIGMA],
                    mo.x_hat + c * mo.x_hat_grad[benes::C],
                ],
            ),
            r_inv: DMatrix::from_element(1, 1, 1.0 / model.r()),
            psi_j: mo.sigma_hat,
            psi_j_o: DVector::from_element(1, mo.sigma_hat_grad[benes::O]),
        };
        self.filter = benes::benes_step(&model, &self.filter, dy[0], dt)?;
        Ok(readouts)
    }

    fn summary_names(&self) -> Vec<String> {
        vec!["signal".into(), "m".into(), "p".into()]
    }

    fn summary(&self) -> Vec<f64> {
        vec![self.x, self.filter.m, self.filter.p]
    }

    fn apply_jump(&mut self, jump: &Jump) -> Result<()> {
        if let Some(t) = &jump.theta_star {
            if t.len() != 3 {
                return Err(Error::Dimension {
                    what: "jump parameters",
                    expected: 3,
                    got: t.len(),
                });
            }
            self.truth = BenesModel::new(t[0], t[1], t[2], self.truth.tau2, self.truth.o0, self.truth.o)?;
        }
        if let Some(a) = jump.anchor {
            self.truth.o0 = a;
        }
        Ok(())
    }
}
