//! Beneš filter for `dx = μσ tanh(μx/σ) dt + σ dW`, `dy = c x dt + √r(o) dV`
//! with `r(o) = τ² + (o - o0)²`.
//!
//! The filter is carried by the statistic `(m, P)`; the posterior is a
//! two-component Gaussian mixture built from it. Tangents are kept for the
//! coordinates `(μ, σ, c, o)` in that order.

use crate::{Error, Result};

pub const MU: usize = 0;
pub const SIGMA: usize = 1;
pub const C: usize = 2;
pub const O: usize = 3;
pub const N_TANGENTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenesModel {
    pub mu: f64,
    pub sigma: f64,
    pub c: f64,
    pub tau2: f64,
    pub o0: f64,
    pub o: f64,
}

impl BenesModel {
    pub fn new(mu: f64, sigma: f64, c: f64, tau2: f64, o0: f64, o: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        if !(tau2 > 0.0) {
            return Err(Error::Config(format!("tau2 must be positive, got {tau2}")));
        }
        Ok(Self {
            mu,
            sigma,
            c,
            tau2,
            o0,
            o,
        })
    }

    pub fn r(&self) -> f64 {
        let d = self.o - self.o0;
        self.tau2 + d * d
    }

    /// `dr/do`.
    pub fn r_prime(&self) -> f64 {
        2.0 * (self.o - self.o0)
    }

    pub fn signal_drift(&self, x: f64) -> f64 {
        self.mu * self.sigma * (self.mu / self.sigma * x).tanh()
    }

    /// Stationary value of `P` when `c ≠ 0`.
    pub fn p_limit(&self) -> f64 {
        self.sigma * self.r().sqrt() / self.c.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BenesFilterState {
    pub m: f64,
    pub p: f64,
    /// Indexed by [`MU`], [`SIGMA`], [`C`], [`O`].
    pub m_grad: [f64; N_TANGENTS],
    pub p_grad: [f64; N_TANGENTS],
}

impl BenesFilterState {
    pub fn new(m: f64, p: f64) -> Self {
        Self {
            m,
            p,
            ..Default::default()
        }
    }
}

/// Partial derivatives of `(c²/r, c/r, σ²)` with respect to each coordinate.
fn coefficient_derivatives(model: &BenesModel) -> [(f64, f64, f64); N_TANGENTS] {
    let r = model.r();
    let rp = model.r_prime();
    let c = model.c;
    [
        (0.0, 0.0, 0.0),
        (0.0, 0.0, 2.0 * model.sigma),
        (2.0 * c / r, 1.0 / r, 0.0),
        (-c * c * rp / (r * r), -c * rp / (r * r), 0.0),
    ]
}

/// Tangent increments `(dm^i, dP^i)` evaluated at the pre-step state.
pub fn benes_tangent_step(
    model: &BenesModel,
    state: &BenesFilterState,
    dy: f64,
    dt: f64,
) -> Result<([f64; N_TANGENTS], [f64; N_TANGENTS])> {
    let r = model.r();
    let kappa = model.c * model.c / r;
    let g = model.c / r;
    let (m, p) = (state.m, state.p);
    let mut m_grad = state.m_grad;
    let mut p_grad = state.p_grad;
    for (i, (dk, dg, dq)) in coefficient_derivatives(model).into_iter().enumerate() {
        let (mi, pi) = (state.m_grad[i], state.p_grad[i]);
        let dm = -(dk * p * m + kappa * (pi * m + p * mi)) * dt + (dg * p + g * pi) * dy;
        let dp = (dq - dk * p * p - 2.0 * kappa * p * pi) * dt;
        m_grad[i] += dm;
        p_grad[i] += dp;
    }
    for (i, v) in m_grad.iter().chain(p_grad.iter()).enumerate() {
        if !v.is_finite() {
            return Err(Error::NumericBlowup {
                what: "Beneš tangent",
                component: i,
                step: None,
            });
        }
    }
    Ok((m_grad, p_grad))
}

/// One Euler step of `(m, P)` and all tangents.
pub fn benes_step(model: &BenesModel, state: &BenesFilterState, dy: f64, dt: f64) -> Result<BenesFilterState> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let r = model.r();
    let kappa = model.c * model.c / r;
    let (m, p) = (state.m, state.p);
    let m_new = m - kappa * p * m * dt + model.c / r * p * dy;
    let p_new = p + (model.sigma * model.sigma - kappa * p * p) * dt;
    if !m_new.is_finite() || !p_new.is_finite() {
        return Err(Error::NumericBlowup {
            what: "Beneš statistic",
            component: if m_new.is_finite() { 1 } else { 0 },
            step: None,
        });
    }
    let (m_grad, p_grad) = benes_tangent_step(model, state, dy, dt)?;
    Ok(BenesFilterState {
        m: m_new,
        p: p_new,
        m_grad,
        p_grad,
    })
}

/// Posterior mean and variance with their derivatives in `(μ, σ, c, o)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenesMoments {
    pub x_hat: f64,
    pub sigma_hat: f64,
    pub x_hat_grad: [f64; N_TANGENTS],
    pub sigma_hat_grad: [f64; N_TANGENTS],
}

pub fn benes_posterior_moments(model: &BenesModel, state: &BenesFilterState) -> BenesMoments {
    let s = model.mu / model.sigma;
    let ds = [
        1.0 / model.sigma,
        -model.mu / (model.sigma * model.sigma),
        0.0,
        0.0,
    ];
    let (m, p) = (state.m, state.p);
    let th = (s * m).tanh();
    let sech2 = 1.0 - th * th;

    let x_hat = m + s * p * th;
    let sigma_hat = p + s * s * sech2 * p * p;

    let mut x_hat_grad = [0.0; N_TANGENTS];
    let mut sigma_hat_grad = [0.0; N_TANGENTS];
    for i in 0..N_TANGENTS {
        let (mi, pi, si) = (state.m_grad[i], state.p_grad[i], ds[i]);
        let dz = si * m + s * mi;
        x_hat_grad[i] = mi + (si * p + s * pi) * th + s * p * sech2 * dz;
        sigma_hat_grad[i] =
            pi + 2.0 * s * si * sech2 * p * p - 2.0 * s * s * th * sech2 * dz * p * p + 2.0 * s * s * sech2 * p * pi;
    }
    BenesMoments {
        x_hat,
        sigma_hat,
        x_hat_grad,
        sigma_hat_grad,
    }
}

/// Two-component mixture form of the posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenesMixture {
    pub a_plus: f64,
    pub a_minus: f64,
    pub b: f64,
    pub w_plus: f64,
    pub w_minus: f64,
}

impl BenesMixture {
    /// Component means `A±/(2B)`.
    pub fn means(&self) -> (f64, f64) {
        (self.a_plus / (2.0 * self.b), self.a_minus / (2.0 * self.b))
    }

    pub fn variance(&self) -> f64 {
        1.0 / (2.0 * self.b)
    }

    pub fn density(&self, x: f64) -> f64 {
        let (mp, mm) = self.means();
        let v = self.variance();
        let norm = 1.0 / (std::f64::consts::TAU * v).sqrt();
        let phi = |mean: f64| norm * (-(x - mean) * (x - mean) / (2.0 * v)).exp();
        self.w_plus * phi(mp) + self.w_minus * phi(mm)
    }
}

/// `A± = m/P ± μ/σ`, `B = 1/(2P)`, `w± ∝ exp(A±²/(4B))`.
pub fn benes_mixture(model: &BenesModel, state: &BenesFilterState) -> Result<BenesMixture> {
    if !(state.p > 0.0) {
        return Err(Error::Domain(format!("mixture needs P > 0, got {}", state.p)));
    }
    let s = model.mu / model.sigma;
    let a_plus = state.m / state.p + s;
    let a_minus = state.m / state.p - s;
    let b = 0.5 / state.p;
    // A+² - A-² = 4 s m / P, so the weight ratio is exp(2 s m).
    let w_plus = 1.0 / (1.0 + (-2.0 * s * state.m).exp());
    Ok(BenesMixture {
        a_plus,
        a_minus,
        b,
        w_plus,
        w_minus: 1.0 - w_plus,
    })
}

pub fn benes_mixture_density(model: &BenesModel, state: &BenesFilterState, x: f64) -> Result<f64> {
    Ok(benes_mixture(model, state)?.density(x))
}
