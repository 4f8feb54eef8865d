//! Kalman–Bucy filtering for linear-Gaussian models, with tangent filters and
//! an algebraic Riccati oracle.
//!
//! Model: `dx = A x dt + dv`, `dy = C x dt + dw`, with `Cov(dv) = Q dt` and
//! `Cov(dw) = R dt`. Every matrix may depend on the parameters `θ` and on the
//! sensor coordinates `o`; the derivative blocks are carried alongside.

use nalgebra::{DMatrix, DVector};

use crate::error::check_finite;
use crate::{Error, Result};

/// Tolerance below which a covariance eigenvalue counts as negative.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// State matrix, stored densely or as a chain of 2×2 diagonal blocks.
#[derive(Debug, Clone, PartialEq)]
pub enum StateOperator {
    Dense(DMatrix<f64>),
    /// Block `j` acts on coordinates `(2j, 2j+1)` and is stored row-major.
    BlockDiag2(Vec<[f64; 4]>),
}

impl StateOperator {
    pub fn dim(&self) -> usize {
        match self {
            StateOperator::Dense(m) => m.nrows(),
            StateOperator::BlockDiag2(b) => 2 * b.len(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            StateOperator::Dense(m) => m.clone(),
            StateOperator::BlockDiag2(blocks) => {
                let n = 2 * blocks.len();
                let mut m = DMatrix::zeros(n, n);
                for (j, b) in blocks.iter().enumerate() {
                    let i = 2 * j;
                    m[(i, i)] = b[0];
                    m[(i, i + 1)] = b[1];
                    m[(i + 1, i)] = b[2];
                    m[(i + 1, i + 1)] = b[3];
                }
                m
            }
        }
    }

    /// `self * m`.
    pub fn mul_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            StateOperator::Dense(a) => a * m,
            StateOperator::BlockDiag2(blocks) => {
                let mut out = DMatrix::zeros(m.nrows(), m.ncols());
                for c in 0..m.ncols() {
                    let src = m.column(c);
                    let mut dst = out.column_mut(c);
                    for (j, b) in blocks.iter().enumerate() {
                        let (u, v) = (src[2 * j], src[2 * j + 1]);
                        dst[2 * j] = b[0] * u + b[1] * v;
                        dst[2 * j + 1] = b[2] * u + b[3] * v;
                    }
                }
                out
            }
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            StateOperator::Dense(a) => a * x,
            StateOperator::BlockDiag2(blocks) => {
                let mut out = DVector::zeros(x.len());
                for (j, b) in blocks.iter().enumerate() {
                    let (u, v) = (x[2 * j], x[2 * j + 1]);
                    out[2 * j] = b[0] * u + b[1] * v;
                    out[2 * j + 1] = b[2] * u + b[3] * v;
                }
                out
            }
        }
    }

    /// Induced infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        match self {
            StateOperator::Dense(a) => a
                .row_iter()
                .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            StateOperator::BlockDiag2(blocks) => blocks
                .iter()
                .map(|b| (b[0].abs() + b[1].abs()).max(b[2].abs() + b[3].abs()))
                .fold(0.0, f64::max),
        }
    }
}

/// Partial derivatives of `(A, Q, C, R)` with respect to one scalar
/// coordinate. `None` marks a structurally zero block.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelDerivative {
    pub a: Option<StateOperator>,
    pub q: Option<DMatrix<f64>>,
    pub c: Option<DMatrix<f64>>,
    pub r: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    pub a: StateOperator,
    pub q: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Weight of the sensor objective `Tr[H Σ]`.
    pub h: DMatrix<f64>,
    pub d_theta: Vec<ModelDerivative>,
    /// One entry per scalar sensor coordinate.
    pub d_sensor: Vec<ModelDerivative>,
}

impl LinearGaussianModel {
    pub fn n_x(&self) -> usize {
        self.a.dim()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    /// Checks that every block has a consistent shape.
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n_x(), self.n_y());
        let shape = |what: &'static str, mat: &DMatrix<f64>, r: usize, c: usize| {
            if mat.nrows() != r || mat.ncols() != c {
                Err(Error::Dimension {
                    what,
                    expected: r * c,
                    got: mat.nrows() * mat.ncols(),
                })
            } else {
                Ok(())
            }
        };
        shape("Q", &self.q, n, n)?;
        shape("C", &self.c, m, n)?;
        shape("R", &self.r, m, m)?;
        shape("H", &self.h, n, n)?;
        for d in self.d_theta.iter().chain(&self.d_sensor) {
            if let Some(a) = &d.a {
                if a.dim() != n {
                    return Err(Error::Dimension {
                        what: "dA",
                        expected: n,
                        got: a.dim(),
                    });
                }
            }
            if let Some(q) = &d.q {
                shape("dQ", q, n, n)?;
            }
            if let Some(c) = &d.c {
                shape("dC", c, m, n)?;
            }
            if let Some(r) = &d.r {
                shape("dR", r, m, m)?;
            }
        }
        Ok(())
    }

    /// Scalar model `dx = -θ x dt + dv`, `dy = x dt + dw`, `Q = 1`,
    /// `R = τ² + (o - o0)²`, `H = 1`. One parameter and one sensor coordinate.
    pub fn scalar(theta: f64, o: f64, o0: f64, tau2: f64) -> Self {
        let d = o - o0;
        let m1 = |v: f64| DMatrix::from_element(1, 1, v);
        Self {
            a: StateOperator::Dense(m1(-theta)),
            q: m1(1.0),
            c: m1(1.0),
            r: m1(tau2 + d * d),
            h: m1(1.0),
            d_theta: vec![ModelDerivative {
                a: Some(StateOperator::Dense(m1(-1.0))),
                ..Default::default()
            }],
            d_sensor: vec![ModelDerivative {
                r: Some(m1(2.0 * d)),
                ..Default::default()
            }],
        }
    }

    pub fn derivatives(&self, wrt: Wrt) -> &[ModelDerivative] {
        match wrt {
            Wrt::Parameters => &self.d_theta,
            Wrt::Sensors => &self.d_sensor,
        }
    }
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    r.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Config("observation covariance R is not positive definite".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KbState {
    pub x_hat: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl KbState {
    pub fn new(x_hat: DVector<f64>, sigma: DMatrix<f64>) -> Self {
        Self { x_hat, sigma }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            x_hat: DVector::zeros(n),
            sigma: DMatrix::zeros(n, n),
        }
    }

    /// `ψ_C = C x̂`.
    pub fn psi_c(&self, model: &LinearGaussianModel) -> DVector<f64> {
        &model.c * &self.x_hat
    }

    /// `ψ_j = Tr[H Σ̂]`.
    pub fn psi_j(&self, model: &LinearGaussianModel) -> f64 {
        trace_product(&model.h, &self.sigma)
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        if self.sigma.is_empty() {
            return 0.0;
        }
        self.sigma
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check_psd(&self) -> Result<()> {
        let min_eig = self.min_eigenvalue();
        if min_eig < -PSD_TOLERANCE {
            Err(Error::NotPsd { min_eig })
        } else {
            Ok(())
        }
    }
}

/// `Tr[A B]` without forming the product.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    Parameters,
    Sensors,
}

/// Derivatives of `(x̂, Σ̂)` with respect to `p` scalar coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct KbTangent {
    /// `n_x × p`.
    pub x_hat_grad: DMatrix<f64>,
    pub sigma_grad: Vec<DMatrix<f64>>,
}

impl KbTangent {
    pub fn zeros(n_x: usize, p: usize) -> Self {
        Self {
            x_hat_grad: DMatrix::zeros(n_x, p),
            sigma_grad: vec![DMatrix::zeros(n_x, n_x); p],
        }
    }

    pub fn n_param(&self) -> usize {
        self.sigma_grad.len()
    }

    /// `ψ_C` derivatives: column `i` is `C x̂^i + C^i x̂`.
    pub fn psi_c_grad(&self, model: &LinearGaussianModel, state: &KbState, wrt: Wrt) -> DMatrix<f64> {
        let mut out = &model.c * &self.x_hat_grad;
        for (i, d) in model.derivatives(wrt).iter().enumerate() {
            if let Some(dc) = &d.c {
                let extra = dc * &state.x_hat;
                let mut col = out.column_mut(i);
                col += extra;
            }
        }
        out
    }

    /// `ψ_j` derivatives: `Tr[H Σ̂^i]` (H is constant).
    pub fn psi_j_grad(&self, model: &LinearGaussianModel) -> DVector<f64> {
        DVector::from_iterator(
            self.sigma_grad.len(),
            self.sigma_grad.iter().map(|s| trace_product(&model.h, s)),
        )
    }
}

/// Quantities shared by the filter step and every tangent step at one time.
pub struct KbStepContext {
    pub rinv: DMatrix<f64>,
    /// `R⁻¹ C Σ̂`; its transpose is the Kalman gain.
    pub g: DMatrix<f64>,
    /// `dy - C x̂ dt`.
    pub innovation: DVector<f64>,
    pub dt: f64,
}

impl KbStepContext {
    pub fn new(model: &LinearGaussianModel, state: &KbState, dy: &DVector<f64>, dt: f64) -> Result<Self> {
        let (n, m) = (model.n_x(), model.n_y());
        if state.x_hat.len() != n || state.sigma.nrows() != n || state.sigma.ncols() != n {
            return Err(Error::Dimension {
                what: "filter state",
                expected: n,
                got: state.x_hat.len(),
            });
        }
        if dy.len() != m {
            return Err(Error::Dimension {
                what: "observation increment",
                expected: m,
                got: dy.len(),
            });
        }
        let rinv = spd_inverse(&model.r)?;
        let g = &rinv * (&model.c * &state.sigma);
        let innovation = dy - &model.c * &state.x_hat * dt;
        Ok(Self {
            rinv,
            g,
            innovation,
            dt,
        })
    }
}

/// One Euler step of the filter.
pub fn kb_step(model: &LinearGaussianModel, state: &KbState, dy: &DVector<f64>, dt: f64) -> Result<KbState> {
    let ctx = KbStepContext::new(model, state, dy, dt)?;
    kb_step_with(model, state, &ctx)
}

pub fn kb_step_with(model: &LinearGaussianModel, state: &KbState, ctx: &KbStepContext) -> Result<KbState> {
    let dt = ctx.dt;
    let x_hat = &state.x_hat + model.a.mul_vec(&state.x_hat) * dt + ctx.g.tr_mul(&ctx.innovation);

    let a_sigma = model.a.mul_mat(&state.sigma);
    let cs = &model.c * &state.sigma;
    let mut drift = &a_sigma + a_sigma.transpose() + &model.q - cs.tr_mul(&ctx.g);
    drift *= dt;
    let mut sigma = &state.sigma + drift;
    symmetrize(&mut sigma);

    check_finite("filter mean", x_hat.as_slice())?;
    check_finite("filter covariance", sigma.as_slice())?;
    if let Some(min) = sigma.diagonal().iter().cloned().reduce(f64::min) {
        if min < -PSD_TOLERANCE {
            return Err(Error::NotPsd { min_eig: min });
        }
    }
    Ok(KbState { x_hat, sigma })
}

/// One Euler step of the tangent filters, using the pre-step filter state.
pub fn kb_tangent_step(
    model: &LinearGaussianModel,
    state: &KbState,
    tangent: &KbTangent,
    dy: &DVector<f64>,
    dt: f64,
    wrt: Wrt,
) -> Result<KbTangent> {
    let ctx = KbStepContext::new(model, state, dy, dt)?;
    kb_tangent_step_with(model, state, tangent, &ctx, wrt)
}

pub fn kb_tangent_step_with(
    model: &LinearGaussianModel,
    state: &KbState,
    tangent: &KbTangent,
    ctx: &KbStepContext,
    wrt: Wrt,
) -> Result<KbTangent> {
    let derivs = model.derivatives(wrt);
    if derivs.len() != tangent.n_param() || tangent.x_hat_grad.ncols() != tangent.n_param() {
        return Err(Error::Dimension {
            what: "tangent parameters",
            expected: derivs.len(),
            got: tangent.n_param(),
        });
    }
    let dt = ctx.dt;
    let mut out = tangent.clone();
    for (i, d) in derivs.iter().enumerate() {
        let s_i = &tangent.sigma_grad[i];
        let x_i = tangent.x_hat_grad.column(i).into_owned();

        // W = Σ' Cᵀ + Σ C'ᵀ
        let mut w = (&model.c * s_i).transpose();
        if let Some(dc) = &d.c {
            w += &state.sigma * dc.transpose();
        }
        // K' = (W - Gᵀ R') R⁻¹
        let mut k_num = w.clone();
        if let Some(dr) = &d.r {
            k_num -= ctx.g.tr_mul(dr);
        }
        let k_prime = k_num * &ctx.rinv;

        let mut x_drift = model.a.mul_vec(&x_i);
        let mut c_x = &model.c * &x_i;
        if let Some(da) = &d.a {
            x_drift += da.mul_vec(&state.x_hat);
        }
        if let Some(dc) = &d.c {
            c_x += dc * &state.x_hat;
        }
        let dx = x_drift * dt + &k_prime * &ctx.innovation - ctx.g.tr_mul(&c_x) * dt;

        let mut x = model.a.mul_mat(s_i) - &w * &ctx.g;
        if let Some(da) = &d.a {
            x += da.mul_mat(&state.sigma);
        }
        if let Some(dr) = &d.r {
            x += ctx.g.tr_mul(&(dr * &ctx.g)) * 0.5;
        }
        let mut ds = &x + x.transpose();
        if let Some(dq) = &d.q {
            ds += dq;
        }
        let mut s_new = s_i + ds * dt;
        symmetrize(&mut s_new);
        check_finite("covariance tangent", s_new.as_slice())?;

        let mut col = out.x_hat_grad.column_mut(i);
        col += dx;
        check_finite("mean tangent", col.as_slice())?;
        out.sigma_grad[i] = s_new;
    }
    Ok(out)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions {
    pub tolerance: f64,
    pub max_time: f64,
    /// RK4 step; `None` picks one from the model's scale.
    pub step: Option<f64>,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_time: 1e4,
            step: None,
        }
    }
}

/// Riccati drift `AΣ + ΣAᵀ + Q - ΣCᵀR⁻¹CΣ`.
pub fn riccati_residual(model: &LinearGaussianModel, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rinv = spd_inverse(&model.r)?;
    Ok(riccati_drift(model, &rinv, sigma))
}

fn riccati_drift(model: &LinearGaussianModel, rinv: &DMatrix<f64>, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let a_s = model.a.mul_mat(sigma);
    let cs = &model.c * sigma;
    &a_s + a_s.transpose() + &model.q - cs.tr_mul(&(rinv * &cs))
}

/// Steady-state filter covariance, found by integrating the Riccati ODE from
/// zero with RK4 until the residual's Frobenius norm drops below tolerance.
pub fn riccati_steady_state(model: &LinearGaussianModel) -> Result<DMatrix<f64>> {
    riccati_steady_state_with(model, &RiccatiOptions::default())
}

pub fn riccati_steady_state_with(model: &LinearGaussianModel, opts: &RiccatiOptions) -> Result<DMatrix<f64>> {
    model.validate()?;
    let n = model.n_x();
    let rinv = spd_inverse(&model.r)?;
    let h = opts.step.unwrap_or_else(|| {
        let s = model.c.tr_mul(&(&rinv * &model.c));
        let scale = model.a.norm_inf() + (model.q.norm() * s.norm()).sqrt();
        if scale > 0.0 {
            (0.5 / scale).min(0.5)
        } else {
            0.5
        }
    });
    let mut sigma = DMatrix::zeros(n, n);
    let mut t = 0.0;
    let check_every = 16;
    let mut k = 0u64;
    loop {
        let k1 = riccati_drift(model, &rinv, &sigma);
        if k.is_multiple_of(check_every) {
            let res = k1.norm();
            if !res.is_finite() {
                return Err(Error::Convergence("Riccati integration diverged".into()));
            }
            if res < opts.tolerance {
                return Ok(sigma);
            }
        }
        if t > opts.max_time {
            return Err(Error::Convergence(format!(
                "Riccati residual {:e} after t = {t}",
                k1.norm()
            )));
        }
        let k2 = riccati_drift(model, &rinv, &(&sigma + &k1 * (0.5 * h)));
        let k3 = riccati_drift(model, &rinv, &(&sigma + &k2 * (0.5 * h)));
        let k4 = riccati_drift(model, &rinv, &(&sigma + &k3 * h));
        sigma += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        symmetrize(&mut sigma);
        t += h;
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_riccati_matches_quadratic_formula() {
        let model = LinearGaussianModel::scalar(1.0, 0.0, 0.0, 1.0);
        let s = riccati_steady_state(&model).unwrap();
        assert!((s[(0, 0)] - (2f64.sqrt() - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn lyapunov_limit_without_observations() {
        let model = LinearGaussianModel {
            a: StateOperator::Dense(m1(-1.0)),
            q: m1(2.0),
            c: m1(0.0),
            r: m1(1.0),
            h: m1(1.0),
            d_theta: vec![],
            d_sensor: vec![],
        };
        let s = riccati_steady_state(&model).unwrap();
        assert!((s[(0, 0)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn no_noise_means_zero_covariance() {
        let mut model = LinearGaussianModel::scalar(0.5, 0.0, 0.0, 1.0);
        model.q = m1(0.0);
        assert_eq!(riccati_steady_state(&model).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn null_dynamics_leave_state_unchanged() {
        let model = LinearGaussianModel {
            a: StateOperator::Dense(DMatrix::zeros(2, 2)),
            q: DMatrix::zeros(2, 2),
            c: DMatrix::zeros(1, 2),
            r: m1(1.0),
            h: DMatrix::identity(2, 2),
            d_theta: vec![],
            d_sensor: vec![],
        };
        let state = KbState::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 3.0]),
        );
        let next = kb_step(&model, &state, &DVector::from_element(1, 0.7), 0.01).unwrap();
        assert_eq!(next, state);
    }

    #[test]
    fn singular_r_is_a_config_error() {
        let mut model = LinearGaussianModel::scalar(1.0, 0.0, 0.0, 1.0);
        model.r = m1(0.0);
        let err = kb_step(&model, &KbState::zeros(1), &DVector::zeros(1), 0.01).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn block_operator_matches_dense() {
        let op = StateOperator::BlockDiag2(vec![[1.0, 2.0, -3.0, 4.0], [0.5, -0.25, 0.125, 2.0]]);
        let m = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 - 4.0);
        assert_eq!(op.mul_mat(&m), op.to_dense() * &m);
        let v = DVector::from_vec(vec![1.0, -1.0, 2.0, 0.5]);
        assert_eq!(op.mul_vec(&v), op.to_dense() * &v);
        assert_eq!(op.norm_inf(), 7.0);
    }

    #[test]
    fn readouts_are_direct() {
        let model = LinearGaussianModel::scalar(1.0, 0.5, 0.0, 1.0);
        let state = KbState::new(DVector::from_element(1, 0.3), m1(0.7));
        assert_eq!(state.psi_c(&model)[0], 0.3);
        assert_eq!(state.psi_j(&model), 0.7);
    }
}
