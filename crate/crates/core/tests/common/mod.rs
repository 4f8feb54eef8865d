#![allow(dead_code)]

use ctsa_core::linear::{
    kb_step_with, kb_tangent_step_with, KbState, KbStepContext, KbTangent, LinearGaussianModel, ModelDerivative,
    StateOperator, Wrt,
};
use ctsa_core::NoiseStream;
use nalgebra::{DMatrix, DVector};

pub type ModelFn = dyn Fn(&[f64], &[f64]) -> LinearGaussianModel;

/// Observation increments from the model at `(theta, o)`, started at `x0`.
pub fn synthesize_linear(model: &LinearGaussianModel, x0: &DVector<f64>, dt: f64, n: u64, seed: u64) -> Vec<DVector<f64>> {
    let q = model.q.clone().cholesky().map(|c| c.l()).unwrap_or_else(|| {
        DMatrix::from_diagonal(&model.q.diagonal().map(|v| v.max(0.0).sqrt()))
    });
    let r = model.r.clone().cholesky().unwrap().l();
    let mut sig = NoiseStream::new(seed, 0, model.n_x()).cursor();
    let mut obs = NoiseStream::new(seed, 1, model.n_y()).cursor();
    let mut dw = DVector::zeros(model.n_x());
    let mut dv = DVector::zeros(model.n_y());
    let mut x = x0.clone();
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        sig.next_into(dt, dw.as_mut_slice());
        obs.next_into(dt, dv.as_mut_slice());
        out.push(&model.c * &x * dt + &r * &dv);
        x = &x + model.a.mul_vec(&x) * dt + &q * &dw;
    }
    out
}

pub struct LinearRun {
    pub state: KbState,
    pub tan_theta: KbTangent,
    pub tan_o: KbTangent,
}

pub fn run_filter(model: &LinearGaussianModel, init: &KbState, dys: &[DVector<f64>], dt: f64) -> LinearRun {
    let n = model.n_x();
    let mut state = init.clone();
    let mut tan_theta = KbTangent::zeros(n, model.d_theta.len());
    let mut tan_o = KbTangent::zeros(n, model.d_sensor.len());
    for dy in dys {
        let ctx = KbStepContext::new(model, &state, dy, dt).unwrap();
        let next = kb_step_with(model, &state, &ctx).unwrap();
        tan_theta = kb_tangent_step_with(model, &state, &tan_theta, &ctx, Wrt::Parameters).unwrap();
        tan_o = kb_tangent_step_with(model, &state, &tan_o, &ctx, Wrt::Sensors).unwrap();
        state = next;
    }
    LinearRun {
        state,
        tan_theta,
        tan_o,
    }
}

/// Worst component-wise mismatch between tangents and central differences of
/// `(x̂, Σ̂)` on a fixed observation path, relative to the largest magnitude.
pub fn tangent_fd_error(
    family: &ModelFn,
    theta: &[f64],
    o: &[f64],
    init: &KbState,
    dys: &[DVector<f64>],
    dt: f64,
    h: f64,
) -> (f64, f64) {
    let base = run_filter(&family(theta, o), init, dys, dt);
    let mut worst = (0.0f64, 0.0f64);
    for (wrt, n) in [(Wrt::Parameters, theta.len()), (Wrt::Sensors, o.len())] {
        for i in 0..n {
            let shifted = |sign: f64| {
                let (mut t, mut s) = (theta.to_vec(), o.to_vec());
                match wrt {
                    Wrt::Parameters => t[i] += sign * h,
                    Wrt::Sensors => s[i] += sign * h,
                }
                run_filter(&family(&t, &s), init, dys, dt).state
            };
            let (up, dn) = (shifted(1.0), shifted(-1.0));
            let fd_x = (&up.x_hat - &dn.x_hat) / (2.0 * h);
            let fd_s = (&up.sigma - &dn.sigma) / (2.0 * h);
            let tan = match wrt {
                Wrt::Parameters => &base.tan_theta,
                Wrt::Sensors => &base.tan_o,
            };
            let tx = tan.x_hat_grad.column(i).into_owned();
            let ts = &tan.sigma_grad[i];
            let rel = |a: f64, scale: f64| if scale > 1e-12 { a / scale } else { a };
            let ex = rel((&tx - &fd_x).amax(), fd_x.amax());
            let es = rel((ts - &fd_s).amax(), fd_s.amax());
            worst.0 = worst.0.max(ex);
            worst.1 = worst.1.max(es);
        }
    }
    worst
}

/// Two-dimensional test model in which every block depends on the iterates.
/// `θ ∈ R²`, `o ∈ R²`.
pub fn coupled_model(theta: &[f64], o: &[f64]) -> LinearGaussianModel {
    let (t0, t1) = (theta[0], theta[1]);
    let (o0, o1) = (o[0], o[1]);
    let dense = |v: [f64; 4]| StateOperator::Dense(DMatrix::from_row_slice(2, 2, &v));
    let mat = |v: [f64; 4]| DMatrix::from_row_slice(2, 2, &v);
    LinearGaussianModel {
        a: dense([-t0, t1, -t1, -1.0 - t0 * t0]),
        q: mat([1.0 + t1 * t1, 0.1, 0.1, 0.5]),
        c: mat([o0.cos(), o0.sin(), o1, 1.0 + 0.3 * t1]),
        r: mat([0.5 + o0 * o0, 0.0, 0.0, 1.0 + t0 * t0]),
        h: mat([1.0, 0.2, 0.2, 2.0]),
        d_theta: vec![
            ModelDerivative {
                a: Some(dense([-1.0, 0.0, 0.0, -2.0 * t0])),
                q: None,
                c: None,
                r: Some(mat([0.0, 0.0, 0.0, 2.0 * t0])),
            },
            ModelDerivative {
                a: Some(dense([0.0, 1.0, -1.0, 0.0])),
                q: Some(mat([2.0 * t1, 0.0, 0.0, 0.0])),
                c: Some(mat([0.0, 0.0, 0.0, 0.3])),
                r: None,
            },
        ],
        d_sensor: vec![
            ModelDerivative {
                a: None,
                q: None,
                c: Some(mat([-o0.sin(), o0.cos(), 0.0, 0.0])),
                r: Some(mat([2.0 * o0, 0.0, 0.0, 0.0])),
            },
            ModelDerivative {
                a: None,
                q: None,
                c: Some(mat([0.0, 0.0, 1.0, 0.0])),
                r: None,
            },
        ],
    }
}

pub fn scalar_model(theta: &[f64], o: &[f64]) -> LinearGaussianModel {
    LinearGaussianModel::scalar(theta[0], o[0], 0.0, 1.0)
}
