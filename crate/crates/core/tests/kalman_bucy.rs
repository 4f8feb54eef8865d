mod common;

use common::{coupled_model, run_filter, scalar_model, synthesize_linear, tangent_fd_error};
use ctsa_core::linear::{
    kb_step, kb_tangent_step, riccati_steady_state, KbState, KbTangent, LinearGaussianModel, StateOperator, Wrt,
};
use ctsa_core::NoiseStream;
use nalgebra::{DMatrix, DVector};

#[test]
fn scalar_variance_settles_at_riccati_root() {
    let model = LinearGaussianModel::scalar(1.0, 0.0, 0.0, 1.0);
    let dt = 1e-3;
    let dys = synthesize_linear(&model, &DVector::zeros(1), dt, 50_000, 3);
    let run = run_filter(&model, &KbState::zeros(1), &dys, dt);
    let target = 2f64.sqrt() - 1.0;
    assert!((run.state.sigma[(0, 0)] - target).abs() < 1e-4);
}

#[test]
fn covariance_stays_symmetric_on_random_models() {
    let n = 4;
    let noise = NoiseStream::new(99, 7, n * n + 2 * n);
    let z = noise.increments(0, 1.0);
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { -1.5 } else { 0.3 * z[i * n + j] });
    let b = DMatrix::from_fn(n, n, |i, j| 0.5 * z[(i * n + j + 3) % (n * n)]);
    let model = LinearGaussianModel {
        a: StateOperator::Dense(a),
        q: &b * b.transpose() + DMatrix::identity(n, n) * 0.1,
        c: DMatrix::from_fn(2, n, |i, j| z[n * n + i * n + j]),
        r: DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.8]),
        h: DMatrix::identity(n, n),
        d_theta: vec![],
        d_sensor: vec![],
    };
    let dt = 1e-3;
    let dys = synthesize_linear(&model, &DVector::zeros(n), dt, 100_000, 5);
    let mut st = KbState::zeros(n);
    for dy in &dys {
        st = kb_step(&model, &st, dy, dt).unwrap();
        assert_eq!(st.sigma, st.sigma.transpose());
    }
    st.check_psd().unwrap();
}

#[test]
fn scalar_tangents_match_finite_differences() {
    let dt = 1e-3;
    let truth = LinearGaussianModel::scalar(1.0, 0.0, 0.0, 1.0);
    let dys = synthesize_linear(&truth, &DVector::zeros(1), dt, 10_000, 11);
    let init = KbState::new(DVector::zeros(1), DMatrix::from_element(1, 1, 0.5));
    let (ex, es) = tangent_fd_error(&scalar_model, &[1.3], &[0.7], &init, &dys, dt, 1e-4);
    assert!(ex < 1e-2 && es < 1e-2, "mean {ex:e}, covariance {es:e}");
}

#[test]
fn coupled_model_tangents_match_finite_differences() {
    let dt = 1e-3;
    let theta = [0.8, 0.4];
    let o = [0.3, -0.5];
    let truth = coupled_model(&theta, &o);
    let dys = synthesize_linear(&truth, &DVector::zeros(2), dt, 10_000, 12);
    let init = KbState::new(DVector::from_vec(vec![0.1, -0.2]), DMatrix::identity(2, 2) * 0.3);
    let (ex, es) = tangent_fd_error(&coupled_model, &[0.9, 0.3], &[0.35, -0.4], &init, &dys, dt, 1e-4);
    assert!(ex < 1e-2 && es < 1e-2, "mean {ex:e}, covariance {es:e}");
}

#[test]
fn parameter_free_model_keeps_zero_tangent() {
    let model = LinearGaussianModel::scalar(1.0, 0.3, 0.3, 1.0);
    // r'(o) = 2(o - o0) vanishes at the anchor
    let mut st = KbState::zeros(1);
    let mut tan = KbTangent::zeros(1, 1);
    for k in 0..1000 {
        let dy = DVector::from_element(1, 0.01 * (k as f64).sin());
        tan = kb_tangent_step(&model, &st, &tan, &dy, 0.01, Wrt::Sensors).unwrap();
        st = kb_step(&model, &st, &dy, 0.01).unwrap();
    }
    assert_eq!(tan, KbTangent::zeros(1, 1));
}

#[test]
fn sensor_tangent_of_variance_is_positive_away_from_anchor() {
    // Σ̂ grows with r(o) = τ² + (o - o0)², so ∂Σ̂/∂o > 0 for o > o0:
    // descent along -Σ̂^o moves the sensor back towards o0.
    let dt = 1e-3;
    for (o, sign) in [(0.8, 1.0), (-0.8, -1.0)] {
        let model = LinearGaussianModel::scalar(1.0, o, 0.0, 1.0);
        let dys = vec![DVector::zeros(1); 20_000];
        let run = run_filter(&model, &KbState::zeros(1), &dys, dt);
        let s_o = run.tan_o.sigma_grad[0][(0, 0)];
        assert!(s_o * sign > 0.0, "o = {o}: {s_o}");

        let fd = {
            let h = 1e-4;
            let s = |o: f64| riccati_steady_state(&LinearGaussianModel::scalar(1.0, o, 0.0, 1.0)).unwrap()[(0, 0)];
            (s(o + h) - s(o - h)) / (2.0 * h)
        };
        assert!((s_o - fd).abs() < 1e-3 * fd.abs(), "{s_o} vs {fd}");
    }
}

#[test]
fn steady_variance_increases_with_observation_noise() {
    let mut prev = 0.0;
    for i in 0..20 {
        let tau2 = 0.05 + 0.25 * i as f64;
        let s = riccati_steady_state(&LinearGaussianModel::scalar(1.0, 0.0, 0.0, tau2)).unwrap()[(0, 0)];
        assert!(s > prev);
        prev = s;
    }
}

#[test]
fn readouts_match_direct_computation() {
    let model = coupled_model(&[0.8, 0.4], &[0.3, -0.5]);
    let st = KbState::new(
        DVector::from_vec(vec![0.5, -1.0]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.4]),
    );
    assert_eq!(st.psi_c(&model), &model.c * &st.x_hat);
    assert_eq!(st.psi_j(&model), (&model.h * &st.sigma).trace());
}

#[test]
fn coupled_riccati_residual_is_small() {
    let model = coupled_model(&[0.8, 0.4], &[0.3, -0.5]);
    let s = riccati_steady_state(&model).unwrap();
    let res = ctsa_core::linear::riccati_residual(&model, &s).unwrap();
    assert!(res.norm() < 1e-9);
    assert!(KbState::new(DVector::zeros(2), s).min_eigenvalue() > 0.0);
}
