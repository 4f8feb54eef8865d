use ctsa_core::bundle::{scalar_linear_bundle, BenesBundle, JointBundle};
use ctsa_core::benes::BenesModel;
use ctsa_core::diagnostics::mean_std;
use ctsa_core::twotimescale::{
    generic_tt_step, joint_rml_osp_step, markovian_tt_run, polyak_ruppert_update, project, rml_step, run_additive,
    sensor_descent_step, surrogate_gradient, Bound, GradientOracle, IterateState, LearningRateSchedule,
    ProjectionSet, Rates,
};
use ctsa_core::{Error, NoiseStream, TimeGrid};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn decay(gamma0: f64, eta: f64) -> LearningRateSchedule {
    LearningRateSchedule::decay(gamma0, 1.0, eta).unwrap()
}

#[test]
fn deterministic_flow_reaches_origin() {
    let rates = Rates::uniform(decay(1.0, 0.9), 2, decay(1.0, 0.6), 2);
    let grid = TimeGrid::from_horizon(0.01, 1e3).unwrap();
    let out = run_additive(
        IterateState::new(vec![1.0, -0.5], vec![2.0, 0.3]),
        |a, _| a.to_vec(),
        |a, b| b.iter().zip(a).map(|(b, a)| b - a).collect(),
        (0.0, 0.0),
        &rates,
        &ProjectionSet::free(2, 2),
        &grid,
        0,
    )
    .unwrap();
    for v in out.alpha.iter().chain(&out.beta) {
        assert!(v.abs() < 1e-3, "{out:?}");
    }
}

#[test]
fn frozen_slow_timescale_runs_single_descent() {
    let rates = Rates {
        slow: vec![LearningRateSchedule::zero()],
        fast: vec![decay(1.0, 0.6)],
    };
    let grid = TimeGrid::from_horizon(0.01, 200.0).unwrap();
    let out = run_additive(
        IterateState::new(vec![0.7], vec![-1.0]),
        |a, _| a.to_vec(),
        |a, b| vec![b[0] - a[0]],
        (0.1, 0.0),
        &rates,
        &ProjectionSet::free(1, 1),
        &grid,
        3,
    )
    .unwrap();
    assert_eq!(out.alpha, vec![0.7]);
    assert!((out.beta[0] - 0.7).abs() < 1e-3);
}

/// `∇_α f = α - 1`, `∇_β g = β - α`: the stationary point is `(1, 1)`.
#[test]
fn noisy_quadratic_tail_averages_cover_stationary_point() {
    let rates = Rates::uniform(decay(1.0, 0.9), 1, decay(1.0, 0.6), 1);
    let sets = ProjectionSet::free(1, 1);
    let first = TimeGrid::new(0.0, 0.01, 50_000).unwrap();
    let second = TimeGrid::new(500.0, 0.01, 50_000).unwrap();
    let f = |a: &[f64], _: &[f64]| vec![a[0] - 1.0];
    let g = |a: &[f64], b: &[f64]| vec![b[0] - a[0]];
    let (mut alphas, mut betas) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let mid = run_additive(IterateState::new(vec![1.5], vec![0.0]), f, g, (0.2, 0.2), &rates, &sets, &first, seed)
            .unwrap();
        let mut tail = IterateState::new(mid.alpha.clone(), mid.beta.clone());
        tail.t = 500.0;
        let end = run_additive(tail, f, g, (0.2, 0.2), &rates, &sets, &second, seed + 100).unwrap();
        alphas.push(end.avg_alpha[0]);
        betas.push(end.avg_beta[0]);
    }
    for (what, xs) in [("alpha", &alphas), ("beta", &betas)] {
        let (m, s) = mean_std(xs);
        let band = 3.0 * s / (xs.len() as f64).sqrt();
        assert!((m - 1.0).abs() <= band, "{what}: {m} ± {band}");
    }
}

/// `dX = -(X - β) dt + dW`, `G = X - α`, `F = X + α - 2`: stationary point `(1, 1)`.
struct OuOracle;

impl GradientOracle for OuOracle {
    fn aug_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn aug_drift(&self, _: &[f64], beta: &[f64], x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, beta[0] - x[0])
    }
    fn aug_diffusion(&self, _: &[f64], _: &[f64], _: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0)
    }
    fn slow_drift(&self, alpha: &[f64], _: &[f64], x: &DVector<f64>) -> Vec<f64> {
        vec![x[0] + alpha[0] - 2.0]
    }
    fn fast_drift(&self, alpha: &[f64], _: &[f64], x: &DVector<f64>) -> Vec<f64> {
        vec![x[0] - alpha[0]]
    }
    fn slow_noise(&self, _: &[f64], _: &[f64], _: &DVector<f64>, _: &DVector<f64>) -> Vec<f64> {
        vec![0.0]
    }
}

#[test]
fn markovian_iterates_approach_stationary_point() {
    let rates = Rates::uniform(decay(1.0, 0.9), 1, decay(1.0, 0.6), 1);
    let grid = TimeGrid::from_horizon(0.01, 2e3).unwrap();
    let mut finals = Vec::new();
    for seed in 0..5 {
        let (st, _) = markovian_tt_run(
            &OuOracle,
            IterateState::new(vec![-1.0], vec![3.0]),
            DVector::zeros(1),
            &rates,
            &ProjectionSet::free(1, 1),
            &grid,
            seed,
        )
        .unwrap();
        finals.push((st.alpha[0], st.beta[0]));
    }
    let ma = finals.iter().map(|p| p.0).sum::<f64>() / 5.0;
    let mb = finals.iter().map(|p| p.1).sum::<f64>() / 5.0;
    assert!((ma - 1.0).abs() < 0.1 && (mb - 1.0).abs() < 0.1, "{finals:?}");
}

#[test]
fn surrogate_matches_quadratic_total_derivative() {
    let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 0.3, 0.7, -1.1]);
    let alpha = DVector::from_vec(vec![0.4, -1.3]);
    let beta = &m * &alpha;
    // g = ½|β - Mα|², f = ½|β|²
    let got = surrogate_gradient(&DVector::zeros(2), &beta, &(-m.transpose()), &DMatrix::identity(3, 3)).unwrap();
    let exact = m.transpose() * &m * &alpha;
    assert!((got - exact).amax() < 1e-12);
}

/// `g = ½ βᵀSβ + ¼ Σ β⁴ - βᵀMα`, `f = Σ sin α + ½|β|² + 0.3 αᵀNβ`.
struct Nested {
    s: DMatrix<f64>,
    m: DMatrix<f64>,
    n: DMatrix<f64>,
}

impl Nested {
    fn inner_argmin(&self, alpha: &DVector<f64>) -> DVector<f64> {
        let mut b = DVector::zeros(self.s.nrows());
        let rhs = &self.m * alpha;
        for _ in 0..100 {
            let grad = &self.s * &b + b.map(|v| v * v * v) - &rhs;
            let hess = &self.s + DMatrix::from_diagonal(&b.map(|v| 3.0 * v * v));
            let step = hess.lu().solve(&grad).unwrap();
            b -= &step;
            if step.amax() < 1e-15 {
                break;
            }
        }
        b
    }

    fn outer(&self, alpha: &DVector<f64>, beta: &DVector<f64>) -> f64 {
        alpha.map(f64::sin).sum() + 0.5 * beta.norm_squared() + 0.3 * alpha.dot(&(&self.n * beta))
    }
}

#[test]
fn surrogate_matches_nested_finite_differences() {
    let p = Nested {
        s: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.5]),
        m: DMatrix::from_row_slice(2, 2, &[1.0, -0.4, 0.3, 0.8]),
        n: DMatrix::from_row_slice(2, 2, &[0.2, 1.0, -0.7, 0.1]),
    };
    let alpha = DVector::from_vec(vec![0.6, -0.9]);
    let beta = p.inner_argmin(&alpha);
    let grad_a = alpha.map(f64::cos) + 0.3 * &p.n * &beta;
    let grad_b = &beta + 0.3 * p.n.transpose() * &alpha;
    let hess_ab = -p.m.transpose();
    let hess_bb = &p.s + DMatrix::from_diagonal(&beta.map(|v| 3.0 * v * v));
    let got = surrogate_gradient(&grad_a, &grad_b, &hess_ab, &hess_bb).unwrap();

    let h = 1e-5;
    for i in 0..2 {
        let mut up = alpha.clone();
        let mut dn = alpha.clone();
        up[i] += h;
        dn[i] -= h;
        let fd = (p.outer(&up, &p.inner_argmin(&up)) - p.outer(&dn, &p.inner_argmin(&dn))) / (2.0 * h);
        assert!((got[i] - fd).abs() < 1e-4 * fd.abs().max(1.0), "{} vs {fd}", got[i]);
    }
}

#[test]
fn surrogate_rejects_singular_inner_hessian() {
    let r = surrogate_gradient(
        &DVector::zeros(1),
        &DVector::from_element(2, 1.0),
        &DMatrix::zeros(1, 2),
        &DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
    );
    assert!(matches!(r, Err(Error::Singular(_))));
}

fn benes() -> BenesModel {
    BenesModel::new(3.0, 2.0, 0.7, 2.0, 4.0, 4.0).unwrap()
}

#[test]
fn frozen_parameters_reproduce_sensor_descent() {
    let dt = 0.01;
    let fast = decay(0.5, 0.6);
    let rates = Rates {
        slow: vec![LearningRateSchedule::zero(); 3],
        fast: vec![fast],
    };
    let sets = ProjectionSet {
        alpha: vec![Bound::Free; 3],
        beta: vec![Bound::Interval(-10.0, 20.0)],
    };
    let mut joint = BenesBundle::new(benes(), 9);
    let mut single = BenesBundle::new(benes(), 9);
    let mut state = IterateState::new(vec![2.0, 2.0, 0.7], vec![6.0]);
    let mut o = vec![6.0];
    for k in 0..20_000u64 {
        let t = k as f64 * dt;
        joint_rml_osp_step(&mut joint, &mut state, &rates, &sets, k, dt).unwrap();
        state.t = (k + 1) as f64 * dt;
        sensor_descent_step(&mut single, &[2.0, 2.0, 0.7], &mut o, &[fast], &sets.beta, t, k, dt).unwrap();
        assert_eq!(state.beta, o, "step {k}");
    }
    assert_eq!(state.alpha, vec![2.0, 2.0, 0.7]);
}

#[test]
fn frozen_sensors_reproduce_rml() {
    let dt = 0.01;
    let slow = vec![decay(0.05, 0.75), LearningRateSchedule::zero(), LearningRateSchedule::zero()];
    let rates = Rates {
        slow: slow.clone(),
        fast: vec![LearningRateSchedule::zero()],
    };
    let bounds = vec![Bound::Interval(-10.0, 10.0), Bound::Free, Bound::Free];
    let sets = ProjectionSet {
        alpha: bounds.clone(),
        beta: vec![Bound::Free],
    };
    let mut joint = BenesBundle::new(benes(), 4);
    let mut single = BenesBundle::new(benes(), 4);
    let mut state = IterateState::new(vec![1.0, 2.0, 0.7], vec![4.5]);
    let mut theta = vec![1.0, 2.0, 0.7];
    for k in 0..20_000u64 {
        let t = k as f64 * dt;
        joint_rml_osp_step(&mut joint, &mut state, &rates, &sets, k, dt).unwrap();
        state.t = (k + 1) as f64 * dt;
        rml_step(&mut single, &mut theta, &[4.5], &slow, &bounds, t, k, dt).unwrap();
        assert_eq!(state.alpha, theta, "step {k}");
    }
    assert!(theta[0] != 1.0);
}

#[test]
fn zero_rates_at_truth_keep_iterates_fixed() {
    let rates = Rates::uniform(LearningRateSchedule::zero(), 3, LearningRateSchedule::zero(), 1);
    let sets = ProjectionSet::free(3, 1);
    let mut bundle = BenesBundle::new(benes(), 1);
    let mut state = IterateState::new(vec![3.0, 2.0, 0.7], vec![4.0]);
    for k in 0..5000 {
        joint_rml_osp_step(&mut bundle, &mut state, &rates, &sets, k, 0.01).unwrap();
    }
    assert_eq!(state.alpha, vec![3.0, 2.0, 0.7]);
    assert_eq!(state.beta, vec![4.0]);
    assert_eq!(state.avg_alpha, vec![3.0, 2.0, 0.7]);
}

#[test]
fn scalar_bundle_steps_stay_inside_box() {
    let rates = Rates::uniform(decay(2.0, 0.75), 1, decay(2.0, 0.6), 1);
    let sets = ProjectionSet {
        alpha: vec![Bound::Interval(0.1, 5.0)],
        beta: vec![Bound::Interval(-3.0, 3.0)],
    };
    let mut bundle = scalar_linear_bundle(1.0, 0.0, 1.0, 0.0, 1.0, 5).unwrap();
    let mut state = IterateState::new(vec![0.2], vec![2.9]);
    for k in 0..50_000 {
        joint_rml_osp_step(&mut bundle, &mut state, &rates, &sets, k, 0.01).unwrap();
        assert!(sets.contains(&state));
    }
}

#[test]
fn projection_fuzz_one_million_steps() {
    let sets = ProjectionSet {
        alpha: vec![Bound::Interval(-1.0, 1.0), Bound::Interval(0.1, 0.2)],
        beta: vec![Bound::Periodic(0.0, 1.0), Bound::Interval(-3.0, 3.0)],
    };
    let noise = NoiseStream::new(77, 0, 4);
    let mut cursor = noise.cursor();
    let mut inc = [0.0; 4];
    let mut state = IterateState::new(vec![0.0, 0.15], vec![0.5, 0.0]);
    for _ in 0..1_000_000 {
        cursor.next_into(1.0, &mut inc);
        state = project(&state, &sets, &inc[..2], &inc[2..]);
        assert!(sets.contains(&state), "{state:?}");
    }
}

proptest! {
    #[test]
    fn projection_never_leaves_box(
        lo in -5.0f64..0.0,
        width in 0.01f64..5.0,
        start in 0.0f64..1.0,
        scale in 0.001f64..10.0,
        seed in 0u64..1000,
    ) {
        let hi = lo + width;
        let sets = ProjectionSet {
            alpha: vec![Bound::Interval(lo, hi)],
            beta: vec![Bound::Periodic(lo, hi)],
        };
        let x0 = lo + start * width * 0.999;
        let mut state = IterateState::new(vec![x0], vec![x0]);
        let mut cursor = NoiseStream::new(seed, 0, 2).cursor();
        let mut inc = [0.0; 2];
        for _ in 0..2000 {
            cursor.next_into(scale, &mut inc);
            state = project(&state, &sets, &inc[..1], &inc[1..]);
            prop_assert!(sets.contains(&state));
        }
    }

    #[test]
    fn decay_schedule_is_non_increasing(g0 in 0.0f64..10.0, delta in 0.01f64..10.0, eta in 0.01f64..1.0, s in 0.0f64..1e6, ds in 0.0f64..1e6) {
        let sch = LearningRateSchedule::decay(g0, delta, eta).unwrap();
        prop_assert!(sch.eval(s + ds) <= sch.eval(s));
    }
}

#[test]
fn averages_depend_only_on_the_path() {
    // Doubling the rate and halving the drift and noise gives the same increments exactly.
    let sets = ProjectionSet::free(1, 1);
    let r1 = Rates::uniform(decay(0.5, 0.9), 1, decay(0.5, 0.6), 1);
    let r2 = Rates::uniform(decay(1.0, 0.9), 1, decay(1.0, 0.6), 1);
    let noise = NoiseStream::new(12, 0, 2);
    let mut a = IterateState::new(vec![1.0], vec![-1.0]);
    let mut b = a.clone();
    for k in 0..10_000 {
        let w = noise.increments(k, 0.01);
        let fa = vec![a.alpha[0] * 0.3];
        let ga = vec![a.beta[0] - a.alpha[0]];
        let half = |v: &[f64]| v.iter().map(|x| 0.5 * x).collect::<Vec<_>>();
        a = generic_tt_step(&a, &fa, &ga, &w[..1], &w[1..], &r1, &sets, 0.01).unwrap();
        let fb = vec![b.alpha[0] * 0.3];
        let gb = vec![b.beta[0] - b.alpha[0]];
        b = generic_tt_step(&b, &half(&fb), &half(&gb), &half(&w[..1]), &half(&w[1..]), &r2, &sets, 0.01).unwrap();
    }
    assert_eq!(a, b);
}

#[test]
fn running_average_of_identity_path() {
    let dt = 0.01;
    let mut st = IterateState::new(vec![0.0], vec![]);
    for k in 0..1000 {
        let prev = st.alpha.clone();
        st.alpha[0] = (k + 1) as f64 * dt;
        polyak_ruppert_update(&mut st, &prev, &[], dt);
    }
    assert!((st.avg_alpha[0] - 5.0).abs() < 1e-10);
    assert!((st.t - 10.0).abs() < 1e-9);
}

#[test]
fn bundles_report_dimensions() {
    let b = BenesBundle::new(benes(), 0);
    assert_eq!((b.n_theta(), b.n_o(), b.n_y()), (3, 1, 1));
    let s = scalar_linear_bundle(1.0, 0.0, 1.0, 0.0, 1.0, 0).unwrap();
    assert_eq!((s.n_theta(), s.n_o(), s.n_y()), (1, 1, 1));
}
