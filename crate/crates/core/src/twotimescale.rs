//! Two-timescale stochastic gradient descent in continuous time.
//!
//! The slow iterate `α` (the parameters `θ` in the filtering application) and
//! the fast iterate `β` (the sensor locations `o`) each follow an Euler-discretised
//! gradient flow with their own learning rate. Covered here:
//!
//! - additive-noise dynamics ([`generic_tt_step`]);
//! - gradients driven by a controlled ergodic diffusion ([`markovian_tt_run`]);
//! - the surrogate total derivative of the outer objective ([`surrogate_gradient`]);
//! - joint recursive maximum likelihood and sensor placement
//!   ([`joint_rml_osp_step`], [`run_joint`]), with projection, Polyak–Ruppert
//!   averaging and piecewise-constant truth for tracking runs.

use nalgebra::{DMatrix, DVector};

use crate::bundle::{JointBundle, Jump, Readouts};
use crate::error::check_finite;
use crate::noise::NoiseStream;
use crate::record::TrajectoryRecord;
use crate::sde::TimeGrid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMode {
    Decay,
    Constant,
}

/// `γ(t) = γ0 (δ + t)^(-η)` or the constant `γ0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRateSchedule {
    pub gamma0: f64,
    pub delta: f64,
    pub eta: f64,
    pub mode: RateMode,
}

impl LearningRateSchedule {
    pub fn decay(gamma0: f64, delta: f64, eta: f64) -> Result<Self> {
        let s = Self {
            gamma0,
            delta,
            eta,
            mode: RateMode::Decay,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(gamma0: f64) -> Result<Self> {
        let s = Self {
            gamma0,
            delta: 1.0,
            eta: 1.0,
            mode: RateMode::Constant,
        };
        s.validate()?;
        Ok(s)
    }

    /// A frozen coordinate.
    pub fn zero() -> Self {
        Self {
            gamma0: 0.0,
            delta: 1.0,
            eta: 1.0,
            mode: RateMode::Constant,
        }
    }

    /// `γ0 = 0` is allowed and freezes the coordinate.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 >= 0.0) || !self.gamma0.is_finite() {
            return Err(Error::Config(format!("gamma0 must be non-negative, got {}", self.gamma0)));
        }
        if self.mode == RateMode::Decay {
            if !(self.delta > 0.0) {
                return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
            }
            if !(self.eta > 0.0 && self.eta <= 1.0) {
                return Err(Error::Config(format!("eta must lie in (0, 1], got {}", self.eta)));
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.mode {
            RateMode::Constant => self.gamma0,
            RateMode::Decay => self.gamma0 * (self.delta + t).powf(-self.eta),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.gamma0 == 0.0
    }
}

/// Which learning-rate conditions a pair of decay schedules satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateReport {
    /// `η_slow ∈ (1/2, 1]`.
    pub slow_in_range: bool,
    /// `η_fast ∈ (1/2, 1]`.
    pub fast_in_range: bool,
    /// `η_slow > η_fast`.
    pub separated: bool,
    /// Both exponents in `(0, 1]`, enough for the additive-noise algorithm.
    pub additive_ok: bool,
}

impl RateReport {
    /// Conditions for gradients driven by a controlled diffusion.
    pub fn markovian_ok(&self) -> bool {
        self.slow_in_range && self.fast_in_range && self.separated
    }
}

pub fn check_rate_assumptions(slow: &LearningRateSchedule, fast: &LearningRateSchedule) -> Result<RateReport> {
    if slow.mode != RateMode::Decay || fast.mode != RateMode::Decay {
        return Err(Error::Config("rate assumptions apply to decay schedules only".into()));
    }
    let half_open = |eta: f64| eta > 0.5 && eta <= 1.0;
    let unit = |eta: f64| eta > 0.0 && eta <= 1.0;
    Ok(RateReport {
        slow_in_range: half_open(slow.eta),
        fast_in_range: half_open(fast.eta),
        separated: slow.eta > fast.eta,
        additive_ok: unit(slow.eta) && unit(fast.eta),
    })
}

/// Per-coordinate learning rates for both timescales.
#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    pub slow: Vec<LearningRateSchedule>,
    pub fast: Vec<LearningRateSchedule>,
}

impl Rates {
    pub fn uniform(slow: LearningRateSchedule, n_slow: usize, fast: LearningRateSchedule, n_fast: usize) -> Self {
        Self {
            slow: vec![slow; n_slow],
            fast: vec![fast; n_fast],
        }
    }

    fn check(&self, n_slow: usize, n_fast: usize) -> Result<()> {
        if self.slow.len() != n_slow {
            return Err(Error::Dimension {
                what: "slow learning rates",
                expected: n_slow,
                got: self.slow.len(),
            });
        }
        if self.fast.len() != n_fast {
            return Err(Error::Dimension {
                what: "fast learning rates",
                expected: n_fast,
                got: self.fast.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub t: f64,
    pub avg_alpha: Vec<f64>,
    pub avg_beta: Vec<f64>,
}

impl IterateState {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        Self {
            avg_alpha: alpha.clone(),
            avg_beta: beta.clone(),
            alpha,
            beta,
            t: 0.0,
        }
    }
}

/// Admissible values of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Free,
    /// Closed interval; a step that would leave it is rejected.
    Interval(f64, f64),
    /// Coordinate on a circle `[lo, hi)`, wrapped after every step.
    Periodic(f64, f64),
}

impl Bound {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Bound::Free => x.is_finite(),
            Bound::Interval(lo, hi) => x >= lo && x <= hi,
            Bound::Periodic(lo, hi) => x >= lo && x < hi,
        }
    }

    /// Apply `increment` to `x`, or keep `x` if the result would leave the set.
    pub fn apply(&self, x: f64, increment: f64) -> f64 {
        let y = x + increment;
        match *self {
            Bound::Free => y,
            Bound::Interval(lo, hi) => {
                if y >= lo && y <= hi {
                    y
                } else {
                    x
                }
            }
            Bound::Periodic(lo, hi) => {
                let w = lo + (y - lo).rem_euclid(hi - lo);
                // rem_euclid can round up to the period itself
                if w >= hi {
                    lo
                } else {
                    w
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    pub alpha: Vec<Bound>,
    pub beta: Vec<Bound>,
}

impl ProjectionSet {
    pub fn free(n_alpha: usize, n_beta: usize) -> Self {
        Self {
            alpha: vec![Bound::Free; n_alpha],
            beta: vec![Bound::Free; n_beta],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for b in self.alpha.iter().chain(&self.beta) {
            match *b {
                Bound::Interval(lo, hi) | Bound::Periodic(lo, hi) if !(lo < hi) => {
                    return Err(Error::Config(format!("empty projection interval [{lo}, {hi}]")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn contains(&self, state: &IterateState) -> bool {
        self.alpha.iter().zip(&state.alpha).all(|(b, x)| b.contains(*x))
            && self.beta.iter().zip(&state.beta).all(|(b, x)| b.contains(*x))
    }

    fn check(&self, state: &IterateState) -> Result<()> {
        if self.alpha.len() != state.alpha.len() || self.beta.len() != state.beta.len() {
            return Err(Error::Dimension {
                what: "projection set",
                expected: state.alpha.len() + state.beta.len(),
                got: self.alpha.len() + self.beta.len(),
            });
        }
        if !self.contains(state) {
            return Err(Error::Config("initial iterates lie outside the projection set".into()));
        }
        Ok(())
    }
}

/// Apply proposed increments with per-coordinate rejection.
pub fn project(state: &IterateState, sets: &ProjectionSet, d_alpha: &[f64], d_beta: &[f64]) -> IterateState {
    let mut next = state.clone();
    for (i, b) in sets.alpha.iter().enumerate() {
        next.alpha[i] = b.apply(state.alpha[i], d_alpha[i]);
    }
    for (j, b) in sets.beta.iter().enumerate() {
        next.beta[j] = b.apply(state.beta[j], d_beta[j]);
    }
    next
}

/// Advance `t` by `dt` and fold the step into the trapezoid running means.
/// `prev` holds the iterates at the start of the step.
pub fn polyak_ruppert_update(state: &mut IterateState, prev_alpha: &[f64], prev_beta: &[f64], dt: f64) {
    let t0 = state.t;
    let t1 = t0 + dt;
    let fold = |avg: &mut [f64], prev: &[f64], cur: &[f64]| {
        for ((a, p), c) in avg.iter_mut().zip(prev).zip(cur) {
            *a += (0.5 * (p + c) - *a) * (dt / t1);
        }
    };
    fold(&mut state.avg_alpha, prev_alpha, &state.alpha);
    fold(&mut state.avg_beta, prev_beta, &state.beta);
    state.t = t1;
}

/// Additive-noise step:
/// `α -= γ1(t)[f dt + dξ1]`, `β -= γ2(t)[g dt + dξ2]`, then projection and
/// averaging.
#[allow(clippy::too_many_arguments)]
pub fn generic_tt_step(
    state: &IterateState,
    drift_f: &[f64],
    drift_g: &[f64],
    dxi1: &[f64],
    dxi2: &[f64],
    rates: &Rates,
    sets: &ProjectionSet,
    dt: f64,
) -> Result<IterateState> {
    let (n1, n2) = (state.alpha.len(), state.beta.len());
    rates.check(n1, n2)?;
    for (what, v, n) in [
        ("slow drift", drift_f, n1),
        ("fast drift", drift_g, n2),
        ("slow noise", dxi1, n1),
        ("fast noise", dxi2, n2),
    ] {
        if v.len() != n {
            return Err(Error::Dimension {
                what,
                expected: n,
                got: v.len(),
            });
        }
    }
    let t = state.t;
    let da: Vec<f64> = (0..n1)
        .map(|i| -rates.slow[i].eval(t) * (drift_f[i] * dt + dxi1[i]))
        .collect();
    let db: Vec<f64> = (0..n2)
        .map(|j| -rates.fast[j].eval(t) * (drift_g[j] * dt + dxi2[j]))
        .collect();
    check_finite("slow increment", &da)?;
    check_finite("fast increment", &db)?;
    let mut next = project(state, sets, &da, &db);
    polyak_ruppert_update(&mut next, &state.alpha, &state.beta, dt);
    Ok(next)
}

/// Run [`generic_tt_step`] with drifts from closures and independent Gaussian
/// noise `dξ_i = s_i dW_i` (stream ids 0 and 1 of `seed`).
#[allow(clippy::too_many_arguments)]
pub fn run_additive<Fa, Fb>(
    init: IterateState,
    grad_f: Fa,
    grad_g: Fb,
    noise_scale: (f64, f64),
    rates: &Rates,
    sets: &ProjectionSet,
    grid: &TimeGrid,
    seed: u64,
) -> Result<IterateState>
where
    Fa: Fn(&[f64], &[f64]) -> Vec<f64>,
    Fb: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    sets.check(&init)?;
    let (n1, n2) = (init.alpha.len(), init.beta.len());
    let mut c1 = NoiseStream::new(seed, 0, n1).cursor();
    let mut c2 = NoiseStream::new(seed, 1, n2).cursor();
    let (mut w1, mut w2) = (vec![0.0; n1], vec![0.0; n2]);
    let mut state = init;
    for k in 0..grid.n_steps {
        c1.next_into(grid.dt, &mut w1);
        c2.next_into(grid.dt, &mut w2);
        w1.iter_mut().for_each(|v| *v *= noise_scale.0);
        w2.iter_mut().for_each(|v| *v *= noise_scale.1);
        let f = grad_f(&state.alpha, &state.beta);
        let g = grad_g(&state.alpha, &state.beta);
        state = generic_tt_step(&state, &f, &g, &w1, &w2, rates, sets, grid.dt).map_err(|e| e.at_step(k))?;
    }
    Ok(state)
}

/// Gradient estimates driven by a diffusion `X` controlled by the iterates.
pub trait GradientOracle {
    fn aug_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn aug_drift(&self, alpha: &[f64], beta: &[f64], x: &DVector<f64>) -> DVector<f64>;
    fn aug_diffusion(&self, alpha: &[f64], beta: &[f64], x: &DVector<f64>) -> DMatrix<f64>;
    /// `F(α, β, X)`.
    fn slow_drift(&self, alpha: &[f64], beta: &[f64], x: &DVector<f64>) -> Vec<f64>;
    /// `G(α, β, X)`.
    fn fast_drift(&self, alpha: &[f64], beta: &[f64], x: &DVector<f64>) -> Vec<f64>;
    /// Martingale part of the slow update for the driving increment `dW`.
    fn slow_noise(&self, alpha: &[f64], beta: &[f64], x: &DVector<f64>, dw: &DVector<f64>) -> Vec<f64>;
}

/// Euler scheme for the Markovian variant. Returns the final iterates and
/// augmented state.
pub fn markovian_tt_run<O: GradientOracle>(
    oracle: &O,
    init: IterateState,
    x0: DVector<f64>,
    rates: &Rates,
    sets: &ProjectionSet,
    grid: &TimeGrid,
    seed: u64,
) -> Result<(IterateState, DVector<f64>)> {
    sets.check(&init)?;
    if x0.len() != oracle.aug_dim() {
        return Err(Error::Dimension {
            what: "augmented state",
            expected: oracle.aug_dim(),
            got: x0.len(),
        });
    }
    let mut cur = NoiseStream::new(seed, 0, oracle.noise_dim()).cursor();
    let mut dw = DVector::zeros(oracle.noise_dim());
    let (mut state, mut x) = (init, x0);
    let zeros_b = vec![0.0; state.beta.len()];
    for k in 0..grid.n_steps {
        cur.next_into(grid.dt, dw.as_mut_slice());
        let (a, b) = (&state.alpha, &state.beta);
        let f = oracle.slow_drift(a, b, &x);
        let g = oracle.fast_drift(a, b, &x);
        let xi = oracle.slow_noise(a, b, &x, &dw);
        let x_next = &x + oracle.aug_drift(a, b, &x) * grid.dt + oracle.aug_diffusion(a, b, &x) * &dw;
        check_finite("augmented state", x_next.as_slice()).map_err(|e| e.at_step(k))?;
        state = generic_tt_step(&state, &f, &g, &xi, &zeros_b, rates, sets, grid.dt).map_err(|e| e.at_step(k))?;
        x = x_next;
    }
    Ok((state, x))
}

/// `∇_α f - ∇²_{αβ} g [∇²_{ββ} g]⁻¹ ∇_β f`, with `∇²_{αβ} g` of shape `d_α × d_β`.
pub fn surrogate_gradient(
    grad_alpha_f: &DVector<f64>,
    grad_beta_f: &DVector<f64>,
    hess_ab: &DMatrix<f64>,
    hess_bb: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let (da, db) = (grad_alpha_f.len(), grad_beta_f.len());
    if hess_ab.nrows() != da || hess_ab.ncols() != db {
        return Err(Error::Dimension {
            what: "mixed Hessian",
            expected: da * db,
            got: hess_ab.nrows() * hess_ab.ncols(),
        });
    }
    if hess_bb.nrows() != db || hess_bb.ncols() != db {
        return Err(Error::Dimension {
            what: "inner Hessian",
            expected: db * db,
            got: hess_bb.nrows() * hess_bb.ncols(),
        });
    }
    let sv = hess_bb.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 0.0) || smax / smin > 1e12 {
        return Err(Error::Singular(format!(
            "inner Hessian condition number {:e}",
            smax / smin
        )));
    }
    let solved = hess_bb
        .clone()
        .lu()
        .solve(grad_beta_f)
        .ok_or_else(|| Error::Singular("inner Hessian".into()))?;
    Ok(grad_alpha_f - hess_ab * solved)
}

// ---------------------------------------------------------------------------
// Joint online parameter estimation and sensor placement

/// What happened during one joint step, for recording.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub readouts: Readouts,
    pub dy: DVector<f64>,
    pub loglik_increment: f64,
}

fn check_joint<B: JointBundle + ?Sized>(bundle: &B, state: &IterateState, rates: &Rates, sets: &ProjectionSet) -> Result<()> {
    if state.alpha.len() != bundle.n_theta() || state.beta.len() != bundle.n_o() {
        return Err(Error::Dimension {
            what: "iterates",
            expected: bundle.n_theta() + bundle.n_o(),
            got: state.alpha.len() + state.beta.len(),
        });
    }
    rates.check(bundle.n_theta(), bundle.n_o())?;
    sets.check(state)
}

/// One step: signal and `dy`, filter and tangents, then
/// `dθ = γ1 [ψ_C^θ]ᵀ R⁻¹ (dy - ψ_C dt)` and `do = -γ2 ψ_j^o dt`, projection and
/// averaging. All updates use beginning-of-step values.
pub fn joint_rml_osp_step<B: JointBundle + ?Sized>(
    bundle: &mut B,
    state: &mut IterateState,
    rates: &Rates,
    sets: &ProjectionSet,
    step: u64,
    dt: f64,
) -> Result<StepOutput> {
    let dy = bundle.synthesize(&state.beta, step, dt)?;
    let rd = bundle.filter_step(&state.alpha, &state.beta, &dy, dt)?;
    let t = state.t;
    let g_theta = rd.likelihood_gradient_increment(&dy, dt);
    let d_theta: Vec<f64> = (0..state.alpha.len())
        .map(|i| rates.slow[i].eval(t) * g_theta[i])
        .collect();
    let d_o: Vec<f64> = (0..state.beta.len())
        .map(|j| -rates.fast[j].eval(t) * rd.psi_j_o[j] * dt)
        .collect();
    check_finite("parameter increment", &d_theta).map_err(|e| e.at_step(step))?;
    check_finite("sensor increment", &d_o).map_err(|e| e.at_step(step))?;
    let mut next = project(state, sets, &d_theta, &d_o);
    polyak_ruppert_update(&mut next, &state.alpha, &state.beta, dt);
    *state = next;
    let ll = rd.loglik_increment(&dy, dt);
    Ok(StepOutput {
        readouts: rd,
        dy,
        loglik_increment: ll,
    })
}

/// Recursive maximum likelihood alone, with the sensors held fixed.
pub fn rml_step<B: JointBundle + ?Sized>(
    bundle: &mut B,
    theta: &mut [f64],
    o: &[f64],
    slow: &[LearningRateSchedule],
    bounds: &[Bound],
    t: f64,
    step: u64,
    dt: f64,
) -> Result<()> {
    let dy = bundle.synthesize(o, step, dt)?;
    let rd = bundle.filter_step(theta, o, &dy, dt)?;
    let innov = &dy - &rd.psi_c * dt;
    let dir = rd.psi_c_theta.transpose() * (&rd.r_inv * innov);
    for i in 0..theta.len() {
        theta[i] = bounds[i].apply(theta[i], slow[i].eval(t) * dir[i]);
    }
    Ok(())
}

/// Sensor-placement descent alone, with the parameters held fixed.
pub fn sensor_descent_step<B: JointBundle + ?Sized>(
    bundle: &mut B,
    theta: &[f64],
    o: &mut [f64],
    fast: &[LearningRateSchedule],
    bounds: &[Bound],
    t: f64,
    step: u64,
    dt: f64,
) -> Result<()> {
    let dy = bundle.synthesize(o, step, dt)?;
    let rd = bundle.filter_step(theta, o, &dy, dt)?;
    for j in 0..o.len() {
        o[j] = bounds[j].apply(o[j], -fast[j].eval(t) * rd.psi_j_o[j] * dt);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointRunConfig {
    pub rates: Rates,
    pub sets: ProjectionSet,
    pub grid: TimeGrid,
    pub record_every: u64,
    /// `(step, jump)` pairs applied before the step with that index.
    pub jumps: Vec<(u64, Jump)>,
    pub theta_names: Vec<String>,
    pub o_names: Vec<String>,
}

impl JointRunConfig {
    pub fn new(rates: Rates, sets: ProjectionSet, grid: TimeGrid, record_every: u64) -> Self {
        let theta_names = (0..rates.slow.len()).map(|i| format!("theta{i}")).collect();
        let o_names = (0..rates.fast.len()).map(|j| format!("o{j}")).collect();
        Self {
            rates,
            sets,
            grid,
            record_every,
            jumps: Vec::new(),
            theta_names,
            o_names,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointRun {
    pub record: TrajectoryRecord,
    pub final_state: IterateState,
}

/// Column layout of [`run_joint`] records, excluding `t`.
pub fn joint_columns(cfg: &JointRunConfig, summary: &[String]) -> Vec<String> {
    let mut cols = Vec::new();
    cols.extend(cfg.theta_names.iter().cloned());
    cols.extend(cfg.o_names.iter().cloned());
    cols.extend(cfg.theta_names.iter().map(|n| format!("avg_{n}")));
    cols.extend(cfg.o_names.iter().map(|n| format!("avg_{n}")));
    cols.extend(summary.iter().cloned());
    cols.push("psi_j".into());
    cols.push("objective_window".into());
    cols.push("objective_running".into());
    cols.push("loglik_running".into());
    cols
}

/// Full joint run with decimated recording.
///
/// `objective_window` is the time average of `ψ_j` since the previous record;
/// `objective_running` and `loglik_running` average from time zero.
pub fn run_joint<B: JointBundle + ?Sized>(bundle: &mut B, init: IterateState, cfg: &JointRunConfig) -> Result<JointRun> {
    check_joint(bundle, &init, &cfg.rates, &cfg.sets)?;
    cfg.sets.validate()?;
    if cfg.record_every == 0 {
        return Err(Error::Config("record_every must be at least 1".into()));
    }
    if cfg.theta_names.len() != init.alpha.len() || cfg.o_names.len() != init.beta.len() {
        return Err(Error::Config("column names do not match the iterates".into()));
    }
    let summary_names = bundle.summary_names();
    let mut record = TrajectoryRecord::new(&joint_columns(cfg, &summary_names));
    let grid = cfg.grid;
    let dt = grid.dt;
    let mut state = init;
    state.t = grid.t0;

    let (mut obj_int, mut obj_window, mut ll_int) = (0.0, 0.0, 0.0);
    let mut window_start = 0u64;

    let push = |record: &mut TrajectoryRecord,
                    state: &IterateState,
                    bundle: &B,
                    k: u64,
                    psi_j: f64,
                    window: f64,
                    obj_int: f64,
                    ll_int: f64|
     -> Result<()> {
        let elapsed = k as f64 * dt;
        let mut row = Vec::with_capacity(record.columns().len() - 1);
        row.extend(&state.alpha);
        row.extend(&state.beta);
        row.extend(&state.avg_alpha);
        row.extend(&state.avg_beta);
        row.extend(bundle.summary());
        row.push(psi_j);
        row.push(window);
        row.push(if k > 0 { obj_int / elapsed } else { f64::NAN });
        row.push(if k > 0 { ll_int / elapsed } else { f64::NAN });
        record.push(grid.time(k), &row)
    };
    push(&mut record, &state, bundle, 0, f64::NAN, f64::NAN, 0.0, 0.0)?;

    let mut jumps = cfg.jumps.clone();
    jumps.sort_by_key(|(k, _)| *k);
    let mut next_jump = 0;
    for k in 0..grid.n_steps {
        while next_jump < jumps.len() && jumps[next_jump].0 <= k {
            bundle.apply_jump(&jumps[next_jump].1)?;
            next_jump += 1;
        }
        let out = joint_rml_osp_step(bundle, &mut state, &cfg.rates, &cfg.sets, k, dt).map_err(|e| Error::AtStep {
            step: k,
            t: grid.time(k),
            source: Box::new(e),
        })?;
        state.t = grid.time(k + 1);
        obj_int += out.readouts.psi_j * dt;
        obj_window += out.readouts.psi_j * dt;
        ll_int += out.loglik_increment;
        let done = k + 1;
        if done % cfg.record_every == 0 || done == grid.n_steps {
            let window = obj_window / ((done - window_start) as f64 * dt);
            push(&mut record, &state, bundle, done, out.readouts.psi_j, window, obj_int, ll_int)?;
            obj_window = 0.0;
            window_start = done;
        }
    }
    Ok(JointRun {
        record,
        final_state: state,
    })
}
