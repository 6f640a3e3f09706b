//! Gaussian AMP with Onsager corrections for the rectangular spiked model.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensembles::{mse_of_rank_one, overlap_with, SpikedInstance};

/// Early-stop tolerance on the change of the joint overlap.
pub const EARLY_STOP_TOL: f64 = 1e-6;
pub const DEFAULT_INIT_CORR: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmpError {
    #[error("invalid AMP configuration: {0}")]
    Config(String),
    #[error("AMP diverged at iteration {iteration} ({what} is not finite)")]
    Divergence { iteration: usize, what: &'static str, history: Vec<IterationRecord> },
}

/// A time-indexed scalar map x ↦ f(t, x).
#[derive(Clone)]
pub struct ScalarFn(Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>);

impl ScalarFn {
    pub fn new(f: impl Fn(usize, f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarFn(Arc::new(f))
    }

    pub fn eval(&self, t: usize, x: f64) -> f64 {
        (self.0)(t, x)
    }
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ScalarFn")
    }
}

/// User-supplied separable denoisers with exact derivatives.
/// `v(t, ·)` maps g^t to v^t; `u(t, ·)` maps f^{t−1} to u^t (t ≥ 2).
#[derive(Debug, Clone)]
pub struct CustomDenoiser {
    pub v: ScalarFn,
    pub dv: ScalarFn,
    pub u: ScalarFn,
    pub du: ScalarFn,
}

#[derive(Debug, Clone)]
pub enum DenoiserSpec {
    /// Posterior mean under the assumed Gaussian model: v_t(g) = c_t·g, u_{t+1}(f) = d_{t+1}·f.
    LinearAssumedModel,
    /// Rescales the input to norm √dim. Not separable, so the state evolution does not cover it.
    SphereProjection,
    Custom(CustomDenoiser),
}

/// Serializable subset of [`DenoiserSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserChoice {
    LinearAssumedModel,
    SphereProjection,
}

impl From<DenoiserChoice> for DenoiserSpec {
    fn from(c: DenoiserChoice) -> Self {
        match c {
            DenoiserChoice::LinearAssumedModel => DenoiserSpec::LinearAssumedModel,
            DenoiserChoice::SphereProjection => DenoiserSpec::SphereProjection,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AmpConfig {
    pub lambda_assumed: f64,
    pub t_max: usize,
    /// ε = E[U*U₁], the correlation of the initialization with u*.
    pub init_corr: f64,
    pub denoiser: DenoiserSpec,
}

impl AmpConfig {
    pub fn new(lambda_assumed: f64, t_max: usize) -> Self {
        AmpConfig { lambda_assumed, t_max, init_corr: DEFAULT_INIT_CORR, denoiser: DenoiserSpec::LinearAssumedModel }
    }

    pub fn validate(&self) -> Result<(), AmpError> {
        if !(self.lambda_assumed > 0.0 && self.lambda_assumed.is_finite()) {
            return Err(AmpError::Config(format!("lambda_assumed = {} must be positive", self.lambda_assumed)));
        }
        if self.t_max == 0 {
            return Err(AmpError::Config("t_max must be at least 1".into()));
        }
        if !(self.init_corr > 0.0 && self.init_corr <= 1.0) {
            return Err(AmpError::Config(format!("init_corr = {} must lie in (0, 1]", self.init_corr)));
        }
        Ok(())
    }
}

/// Coefficients of the linear assumed-model denoisers.
/// `c[t−1]` multiplies g^t and `d[t−1]` multiplies f^t to give u^{t+1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSchedule {
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

/// Scalar state evolution the statistician runs under the assumed model
/// (Gaussian noise, SNR λ, Gaussian prior): G = ν̂V* + √τ̂·N with ν̂ = √(λα)·E[U*U],
/// τ̂ = α·E[U²], and symmetrically on the u side with μ̂ = (√(λα)/α)·E[V*V], σ̂² = E[V²].
pub fn linear_schedule(lambda: f64, alpha: f64, init_corr: f64, t_max: usize) -> LinearSchedule {
    let theta = (lambda * alpha).sqrt();
    let (mut mu_, mut qu) = (init_corr, 1.0);
    let mut c = Vec::with_capacity(t_max);
    let mut d = Vec::with_capacity(t_max);
    for _ in 0..t_max {
        let nu = theta * mu_;
        let tau = alpha * qu;
        let ct = ratio(nu, nu * nu + tau);
        let mv = ct * nu;
        let qv = ct * ct * (nu * nu + tau);
        let mu = theta / alpha * mv;
        let dt = ratio(mu, mu * mu + qv);
        mu_ = dt * mu;
        qu = dt * dt * (mu * mu + qv);
        c.push(ct);
        d.push(dt);
    }
    LinearSchedule { c, d }
}

/// Denoisers resolved for one run.
#[derive(Debug, Clone)]
pub(crate) enum Resolved {
    Linear(LinearSchedule),
    Sphere,
    Custom(CustomDenoiser),
}

impl Resolved {
    pub(crate) fn new(cfg: &AmpConfig, alpha: f64) -> Self {
        match &cfg.denoiser {
            DenoiserSpec::LinearAssumedModel => {
                Resolved::Linear(linear_schedule(cfg.lambda_assumed, alpha, cfg.init_corr, cfg.t_max))
            }
            DenoiserSpec::SphereProjection => Resolved::Sphere,
            DenoiserSpec::Custom(c) => Resolved::Custom(c.clone()),
        }
    }

    /// Applies v_t to g, returning (v^t, ⟨v_t′(g)⟩).
    fn apply_v(&self, t: usize, g: &DVector<f64>) -> (DVector<f64>, f64) {
        match self {
            Resolved::Linear(s) => (g * s.c[t - 1], s.c[t - 1]),
            Resolved::Sphere => sphere(g),
            Resolved::Custom(c) => separable(&c.v, &c.dv, t, g),
        }
    }

    /// Applies u_t to f^{t−1} (t ≥ 2), returning (u^t, ⟨u_t′(f)⟩).
    fn apply_u(&self, t: usize, f: &DVector<f64>) -> (DVector<f64>, f64) {
        match self {
            Resolved::Linear(s) => (f * s.d[t - 2], s.d[t - 2]),
            Resolved::Sphere => sphere(f),
            Resolved::Custom(c) => separable(&c.u, &c.du, t, f),
        }
    }
}

fn separable(f: &ScalarFn, df: &ScalarFn, t: usize, x: &DVector<f64>) -> (DVector<f64>, f64) {
    let out = x.map(|v| f.eval(t, v));
    let mean = x.iter().map(|&v| df.eval(t, v)).sum::<f64>() / x.len() as f64;
    (out, mean)
}

/// x·√d/‖x‖ with mean Jacobian diagonal (√d/‖x‖)(1 − 1/d).
fn sphere(x: &DVector<f64>) -> (DVector<f64>, f64) {
    let d = x.len() as f64;
    let norm = x.norm();
    if norm == 0.0 {
        return (x.clone(), 0.0);
    }
    let s = d.sqrt() / norm;
    (x * s, s * (1.0 - 1.0 / d))
}

/// Per-iteration empirical metrics of (u^t, v^t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub overlap_u: f64,
    pub overlap_v: f64,
    pub overlap: f64,
    pub mse: f64,
}

/// AMP iterates after `t` sweeps. `u_t` holds u^{t+1}, the input of the next sweep.
#[derive(Debug, Clone)]
pub struct AmpState {
    pub t: usize,
    pub u_t: DVector<f64>,
    pub v_t: DVector<f64>,
    pub g_t: DVector<f64>,
    pub f_t: DVector<f64>,
    pub alpha_t: f64,
    pub beta_t: f64,
    /// ⟨u′_{t+1}(f^t)⟩, the β of the next sweep.
    pub next_beta: f64,
    pub history: Vec<IterationRecord>,
}

impl AmpState {
    /// State before the first sweep: u¹ given, v⁰ = 0, β₁ = 0.
    pub fn initial(u1: DVector<f64>, m: usize) -> Self {
        let n = u1.len();
        AmpState {
            t: 0,
            u_t: u1,
            v_t: DVector::zeros(m),
            g_t: DVector::zeros(m),
            f_t: DVector::zeros(n),
            alpha_t: 0.0,
            beta_t: 0.0,
            next_beta: 0.0,
            history: Vec::new(),
        }
    }
}

fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        (a.dot(b).abs() / (na * nb)).min(1.0)
    }
}

/// u¹ = εu* + √(1−ε²)w with w uniform on the sphere orthogonal to u*, scaled to ‖u¹‖² = n.
pub fn init_u1<R: Rng + ?Sized>(inst: &SpikedInstance, eps: f64, rng: &mut R) -> Result<DVector<f64>, AmpError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(AmpError::Config(format!("init_corr = {eps} must lie in (0, 1]")));
    }
    let n = inst.n();
    let us = &inst.u_star;
    let mut w = DVector::from_fn(n, |_, _| Distribution::<f64>::sample(&StandardNormal, rng));
    let proj = w.dot(us) / us.norm_squared();
    w.axpy(-proj, us, 1.0);
    let wn = w.norm();
    let mut u = us * eps;
    if wn > 0.0 && eps < 1.0 {
        u.axpy((1.0 - eps * eps).sqrt() * (us.norm() / wn), &w, 1.0);
    }
    let scale = (n as f64).sqrt() / u.norm();
    Ok(u * scale)
}

fn ensure_finite(v: &DVector<f64>, what: &'static str, t: usize, state: &AmpState) -> Result<(), AmpError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(AmpError::Divergence { iteration: t, what, history: state.history.clone() })
    }
}

pub(crate) fn step_resolved(state: &AmpState, inst: &SpikedInstance, den: &Resolved) -> Result<AmpState, AmpError> {
    let t = state.t + 1;
    let alpha = inst.aspect;
    let beta = if t == 1 { 0.0 } else { state.next_beta };
    let u = &state.u_t;
    let mut g = inst.y.tr_mul(u);
    if t > 1 {
        g.axpy(-alpha * beta, &state.v_t, 1.0);
    }
    ensure_finite(&g, "g", t, state)?;
    let (v, alpha_t) = den.apply_v(t, &g);
    ensure_finite(&v, "v", t, state)?;
    let mut f = &inst.y * &v;
    f.axpy(-alpha_t, u, 1.0);
    ensure_finite(&f, "f", t, state)?;
    let (u_next, next_beta) = den.apply_u(t + 1, &f);
    ensure_finite(&u_next, "u", t, state)?;
    let record = IterationRecord {
        t,
        overlap_u: cosine(u, &inst.u_star),
        overlap_v: cosine(&v, &inst.v_star),
        overlap: overlap_with(u, &v, &inst.u_star, &inst.v_star),
        mse: mse_of_rank_one(u, &v, inst),
    };
    let mut history = state.history.clone();
    history.push(record);
    Ok(AmpState { t, u_t: u_next, v_t: v, g_t: g, f_t: f, alpha_t, beta_t: beta, next_beta, history })
}

/// One full (g, v, f, u) sweep.
pub fn amp_step(state: &AmpState, inst: &SpikedInstance, cfg: &AmpConfig) -> Result<AmpState, AmpError> {
    cfg.validate()?;
    if state.t >= cfg.t_max && matches!(cfg.denoiser, DenoiserSpec::LinearAssumedModel) {
        return Err(AmpError::Config(format!("iteration {} exceeds t_max = {}", state.t + 1, cfg.t_max)));
    }
    step_resolved(state, inst, &Resolved::new(cfg, inst.aspect))
}

/// Runs up to `t_max` sweeps, stopping early once the joint overlap changes by less than 1e-6.
pub fn run_amp<R: Rng + ?Sized>(inst: &SpikedInstance, cfg: &AmpConfig, rng: &mut R) -> Result<AmpState, AmpError> {
    cfg.validate()?;
    let u1 = init_u1(inst, cfg.init_corr, rng)?;
    run_amp_from(inst, cfg, u1)
}

/// As [`run_amp`] from a given u¹.
pub fn run_amp_from(inst: &SpikedInstance, cfg: &AmpConfig, u1: DVector<f64>) -> Result<AmpState, AmpError> {
    cfg.validate()?;
    let den = Resolved::new(cfg, inst.aspect);
    let mut state = AmpState::initial(u1, inst.m());
    while state.t < cfg.t_max {
        state = step_resolved(&state, inst, &den)?;
        if let [.., a, b] = state.history.as_slice() {
            if (a.overlap - b.overlap).abs() < EARLY_STOP_TOL {
                break;
            }
        }
    }
    Ok(state)
}
