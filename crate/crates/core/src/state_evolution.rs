//! State evolution of Gaussian AMP over rectangular free cumulants, and the
//! auxiliary AMP driven by the pure noise matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amp::{AmpConfig, AmpError, CustomDenoiser, DenoiserSpec, LinearSchedule, Resolved};
use crate::ensembles::SpikedInstance;
use crate::rng::{derive_seed, rng_from_seed};
use crate::transforms::{CumulantSequence, TransformError};

pub const DEFAULT_MC_SAMPLES: usize = 200_000;
pub const MIN_MC_SAMPLES: usize = 10_000;
/// Most negative eigenvalue tolerated in Ω̄ or Σ̄ before flooring.
pub const PSD_TOL: f64 = 1e-8;
const MC_BLOCK: usize = 8192;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeError {
    #[error("invalid state evolution configuration: {0}")]
    Config(String),
    #[error("need {needed} rectangular free cumulants, have {available}")]
    Cumulants { needed: usize, available: usize },
    #[error("{which} at t = {t} is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { which: &'static str, t: usize, eigenvalue: f64 },
    #[error("state evolution requires separable denoisers")]
    NonSeparable,
    #[error("non-finite state evolution quantity at t = {t}")]
    NonFinite { t: usize },
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Amp(#[from] AmpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MCConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for MCConfig {
    fn default() -> Self {
        MCConfig { samples: DEFAULT_MC_SAMPLES, seed: 0 }
    }
}

impl MCConfig {
    pub fn validate(&self) -> Result<(), SeError> {
        if self.samples < MIN_MC_SAMPLES {
            return Err(SeError::Config(format!("{} Monte Carlo samples is below {MIN_MC_SAMPLES}", self.samples)));
        }
        Ok(())
    }
}

/// SE after `t` completed iterations: V₁..V_t and U₁..U_{t+1} are characterized.
///
/// Φ̄ holds E[∂_{y_j}U_i] for j < i and Ψ̄ holds E[∂_{z_j}V_i] for j ≤ i, both
/// stored lower-triangular. Ω̄, Σ̄, Ā, B̄ are those assembled at step t.
#[derive(Debug, Clone, PartialEq)]
pub struct SEState {
    pub t: usize,
    pub alpha: f64,
    /// θ = √(λ*α).
    pub theta: f64,
    pub init_corr: f64,
    pub delta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Row s of B̄_s (entries i < s), for s = 1..t.
    pub b_rows: Vec<Vec<f64>>,
    /// Row s of Ā_s (entries i ≤ s), for s = 1..t.
    pub a_rows: Vec<Vec<f64>>,
    /// μ̄_s = (θ/α)E[V*V_s], s = 1..t.
    pub mu_vec: Vec<f64>,
    /// ν̄_s = θE[U*U_s], s = 1..t+1.
    pub nu_vec: Vec<f64>,
    /// E[U*U_s], s = 1..t+1.
    pub u_star_corr: Vec<f64>,
    /// E[V*V_s], s = 1..t.
    pub v_star_corr: Vec<f64>,
    /// ᾱ_s = E[v_s′(G_s)], s = 1..t.
    pub alpha_bar: Vec<f64>,
    /// β̄_s = E[u_s′(F_{s−1})], s = 1..t+1, with β̄₁ = 0.
    pub beta_bar: Vec<f64>,
}

/// Initial state: ν̄₁ = θε, Δ̄₁₁ = 1, β̄₁ = 0.
pub fn se_init(lambda_star: f64, alpha: f64, init_corr: f64) -> Result<SEState, SeError> {
    if !(lambda_star >= 0.0 && lambda_star.is_finite()) {
        return Err(SeError::Config(format!("lambda_star = {lambda_star} must be nonnegative")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(SeError::Config(format!("aspect ratio {alpha} must lie in (0, 1]")));
    }
    if !(init_corr > 0.0 && init_corr <= 1.0) {
        return Err(SeError::Config(format!("init_corr = {init_corr} must lie in (0, 1]")));
    }
    let theta = (lambda_star * alpha).sqrt();
    Ok(SEState {
        t: 0,
        alpha,
        theta,
        init_corr,
        delta: DMatrix::from_element(1, 1, 1.0),
        gamma: DMatrix::zeros(0, 0),
        phi: DMatrix::zeros(1, 1),
        psi: DMatrix::zeros(0, 0),
        omega: DMatrix::zeros(0, 0),
        sigma: DMatrix::zeros(0, 0),
        a: DMatrix::zeros(0, 0),
        b: DMatrix::zeros(0, 0),
        b_rows: Vec::new(),
        a_rows: Vec::new(),
        mu_vec: Vec::new(),
        nu_vec: vec![theta * init_corr],
        u_star_corr: vec![init_corr],
        v_star_corr: Vec::new(),
        alpha_bar: Vec::new(),
        beta_bar: vec![0.0],
    })
}

/// The four memory matrices of one SE step.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariances {
    pub omega: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// S_j(X) = Σ_{i=0}^{j} Pⁱ X (Pᵀ)^{j−i}, for j = 0..=jmax.
fn sandwich_sums(p: &DMatrix<f64>, x: &DMatrix<f64>, jmax: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(jmax + 1);
    let mut pt_pow = DMatrix::identity(p.nrows(), p.ncols());
    let mut s = x.clone();
    out.push(s.clone());
    for _ in 1..=jmax {
        pt_pow = &pt_pow * p.transpose();
        s = p * &s + x * &pt_pow;
        out.push(s.clone());
    }
    out
}

fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// Ω̄, Σ̄, Ā, B̄ from Δ̄, Γ̄, Φ̄, Ψ̄ (all d×d) and κ₂..κ_{4d}:
/// Ω̄ = αΣ_{j≤2d−2} κ_{2(j+1)}Θ⁽ʲ⁾, B̄ = αΣ_{j≤d−1} κ_{2(j+1)}Φ̄(Ψ̄Φ̄)ʲ,
/// Σ̄ = Σ_{j≤2d−1} κ_{2(j+1)}Ξ⁽ʲ⁾, Ā = Σ_{j≤d} κ_{2(j+1)}Ψ̄(Φ̄Ψ̄)ʲ.
pub fn assemble_matrices(
    delta: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    alpha: f64,
    kappas: &CumulantSequence,
) -> Result<Covariances, SeError> {
    let d = delta.nrows();
    for m in [gamma, phi, psi] {
        if m.shape() != (d, d) {
            return Err(SeError::Config(format!("matrix shape {:?} does not match {d}×{d}", m.shape())));
        }
    }
    if kappas.order() < 2 * d {
        return Err(SeError::Cumulants { needed: 2 * d, available: kappas.order() });
    }
    let k = |j: usize| kappas.as_slice()[j];
    let pp = phi * psi;
    let qq = psi * phi;
    let jo = 2 * d - 2;
    let js = 2 * d - 1;

    let phi_gamma = phi * gamma * phi.transpose();
    let psi_delta = psi * delta * psi.transpose();
    let s_delta = sandwich_sums(&pp, delta, jo);
    let s_pg = sandwich_sums(&pp, &phi_gamma, jo);
    let s_gamma = sandwich_sums(&qq, gamma, js);
    let s_pd = sandwich_sums(&qq, &psi_delta, js);

    let mut omega = DMatrix::zeros(d, d);
    for j in 0..=jo {
        let mut theta_j = s_delta[j].clone();
        if j >= 1 {
            theta_j += &s_pg[j - 1];
        }
        omega += theta_j * k(j);
    }
    omega *= alpha;
    let mut sigma = DMatrix::zeros(d, d);
    for j in 0..=js {
        let mut xi_j = s_gamma[j].clone();
        if j >= 1 {
            xi_j += &s_pd[j - 1];
        }
        sigma += xi_j * k(j);
    }
    let mut b = DMatrix::zeros(d, d);
    let mut term = phi.clone();
    for j in 0..d {
        b += &term * k(j);
        term = &term * &qq;
    }
    b *= alpha;
    let mut a = DMatrix::zeros(d, d);
    let mut term = psi.clone();
    for j in 0..=d {
        a += &term * k(j);
        term = &term * &pp;
    }
    Ok(Covariances { omega: symmetrize(&omega), sigma: symmetrize(&sigma), a, b })
}

fn padded(x: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(d, d);
    let (r, c) = (x.nrows().min(d), x.ncols().min(d));
    out.view_mut((0, 0), (r, c)).copy_from(&x.view((0, 0), (r, c)));
    out
}

/// Ω̄_s, Σ̄_s, Ā_s, B̄_s at s = max(t, 1), with unknown V-side entries taken as zero.
pub fn assemble_covariances(state: &SEState, kappas: &CumulantSequence) -> Result<Covariances, SeError> {
    let d = state.t.max(1);
    assemble_matrices(
        &padded(&state.delta, d),
        &padded(&state.gamma, d),
        &padded(&state.phi, d),
        &padded(&state.psi, d),
        state.alpha,
        kappas,
    )
}

/// Lower factor L with LLᵀ = X for a PSD X, zeroing columns of null pivots.
fn psd_factor(x: &DMatrix<f64>, which: &'static str, t: usize) -> Result<DMatrix<f64>, SeError> {
    let d = x.nrows();
    if d == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(x.clone());
    let min = eig.eigenvalues.min();
    let scale = eig.eigenvalues.amax().max(1.0);
    if min < -PSD_TOL * scale {
        return Err(SeError::NotPsd { which, t, eigenvalue: min });
    }
    let mut l = DMatrix::<f64>::zeros(d, d);
    let tol = 1e-13 * scale;
    for j in 0..d {
        let mut diag = x[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag <= tol {
            continue;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..d {
            let mut v = x[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    Ok(l)
}

/// Denoisers as seen by the SE: linear ones take the exact path.
#[derive(Debug, Clone)]
pub enum SeDenoisers {
    Linear(LinearSchedule),
    Custom(CustomDenoiser),
}

impl SeDenoisers {
    pub fn from_config(cfg: &AmpConfig, alpha: f64) -> Result<Self, SeError> {
        cfg.validate()?;
        match Resolved::new(cfg, alpha) {
            Resolved::Linear(s) => Ok(SeDenoisers::Linear(s)),
            Resolved::Custom(c) => Ok(SeDenoisers::Custom(c)),
            Resolved::Sphere => Err(SeError::NonSeparable),
        }
    }
}

impl From<&DenoiserSpec> for Option<SeDenoisers> {
    fn from(spec: &DenoiserSpec) -> Self {
        match spec {
            DenoiserSpec::Custom(c) => Some(SeDenoisers::Custom(c.clone())),
            _ => None,
        }
    }
}

/// Statistics of V₁..V_t from one replay of the v-side composition.
struct VStats {
    gamma: DMatrix<f64>,
    psi: DMatrix<f64>,
    v_star: Vec<f64>,
    alpha_t: f64,
}

/// Statistics of U₁..U_{t+1} from one replay of the u-side composition.
struct UStats {
    delta: DMatrix<f64>,
    phi: DMatrix<f64>,
    u_star: Vec<f64>,
    beta_next: f64,
}

/// Parameters that fix the compositions G_s(Z, V*) and F_s(Y, U₁, U*).
struct Path<'a> {
    alpha: f64,
    eps: f64,
    nu: &'a [f64],
    beta: &'a [f64],
    b_rows: &'a [Vec<f64>],
    mu: &'a [f64],
    alpha_bar: &'a [f64],
    a_rows: &'a [Vec<f64>],
}

impl Path<'_> {
    /// Coefficient of V_{i} (0-based) in G_s before the denoiser, excluding Z_s and V*.
    fn g_mix(&self, s: usize, i: usize) -> f64 {
        let mut c = self.b_rows[s].get(i).copied().unwrap_or(0.0);
        if i + 1 == s {
            c -= self.alpha * self.beta[s];
        }
        c
    }

    /// Coefficient of U_{i} (0-based) in F_s, excluding Y_s and U*.
    fn f_mix(&self, s: usize, i: usize) -> f64 {
        let mut c = self.a_rows[s].get(i).copied().unwrap_or(0.0);
        if i == s {
            c -= self.alpha_bar[s];
        }
        c
    }
}

fn exact_v(path: &Path, omega: &DMatrix<f64>, sched: &LinearSchedule, t: usize) -> VStats {
    // V_s as coefficients over (Z_1..Z_t, V*).
    let mut coef: Vec<DVector<f64>> = Vec::with_capacity(t);
    for s in 0..t {
        let mut g = DVector::zeros(t + 1);
        g[s] = 1.0;
        g[t] = path.nu[s];
        for (i, ci) in coef.iter().enumerate() {
            g.axpy(path.g_mix(s, i), ci, 1.0);
        }
        coef.push(g * sched.c[s]);
    }
    let mut cov = DMatrix::zeros(t + 1, t + 1);
    cov.view_mut((0, 0), (t, t)).copy_from(omega);
    cov[(t, t)] = 1.0;
    let gamma = DMatrix::from_fn(t, t, |i, k| coef[i].dot(&(&cov * &coef[k])));
    let psi = DMatrix::from_fn(t, t, |i, j| if j <= i { coef[i][j] } else { 0.0 });
    VStats { gamma, psi, v_star: coef.iter().map(|c| c[t]).collect(), alpha_t: sched.c[t - 1] }
}

fn exact_u(path: &Path, sigma: &DMatrix<f64>, sched: &LinearSchedule, t: usize) -> UStats {
    // U_s as coefficients over (Y_1..Y_t, U*, W).
    let mut u1 = DVector::zeros(t + 2);
    u1[t] = path.eps;
    u1[t + 1] = (1.0 - path.eps * path.eps).max(0.0).sqrt();
    let mut coef = vec![u1];
    for s in 0..t {
        let mut f = DVector::zeros(t + 2);
        f[s] = 1.0;
        f[t] = path.mu[s];
        for (i, ci) in coef.iter().enumerate() {
            f.axpy(path.f_mix(s, i), ci, 1.0);
        }
        coef.push(f * sched.d[s]);
    }
    let mut cov = DMatrix::zeros(t + 2, t + 2);
    cov.view_mut((0, 0), (t, t)).copy_from(sigma);
    cov[(t, t)] = 1.0;
    cov[(t + 1, t + 1)] = 1.0;
    let delta = DMatrix::from_fn(t + 1, t + 1, |i, k| coef[i].dot(&(&cov * &coef[k])));
    let phi = DMatrix::from_fn(t + 1, t + 1, |i, j| if j < i { coef[i][j] } else { 0.0 });
    UStats { delta, phi, u_star: coef.iter().map(|c| c[t]).collect(), beta_next: sched.d[t - 1] }
}

#[derive(Clone, Copy)]
enum Stream {
    Xi = 0,
    VStar = 1,
    UStar = 2,
    W = 3,
}

fn normals(seed: u64, side: u64, stream: Stream, coord: usize, block: usize, len: usize) -> Vec<f64> {
    let id = (side << 60) | ((stream as u64) << 52) | ((coord as u64) << 32) | block as u64;
    let mut rng = rng_from_seed(derive_seed(seed, id));
    (0..len).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect()
}

fn blocks(samples: usize) -> Vec<(usize, usize)> {
    (0..samples.div_ceil(MC_BLOCK)).map(|b| (b, MC_BLOCK.min(samples - b * MC_BLOCK))).collect()
}

fn reduce(parts: Vec<Vec<f64>>, samples: usize) -> Vec<f64> {
    let mut total = vec![0.0; parts.first().map_or(0, |p| p.len())];
    for p in parts {
        for (a, b) in total.iter_mut().zip(p) {
            *a += b;
        }
    }
    total.iter_mut().for_each(|x| *x /= samples as f64);
    total
}

fn mc_v(path: &Path, omega: &DMatrix<f64>, den: &CustomDenoiser, t: usize, mc: &MCConfig) -> VStats {
    let l = psd_factor(omega, "omega", t).expect("checked by caller");
    // Layout: Γ (t²), Ψ (t²), E[V*V] (t), ᾱ_t (1).
    let width = 2 * t * t + t + 1;
    let parts: Vec<Vec<f64>> = blocks(mc.samples)
        .into_par_iter()
        .map(|(b, len)| {
            let xi: Vec<Vec<f64>> = (0..t).map(|j| normals(mc.seed, 0, Stream::Xi, j, b, len)).collect();
            let vs = normals(mc.seed, 0, Stream::VStar, 0, b, len);
            let mut acc = vec![0.0; width];
            let mut v = vec![0.0; t];
            let mut dv = vec![0.0; t * t];
            let mut z = vec![0.0; t];
            for n in 0..len {
                for i in 0..t {
                    z[i] = (0..=i).map(|j| l[(i, j)] * xi[j][n]).sum();
                }
                for s in 0..t {
                    let mut g = z[s] + path.nu[s] * vs[n];
                    for i in 0..s {
                        g += path.g_mix(s, i) * v[i];
                    }
                    v[s] = den.v.eval(s + 1, g);
                    let d = den.dv.eval(s + 1, g);
                    for j in 0..=s {
                        let mut inner = if j == s { 1.0 } else { 0.0 };
                        for i in j..s {
                            inner += path.g_mix(s, i) * dv[i * t + j];
                        }
                        dv[s * t + j] = d * inner;
                    }
                    if s + 1 == t {
                        acc[2 * t * t + t] += d;
                    }
                }
                for i in 0..t {
                    for k in 0..t {
                        acc[i * t + k] += v[i] * v[k];
                    }
                    for j in 0..=i {
                        acc[t * t + i * t + j] += dv[i * t + j];
                    }
                    acc[2 * t * t + i] += vs[n] * v[i];
                }
            }
            acc
        })
        .collect();
    let m = reduce(parts, mc.samples);
    VStats {
        gamma: symmetrize(&DMatrix::from_fn(t, t, |i, k| m[i * t + k])),
        psi: DMatrix::from_fn(t, t, |i, j| m[t * t + i * t + j]),
        v_star: m[2 * t * t..2 * t * t + t].to_vec(),
        alpha_t: m[2 * t * t + t],
    }
}

fn mc_u(path: &Path, sigma: &DMatrix<f64>, den: &CustomDenoiser, t: usize, mc: &MCConfig) -> UStats {
    let l = psd_factor(sigma, "sigma", t).expect("checked by caller");
    let k = t + 1;
    // Layout: Δ (k²), Φ (k²), E[U*U] (k), β̄_{t+1} (1).
    let width = 2 * k * k + k + 1;
    let eps = path.eps;
    let rest = (1.0 - eps * eps).max(0.0).sqrt();
    let parts: Vec<Vec<f64>> = blocks(mc.samples)
        .into_par_iter()
        .map(|(b, len)| {
            let xi: Vec<Vec<f64>> = (0..t).map(|j| normals(mc.seed, 1, Stream::Xi, j, b, len)).collect();
            let us = normals(mc.seed, 1, Stream::UStar, 0, b, len);
            let w = normals(mc.seed, 1, Stream::W, 0, b, len);
            let mut acc = vec![0.0; width];
            let mut u = vec![0.0; k];
            let mut du = vec![0.0; k * k];
            let mut y = vec![0.0; t];
            for n in 0..len {
                for i in 0..t {
                    y[i] = (0..=i).map(|j| l[(i, j)] * xi[j][n]).sum();
                }
                u[0] = eps * us[n] + rest * w[n];
                for s in 0..t {
                    let mut f = y[s] + path.mu[s] * us[n];
                    for i in 0..=s {
                        f += path.f_mix(s, i) * u[i];
                    }
                    u[s + 1] = den.u.eval(s + 2, f);
                    let d = den.du.eval(s + 2, f);
                    for j in 0..=s {
                        let mut inner = if j == s { 1.0 } else { 0.0 };
                        for i in (j + 1)..=s {
                            inner += path.f_mix(s, i) * du[i * k + j];
                        }
                        du[(s + 1) * k + j] = d * inner;
                    }
                    if s + 1 == t {
                        acc[2 * k * k + k] += d;
                    }
                }
                for i in 0..k {
                    for m in 0..k {
                        acc[i * k + m] += u[i] * u[m];
                    }
                    for j in 0..i {
                        acc[k * k + i * k + j] += du[i * k + j];
                    }
                    acc[2 * k * k + i] += us[n] * u[i];
                }
            }
            acc
        })
        .collect();
    let m = reduce(parts, mc.samples);
    UStats {
        delta: symmetrize(&DMatrix::from_fn(k, k, |i, j| m[i * k + j])),
        phi: DMatrix::from_fn(k, k, |i, j| m[k * k + i * k + j]),
        u_star: m[2 * k * k..2 * k * k + k].to_vec(),
        beta_next: m[2 * k * k + k],
    }
}

fn check_finite(x: &DMatrix<f64>, t: usize) -> Result<(), SeError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SeError::NonFinite { t })
    }
}

/// Advances the SE by one iteration.
pub fn se_step(
    state: &SEState,
    kappas: &CumulantSequence,
    den: &SeDenoisers,
    mc: &MCConfig,
) -> Result<SEState, SeError> {
    let t = state.t + 1;
    if let SeDenoisers::Linear(s) = den {
        if s.c.len() < t {
            return Err(SeError::Config(format!("linear schedule has {} steps, need {t}", s.c.len())));
        }
    } else {
        mc.validate()?;
    }
    if kappas.order() < 2 * t {
        return Err(SeError::Cumulants { needed: 2 * t, available: kappas.order() });
    }
    let mut next = state.clone();
    next.t = t;

    // v side: Ω̄_t and B̄_t need only U₁..U_t and V₁..V_{t−1}.
    let pre = assemble_matrices(
        &state.delta,
        &padded(&state.gamma, t),
        &state.phi,
        &padded(&state.psi, t),
        state.alpha,
        kappas,
    )?;
    check_finite(&pre.omega, t)?;
    psd_factor(&pre.omega, "omega", t)?;
    next.b_rows.push((0..t - 1).map(|i| pre.b[(t - 1, i)]).collect());
    let vstats = {
        let path = Path {
            alpha: state.alpha,
            eps: state.init_corr,
            nu: &next.nu_vec,
            beta: &next.beta_bar,
            b_rows: &next.b_rows,
            mu: &next.mu_vec,
            alpha_bar: &next.alpha_bar,
            a_rows: &next.a_rows,
        };
        match den {
            SeDenoisers::Linear(s) => exact_v(&path, &pre.omega, s, t),
            SeDenoisers::Custom(c) => mc_v(&path, &pre.omega, c, t, mc),
        }
    };
    check_finite(&vstats.gamma, t)?;
    next.gamma = vstats.gamma;
    next.psi = vstats.psi;
    next.v_star_corr = vstats.v_star;
    next.alpha_bar.push(vstats.alpha_t);
    next.mu_vec = next.v_star_corr.iter().map(|c| state.theta / state.alpha * c).collect();

    // u side: Σ̄_t and Ā_t.
    let post = assemble_matrices(&state.delta, &next.gamma, &state.phi, &next.psi, state.alpha, kappas)?;
    check_finite(&post.sigma, t)?;
    psd_factor(&post.sigma, "sigma", t)?;
    next.a_rows.push((0..t).map(|i| post.a[(t - 1, i)]).collect());
    let ustats = {
        let path = Path {
            alpha: state.alpha,
            eps: state.init_corr,
            nu: &next.nu_vec,
            beta: &next.beta_bar,
            b_rows: &next.b_rows,
            mu: &next.mu_vec,
            alpha_bar: &next.alpha_bar,
            a_rows: &next.a_rows,
        };
        match den {
            SeDenoisers::Linear(s) => exact_u(&path, &post.sigma, s, t),
            SeDenoisers::Custom(c) => mc_u(&path, &post.sigma, c, t, mc),
        }
    };
    check_finite(&ustats.delta, t)?;
    next.delta = ustats.delta;
    next.phi = ustats.phi;
    next.u_star_corr = ustats.u_star;
    next.nu_vec = next.u_star_corr.iter().map(|c| state.theta * c).collect();
    next.beta_bar.push(ustats.beta_next);
    next.omega = pre.omega;
    next.b = pre.b;
    next.sigma = post.sigma;
    next.a = post.a;
    Ok(next)
}

/// Predicted metrics of (u^s, v^s) at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeMetrics {
    pub t: usize,
    pub overlap_u: f64,
    pub overlap_v: f64,
    pub overlap: f64,
    pub mse: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

/// Overlap |E[U*U_s]||E[V*V_s]|/√(E[U_s²]E[V_s²]) and MSE (1 − 2E[U*U_s]E[V*V_s] + E[U_s²]E[V_s²])/2
/// for s = 1..t, with E[U*²] = E[V*²] = 1.
pub fn se_predict_metrics(state: &SEState) -> Vec<SeMetrics> {
    (0..state.t)
        .map(|s| {
            let (mu_, mv) = (state.u_star_corr[s], state.v_star_corr[s]);
            let (qu, qv) = (state.delta[(s, s)].max(0.0), state.gamma[(s, s)].max(0.0));
            SeMetrics {
                t: s + 1,
                overlap_u: ratio(mu_.abs(), qu.sqrt()).min(1.0),
                overlap_v: ratio(mv.abs(), qv.sqrt()).min(1.0),
                overlap: ratio(mu_.abs() * mv.abs(), (qu * qv).sqrt()).min(1.0),
                mse: 0.5 * (1.0 - 2.0 * mu_ * mv + qu * qv),
            }
        })
        .collect()
}

/// Runs the SE for `cfg.t_max` iterations.
pub struct StateEvolution {
    pub kappas: CumulantSequence,
    pub denoisers: SeDenoisers,
    pub mc: MCConfig,
}

impl StateEvolution {
    pub fn new(kappas: CumulantSequence, cfg: &AmpConfig, mc: MCConfig) -> Result<Self, SeError> {
        let denoisers = SeDenoisers::from_config(cfg, kappas.aspect())?;
        Ok(StateEvolution { kappas, denoisers, mc })
    }

    /// All states from t = 0 to `t_max`.
    pub fn run(&self, lambda_star: f64, init_corr: f64, t_max: usize) -> Result<Vec<SEState>, SeError> {
        let mut states = vec![se_init(lambda_star, self.kappas.aspect(), init_corr)?];
        for _ in 0..t_max {
            let next = se_step(states.last().expect("nonempty"), &self.kappas, &self.denoisers, &self.mc)?;
            states.push(next);
        }
        Ok(states)
    }
}

/// Cumulants sufficient for `t_max` SE iterations.
pub fn se_cumulants(law: &crate::SingularLaw, t_max: usize) -> Result<CumulantSequence, SeError> {
    Ok(CumulantSequence::for_law(law, 2 * t_max)?)
}

/// Iterates of the auxiliary AMP and the reconstructed g̃, f̃.
/// `u[s]` is ũ^{s+1}; `v[s]`, `z[s]`, `g[s]` are ṽ^{s+1}, z̃^{s+1}, g̃^{s+1}; `y[s]`, `f[s]` likewise.
#[derive(Debug, Clone)]
pub struct AuxTrajectory {
    pub u: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub g: Vec<DVector<f64>>,
    pub f: Vec<DVector<f64>>,
}

fn mean(x: &DVector<f64>) -> f64 {
    x.sum() / x.len() as f64
}

/// Empirical Δ, Γ, Φ, Ψ of the auxiliary iterates, padded to d×d.
fn empirical(
    u: &[DVector<f64>],
    v: &[DVector<f64>],
    du: &[Vec<DVector<f64>>],
    dv: &[Vec<DVector<f64>>],
    d: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let nu = u.len().min(d);
    let nv = v.len().min(d);
    let delta = DMatrix::from_fn(d, d, |i, j| if i < nu && j < nu { u[i].dot(&u[j]) / u[i].len() as f64 } else { 0.0 });
    let gamma = DMatrix::from_fn(d, d, |i, j| if i < nv && j < nv { v[i].dot(&v[j]) / v[i].len() as f64 } else { 0.0 });
    let phi = DMatrix::from_fn(d, d, |i, j| if i < nu && j < i { mean(&du[i][j]) } else { 0.0 });
    let psi = DMatrix::from_fn(d, d, |i, j| if i < nv && j <= i { mean(&dv[i][j]) } else { 0.0 });
    (delta, gamma, phi, psi)
}

/// Auxiliary AMP on the pure noise Z = Y − √(λ*/(mn))u*v*ᵀ, with composed
/// denoisers built from the SE parameters in `se` and ũ¹ = `u1`.
pub fn auxiliary_amp(
    inst: &SpikedInstance,
    u1: &DVector<f64>,
    se: &SEState,
    kappas: &CumulantSequence,
    den: &SeDenoisers,
) -> Result<AuxTrajectory, SeError> {
    let t_max = se.t;
    let alpha = inst.aspect;
    let zmat = inst.noise_matrix();
    let (n, m) = (inst.n(), inst.m());
    let apply = |side_v: bool, s: usize, x: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        match den {
            SeDenoisers::Linear(sch) => {
                let c = if side_v { sch.c[s - 1] } else { sch.d[s - 2] };
                (x * c, DVector::from_element(x.len(), c))
            }
            SeDenoisers::Custom(cd) => {
                let (f, df) = if side_v { (&cd.v, &cd.dv) } else { (&cd.u, &cd.du) };
                (x.map(|a| f.eval(s, a)), x.map(|a| df.eval(s, a)))
            }
        }
    };
    let mut tr = AuxTrajectory { u: vec![u1.clone()], v: vec![], z: vec![], y: vec![], g: vec![], f: vec![] };
    // du[i][j] = ∂ũ^{i+1}/∂ỹ^{j+1}, dv[i][j] = ∂ṽ^{i+1}/∂z̃^{j+1}, entrywise.
    let mut du: Vec<Vec<DVector<f64>>> = vec![vec![]];
    let mut dv: Vec<Vec<DVector<f64>>> = vec![];
    for s in 0..t_max {
        let d = s + 1;
        let (delta, gamma, phi, psi) = empirical(&tr.u, &tr.v, &du, &dv, d);
        let pre = assemble_matrices(&delta, &gamma, &phi, &psi, alpha, kappas)?;
        let mut z = zmat.tr_mul(&tr.u[s]);
        for i in 0..s {
            z.axpy(-pre.b[(s, i)], &tr.v[i], 1.0);
        }
        let mut g = z.clone();
        g.axpy(se.nu_vec[s], &inst.v_star, 1.0);
        if s >= 1 {
            g.axpy(-alpha * se.beta_bar[s], &tr.v[s - 1], 1.0);
        }
        for (i, &b) in se.b_rows[s].iter().enumerate() {
            g.axpy(b, &tr.v[i], 1.0);
        }
        let (v, vp) = apply(true, s + 1, &g);
        let mut dvs = Vec::with_capacity(s + 1);
        for j in 0..=s {
            let mut inner = DVector::from_element(m, if j == s { 1.0 } else { 0.0 });
            if s >= 1 && j < s {
                inner.axpy(-alpha * se.beta_bar[s], &dv[s - 1][j], 1.0);
            }
            for (i, &b) in se.b_rows[s].iter().enumerate() {
                if j <= i {
                    inner.axpy(b, &dv[i][j], 1.0);
                }
            }
            dvs.push(vp.component_mul(&inner));
        }
        tr.v.push(v);
        dv.push(dvs);
        tr.z.push(z);
        tr.g.push(g);

        let (delta, gamma, phi, psi) = empirical(&tr.u, &tr.v, &du, &dv, d);
        let post = assemble_matrices(&delta, &gamma, &phi, &psi, alpha, kappas)?;
        let mut y = &zmat * &tr.v[s];
        for i in 0..=s {
            y.axpy(-post.a[(s, i)], &tr.u[i], 1.0);
        }
        let mut f = y.clone();
        f.axpy(se.mu_vec[s], &inst.u_star, 1.0);
        f.axpy(-se.alpha_bar[s], &tr.u[s], 1.0);
        for (i, &a) in se.a_rows[s].iter().enumerate() {
            f.axpy(a, &tr.u[i], 1.0);
        }
        let (u, up) = apply(false, s + 2, &f);
        let mut dus = Vec::with_capacity(s + 1);
        for j in 0..=s {
            let mut inner = DVector::from_element(n, if j == s { 1.0 } else { 0.0 });
            for i in (j + 1)..=s {
                let mut c = se.a_rows[s][i];
                if i == s {
                    c -= se.alpha_bar[s];
                }
                inner.axpy(c, &du[i][j], 1.0);
            }
            dus.push(up.component_mul(&inner));
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(SeError::NonFinite { t: s + 1 });
        }
        tr.u.push(u);
        du.push(dus);
        tr.y.push(y);
        tr.f.push(f);
    }
    Ok(tr)
}
