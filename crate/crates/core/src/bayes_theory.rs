//! Closed-form performance of the mismatched Bayes estimator.
//!
//! The statistician assumes Gaussian noise at SNR λ while the data carry SNR
//! λ* and noise with singular law μ. Everything here is a deterministic
//! function of (μ, α, λ, λ*).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::integrate;
use crate::transforms::{
    d_inverse_raw, edges, rect_r_derivative_raw, rect_r_raw, t_inverse_unchecked, t_unchecked, EdgeData,
    SingularLaw, TransformError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("invalid SNR: {0}")]
    Snr(String),
    #[error("M = {m:e} is negative at lambda = {lambda}, lambda_star = {lambda_star}")]
    NegativeM { m: f64, lambda: f64, lambda_star: f64 },
    #[error("bulk low-temperature regime is impossible when h_bar is infinite")]
    RegimeImpossible,
    #[error("{context}: {source}")]
    Transform { context: String, source: TransformError },
}

impl From<TransformError> for TheoryError {
    fn from(source: TransformError) -> Self {
        TheoryError::Transform { context: "transform".into(), source }
    }
}

fn ctx<T>(r: Result<T, TransformError>, context: impl FnOnce() -> String) -> Result<T, TheoryError> {
    r.map_err(|source| TheoryError::Transform { context: context(), source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    SpikeLowTemp,
    BulkLowTemp,
    HighTemp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegimeFlags {
    /// h̄λ* ≥ 1: the top singular value of Y separates from the bulk.
    pub spike_present: bool,
    pub low_temperature: bool,
}

impl RegimeFlags {
    pub fn regime(&self) -> Regime {
        match (self.low_temperature, self.spike_present) {
            (true, true) => Regime::SpikeLowTemp,
            (true, false) => Regime::BulkLowTemp,
            (false, _) => Regime::HighTemp,
        }
    }
}

/// M, Q and the derived metrics at one (λ, λ*).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryPoint {
    pub lambda: f64,
    pub lambda_star: f64,
    pub regime: Regime,
    pub m: f64,
    pub q: f64,
    pub mse: f64,
    pub overlap: f64,
}

fn check_snr(lambda: f64, lambda_star: f64) -> Result<(), TheoryError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(TheoryError::Snr(format!("lambda = {lambda} must be nonnegative")));
    }
    if !(lambda_star >= 0.0 && lambda_star.is_finite()) {
        return Err(TheoryError::Snr(format!("lambda_star = {lambda_star} must be nonnegative")));
    }
    Ok(())
}

fn spike_present(e: &EdgeData, lambda_star: f64) -> bool {
    lambda_star > 0.0 && e.h_bar * lambda_star >= 1.0
}

fn flags(e: &EdgeData, alpha: f64, lambda: f64, lambda_star: f64) -> RegimeFlags {
    let spike = spike_present(e, lambda_star);
    let low = if spike { lambda * lambda_star > alpha } else { lambda > alpha * e.h_bar };
    RegimeFlags { spike_present: spike, low_temperature: low }
}

/// Regime of (λ, λ*); ties on either boundary resolve to high temperature.
pub fn classify_regime(law: &SingularLaw, lambda: f64, lambda_star: f64) -> Result<RegimeFlags, TheoryError> {
    check_snr(lambda, lambda_star)?;
    let e = edges(law)?;
    Ok(flags(&e, law.aspect(), lambda, lambda_star))
}

/// Limit of the top singular value of Y.
pub fn bbp_top_singular(law: &SingularLaw, lambda_star: f64) -> Result<f64, TheoryError> {
    if !(lambda_star > 0.0 && lambda_star.is_finite()) {
        return Err(TheoryError::Snr(format!("lambda_star = {lambda_star} must be positive")));
    }
    let e = edges(law)?;
    if spike_present(&e, lambda_star) {
        ctx(d_inverse_raw(law, 1.0 / lambda_star, e), || "top singular value".into())
    } else {
        Ok(e.gamma_bar)
    }
}

/// λ̄ = α·D(ν̄⁺): the assumed SNR above which the system is at low temperature.
pub fn sticking_threshold(law: &SingularLaw, lambda_star: f64) -> Result<f64, TheoryError> {
    check_snr(0.0, lambda_star)?;
    let e = edges(law)?;
    let alpha = law.aspect();
    Ok(if spike_present(&e, lambda_star) { alpha / lambda_star } else { alpha * e.h_bar })
}

/// Quantities at y = 1/λ* shared by M and Q in the spike regime.
struct SpikeTerms {
    c: f64,
    dc: f64,
    tc: f64,
    r: f64,
}

fn spike_terms(law: &SingularLaw, e: EdgeData, lambda: f64, lambda_star: f64) -> Result<SpikeTerms, TheoryError> {
    let alpha = law.aspect();
    let y = 1.0 / lambda_star;
    let c = ctx(rect_r_raw(law, y, e), || format!("C(1/lambda_star) at lambda_star = {lambda_star}"))?;
    let dc = ctx(rect_r_derivative_raw(law, y, e), || format!("C'(1/lambda_star) at lambda_star = {lambda_star}"))?;
    let tc = t_unchecked(alpha, c);
    let r = (c - t_inverse_unchecked(alpha, lambda * lambda_star / alpha * tc)) / tc;
    Ok(SpikeTerms { c, dc, tc, r })
}

fn m_with(law: &SingularLaw, e: EdgeData, lambda: f64, lambda_star: f64) -> Result<f64, TheoryError> {
    let alpha = law.aspect();
    if flags(&e, alpha, lambda, lambda_star).regime() != Regime::SpikeLowTemp {
        return Ok(0.0);
    }
    let s = spike_terms(law, e, lambda, lambda_star)?;
    let bracket = s.dc / lambda_star * (2.0 * alpha * s.c + alpha + 1.0) - s.tc;
    let m = alpha * (1.0 / (lambda * lambda_star)).sqrt() * s.r * bracket;
    if m < -1e-10 {
        return Err(TheoryError::NegativeM { m, lambda, lambda_star });
    }
    Ok(m)
}

fn q_with(law: &SingularLaw, e: EdgeData, lambda: f64, lambda_star: f64) -> Result<f64, TheoryError> {
    let alpha = law.aspect();
    match flags(&e, alpha, lambda, lambda_star).regime() {
        Regime::HighTemp => Ok(0.0),
        Regime::SpikeLowTemp => {
            let s = spike_terms(law, e, lambda, lambda_star)?;
            Ok(1.0 - alpha / (lambda * lambda_star) * (1.0 - s.r * (2.0 * alpha * s.c + alpha + 1.0)))
        }
        Regime::BulkLowTemp => {
            if !e.h_bar.is_finite() {
                return Err(TheoryError::RegimeImpossible);
            }
            let g2 = e.gamma_bar * e.gamma_bar;
            let a = t_inverse_unchecked(alpha, g2 * e.h_bar);
            let b = t_inverse_unchecked(alpha, lambda * g2 / alpha);
            Ok(1.0 - alpha / lambda * (e.h_bar - (a - b) / g2 * (2.0 * alpha * a + alpha + 1.0)))
        }
    }
}

/// M(λ, λ*), the limiting posterior-mean overlap with the spike.
pub fn m_value(law: &SingularLaw, lambda: f64, lambda_star: f64) -> Result<f64, TheoryError> {
    check_snr(lambda, lambda_star)?;
    m_with(law, edges(law)?, lambda, lambda_star)
}

/// Q(λ, λ*), the limiting overlap between two posterior samples.
pub fn q_value(law: &SingularLaw, lambda: f64, lambda_star: f64) -> Result<f64, TheoryError> {
    check_snr(lambda, lambda_star)?;
    q_with(law, edges(law)?, lambda, lambda_star)
}

fn overlap_from(m: f64, q: f64) -> f64 {
    if q > 1e-14 {
        m / q.sqrt()
    } else {
        0.0
    }
}

/// Limiting MSE (1 − 2M + Q)/2 of the mismatched Bayes estimator.
pub fn bayes_mse(law: &SingularLaw, lambda: f64, lambda_star: f64) -> Result<f64, TheoryError> {
    Ok(theory_point(law, lambda, lambda_star)?.mse)
}

/// Limiting overlap M/√Q of the mismatched Bayes estimator.
pub fn bayes_overlap(law: &SingularLaw, lambda: f64, lambda_star: f64) -> Result<f64, TheoryError> {
    Ok(theory_point(law, lambda, lambda_star)?.overlap)
}

/// All theory quantities at one (λ, λ*).
pub fn theory_point(law: &SingularLaw, lambda: f64, lambda_star: f64) -> Result<TheoryPoint, TheoryError> {
    check_snr(lambda, lambda_star)?;
    let e = edges(law)?;
    let regime = flags(&e, law.aspect(), lambda, lambda_star).regime();
    let m = m_with(law, e, lambda, lambda_star)?;
    let q = q_with(law, e, lambda, lambda_star)?;
    Ok(TheoryPoint {
        lambda,
        lambda_star,
        regime,
        m,
        q,
        mse: (1.0 - 2.0 * m + q) / 2.0,
        overlap: overlap_from(m, q),
    })
}

/// Limiting free energy (1/n)·ln Z_n of the mismatched posterior.
pub fn log_partition(law: &SingularLaw, lambda: f64, lambda_star: f64) -> Result<f64, TheoryError> {
    check_snr(lambda, lambda_star)?;
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let alpha = law.aspect();
    let e = edges(law)?;
    match flags(&e, alpha, lambda, lambda_star).regime() {
        Regime::SpikeLowTemp => {
            let nu = ctx(d_inverse_raw(law, 1.0 / lambda_star, e), || "top singular value".into())?;
            g_value(law, lambda, nu * nu)
        }
        Regime::BulkLowTemp => g_value(law, lambda, e.gamma_bar * e.gamma_bar),
        Regime::HighTemp => {
            let theta = (lambda / alpha).sqrt();
            let mut failure = None;
            let cell = std::cell::RefCell::new(&mut failure);
            let v = integrate(
                |t| {
                    if t == 0.0 {
                        return 0.0;
                    }
                    match rect_r_raw(law, (t * t).min(e.h_bar), e) {
                        Ok(c) => c / t,
                        Err(err) => {
                            cell.borrow_mut().get_or_insert(err);
                            0.0
                        }
                    }
                },
                0.0,
                theta,
                1e-12,
            )
            .map_err(TransformError::from)?;
            if let Some(err) = failure {
                return Err(ctx::<()>(Err(err), || "high-temperature integral".into()).unwrap_err());
            }
            Ok(v)
        }
    }
}

/// g(x) = −(1/2α)[∫ρ̂ ln(x−t) − 2αT⁻¹(λx/α) + (α−1)ln(T⁻¹(λx/α)+1) + ln(λ/α)]
/// with ∫ρ̂ ln(x−t) = α∫ρ ln(x−y) + (1−α) ln x.
fn g_value(law: &SingularLaw, lambda: f64, x: f64) -> Result<f64, TheoryError> {
    let alpha = law.aspect();
    let lp = ctx(law.log_potential(x), || format!("log potential at x = {x}"))?;
    let rho_hat = alpha * lp + (1.0 - alpha) * x.ln();
    let ti = t_inverse_unchecked(alpha, lambda * x / alpha);
    let bracket = rho_hat - 2.0 * alpha * ti + (alpha - 1.0) * (ti + 1.0).ln() + (lambda / alpha).ln();
    Ok(-bracket / (2.0 * alpha))
}
