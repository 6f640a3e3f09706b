//! Rectangular free-probability transforms of singular-value laws.
//!
//! For a law μ with aspect ratio α the D-transform is
//! D(z) = φ(z)·(α·φ(z) + (1−α)/z) with φ(z) = ∫μ(dt) z/(z²−t²), the T-map is
//! T(z) = (αz+1)(z+1), and the rectangular R-transform is
//! C(y) = T⁻¹(y·D⁻¹(y)²) with C(0) = 0.

pub mod cumulants;
mod law;
mod stationary;

use std::cell::RefCell;

use thiserror::Error;

pub use cumulants::{
    cumulants_from_moments, moments_from_cumulants, moments_from_cumulants_f64, CumulantSequence,
    MAX_CUMULANT_ORDER,
};
pub use law::{LawKind, SingularLaw};
pub use stationary::high_temp_stationary;

use crate::numerics::{brent, expand_upward, QuadError, RootError};
use law::{poisson_d, poisson_edge, poisson_inverse_sq};

/// h̄ values above this are reported as +∞.
pub const H_BAR_DIVERGENCE: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("invalid law: {0}")]
    InvalidLaw(String),
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("{op}: non-finite result ({detail})")]
    NonFinite { op: &'static str, detail: String },
    #[error("cumulant series unstable at order {order} (coefficient magnitude {magnitude:e})")]
    Instability { order: usize, magnitude: f64 },
    #[error("need {needed} moments, got {got}")]
    InsufficientMoments { needed: usize, got: usize },
    #[error("cumulant order {requested} exceeds the cap {cap}")]
    OrderCap { requested: usize, cap: usize },
    #[error("z = {z} is too close to the domain boundary for a stencil of step {step:e}")]
    Boundary { z: f64, step: f64 },
    #[error("no high-temperature stationary point at theta = {theta} (low-temperature regime)")]
    LowTemperature { theta: f64 },
    #[error("d_transform is not monotone on the bracket near z = {z}")]
    NonMonotone { z: f64 },
    #[error("root finding failed: {0}")]
    RootFinding(String),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

impl From<RootError> for TransformError {
    fn from(e: RootError) -> Self {
        TransformError::RootFinding(e.to_string())
    }
}

/// Bulk edge γ̄ of μ and h̄ = lim_{z↓γ̄} D(z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeData {
    pub gamma_bar: f64,
    pub h_bar: f64,
}

fn domain(op: &'static str, detail: String) -> TransformError {
    TransformError::Domain { op, detail }
}

fn check_aspect(alpha: f64) -> Result<(), TransformError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(domain("t_map", format!("aspect ratio {alpha} outside (0, 1]")))
    }
}

/// T(z) = (αz+1)(z+1) for z ≥ −1.
pub fn t_map(alpha: f64, z: f64) -> Result<f64, TransformError> {
    check_aspect(alpha)?;
    if !(z >= -1.0) || !z.is_finite() {
        return Err(domain("t_map", format!("z = {z} must be at least -1")));
    }
    Ok((alpha * z + 1.0) * (z + 1.0))
}

/// The increasing inverse of T on [−1, ∞).
pub fn t_inverse(alpha: f64, y: f64) -> Result<f64, TransformError> {
    check_aspect(alpha)?;
    if !(y >= 0.0) || !y.is_finite() {
        return Err(domain("t_inverse", format!("y = {y} must be nonnegative")));
    }
    Ok(t_inverse_unchecked(alpha, y))
}

/// [−(α+1) + √((α−1)² + 4αy)]/(2α), written without cancellation near y = 1.
pub(crate) fn t_inverse_unchecked(alpha: f64, y: f64) -> f64 {
    let disc = ((alpha - 1.0) * (alpha - 1.0) + 4.0 * alpha * y).sqrt();
    2.0 * (y - 1.0) / ((alpha + 1.0) + disc)
}

pub(crate) fn t_unchecked(alpha: f64, z: f64) -> f64 {
    (alpha * z + 1.0) * (z + 1.0)
}

/// m_{2k}(μ) = ∫t^{2k}μ(dt).
pub fn moment(law: &SingularLaw, k: usize) -> Result<f64, TransformError> {
    if k == 0 {
        return Err(domain("moment", "order must be at least 1".into()));
    }
    law.raw_moment(k)
}

/// Bulk edge and h̄.
///
/// Soft-edge laws are evaluated exactly at the edge, where the integrands are
/// bounded. Discrete laws put positive mass at the top atom, so D diverges
/// there and h̄ = +∞.
pub fn edges(law: &SingularLaw) -> Result<EdgeData, TransformError> {
    match law.kind() {
        LawKind::Gaussian => {
            let gamma_bar = law.support_edge()?;
            let h = d_value(law, gamma_bar)?;
            let h_bar = if h > H_BAR_DIVERGENCE { f64::INFINITY } else { h };
            Ok(EdgeData { gamma_bar, h_bar })
        }
        LawKind::RectPoisson { c } => {
            let (h_bar, gamma_bar) = poisson_edge(law.aspect(), *c)?;
            Ok(EdgeData { gamma_bar, h_bar })
        }
        _ => Ok(EdgeData { gamma_bar: law.support_edge()?, h_bar: f64::INFINITY }),
    }
}

/// D(z) without the domain check, valid at the edge of soft-edge laws.
fn d_value(law: &SingularLaw, z: f64) -> Result<f64, TransformError> {
    let alpha = law.aspect();
    match law.kind() {
        LawKind::RectPoisson { c } => poisson_d(alpha, *c, z),
        _ => {
            let p = 1.0 + law.resolvent_k(z * z)?;
            Ok(p * (alpha * p + 1.0 - alpha) / (z * z))
        }
    }
}

/// The D-transform, defined for z strictly above the bulk edge.
pub fn d_transform(law: &SingularLaw, z: f64) -> Result<f64, TransformError> {
    let e = edges(law)?;
    if !(z > e.gamma_bar) || !z.is_finite() {
        return Err(domain("d_transform", format!("z = {z} is not above the bulk edge {}", e.gamma_bar)));
    }
    let v = d_value(law, z)?;
    if !v.is_finite() {
        return Err(TransformError::NonFinite { op: "d_transform", detail: format!("z = {z}") });
    }
    Ok(v)
}

/// D′(z) for z above the bulk edge.
pub fn d_derivative(law: &SingularLaw, z: f64) -> Result<f64, TransformError> {
    let e = edges(law)?;
    if !(z > e.gamma_bar) || !z.is_finite() {
        return Err(domain("d_derivative", format!("z = {z} is not above the bulk edge {}", e.gamma_bar)));
    }
    let alpha = law.aspect();
    match law.kind() {
        LawKind::RectPoisson { c } => {
            let y = poisson_d(alpha, *c, z)?;
            let cv = c * y / (1.0 - y);
            let dc = c / ((1.0 - y) * (1.0 - y));
            let dzdy = ((2.0 * alpha * cv + alpha + 1.0) * dc * y - t_unchecked(alpha, cv)) / (2.0 * y * y * z);
            Ok(1.0 / dzdy)
        }
        _ => {
            let x = z * z;
            let p = 1.0 + law.resolvent_k(x)?;
            let l = law.resolvent_l(x)?;
            let psi = -2.0 * z * l * (2.0 * alpha * p + 1.0 - alpha);
            Ok(psi / x - 2.0 * p * (alpha * p + 1.0 - alpha) / (x * z))
        }
    }
}

/// Functional inverse of D on (0, h̄).
pub fn d_inverse(law: &SingularLaw, y: f64) -> Result<f64, TransformError> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(domain("d_inverse", format!("y = {y} must be positive")));
    }
    let e = edges(law)?;
    if y >= e.h_bar {
        return Err(domain("d_inverse", format!("y = {y} is not below h_bar = {}", e.h_bar)));
    }
    d_inverse_raw(law, y, e)
}

/// D⁻¹ on (0, h̄], returning γ̄ at y = h̄.
pub(crate) fn d_inverse_raw(law: &SingularLaw, y: f64, e: EdgeData) -> Result<f64, TransformError> {
    if y >= e.h_bar {
        return Ok(e.gamma_bar);
    }
    if let LawKind::RectPoisson { c } = law.kind() {
        return Ok(poisson_inverse_sq(law.aspect(), *c, y).sqrt());
    }
    let err = RefCell::new(None);
    let mut f = |z: f64| match d_value(law, z) {
        Ok(v) => v - y,
        Err(ex) => {
            err.borrow_mut().get_or_insert(ex);
            f64::NAN
        }
    };
    let (lo, f_lo) = if law.has_soft_edge() {
        (e.gamma_bar, e.h_bar - y)
    } else {
        let scale = e.gamma_bar.max(1.0);
        let mut gap = scale;
        loop {
            let lo = e.gamma_bar + gap;
            let v = f(lo);
            if v > 0.0 {
                break (lo, v);
            }
            gap *= 0.5;
            if gap < scale * 1e-300 || v.is_nan() {
                return Err(TransformError::NonMonotone { z: lo });
            }
        }
    };
    let start = lo.max(e.gamma_bar + 1.0 / y.sqrt());
    let (hi, f_hi) = expand_upward(&mut f, lo, f_lo, start)?;
    let z = brent(&mut f, lo, hi, f_lo, f_hi, 0.0);
    if let Some(ex) = err.into_inner() {
        return Err(ex);
    }
    Ok(z?)
}

/// The rectangular R-transform C(z) on [0, h̄).
pub fn rect_r(law: &SingularLaw, z: f64) -> Result<f64, TransformError> {
    if !(z >= 0.0) || !z.is_finite() {
        return Err(domain("rect_r", format!("z = {z} must be nonnegative")));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if let LawKind::RectPoisson { c } = law.kind() {
        if z >= 1.0 {
            return Err(domain("rect_r", format!("z = {z} is not below the pole at 1")));
        }
        return Ok(c * z / (1.0 - z));
    }
    let e = edges(law)?;
    if z >= e.h_bar {
        return Err(domain("rect_r", format!("z = {z} is not below h_bar = {}", e.h_bar)));
    }
    rect_r_raw(law, z, e)
}

/// C(z) for 0 ≤ z ≤ h̄.
///
/// With w = D⁻¹(z) and K(x) = ∫ρ(dy) y/(x−y), one has z·w² = T(K(w²)), so
/// C(z) = K(w²) exactly; evaluating K directly avoids the cancellation in T⁻¹
/// near z = 0.
pub(crate) fn rect_r_raw(law: &SingularLaw, z: f64, e: EdgeData) -> Result<f64, TransformError> {
    if z == 0.0 {
        return Ok(0.0);
    }
    match law.kind() {
        LawKind::RectPoisson { c } => Ok(c * z / (1.0 - z)),
        _ => {
            let w = d_inverse_raw(law, z, e)?;
            law.resolvent_k(w * w)
        }
    }
}

/// C′(z) on [0, h̄).
///
/// For the Poisson law this is c/(1−z)². Otherwise the implicit-function
/// derivative of C(z) = K(w²), D(w) = z, is used:
/// C′ = x²L / (xL(2αP+1−α) + P(αP+1−α)) with x = w², P = 1+K(x),
/// L(x) = ∫ρ(dy) y/(x−y)². At z = 0 this is κ₂ = m₂.
pub fn rect_r_derivative(law: &SingularLaw, z: f64) -> Result<f64, TransformError> {
    if !(z >= 0.0) || !z.is_finite() {
        return Err(domain("rect_r_derivative", format!("z = {z} must be nonnegative")));
    }
    if let LawKind::RectPoisson { c } = law.kind() {
        if z >= 1.0 {
            return Err(domain("rect_r_derivative", format!("z = {z} is not below the pole at 1")));
        }
        return Ok(c / ((1.0 - z) * (1.0 - z)));
    }
    if z == 0.0 {
        return law.raw_moment(1);
    }
    let e = edges(law)?;
    if z >= e.h_bar {
        return Err(domain("rect_r_derivative", format!("z = {z} is not below h_bar = {}", e.h_bar)));
    }
    rect_r_derivative_raw(law, z, e)
}

/// C′(z) for 0 < z ≤ h̄; at a soft edge the L → ∞ limit x/(2αP+1−α) is used.
pub(crate) fn rect_r_derivative_raw(law: &SingularLaw, z: f64, e: EdgeData) -> Result<f64, TransformError> {
    let alpha = law.aspect();
    if let LawKind::RectPoisson { c } = law.kind() {
        return Ok(c / ((1.0 - z) * (1.0 - z)));
    }
    if z == 0.0 {
        return law.raw_moment(1);
    }
    let w = d_inverse_raw(law, z, e)?;
    let x = w * w;
    let p = 1.0 + law.resolvent_k(x)?;
    if z >= e.h_bar {
        return Ok(x / (2.0 * alpha * p + 1.0 - alpha));
    }
    let l = law.resolvent_l(x)?;
    Ok(x * x * l / (x * l * (2.0 * alpha * p + 1.0 - alpha) + p * (alpha * p + 1.0 - alpha)))
}

/// C′(z) by Richardson-extrapolated central differences with step
/// max(1e-6, 1e-6·z).
pub fn rect_r_derivative_fd(law: &SingularLaw, z: f64) -> Result<f64, TransformError> {
    let h = (1e-6 * z).max(1e-6);
    let upper = match law.kind() {
        LawKind::RectPoisson { .. } => 1.0,
        _ => edges(law)?.h_bar,
    };
    if z - h < 0.0 || z + h >= upper {
        return Err(TransformError::Boundary { z, step: h });
    }
    let central = |step: f64| -> Result<f64, TransformError> {
        Ok((rect_r(law, z + step)? - rect_r(law, z - step)?) / (2.0 * step))
    };
    let d1 = central(h)?;
    let d2 = central(0.5 * h)?;
    Ok((4.0 * d2 - d1) / 3.0)
}
