//! Stationary point of the high-temperature saddle-point system.

use std::cell::RefCell;

use super::law::SingularLaw;
use super::{edges, TransformError};
use crate::numerics::{brent, expand_upward};

/// Solves z₂ = αz₁ − α + 1 together with ∫ρ̂(dt)(z₂ − θ²t/z₁)⁻¹ = 1, where
/// ρ̂ = αρ + (1−α)δ₀.
///
/// Writing x = z₁z₂/θ² and K(x) = ∫ρ(dy) y/(x−y), the second equation becomes
/// (1 + αK(x))/z₂ = 1, whose left side decreases in z₁. The solution satisfies
/// z₁ − 1 = C(θ²).
pub fn high_temp_stationary(law: &SingularLaw, theta: f64) -> Result<(f64, f64), TransformError> {
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(TransformError::Domain {
            op: "high_temp_stationary",
            detail: format!("theta = {theta} must be nonnegative"),
        });
    }
    if theta == 0.0 {
        return Ok((1.0, 1.0));
    }
    let alpha = law.aspect();
    let e = edges(law)?;
    let th2 = theta * theta;
    let edge_x = e.gamma_bar * e.gamma_bar;
    let z2_of = |z1: f64| alpha * z1 - alpha + 1.0;

    let err = RefCell::new(None);
    let h = |z1: f64| {
        let z2 = z2_of(z1);
        let x = z1 * z2 / th2;
        let x = if law.has_soft_edge() { x.max(edge_x) } else { x };
        match law.resolvent_k(x) {
            Ok(k) => (1.0 + alpha * k) / z2 - 1.0,
            Err(ex) => {
                err.borrow_mut().get_or_insert(ex);
                f64::NAN
            }
        }
    };

    // z₁ at which x reaches the squared edge.
    let q = th2 * edge_x;
    let z1_edge = 2.0 * q / ((1.0 - alpha) + ((1.0 - alpha) * (1.0 - alpha) + 4.0 * alpha * q).sqrt());

    let (lo, h_lo) = if law.has_soft_edge() {
        let v = h(z1_edge);
        if v < 0.0 {
            return Err(TransformError::LowTemperature { theta });
        }
        (z1_edge, v)
    } else {
        let mut gap = z1_edge.max(1.0);
        loop {
            let lo = z1_edge + gap;
            let v = h(lo);
            if v > 0.0 || v.is_nan() {
                break (lo, v);
            }
            gap *= 0.5;
            if gap < 1e-300 {
                return Err(TransformError::LowTemperature { theta });
            }
        }
    };
    if let Some(ex) = err.borrow_mut().take() {
        return Err(ex);
    }
    if h_lo == 0.0 {
        return Ok((lo, z2_of(lo)));
    }
    let (hi, h_hi) = expand_upward(h, lo, h_lo, lo.max(1.0) * 2.0)?;
    let z1 = brent(h, lo, hi, h_lo, h_hi, 0.0);
    if let Some(ex) = err.into_inner() {
        return Err(ex);
    }
    let z1 = z1?;
    Ok((z1, z2_of(z1)))
}
