//! Adaptive Gauss–Legendre quadrature on 256-node panels.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;
use thiserror::Error;

const PANEL_NODES: usize = 256;
const MAX_DEPTH: u32 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("integrand produced a non-finite value on [{a}, {b}]")]
    NonFinite { a: f64, b: f64 },
    #[error("quadrature failed to reach tolerance on [{a}, {b}] (estimate {estimate:e})")]
    NoConvergence { a: f64, b: f64, estimate: f64 },
}

fn rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(PANEL_NODES).unwrap()))
}

/// Integrates `f` over `[a, b]` to relative tolerance `rel_tol`.
///
/// Each panel is compared against the sum over its two halves; panels that
/// disagree are bisected. Endpoint singularities that are integrable are
/// handled by repeated bisection since Gauss nodes never touch the endpoints.
pub fn integrate<F>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64, QuadError>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(0.0);
    }
    let whole = panel(&f, a, b)?;
    let scale = whole.abs();
    recurse(&f, a, b, whole, rel_tol, scale, 0)
}

fn panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<f64, QuadError> {
    let v = rule().integrate(a, b, f);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(QuadError::NonFinite { a, b })
    }
}

fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    rel_tol: f64,
    scale: f64,
    depth: u32,
) -> Result<f64, QuadError> {
    let mid = 0.5 * (a + b);
    let left = panel(f, a, mid)?;
    let right = panel(f, mid, b)?;
    let halves = left + right;
    let scale = scale.max(halves.abs());
    let err = (halves - whole).abs();
    if err <= rel_tol * scale || err <= 1e-300 || mid <= a || mid >= b {
        return Ok(halves);
    }
    if depth >= MAX_DEPTH {
        return Err(QuadError::NoConvergence { a, b, estimate: halves });
    }
    let l = recurse(f, a, mid, left, rel_tol, scale, depth + 1)?;
    let r = recurse(f, mid, b, right, rel_tol, scale, depth + 1)?;
    Ok(l + r)
}
