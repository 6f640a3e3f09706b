//! Bracketed scalar root finding.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RootError {
    #[error("interval [{a}, {b}] does not bracket a root (f = {fa:e}, {fb:e})")]
    NoBracket { a: f64, b: f64, fa: f64, fb: f64 },
    #[error("function is not finite at {x}")]
    NonFinite { x: f64 },
    #[error("no bracket found while expanding from {start}")]
    ExpansionFailed { start: f64 },
    #[error("root finder did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
}

/// Brent's method on `[a, b]` given the endpoint values.
///
/// Terminates when the bracket is narrower than `abs_tol + 4·ε·|x|`, so a tiny
/// `abs_tol` yields near machine-precision relative accuracy.
pub fn brent<F>(mut f: F, a: f64, b: f64, fa: f64, fb: f64, abs_tol: f64) -> Result<f64, RootError>
where
    F: FnMut(f64) -> f64,
{
    const MAX_ITER: usize = 300;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if !fa.is_finite() {
        return Err(RootError::NonFinite { x: a });
    }
    if !fb.is_finite() {
        return Err(RootError::NonFinite { x: b });
    }
    if fa.signum() == fb.signum() {
        return Err(RootError::NoBracket { a, b, fa, fb });
    }

    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..MAX_ITER {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * abs_tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(xm) };
        fb = f(b);
        if !fb.is_finite() {
            return Err(RootError::NonFinite { x: b });
        }
    }
    Err(RootError::NoConvergence { iterations: MAX_ITER })
}

/// Grows `hi` geometrically from `start` until `f(hi)` changes sign relative
/// to `f_lo`. Returns `(hi, f(hi))`.
pub fn expand_upward<F>(mut f: F, lo: f64, f_lo: f64, start: f64) -> Result<(f64, f64), RootError>
where
    F: FnMut(f64) -> f64,
{
    let mut step = (start - lo).max(1e-3);
    let mut hi = lo + step;
    for _ in 0..200 {
        let fh = f(hi);
        if !fh.is_finite() {
            return Err(RootError::NonFinite { x: hi });
        }
        if fh == 0.0 || fh.signum() != f_lo.signum() {
            return Ok((hi, fh));
        }
        step *= 2.0;
        hi = lo + step;
    }
    Err(RootError::ExpansionFailed { start })
}
