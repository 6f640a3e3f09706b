//! Singular-value laws and the integrals over their squared-singular-value
//! law ρ that every transform is built from.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use super::TransformError;
use crate::numerics::{brent, integrate};

const QUAD_TOL: f64 = 1e-14;

/// The shape of a singular-value distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawKind {
    /// Limit law of an n×m matrix with i.i.d. N(0, 1/m) entries.
    Gaussian,
    /// Rectangular analogue of the symmetrized Poisson law, C(z) = cz/(1−z).
    RectPoisson { c: f64 },
    /// Finitely many singular values with probability weights.
    Atomic { atoms: Vec<f64>, weights: Vec<f64> },
    /// Uniform weights on observed singular values.
    Empirical { samples: Vec<f64> },
}

/// A singular-value law μ together with the aspect ratio α = n/m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLaw", into = "RawLaw")]
pub struct SingularLaw {
    aspect: f64,
    kind: LawKind,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLaw {
    aspect: f64,
    law: LawKind,
}

impl TryFrom<RawLaw> for SingularLaw {
    type Error = TransformError;

    fn try_from(raw: RawLaw) -> Result<Self, Self::Error> {
        SingularLaw::new(raw.aspect, raw.law)
    }
}

impl From<SingularLaw> for RawLaw {
    fn from(law: SingularLaw) -> Self {
        RawLaw { aspect: law.aspect, law: law.kind }
    }
}

impl SingularLaw {
    pub fn new(aspect: f64, kind: LawKind) -> Result<Self, TransformError> {
        if !(aspect > 0.0 && aspect <= 1.0) {
            return Err(TransformError::InvalidLaw(format!("aspect ratio {aspect} outside (0, 1]")));
        }
        match &kind {
            LawKind::Gaussian => {}
            LawKind::RectPoisson { c } => {
                if !(c.is_finite() && *c > 0.0) {
                    return Err(TransformError::InvalidLaw(format!("Poisson rate {c} must be positive")));
                }
            }
            LawKind::Atomic { atoms, weights } => {
                if atoms.is_empty() || atoms.len() != weights.len() {
                    return Err(TransformError::InvalidLaw(
                        "atoms and weights must be nonempty and of equal length".into(),
                    ));
                }
                if atoms.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                    return Err(TransformError::InvalidLaw("atoms must be finite and nonnegative".into()));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(TransformError::InvalidLaw("weights must be nonnegative".into()));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(TransformError::InvalidLaw(format!("weights sum to {total}, not 1")));
                }
            }
            LawKind::Empirical { samples } => {
                if samples.is_empty() {
                    return Err(TransformError::InvalidLaw("empirical law needs at least one sample".into()));
                }
                if samples.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                    return Err(TransformError::InvalidLaw("samples must be finite and nonnegative".into()));
                }
            }
        }
        Ok(SingularLaw { aspect, kind })
    }

    pub fn gaussian(aspect: f64) -> Result<Self, TransformError> {
        Self::new(aspect, LawKind::Gaussian)
    }

    pub fn rect_poisson(aspect: f64, c: f64) -> Result<Self, TransformError> {
        Self::new(aspect, LawKind::RectPoisson { c })
    }

    pub fn atomic(aspect: f64, atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self, TransformError> {
        Self::new(aspect, LawKind::Atomic { atoms, weights })
    }

    pub fn empirical(aspect: f64, samples: Vec<f64>) -> Result<Self, TransformError> {
        Self::new(aspect, LawKind::Empirical { samples })
    }

    pub fn aspect(&self) -> f64 {
        self.aspect
    }

    pub fn kind(&self) -> &LawKind {
        &self.kind
    }

    /// Same law with a different aspect ratio.
    pub fn with_aspect(&self, aspect: f64) -> Result<Self, TransformError> {
        Self::new(aspect, self.kind.clone())
    }

    /// True for laws whose density vanishes like a square root at the edge.
    pub fn has_soft_edge(&self) -> bool {
        matches!(self.kind, LawKind::Gaussian | LawKind::RectPoisson { .. })
    }

    /// Largest point of the support of μ.
    pub(crate) fn support_edge(&self) -> Result<f64, TransformError> {
        Ok(match &self.kind {
            LawKind::Gaussian => 1.0 + self.aspect.sqrt(),
            LawKind::RectPoisson { c } => poisson_edge(self.aspect, *c)?.1,
            LawKind::Atomic { atoms, weights } => atoms
                .iter()
                .zip(weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(a, _)| *a)
                .fold(0.0, f64::max),
            LawKind::Empirical { samples } => samples.iter().cloned().fold(0.0, f64::max),
        })
    }

    /// ∫ρ(dy) f(y) for the discrete kinds.
    fn discrete_sum(&self, f: impl Fn(f64) -> f64) -> f64 {
        match &self.kind {
            LawKind::Atomic { atoms, weights } => atoms
                .iter()
                .zip(weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(a, w)| w * f(a * a))
                .sum(),
            LawKind::Empirical { samples } => {
                samples.iter().map(|s| f(s * s)).sum::<f64>() / samples.len() as f64
            }
            _ => unreachable!("discrete_sum on an analytic law"),
        }
    }

    /// K(x) = ∫ρ(dy) y/(x−y), defined for x ≥ γ̄² (soft edge) or x > γ̄².
    pub(crate) fn resolvent_k(&self, x: f64) -> Result<f64, TransformError> {
        match &self.kind {
            LawKind::Gaussian => mp_integral_at(self.aspect, x, |y, gap| y / gap),
            LawKind::RectPoisson { c } => {
                let z = x.sqrt();
                let d = poisson_d(self.aspect, *c, z)?;
                let phi1 = poisson_phi1(self.aspect, z, d);
                Ok(z * phi1 - 1.0)
            }
            _ => Ok(self.discrete_sum(|y| y / (x - y))),
        }
    }

    /// L(x) = ∫ρ(dy) y/(x−y)², the magnitude of K′(x).
    pub(crate) fn resolvent_l(&self, x: f64) -> Result<f64, TransformError> {
        match &self.kind {
            LawKind::Gaussian => mp_integral_at(self.aspect, x, |y, gap| y / (gap * gap)),
            LawKind::RectPoisson { .. } => {
                unreachable!("Poisson derivatives use the closed-form transform")
            }
            _ => Ok(self.discrete_sum(|y| y / ((x - y) * (x - y)))),
        }
    }

    /// Stieltjes transform G(x) = ∫ρ(dy)/(x−y).
    pub fn stieltjes(&self, x: f64) -> Result<f64, TransformError> {
        Ok((1.0 + self.resolvent_k(x)?) / x)
    }

    /// ∫ρ(dy) ln(x − y) for x ≥ γ̄².
    pub fn log_potential(&self, x: f64) -> Result<f64, TransformError> {
        match &self.kind {
            LawKind::Gaussian => mp_integral_at(self.aspect, x, |_, gap| gap.ln()),
            LawKind::RectPoisson { c } => poisson_log_potential(self, *c, x),
            _ => Ok(self.discrete_sum(|y| (x - y).ln())),
        }
    }

    /// m_k(ρ) = ∫t^{2k} μ(dt).
    pub(crate) fn raw_moment(&self, k: usize) -> Result<f64, TransformError> {
        let v = match &self.kind {
            LawKind::Gaussian => narayana_moment(self.aspect, k),
            LawKind::RectPoisson { c } => {
                let kappas = vec![*c; k];
                let m = super::cumulants::moments_from_cumulants_f64(&kappas, self.aspect);
                m[k - 1]
            }
            _ => self.discrete_sum(|y| y.powi(k as i32)),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(TransformError::NonFinite { op: "moment", detail: format!("order {k}") })
        }
    }
}

impl SingularLaw {
    /// Density of ρ (the law of squared singular values) at x, for the
    /// soft-edge kinds. Zero outside the support.
    pub fn rho_density(&self, x: f64) -> Result<f64, TransformError> {
        let alpha = self.aspect;
        match &self.kind {
            LawKind::Gaussian => {
                let a = (1.0 - alpha.sqrt()).powi(2);
                let b = (1.0 + alpha.sqrt()).powi(2);
                if x <= a || x >= b {
                    return Ok(0.0);
                }
                Ok(((b - x) * (x - a)).sqrt() / (2.0 * std::f64::consts::PI * alpha * x))
            }
            LawKind::RectPoisson { c } => Ok(poisson_density(alpha, *c, x)),
            _ => Err(TransformError::InvalidLaw("discrete laws have no density".into())),
        }
    }
}

/// Poisson density from the boundary value of the Stieltjes transform: inside
/// the bulk the cubic for D(z) has a complex-conjugate root pair, and
/// ρ(x) = |Im G(x)|/π with G = φ₁/z.
fn poisson_density(alpha: f64, c: f64, x: f64) -> f64 {
    use nalgebra::{Complex, Matrix3};
    if x <= 0.0 {
        return 0.0;
    }
    let z = x.sqrt();
    let z2 = x;
    // z²y³ + (−2z² − (αc−1)(c−1))y² + (z² − (αc+c−2))y − 1 = 0
    let a2 = (-2.0 * z2 - (alpha * c - 1.0) * (c - 1.0)) / z2;
    let a1 = (z2 - (alpha * c + c - 2.0)) / z2;
    let a0 = -1.0 / z2;
    let companion = Matrix3::new(0.0, 0.0, -a0, 1.0, 0.0, -a1, 0.0, 1.0, -a2);
    let roots = companion.complex_eigenvalues();
    let d = roots.iter().copied().max_by(|p, q| p.im.abs().total_cmp(&q.im.abs())).unwrap();
    if d.im.abs() < 1e-12 {
        return 0.0;
    }
    let b = Complex::new((1.0 - alpha) / z, 0.0);
    let disc = (b * b + d * 4.0 * alpha).sqrt();
    let phi = (disc - b) / (2.0 * alpha);
    phi.im.abs() / (std::f64::consts::PI * z)
}

/// ∫ρ_MP(dy) f(y, x−y) for x at or above the squared edge b = c + h.
///
/// The gap x − y = (x − b) + 2h·sin²(φ/2) is formed without cancellation so
/// integrands stay finite when x sits exactly on the edge.
fn mp_integral_at(alpha: f64, x: f64, f: impl Fn(f64, f64) -> f64) -> Result<f64, TransformError> {
    let c = 1.0 + alpha;
    let h = 2.0 * alpha.sqrt();
    let mut dx = x - (c + h);
    if dx < 0.0 {
        if dx > -1e-12 * x {
            dx = 0.0;
        } else {
            return Err(TransformError::Domain {
                op: "resolvent",
                detail: format!("x = {x} lies inside the bulk"),
            });
        }
    }
    mp_integral(alpha, |y, phi| {
        let s = (0.5 * phi).sin();
        f(y, dx + 2.0 * h * s * s)
    })
}

/// ∫ρ_MP(dy) f(y) via y = c + h·cos φ, which removes both edge square roots.
fn mp_integral(alpha: f64, f: impl Fn(f64, f64) -> f64) -> Result<f64, TransformError> {
    let c = 1.0 + alpha;
    let h = 2.0 * alpha.sqrt();
    let g = |phi: f64| {
        let (s, co) = phi.sin_cos();
        let y = c + h * co;
        if y <= 0.0 {
            return 0.0;
        }
        f(y, phi) * h * h * s * s / (2.0 * std::f64::consts::PI * alpha * y)
    };
    Ok(integrate(g, 0.0, std::f64::consts::PI, QUAD_TOL)?)
}

/// Narayana closed form for the moments of the Marchenko–Pastur law.
fn narayana_moment(alpha: f64, k: usize) -> f64 {
    let mut total = 0.0;
    for r in 0..k {
        let term = binom(k, r) * binom(k - 1, r) / (r as f64 + 1.0);
        total += term * alpha.powi(r as i32);
    }
    total
}

fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut v = 1.0;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

fn t_of(alpha: f64, z: f64) -> f64 {
    (alpha * z + 1.0) * (z + 1.0)
}

/// D⁻¹(y)² = T(C(y))/y for the rectangular Poisson law.
pub(crate) fn poisson_inverse_sq(alpha: f64, c: f64, y: f64) -> f64 {
    let cy = c * y / (1.0 - y);
    t_of(alpha, cy) / y
}

/// (h̄, γ̄) for the rectangular Poisson law: h̄ minimizes T(C(y))/y on (0,1).
pub(crate) fn poisson_edge(alpha: f64, c: f64) -> Result<(f64, f64), TransformError> {
    let slope = |y: f64| {
        let cv = c * y / (1.0 - y);
        let dc = c / ((1.0 - y) * (1.0 - y));
        (2.0 * alpha * cv + alpha + 1.0) * dc * y - t_of(alpha, cv)
    };
    let lo = 0.0;
    let mut hi = 0.5;
    while slope(hi) <= 0.0 {
        hi = 0.5 * (1.0 + hi);
        if hi >= 1.0 - 1e-15 {
            return Err(TransformError::RootFinding("Poisson edge bracket failed".into()));
        }
    }
    let h = brent(slope, lo, hi, slope(lo), slope(hi), 0.0)?;
    let gamma = poisson_inverse_sq(alpha, c, h).sqrt();
    Ok((h, gamma))
}

/// D(z) for the rectangular Poisson law: the root in (0, h̄] of
/// z²·y·(1−y)² = (1+(αc−1)y)(1+(c−1)y).
pub(crate) fn poisson_d(alpha: f64, c: f64, z: f64) -> Result<f64, TransformError> {
    let (h, gamma) = poisson_edge(alpha, c)?;
    if z <= gamma && z >= gamma * (1.0 - 1e-12) {
        return Ok(h);
    }
    if z < gamma {
        return Err(TransformError::Domain {
            op: "d_transform",
            detail: format!("z = {z} is inside the bulk (edge {gamma})"),
        });
    }
    let z2 = z * z;
    let q = |y: f64| z2 * y * (1.0 - y) * (1.0 - y) - (1.0 + (alpha * c - 1.0) * y) * (1.0 + (c - 1.0) * y);
    let qh = q(h);
    if qh <= 0.0 {
        return Ok(h);
    }
    Ok(brent(q, 0.0, h, q(0.0), qh, 0.0)?)
}

/// Positive root φ₁ of αφ² + ((1−α)/z)φ − D = 0, i.e. z·G(z²).
pub(crate) fn poisson_phi1(alpha: f64, z: f64, d: f64) -> f64 {
    let b = (1.0 - alpha) / z;
    2.0 * d / (b + (b * b + 4.0 * alpha * d).sqrt())
}

/// ∫ρ ln(x−y) = ln x − ∫_x^∞ K(s)/s ds, with the far tail summed from the
/// moment expansion K(s) = Σ m_k s^{-k}.
fn poisson_log_potential(law: &SingularLaw, c: f64, x: f64) -> Result<f64, TransformError> {
    let alpha = law.aspect();
    let (_, gamma) = poisson_edge(alpha, c)?;
    let cut = (64.0 * gamma * gamma).max(x);
    const TAIL_TERMS: usize = 40;
    let kappas = vec![c; TAIL_TERMS];
    let moments = super::cumulants::moments_from_cumulants_f64(&kappas, alpha);
    let mut tail = 0.0;
    for (k, m) in moments.iter().enumerate() {
        let term = m / ((k + 1) as f64 * cut.powi(k as i32 + 1));
        tail += term;
        if term.abs() < 1e-18 * tail.abs() {
            break;
        }
    }
    let err = RefCell::new(None);
    let body = if cut > x {
        integrate(
            |s| match law.resolvent_k(s) {
                Ok(k) => k / s,
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    0.0
                }
            },
            x,
            cut,
            QUAD_TOL,
        )?
    } else {
        0.0
    };
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok(x.ln() - body - tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form Stieltjes transform of the Marchenko–Pastur law.
    fn mp_stieltjes_closed(alpha: f64, x: f64) -> f64 {
        let a = (1.0 - alpha.sqrt()).powi(2);
        let b = (1.0 + alpha.sqrt()).powi(2);
        (x - 1.0 + alpha - ((x - a) * (x - b)).sqrt()) / (2.0 * alpha * x)
    }

    #[test]
    fn mp_quadrature_matches_closed_form_stieltjes() {
        for &alpha in &[0.1, 0.6, 1.0] {
            let law = SingularLaw::gaussian(alpha).unwrap();
            let b = (1.0 + f64::sqrt(alpha)).powi(2);
            for &x in &[b, b + 1e-6, b + 0.01, b + 1.0, 50.0] {
                let g = law.stieltjes(x).unwrap();
                let g0 = mp_stieltjes_closed(alpha, x);
                assert!((g - g0).abs() < 1e-11 * g0.abs(), "alpha {alpha} x {x}: {g} vs {g0}");
            }
        }
    }

    #[test]
    fn narayana_matches_quadrature() {
        let law = SingularLaw::gaussian(0.6).unwrap();
        for k in 1..=6 {
            let q = mp_integral(0.6, |y, _| y.powi(k as i32)).unwrap();
            assert!((narayana_moment(0.6, k) - q).abs() < 1e-11 * q, "k={k}");
        }
        assert!((law.raw_moment(2).unwrap() - 1.6).abs() < 1e-14);
    }

    #[test]
    fn poisson_edge_is_consistent() {
        let (h, g) = poisson_edge(0.6, 1.0).unwrap();
        assert!((h - 0.3698).abs() < 1e-3, "{h}");
        assert!((g - 2.4087).abs() < 1e-3, "{g}");
        let d = poisson_d(0.6, 1.0, g).unwrap();
        assert!((d - h).abs() < 1e-7);
    }

    #[test]
    fn densities_integrate_to_one_with_correct_variance() {
        for law in [SingularLaw::gaussian(0.6).unwrap(), SingularLaw::rect_poisson(0.6, 1.0).unwrap()] {
            let top = law.support_edge().unwrap();
            let n = 200_000;
            let dt = top / n as f64;
            let (mut mass, mut m1) = (0.0, 0.0);
            for i in 0..n {
                let t = (i as f64 + 0.5) * dt;
                let p = 2.0 * t * law.rho_density(t * t).unwrap();
                mass += p * dt;
                m1 += t * t * p * dt;
            }
            assert!((mass - 1.0).abs() < 1e-3, "{law:?}: {mass}");
            assert!((m1 - 1.0).abs() < 1e-3, "{law:?}: {m1}");
        }
    }

    #[test]
    fn law_json_round_trip() {
        let law = SingularLaw::rect_poisson(0.6, 1.0).unwrap();
        let s = serde_json::to_string(&law).unwrap();
        let back: SingularLaw = serde_json::from_str(&s).unwrap();
        assert_eq!(law, back);
        let bad = r#"{"aspect": 1.5, "law": {"kind": "gaussian"}}"#;
        assert!(serde_json::from_str::<SingularLaw>(bad).is_err());
    }
}
