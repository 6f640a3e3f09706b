//! Conversion between moments of ρ and rectangular free cumulants.
//!
//! Both directions use the formal identity C(x) = M(x / T(C(x))) with
//! M(w) = Σ_{k≥1} m_k w^k and C(x) = Σ_{j≥1} κ_{2j} x^j.

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::law::{LawKind, SingularLaw};
use super::TransformError;
use crate::numerics::series;

/// Largest cumulant order handled by the series inversion.
pub const MAX_CUMULANT_ORDER: usize = 16;
const INSTABILITY_LIMIT: f64 = 1e12;

/// Rectangular free cumulants κ₂, κ₄, …, κ_{2J}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulantSequence {
    aspect: f64,
    kappas: Vec<f64>,
}

impl CumulantSequence {
    pub fn new(aspect: f64, kappas: Vec<f64>) -> Result<Self, TransformError> {
        if kappas.is_empty() {
            return Err(TransformError::InvalidLaw("cumulant sequence must be nonempty".into()));
        }
        if let Some(j) = kappas.iter().position(|k| !k.is_finite()) {
            return Err(TransformError::NonFinite { op: "cumulants", detail: format!("order {}", j + 1) });
        }
        Ok(CumulantSequence { aspect, kappas })
    }

    /// The rectangular Gaussian: κ₂ = 1 and all higher cumulants vanish.
    pub fn gaussian(aspect: f64, order: usize) -> Self {
        let mut kappas = vec![0.0; order.max(1)];
        kappas[0] = 1.0;
        CumulantSequence { aspect, kappas }
    }

    /// The rectangular Poisson law: every cumulant equals c.
    pub fn rect_poisson(aspect: f64, c: f64, order: usize) -> Self {
        CumulantSequence { aspect, kappas: vec![c; order.max(1)] }
    }

    /// Cumulants of a law: exact for the analytic kinds, otherwise extracted
    /// from the moments by series inversion.
    pub fn for_law(law: &SingularLaw, order: usize) -> Result<Self, TransformError> {
        match law.kind() {
            LawKind::Gaussian => Ok(Self::gaussian(law.aspect(), order)),
            LawKind::RectPoisson { c } => Ok(Self::rect_poisson(law.aspect(), *c, order)),
            _ => {
                let moments = (1..=order).map(|k| law.raw_moment(k)).collect::<Result<Vec<_>, _>>()?;
                cumulants_from_moments(&moments, law.aspect(), order)
            }
        }
    }

    pub fn aspect(&self) -> f64 {
        self.aspect
    }

    /// Number of cumulants J.
    pub fn order(&self) -> usize {
        self.kappas.len()
    }

    /// κ_{2j} for j ≥ 1; zero beyond the stored order is not assumed.
    pub fn kappa(&self, j: usize) -> Option<f64> {
        self.kappas.get(j.checked_sub(1)?).copied()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.kappas
    }
}

/// Rectangular free cumulants from the moments m_k = m_{2k}(μ), k = 1..J.
///
/// The inversion runs in exact rational arithmetic; every f64 input is an
/// exact dyadic rational, so the only rounding is the final conversion.
pub fn cumulants_from_moments(moments: &[f64], aspect: f64, order: usize) -> Result<CumulantSequence, TransformError> {
    if order == 0 {
        return Err(TransformError::InvalidLaw("cumulant order must be positive".into()));
    }
    if order > MAX_CUMULANT_ORDER {
        return Err(TransformError::OrderCap { requested: order, cap: MAX_CUMULANT_ORDER });
    }
    if moments.len() < order {
        return Err(TransformError::InsufficientMoments { needed: order, got: moments.len() });
    }
    if let Some(k) = moments[..order].iter().position(|m| !m.is_finite()) {
        return Err(TransformError::NonFinite { op: "cumulants_from_moments", detail: format!("moment {}", k + 1) });
    }
    let to_q = |v: f64| BigRational::from_float(v).expect("finite value");
    let alpha = to_q(aspect);
    let m: Vec<BigRational> = moments[..order].iter().map(|&v| to_q(v)).collect();

    let mut kappas: Vec<BigRational> = Vec::with_capacity(order);
    for j in 1..=order {
        let w = series::argument_series(&kappas, &alpha, j);
        let pows = series::powers(&w, j);
        let mut kj = BigRational::zero();
        let mut largest = 0.0f64;
        for (k, mk) in m.iter().enumerate().take(j) {
            let term = mk * &pows[k][j];
            largest = largest.max(term.to_f64().unwrap_or(f64::INFINITY).abs());
            kj += term;
        }
        let value = kj.to_f64().unwrap_or(f64::INFINITY);
        if !(value.abs() <= INSTABILITY_LIMIT && largest <= INSTABILITY_LIMIT) {
            return Err(TransformError::Instability { order: j, magnitude: value.abs().max(largest) });
        }
        kappas.push(kj);
    }
    let values = kappas.iter().map(|k| k.to_f64().unwrap()).collect();
    CumulantSequence::new(aspect, values)
}

/// Moments m_1..m_J from cumulants κ_2..κ_{2J}, in double precision.
pub fn moments_from_cumulants_f64(kappas: &[f64], aspect: f64) -> Vec<f64> {
    let order = kappas.len();
    let w = series::argument_series(kappas, &aspect, order);
    let pows = series::powers(&w, order);
    let mut m = Vec::with_capacity(order);
    for j in 1..=order {
        let mut v = kappas[j - 1];
        for k in 1..j {
            v -= m[k - 1] * pows[k - 1][j];
        }
        m.push(v);
    }
    m
}

/// Moments reconstructed from a cumulant sequence.
pub fn moments_from_cumulants(seq: &CumulantSequence) -> Vec<f64> {
    moments_from_cumulants_f64(seq.as_slice(), seq.aspect())
}
