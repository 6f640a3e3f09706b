//! Spiked instances Y = √(λ*/(mn))·u*v*ᵀ + Z and their error metrics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{rng_from_seed, SimRng};
use crate::transforms::{edges, LawKind, SingularLaw, TransformError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("invalid dimensions n = {n}, m = {m} (need 1 ≤ n ≤ m)")]
    Dimensions { n: usize, m: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: (usize, usize), got: (usize, usize) },
    #[error("invalid noise settings: {0}")]
    Spec(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// How the noise matrix Z is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// I.i.d. N(0, 1/m) entries.
    #[serde(rename = "gaussian")]
    GaussianIid,
    /// Σ_{k ≤ round(cn)} u_k v_kᵀ with u_k, v_k uniform on unit spheres.
    RectPoisson { c: f64 },
    /// U·diag(σ)·Vᵀ with Haar U, V and σ drawn from the law.
    FromLaw { law: SingularLaw },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        match self {
            NoiseSpec::RectPoisson { c } if !(c.is_finite() && *c > 0.0) => {
                Err(EnsembleError::Spec(format!("Poisson rate {c} must be positive")))
            }
            _ => Ok(()),
        }
    }

    /// Limiting singular-value law of the noise at aspect ratio α.
    pub fn law(&self, aspect: f64) -> Result<SingularLaw, EnsembleError> {
        self.validate()?;
        Ok(match self {
            NoiseSpec::GaussianIid => SingularLaw::gaussian(aspect)?,
            NoiseSpec::RectPoisson { c } => SingularLaw::rect_poisson(aspect, *c)?,
            NoiseSpec::FromLaw { law } => law.with_aspect(aspect)?,
        })
    }
}

/// One sampled dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct SpikedInstance {
    pub y: DMatrix<f64>,
    pub u_star: DVector<f64>,
    pub v_star: DVector<f64>,
    pub lambda_star: f64,
    pub aspect: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl SpikedInstance {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn m(&self) -> usize {
        self.y.ncols()
    }

    /// Scale √(λ*/(mn)) of the spike.
    pub fn spike_scale(&self) -> f64 {
        (self.lambda_star / (self.n() as f64 * self.m() as f64)).sqrt()
    }

    /// The pure noise Z = Y − √(λ*/(mn))·u*v*ᵀ.
    pub fn noise_matrix(&self) -> DMatrix<f64> {
        let mut z = self.y.clone();
        z.ger(-self.spike_scale(), &self.u_star, &self.v_star, 1.0);
        z
    }
}

/// Uniform draw from the sphere of the given radius in ℝ^dim.
pub fn sample_sphere<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    assert!(dim >= 1 && radius > 0.0, "sample_sphere needs dim >= 1 and radius > 0");
    loop {
        let v: DVector<f64> = DVector::from_fn(dim, |_, _| Distribution::<f64>::sample(&StandardNormal, rng));
        let norm = v.norm();
        if norm > 0.0 {
            return v * (radius / norm);
        }
    }
}

/// Samples an n×m noise matrix.
pub fn sample_noise<R: Rng + ?Sized>(
    spec: &NoiseSpec,
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>, EnsembleError> {
    if n == 0 || n > m {
        return Err(EnsembleError::Dimensions { n, m });
    }
    spec.validate()?;
    match spec {
        NoiseSpec::GaussianIid => {
            let s = 1.0 / (m as f64).sqrt();
            Ok(DMatrix::from_fn(n, m, |_, _| s * Distribution::<f64>::sample(&StandardNormal, rng)))
        }
        NoiseSpec::RectPoisson { c } => {
            let terms = ((c * n as f64).round() as usize).max(1);
            let mut a = DMatrix::zeros(n, terms);
            let mut b = DMatrix::zeros(m, terms);
            for k in 0..terms {
                a.set_column(k, &sample_sphere(n, 1.0, rng));
                b.set_column(k, &sample_sphere(m, 1.0, rng));
            }
            Ok(a * b.transpose())
        }
        NoiseSpec::FromLaw { law } => {
            let law = law.with_aspect(n as f64 / m as f64)?;
            let sigma = sample_singular_values(&law, n, rng)?;
            let u = haar_columns(n, n, rng);
            let v = haar_columns(m, n, rng);
            let mut us = u;
            for (j, s) in sigma.iter().enumerate() {
                us.column_mut(j).scale_mut(*s);
            }
            Ok(us * v.transpose())
        }
    }
}

/// First `k` columns of a Haar-distributed d×d orthogonal matrix.
pub fn haar_columns<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, k, |_, _| Distribution::<f64>::sample(&StandardNormal, rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// I.i.d. draws from the singular-value law μ.
pub fn sample_singular_values<R: Rng + ?Sized>(
    law: &SingularLaw,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>, EnsembleError> {
    match law.kind() {
        LawKind::Atomic { atoms, weights } => {
            let dist = rand_distr::weighted::WeightedIndex::new(weights)
                .map_err(|e| EnsembleError::Spec(e.to_string()))?;
            Ok((0..count).map(|_| atoms[dist.sample(rng)]).collect())
        }
        LawKind::Empirical { samples } => {
            Ok((0..count).map(|_| samples[rng.random_range(0..samples.len())]).collect())
        }
        _ => {
            let table = QuantileTable::new(law)?;
            Ok((0..count).map(|_| table.quantile(rng.random::<f64>())).collect())
        }
    }
}

/// Tabulated CDF of μ for soft-edge laws, inverted by linear interpolation.
struct QuantileTable {
    t: Vec<f64>,
    cdf: Vec<f64>,
}

impl QuantileTable {
    const CELLS: usize = 8192;

    fn new(law: &SingularLaw) -> Result<Self, EnsembleError> {
        let top = edges(law)?.gamma_bar;
        let dt = top / Self::CELLS as f64;
        let mut t = Vec::with_capacity(Self::CELLS + 1);
        let mut cdf = Vec::with_capacity(Self::CELLS + 1);
        let mut acc = 0.0;
        let dens = |s: f64| -> Result<f64, EnsembleError> { Ok(2.0 * s * law.rho_density(s * s)?) };
        let mut prev = dens(0.0)?;
        t.push(0.0);
        cdf.push(0.0);
        for i in 1..=Self::CELLS {
            let s = i as f64 * dt;
            let mid = dens(s - 0.5 * dt)?;
            let cur = dens(s)?;
            acc += dt * (prev + 4.0 * mid + cur) / 6.0;
            prev = cur;
            t.push(s);
            cdf.push(acc);
        }
        let total = acc;
        for v in cdf.iter_mut() {
            *v /= total;
        }
        Ok(QuantileTable { t, cdf })
    }

    fn quantile(&self, p: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < p).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.5 };
        self.t[i - 1] + w * (self.t[i] - self.t[i - 1])
    }
}

/// Builds Y = √(λ*/(mn))·u*v*ᵀ + Z deterministically from `seed`.
pub fn build_instance(
    lambda_star: f64,
    spec: &NoiseSpec,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<SpikedInstance, EnsembleError> {
    if !(lambda_star >= 0.0) || !lambda_star.is_finite() {
        return Err(EnsembleError::Spec(format!("lambda_star = {lambda_star} must be nonnegative")));
    }
    if n == 0 || n > m {
        return Err(EnsembleError::Dimensions { n, m });
    }
    let mut rng: SimRng = rng_from_seed(seed);
    let u_star = sample_sphere(n, (n as f64).sqrt(), &mut rng);
    let v_star = sample_sphere(m, (m as f64).sqrt(), &mut rng);
    let mut y = sample_noise(spec, n, m, &mut rng)?;
    let scale = (lambda_star / (n as f64 * m as f64)).sqrt();
    if scale > 0.0 {
        y.ger(scale, &u_star, &v_star, 1.0);
    }
    Ok(SpikedInstance {
        y,
        u_star,
        v_star,
        lambda_star,
        aspect: n as f64 / m as f64,
        noise: spec.clone(),
        seed,
    })
}

/// (1/2mn)·‖u*v*ᵀ − estimate‖²_F.
pub fn mse_of(estimate: &DMatrix<f64>, inst: &SpikedInstance) -> Result<f64, EnsembleError> {
    let (n, m) = (inst.n(), inst.m());
    if estimate.shape() != (n, m) {
        return Err(EnsembleError::Shape { expected: (n, m), got: estimate.shape() });
    }
    let mut total = 0.0;
    for j in 0..m {
        let vj = inst.v_star[j];
        for i in 0..n {
            let d = inst.u_star[i] * vj - estimate[(i, j)];
            total += d * d;
        }
    }
    Ok(total / (2.0 * n as f64 * m as f64))
}

/// MSE of the rank-one estimate u·vᵀ without forming the matrix.
pub fn mse_of_rank_one(u: &DVector<f64>, v: &DVector<f64>, inst: &SpikedInstance) -> f64 {
    let nm = inst.n() as f64 * inst.m() as f64;
    let cross = u.dot(&inst.u_star) * v.dot(&inst.v_star);
    let own = u.norm_squared() * v.norm_squared();
    (inst.u_star.norm_squared() * inst.v_star.norm_squared() - 2.0 * cross + own) / (2.0 * nm)
}

/// |⟨u,u*⟩|·|⟨v,v*⟩| / (‖u‖‖u*‖‖v‖‖v*‖), zero when either estimate vanishes.
pub fn overlap_of(u: &DVector<f64>, v: &DVector<f64>, inst: &SpikedInstance) -> f64 {
    overlap_with(u, v, &inst.u_star, &inst.v_star)
}

pub(crate) fn overlap_with(u: &DVector<f64>, v: &DVector<f64>, us: &DVector<f64>, vs: &DVector<f64>) -> f64 {
    let (nu, nv) = (u.norm(), v.norm());
    if nu < 1e-12 || nv < 1e-12 {
        return 0.0;
    }
    let val = u.dot(us).abs() * v.dot(vs).abs() / (nu * us.norm() * nv * vs.norm());
    val.min(1.0)
}
