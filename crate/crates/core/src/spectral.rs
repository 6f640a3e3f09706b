//! Top singular pair of Y and the spectral estimators J·u₁v₁ᵀ.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::bayes_theory::TheoryError;
use crate::ensembles::{mse_of_rank_one, overlap_of, EnsembleError, SpikedInstance};
use crate::rng::{derive_seed, rng_from_seed};
use crate::transforms::{edges, rect_r_derivative_raw, rect_r_raw, t_unchecked, SingularLaw, TransformError};

/// Lanczos convergence target on the Ritz residual, relative to σ₁².
pub const LANCZOS_TOL: f64 = 1e-10;
/// Accepted residual ‖Yv̂ − σ₁û‖ relative to σ₁.
pub const TRIPLET_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 10_000;
const KRYLOV_DIM: usize = 300;
const START_STREAM: u64 = 0x5bd1_e995;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("matrix is zero or empty")]
    ZeroMatrix,
    #[error("top singular pair did not converge after {iterations} products (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

impl From<TransformError> for SpectralError {
    fn from(e: TransformError) -> Self {
        SpectralError::Theory(e.into())
    }
}

/// Rank-one spectral estimate J·u₁v₁ᵀ with ‖u₁‖² = n and ‖v₁‖² = m.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    pub u1: DVector<f64>,
    pub v1: DVector<f64>,
    pub sigma1: f64,
    pub j_scale: f64,
}

impl SpectralEstimate {
    /// The same singular pair with a different scaling.
    pub fn rescaled(&self, j_scale: f64) -> Self {
        SpectralEstimate { j_scale, ..self.clone() }
    }

    pub fn mse(&self, inst: &SpikedInstance) -> f64 {
        mse_of_rank_one(&(&self.u1 * self.j_scale), &self.v1, inst)
    }

    pub fn overlap(&self, inst: &SpikedInstance) -> f64 {
        if self.j_scale == 0.0 {
            return 0.0;
        }
        overlap_of(&self.u1, &self.v1, inst)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        &self.u1 * self.v1.transpose() * self.j_scale
    }
}

/// Top singular triplet with the default start vector.
pub fn top_singular_triplet(y: &DMatrix<f64>) -> Result<(f64, DVector<f64>, DVector<f64>), SpectralError> {
    top_singular_triplet_seeded(y, 0)
}

/// Top singular triplet (σ₁, u₁, v₁) via restarted Lanczos on the smaller
/// Gram matrix with full reorthogonalization. The start vector is drawn from
/// `seed`. Vectors are scaled to norms √n and √m with u₁[0] ≥ 0.
pub fn top_singular_triplet_seeded(
    y: &DMatrix<f64>,
    seed: u64,
) -> Result<(f64, DVector<f64>, DVector<f64>), SpectralError> {
    let (n, m) = y.shape();
    if n == 0 || m == 0 || y.iter().all(|&v| v == 0.0) {
        return Err(SpectralError::ZeroMatrix);
    }
    let wide = n <= m;
    let p = n.min(m);
    let q = n.max(m);
    let mut tmp = DVector::<f64>::zeros(q);
    // A = BBᵀ with B = Y if n ≤ m, else Yᵀ.
    let mut apply = |x: &DVector<f64>, out: &mut DVector<f64>| {
        if wide {
            tmp.gemv_tr(1.0, y, x, 0.0);
            out.gemv(1.0, y, &tmp, 0.0);
        } else {
            tmp.gemv(1.0, y, x, 0.0);
            out.gemv_tr(1.0, y, &tmp, 0.0);
        }
    };

    let mut rng = rng_from_seed(derive_seed(seed, START_STREAM));
    let mut start = DVector::from_fn(p, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut rng));
    start /= start.norm();

    let kmax = KRYLOV_DIM.min(p);
    let mut products = 0usize;
    let mut w = DVector::<f64>::zeros(p);
    let mut last_residual = f64::INFINITY;
    while products < MAX_ITERATIONS {
        let mut basis: Vec<DVector<f64>> = vec![start.clone()];
        let mut diag: Vec<f64> = Vec::with_capacity(kmax);
        let mut off: Vec<f64> = Vec::with_capacity(kmax);
        let mut ritz = None;
        for j in 0..kmax {
            apply(&basis[j], &mut w);
            products += 1;
            diag.push(basis[j].dot(&w));
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&w);
                    w.axpy(-c, b, 1.0);
                }
            }
            let beta = w.norm();
            let exhausted = j + 1 == kmax || products >= MAX_ITERATIONS;
            let breakdown = beta <= 1e-14 * diag.iter().fold(0.0f64, |a, &d| a.max(d.abs()));
            if (j + 1) % 10 == 0 || exhausted || breakdown {
                let (theta, s) = top_ritz(&diag, &off);
                let estimate = beta * s[s.len() - 1].abs();
                if exhausted || breakdown || estimate <= LANCZOS_TOL * theta {
                    ritz = Some((theta, s));
                    break;
                }
            }
            off.push(beta);
            basis.push(&w / beta);
        }
        let (_, s) = ritz.expect("Lanczos loop always yields a Ritz pair");
        let mut u = DVector::<f64>::zeros(p);
        for (b, &c) in basis.iter().zip(s.iter()) {
            u.axpy(c, b, 1.0);
        }
        u /= u.norm();
        apply(&u, &mut w);
        products += 1;
        let theta = u.dot(&w);
        if theta <= 0.0 {
            return Err(SpectralError::ZeroMatrix);
        }
        let residual = (&w - &u * theta).norm() / theta;
        last_residual = residual;
        if residual <= TRIPLET_TOL {
            let sigma = theta.sqrt();
            let mut v = if wide { y.tr_mul(&u) } else { y * &u };
            v /= sigma;
            let (mut uu, mut vv) = if wide { (u, v) } else { (v, u) };
            let vn = vv.norm();
            vv /= vn;
            if uu[0] < 0.0 {
                uu.neg_mut();
                vv.neg_mut();
            }
            uu *= (n as f64).sqrt();
            vv *= (m as f64).sqrt();
            return Ok((sigma, uu, vv));
        }
        start = u;
    }
    Err(SpectralError::NoConvergence { iterations: products, residual: last_residual })
}

/// Largest eigenpair of the symmetric tridiagonal matrix (diag, off).
fn top_ritz(diag: &[f64], off: &[f64]) -> (f64, DVector<f64>) {
    let k = diag.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            diag[i]
        } else if i + 1 == j {
            off[i]
        } else if j + 1 == i {
            off[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let idx = eig.eigenvalues.imax();
    (eig.eigenvalues[idx], eig.eigenvectors.column(idx).into_owned())
}

/// J(μ, λ*) = |T(c) − (1/λ*)C′(1/λ*)(2αc+α+1)| / √T(c) with c = C(1/λ*),
/// or 0 when h̄λ* < 1.
pub fn j_scaling(law: &SingularLaw, lambda_star: f64) -> Result<f64, SpectralError> {
    if !(lambda_star > 0.0 && lambda_star.is_finite()) {
        return Err(TheoryError::Snr(format!("lambda_star = {lambda_star} must be positive")).into());
    }
    let e = edges(law)?;
    if e.h_bar * lambda_star < 1.0 {
        return Ok(0.0);
    }
    let alpha = law.aspect();
    let y = 1.0 / lambda_star;
    let c = rect_r_raw(law, y, e)?;
    let dc = rect_r_derivative_raw(law, y, e)?;
    let tc = t_unchecked(alpha, c);
    Ok((tc - y * dc * (2.0 * alpha * c + alpha + 1.0)).abs() / tc.sqrt())
}

fn raw_estimate(inst: &SpikedInstance) -> Result<SpectralEstimate, SpectralError> {
    let (sigma1, u1, v1) = top_singular_triplet_seeded(&inst.y, inst.seed)?;
    Ok(SpectralEstimate { u1, v1, sigma1, j_scale: 0.0 })
}

/// OptSpec: scaling J(μ, λ*) with μ the true noise law.
pub fn optspec(inst: &SpikedInstance) -> Result<SpectralEstimate, SpectralError> {
    let law = inst.noise.law(inst.aspect)?;
    let j = j_scaling(&law, inst.lambda_star)?;
    Ok(raw_estimate(inst)?.rescaled(j))
}

/// GauSpec: scaling J(μ_G, λ) with μ_G the rectangular Gaussian law and λ the assumed SNR.
pub fn gauspec(inst: &SpikedInstance, lambda: f64) -> Result<SpectralEstimate, SpectralError> {
    let j = j_scaling(&SingularLaw::gaussian(inst.aspect)?, lambda)?;
    Ok(raw_estimate(inst)?.rescaled(j))
}

/// (OptSpec, GauSpec) sharing one singular-pair computation.
pub fn spectral_pair(
    inst: &SpikedInstance,
    lambda: f64,
) -> Result<(SpectralEstimate, SpectralEstimate), SpectralError> {
    let base = raw_estimate(inst)?;
    let j_os = j_scaling(&inst.noise.law(inst.aspect)?, inst.lambda_star)?;
    let j_gs = j_scaling(&SingularLaw::gaussian(inst.aspect)?, lambda)?;
    Ok((base.rescaled(j_os), base.rescaled(j_gs)))
}

/// Limiting (MSE(OS), MSE(GS)) = (½(1−J_OS²), ½(1+J_GS²−2J_GS·J_OS)).
pub fn spectral_theory_mse(law: &SingularLaw, lambda: f64, lambda_star: f64) -> Result<(f64, f64), SpectralError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(TheoryError::Snr(format!("lambda = {lambda} must be positive")).into());
    }
    let j_os = j_scaling(law, lambda_star)?;
    let j_gs = j_scaling(&SingularLaw::gaussian(law.aspect())?, lambda)?;
    Ok((0.5 * (1.0 - j_os * j_os), 0.5 * (1.0 + j_gs * j_gs - 2.0 * j_gs * j_os)))
}
