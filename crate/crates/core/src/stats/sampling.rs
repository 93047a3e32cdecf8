//! Multivariate normal and Wishart draws.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::linalg::{chol, chol_psd, LowerTriangular, SymMatrix};
use crate::error::{Error, Result};

/// Draws from `N(mean, cov)` with a precomputed factor.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: Vec<f64>,
    factor: LowerTriangular,
}

impl MvnSampler {
    /// Requires a positive definite covariance.
    pub fn new(mean: Vec<f64>, cov: &SymMatrix) -> Result<Self> {
        Self::with_factor(mean, cov, chol(cov)?)
    }

    /// Accepts a singular (positive semi-definite) covariance.
    pub fn new_psd(mean: Vec<f64>, cov: &SymMatrix) -> Result<Self> {
        Self::with_factor(mean, cov, chol_psd(cov)?)
    }

    fn with_factor(mean: Vec<f64>, cov: &SymMatrix, factor: LowerTriangular) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::domain(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        Ok(MvnSampler { mean, factor })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Writes one draw into `out` (length `dim`), using `z` as scratch.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        self.factor.mul_vec(z, out);
        for (o, m) in out.iter_mut().zip(&self.mean) {
            *o += m;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let mut z = vec![0.0; d];
        let mut out = vec![0.0; d];
        self.sample_into(rng, &mut z, &mut out);
        out
    }
}

/// One draw from `N(mean, cov)`.
pub fn mvn_sample<R: Rng + ?Sized>(mean: &[f64], cov: &SymMatrix, rng: &mut R) -> Result<Vec<f64>> {
    Ok(MvnSampler::new(mean.to_vec(), cov)?.sample(rng))
}

/// Draws from `W(scale, df)` by the Bartlett decomposition.
#[derive(Debug, Clone)]
pub struct WishartSampler {
    factor: LowerTriangular,
    df: f64,
    chi: Vec<ChiSquared<f64>>,
}

impl WishartSampler {
    /// Requires a positive definite scale and `df >= dim`.
    pub fn new(scale: &SymMatrix, df: f64) -> Result<Self> {
        Self::with_factor(scale, df, chol(scale)?)
    }

    /// Accepts a singular scale; the draw is then a singular Wishart matrix.
    pub fn new_psd(scale: &SymMatrix, df: f64) -> Result<Self> {
        Self::with_factor(scale, df, chol_psd(scale)?)
    }

    fn with_factor(scale: &SymMatrix, df: f64, factor: LowerTriangular) -> Result<Self> {
        let d = scale.dim();
        if !(df >= d as f64) || !df.is_finite() {
            return Err(Error::domain(format!("Wishart df {df} must be at least the dimension {d}")));
        }
        let chi = (0..d)
            .map(|i| ChiSquared::new(df - i as f64).map_err(|e| Error::domain(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok(WishartSampler { factor, df, chi })
    }

    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SymMatrix {
        let d = self.dim();
        // Bartlett factor B: sqrt(chi2(df - i)) on the diagonal, N(0,1) below.
        let mut b = vec![0.0; d * d];
        for i in 0..d {
            b[i * d + i] = self.chi[i].sample(rng).sqrt();
            for j in 0..i {
                b[i * d + j] = StandardNormal.sample(rng);
            }
        }
        // M = L B is lower triangular; the draw is M Mᵀ.
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut acc = 0.0;
                for k in j..=i {
                    acc += self.factor.get(i, k) * b[k * d + j];
                }
                m[i * d + j] = acc;
            }
        }
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut acc = 0.0;
                for k in 0..=j {
                    acc += m[i * d + k] * m[j * d + k];
                }
                w[i * d + j] = acc;
                w[j * d + i] = acc;
            }
        }
        SymMatrix::new(d, w).expect("Wishart draw is symmetric by construction")
    }
}

/// One draw from `W(scale, df)`.
pub fn wishart_sample<R: Rng + ?Sized>(scale: &SymMatrix, df: f64, rng: &mut R) -> Result<SymMatrix> {
    Ok(WishartSampler::new(scale, df)?.sample(rng))
}
