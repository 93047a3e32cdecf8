//! Small dense symmetric matrices and Cholesky factors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    /// Builds from row-major entries; rejects asymmetry above 1e-12 relative.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("matrix dimension must be positive"));
        }
        if entries.len() != dim * dim {
            return Err(Error::domain(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("matrix has non-finite entries"));
        }
        let scale = entries.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (entries[i * dim + j], entries[j * dim + i]);
                if (a - b).abs() > 1e-12 * scale {
                    return Err(Error::domain(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(SymMatrix { dim, entries })
    }

    pub fn from_rows<const N: usize>(rows: [[f64; N]; N]) -> Result<Self> {
        Self::new(N, rows.iter().flatten().copied().collect())
    }

    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        SymMatrix { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SymMatrix {
            dim: self.dim,
            entries: self.entries.iter().map(|v| v * factor).collect(),
        }
    }

    /// Square sub-block on the given index set.
    pub fn block(&self, idx: &[usize]) -> Self {
        let d = idx.len();
        let mut entries = Vec::with_capacity(d * d);
        for &i in idx {
            for &j in idx {
                entries.push(self.get(i, j));
            }
        }
        SymMatrix { dim: d, entries }
    }

    /// `A · self · Aᵀ` for a row-major `rows x dim` matrix `a`.
    pub fn congruence(&self, a: &[f64], rows: usize) -> Result<Self> {
        let n = self.dim;
        if a.len() != rows * n {
            return Err(Error::domain("congruence: shape mismatch"));
        }
        let mut out = vec![0.0; rows * rows];
        for r in 0..rows {
            for c in 0..=r {
                let mut acc = 0.0;
                for i in 0..n {
                    let ari = a[r * n + i];
                    if ari == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        acc += ari * self.get(i, j) * a[c * n + j];
                    }
                }
                out[r * rows + c] = acc;
                out[c * rows + r] = acc;
            }
        }
        Ok(SymMatrix { dim: rows, entries: out })
    }

    /// Adds another matrix of the same size.
    pub fn add(&self, other: &SymMatrix) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::domain("add: dimension mismatch"));
        }
        Ok(SymMatrix {
            dim: self.dim,
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect(),
        })
    }
}

/// Lower-triangular factor stored row-major (upper part is zero).
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    dim: usize,
    entries: Vec<f64>,
}

impl LowerTriangular {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// `L · v`.
    pub fn mul_vec(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.entries[i * d + j] * v[j];
            }
            out[i] = acc;
        }
    }

    /// `L · Lᵀ`.
    pub fn gram(&self) -> SymMatrix {
        let d = self.dim;
        let mut entries = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut acc = 0.0;
                for k in 0..=j {
                    acc += self.get(i, k) * self.get(j, k);
                }
                entries[i * d + j] = acc;
                entries[j * d + i] = acc;
            }
        }
        SymMatrix { dim: d, entries }
    }
}

/// Cholesky factor of a positive definite matrix.
pub fn chol(m: &SymMatrix) -> Result<LowerTriangular> {
    factor(m, false)
}

/// Cholesky factor of a positive semi-definite matrix.
///
/// Columns whose pivot vanishes (relative to the diagonal scale) are set to
/// zero, so `L · Lᵀ` still reproduces `m`. Used for sampling from degenerate
/// covariances such as perfectly correlated endpoints.
pub fn chol_psd(m: &SymMatrix) -> Result<LowerTriangular> {
    factor(m, true)
}

fn factor(m: &SymMatrix, allow_singular: bool) -> Result<LowerTriangular> {
    let d = m.dim;
    let scale = (0..d).fold(0.0f64, |s, i| s.max(m.get(i, i).abs()));
    let eps = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut pivot = m.get(j, j);
        for k in 0..j {
            pivot -= l[j * d + k] * l[j * d + k];
        }
        if pivot <= eps {
            if allow_singular && pivot > -eps * 1e3 {
                // column stays zero
                continue;
            }
            return Err(Error::Decomposition { column: j, pivot });
        }
        let ljj = pivot.sqrt();
        l[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut acc = m.get(i, j);
            for k in 0..j {
                acc -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = acc / ljj;
        }
    }
    Ok(LowerTriangular { dim: d, entries: l })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rng::RngStream;
    use rand::Rng;

    fn max_abs_diff(a: &SymMatrix, b: &SymMatrix) -> f64 {
        a.entries().iter().zip(b.entries()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_factor() {
        let l = chol(&SymMatrix::identity(4)).unwrap();
        assert_eq!(l.gram(), SymMatrix::identity(4));
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(l.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn hand_checked_two_by_two() {
        let m = SymMatrix::from_rows([[4.0, 2.0], [2.0, 5.0]]).unwrap();
        let l = chol(&m).unwrap();
        assert_eq!((l.get(0, 0), l.get(0, 1), l.get(1, 0), l.get(1, 1)), (2.0, 0.0, 1.0, 2.0));
    }

    #[test]
    fn random_pd_reconstructs() {
        let mut rng = RngStream::new(7, 3);
        for _ in 0..50 {
            // B Bᵀ + I is PD
            let b: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut e = vec![0.0; 16];
            for i in 0..4 {
                for j in 0..4 {
                    e[i * 4 + j] = (0..4).map(|k| b[i * 4 + k] * b[j * 4 + k]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
                }
            }
            let m = SymMatrix::new(4, e).unwrap();
            let l = chol(&m).unwrap();
            assert!(max_abs_diff(&l.gram(), &m) <= 1e-10 * 4.0);
        }
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let m = SymMatrix::from_rows([[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(chol(&m), Err(Error::Decomposition { column: 1, .. })));
        assert!(SymMatrix::new(2, vec![1.0, 0.5, 0.4, 1.0]).is_err());
        assert!(SymMatrix::new(2, vec![1.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn semidefinite_factor() {
        let m = SymMatrix::from_rows([[0.09, 0.09], [0.09, 0.09]]).unwrap();
        assert!(chol(&m).is_err());
        let l = chol_psd(&m).unwrap();
        assert!(max_abs_diff(&l.gram(), &m) < 1e-15);
    }

    #[test]
    fn congruence_matches_direct_product() {
        let g = SymMatrix::from_rows([
            [2.0, 0.3, 0.1, 0.0],
            [0.3, 1.5, 0.2, 0.1],
            [0.1, 0.2, 1.8, 0.4],
            [0.0, 0.1, 0.4, 1.1],
        ])
        .unwrap();
        let a = [1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0];
        let s = g.congruence(&a, 2).unwrap();
        // entry (r, c) = sum_ij a_ri g_ij a_cj by explicit loops
        for r in 0..2 {
            for c in 0..2 {
                let mut want = 0.0;
                for i in 0..4 {
                    for j in 0..4 {
                        want += a[r * 4 + i] * g.get(i, j) * a[c * 4 + j];
                    }
                }
                assert!((s.get(r, c) - want).abs() < 1e-14);
            }
        }
    }
}
