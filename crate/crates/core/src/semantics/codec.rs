use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue cut-off below which a principal direction is treated
/// as absent from the data.
const RANK_TOL: f64 = 1e-12;

/// Linear PCA codec between the full embedding space (width C) and the
/// compressed per-Gaussian space (width d).
///
/// `encode(v) = P (v − mean)` and `decode(z) = Pᵀ z + mean` where the rows of
/// `P` are orthonormal, so `encode ∘ decode` is the identity on R^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCodec {
    full_dim: usize,
    compressed_dim: usize,
    /// `compressed_dim × full_dim`, row-major.
    components: Vec<f64>,
    mean: Vec<f64>,
}

impl EmbeddingCodec {
    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    pub fn compressed_dim(&self) -> usize {
        self.compressed_dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row `k` of the encode matrix.
    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k * self.full_dim..(k + 1) * self.full_dim]
    }

    pub fn encode(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.full_dim, "encode: width mismatch");
        (0..self.compressed_dim)
            .map(|k| {
                self.component(k)
                    .iter()
                    .zip(v.iter().zip(&self.mean))
                    .map(|(p, (x, m))| p * (x - m))
                    .sum()
            })
            .collect()
    }

    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.compressed_dim, "decode: width mismatch");
        let mut out = self.mean.clone();
        for (k, &zk) in z.iter().enumerate() {
            for (o, p) in out.iter_mut().zip(self.component(k)) {
                *o += zk * p;
            }
        }
        out
    }

    pub fn encode_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.compressed_dim, self.full_dim, &self.components)
    }

    /// Validates shapes and finiteness after deserialisation.
    pub fn check(&self) -> Result<()> {
        if self.compressed_dim == 0 || self.compressed_dim > self.full_dim {
            return Err(Error::invalid("codec widths must satisfy 0 < d <= C"));
        }
        if self.components.len() != self.compressed_dim * self.full_dim || self.mean.len() != self.full_dim {
            return Err(Error::invalid("codec matrix shapes do not match its widths"));
        }
        if !self.components.iter().chain(&self.mean).all(|v| v.is_finite()) {
            return Err(Error::invalid("codec contains non-finite values"));
        }
        Ok(())
    }
}

/// Fits a rank-`d` PCA codec to `samples` (each of width C).
///
/// Principal directions come from the eigendecomposition of whichever of the
/// Gram (n×n) or covariance (C×C) matrix is smaller. When the centred data
/// has rank below `d` the basis is completed with an orthonormal complement
/// built deterministically from the coordinate axes.
pub fn fit_codec(samples: &[Vec<f64>], d: usize) -> Result<EmbeddingCodec> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::invalid("fit_codec: no samples"));
    }
    let c = samples[0].len();
    if d == 0 || d > c {
        return Err(Error::invalid(format!("fit_codec: compressed width {d} outside 1..={c}")));
    }
    if n < d {
        return Err(Error::invalid(format!("fit_codec: {n} samples cannot support {d} components")));
    }
    if samples.iter().any(|s| s.len() != c) {
        return Err(Error::invalid("fit_codec: samples have different widths"));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("fit_codec: non-finite sample"));
    }

    let mut mean = vec![0.0; c];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    // Centred data, n × C.
    let x = DMatrix::from_fn(n, c, |i, j| samples[i][j] - mean[j]);

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(d);
    let (values, vectors, via_gram) = if n < c {
        let e = SymmetricEigen::new(&x * x.transpose());
        (e.eigenvalues, e.eigenvectors, true)
    } else {
        let e = SymmetricEigen::new(x.transpose() * &x);
        (e.eigenvalues, e.eigenvectors, false)
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = values[order[0]].max(0.0);
    for &k in order.iter().take(d) {
        let lambda = values[k];
        if !(lambda > RANK_TOL * top) || top == 0.0 {
            break;
        }
        let dir = if via_gram {
            x.transpose() * vectors.column(k) / lambda.sqrt()
        } else {
            vectors.column(k).into_owned()
        };
        push_orthonormal(&mut basis, dir);
    }
    let mut axis = 0;
    while basis.len() < d {
        let mut e = DVector::zeros(c);
        e[axis] = 1.0;
        push_orthonormal(&mut basis, e);
        axis += 1;
    }

    // Fix each direction's sign so the largest-magnitude entry is positive.
    let mut components = Vec::with_capacity(d * c);
    for b in &basis {
        let pivot = b.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        components.extend(b.iter().map(|v| v * sign));
    }
    Ok(EmbeddingCodec {
        full_dim: c,
        compressed_dim: d,
        components,
        mean,
    })
}

/// Gram-Schmidt (twice, for stability) against the current basis; the vector
/// is dropped if nothing independent remains.
fn push_orthonormal(basis: &mut Vec<DVector<f64>>, mut v: DVector<f64>) {
    for _ in 0..2 {
        for b in basis.iter() {
            let p = b.dot(&v);
            v.axpy(-p, b, 1.0);
        }
    }
    let norm = v.norm();
    if norm > 1e-8 {
        basis.push(v / norm);
    }
}

/// Mean squared reconstruction error of `decode(encode(v))` over `samples`.
pub fn reconstruction_mse(codec: &EmbeddingCodec, samples: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for s in samples {
        let r = codec.decode(&codec.encode(s));
        total += r.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    total / (samples.len() * samples[0].len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, c: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn rows_are_orthonormal() {
        let codec = fit_codec(&random(40, 24, 1), 6).unwrap();
        let p = codec.encode_matrix();
        let g = &p * p.transpose();
        assert!((g - DMatrix::identity(6, 6)).abs().max() < 1e-10);
        let z = vec![0.3, -1.0, 0.2, 0.0, 0.5, 2.0];
        let back = codec.encode(&codec.decode(&z));
        assert!(z.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn exact_subspace_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let basis = random(3, 32, 3);
        let offset: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let samples: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let w: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                (0..32).map(|j| offset[j] + (0..3).map(|k| w[k] * basis[k][j]).sum::<f64>()).collect()
            })
            .collect();
        let codec = fit_codec(&samples, 3).unwrap();
        assert!(reconstruction_mse(&codec, &samples) < 1e-9);
    }

    #[test]
    fn full_width_is_lossless() {
        let samples = random(30, 8, 4);
        let codec = fit_codec(&samples, 8).unwrap();
        assert!(reconstruction_mse(&codec, &samples) < 1e-20);
    }

    #[test]
    fn rank_deficient_basis_is_completed() {
        let samples = vec![vec![1.0, 0.0, 0.0, 0.0]; 5];
        let codec = fit_codec(&samples, 3).unwrap();
        let p = codec.encode_matrix();
        assert!((&p * p.transpose() - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        assert!(fit_codec(&samples[..2], 3).is_err());
    }
}
