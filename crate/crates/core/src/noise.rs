//! Correlated Gaussian momentum noise.
//!
//! The cavity shot noise on the momenta has covariance
//! `D^{jl} = Γ_C sin(x_j) sin(x_l) Re C_lj`. Integrating the cumulant
//! equations with a finite step lets `C` drift slightly off the positive
//! semidefinite cone, so factorizations clip small negative eigenvalues
//! (or pivots) to zero and reject anything beyond the tolerance.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Negative eigenvalues down to `-PSD_TOLERANCE * λ_max` are clipped to zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Factorization used for sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Factorization {
    /// Symmetric eigendecomposition with eigenvalue clipping.
    Eigen,
    /// Semidefinite Cholesky with pivot clipping; falls back to `Eigen` when a
    /// pivot is more negative than the tolerance.
    #[default]
    Cholesky,
}

/// Covariance square root `L` with `L Lᵀ ≈ D`.
#[derive(Debug, Clone)]
pub struct NoiseFactor {
    n: usize,
    /// Row-major `n × n`.
    factor: Vec<f64>,
    /// Number of eigenvalues or pivots that were clipped to zero.
    pub clipped: usize,
    /// True when the Cholesky path handed over to the eigendecomposition.
    pub fell_back: bool,
}

impl NoiseFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Build a factor of the symmetric matrix `d` (row-major, `n × n`).
    pub fn new(d: &[f64], n: usize, method: Factorization) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: d.len(),
            });
        }
        match method {
            Factorization::Eigen => Self::eigen(d, n),
            Factorization::Cholesky => match Self::cholesky(d, n) {
                Some(f) => Ok(f),
                None => {
                    let mut f = Self::eigen(d, n)?;
                    f.fell_back = true;
                    Ok(f)
                }
            },
        }
    }

    fn eigen(d: &[f64], n: usize) -> Result<Self> {
        if n == 0 {
            return Ok(NoiseFactor {
                n,
                factor: Vec::new(),
                clipped: 0,
                fell_back: false,
            });
        }
        let m = DMatrix::from_row_slice(n, n, d);
        let eig = SymmetricEigen::new(m);
        let largest = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let worst = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let scale = largest.max(0.0);
        if worst < -PSD_TOLERANCE * scale || (scale == 0.0 && worst < 0.0) {
            return Err(Error::PsdViolation { worst, largest });
        }
        let mut clipped = 0;
        let roots: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&l| {
                if l < 0.0 {
                    clipped += 1;
                    0.0
                } else {
                    l.sqrt()
                }
            })
            .collect();
        let mut factor = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                factor[i * n + k] = eig.eigenvectors[(i, k)] * roots[k];
            }
        }
        Ok(NoiseFactor {
            n,
            factor,
            clipped,
            fell_back: false,
        })
    }

    /// Returns `None` when the matrix is too far from PSD for pivot clipping.
    fn cholesky(d: &[f64], n: usize) -> Option<Self> {
        let scale = (0..n).map(|i| d[i * n + i]).fold(0.0f64, f64::max);
        let mut l = vec![0.0; n * n];
        let mut clipped = 0;
        if scale <= 0.0 {
            // All diagonal entries are nonpositive: PSD only if the matrix is zero.
            return d.iter().all(|&v| v == 0.0).then_some(NoiseFactor {
                n,
                factor: l,
                clipped: 0,
                fell_back: false,
            });
        }
        let zero_pivot = 1e-12 * scale;
        let stray = 1e-6 * scale;
        for k in 0..n {
            let mut pivot = d[k * n + k];
            for m in 0..k {
                pivot -= l[k * n + m] * l[k * n + m];
            }
            if pivot < -PSD_TOLERANCE * scale {
                return None;
            }
            let clip = pivot <= zero_pivot;
            let inv = if clip { 0.0 } else { 1.0 / pivot.sqrt() };
            if clip {
                clipped += 1;
            } else {
                l[k * n + k] = pivot.sqrt();
            }
            for i in (k + 1)..n {
                let mut s = d[i * n + k];
                for m in 0..k {
                    s -= l[i * n + m] * l[k * n + m];
                }
                if clip {
                    // A vanishing pivot forces the rest of its Schur column to vanish.
                    if s.abs() > stray {
                        return None;
                    }
                } else {
                    l[i * n + k] = s * inv;
                }
            }
        }
        Some(NoiseFactor {
            n,
            factor: l,
            clipped,
            fell_back: false,
        })
    }

    /// Draw a kick `√dt · L z` with `z` standard normal.
    pub fn sample<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R, out: &mut [f64], scratch: &mut Vec<f64>) {
        let n = self.n;
        scratch.clear();
        scratch.extend((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let sq = dt.sqrt();
        for i in 0..n {
            let row = &self.factor[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for k in 0..n {
                acc += row[k] * scratch[k];
            }
            out[i] = sq * acc;
        }
    }

    /// Reconstruct `L Lᵀ` (for diagnostics and tests).
    pub fn covariance(&self) -> Vec<f64> {
        let n = self.n;
        let mut c = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                c[i * n + j] = (0..n).map(|k| self.factor[i * n + k] * self.factor[j * n + k]).sum();
            }
        }
        c
    }
}

/// Sample a momentum kick `ξ √dt` with covariance `D` using the eigendecomposition.
pub fn sample_noise<R: Rng + ?Sized>(d: &DMatrix<f64>, dt: f64, rng: &mut R) -> Result<Vec<f64>> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: d.ncols(),
        });
    }
    let flat: Vec<f64> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| d[(i, j)]).collect();
    let factor = NoiseFactor::new(&flat, n, Factorization::Eigen)?;
    let mut out = vec![0.0; n];
    let mut scratch = Vec::with_capacity(n);
    factor.sample(dt, rng, &mut out, &mut scratch);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;
    use proptest::prelude::*;

    fn empirical_cov(factor: &NoiseFactor, dt: f64, draws: usize, seed: u64) -> Vec<f64> {
        let n = factor.dim();
        let mut rng = rng_stream(seed, 0);
        let mut out = vec![0.0; n];
        let mut scratch = Vec::new();
        let mut acc = vec![0.0; n * n];
        for _ in 0..draws {
            factor.sample(dt, &mut rng, &mut out, &mut scratch);
            for i in 0..n {
                for j in 0..n {
                    acc[i * n + j] += out[i] * out[j];
                }
            }
        }
        acc.iter().map(|v| v / draws as f64).collect()
    }

    #[test]
    fn zero_covariance_gives_zero_kick() {
        let d = DMatrix::<f64>::zeros(4, 4);
        let kick = sample_noise(&d, 0.01, &mut rng_stream(1, 0)).unwrap();
        assert!(kick.iter().all(|v| *v == 0.0));
        let f = NoiseFactor::new(&[0.0; 16], 4, Factorization::Cholesky).unwrap();
        assert!(!f.fell_back);
    }

    #[test]
    fn diagonal_variances() {
        let diag = [0.5, 2.0, 1.0];
        let d: Vec<f64> = (0..9).map(|k| if k % 4 == 0 { diag[k / 4] } else { 0.0 }).collect();
        let dt = 0.01;
        let draws = 100_000;
        for method in [Factorization::Eigen, Factorization::Cholesky] {
            let f = NoiseFactor::new(&d, 3, method).unwrap();
            let c = empirical_cov(&f, dt, draws, 5);
            for i in 0..3 {
                let expect = diag[i] * dt;
                assert!((c[i * 3 + i] - expect).abs() < 0.05 * expect, "{method:?} {i}");
            }
        }
    }

    #[test]
    fn rank_one_kicks_are_parallel() {
        let v = [0.3, -1.2, 0.8, 0.0];
        let d: Vec<f64> = (0..16).map(|k| v[k / 4] * v[k % 4]).collect();
        for method in [Factorization::Eigen, Factorization::Cholesky] {
            let f = NoiseFactor::new(&d, 4, method).unwrap();
            if method == Factorization::Cholesky {
                assert_eq!(f.clipped, 3);
            }
            let mut rng = rng_stream(2, 0);
            let mut out = vec![0.0; 4];
            let mut scratch = Vec::new();
            for _ in 0..20 {
                f.sample(1.0, &mut rng, &mut out, &mut scratch);
                let scale = out[1] / v[1];
                for k in 0..4 {
                    assert!((out[k] - scale * v[k]).abs() < 1e-6 * (1.0 + scale.abs()));
                }
            }
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let d = [1.0, 0.0, 0.0, -0.1];
        assert!(matches!(
            NoiseFactor::new(&d, 2, Factorization::Eigen),
            Err(Error::PsdViolation { .. })
        ));
        assert!(matches!(
            NoiseFactor::new(&d, 2, Factorization::Cholesky),
            Err(Error::PsdViolation { .. })
        ));
        assert!(matches!(
            NoiseFactor::new(&[1.0; 3], 2, Factorization::Eigen),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn tiny_negative_eigenvalue_is_clipped() {
        // Eigenvalues 1 and -1e-12.
        let e = -1e-12;
        let d = [(1.0 + e) / 2.0, (1.0 - e) / 2.0, (1.0 - e) / 2.0, (1.0 + e) / 2.0];
        let f = NoiseFactor::new(&d, 2, Factorization::Eigen).unwrap();
        assert_eq!(f.clipped, 1);
        let f = NoiseFactor::new(&d, 2, Factorization::Cholesky).unwrap();
        assert_eq!(f.clipped, 1);
    }

    #[test]
    fn empirical_covariance_matches() {
        let d = [2.0, 0.6, -0.3, 0.6, 1.0, 0.2, -0.3, 0.2, 0.5];
        let f = NoiseFactor::new(&d, 3, Factorization::Eigen).unwrap();
        let draws = 100_000;
        let c = empirical_cov(&f, 1.0, draws, 8);
        for i in 0..3 {
            for j in 0..3 {
                let se = ((d[i * 3 + i] * d[j * 3 + j] + d[i * 3 + j].powi(2)) / draws as f64).sqrt();
                assert!((c[i * 3 + j] - d[i * 3 + j]).abs() < 5.0 * se, "({i},{j})");
            }
        }
    }

    fn psd_from(entries: &[f64], n: usize, rank: usize) -> Vec<f64> {
        let mut d = vec![0.0; n * n];
        for r in 0..rank {
            for i in 0..n {
                for j in 0..n {
                    d[i * n + j] += entries[r * n + i] * entries[r * n + j];
                }
            }
        }
        d
    }

    proptest! {
        #[test]
        fn factorizations_reproduce_covariance(
            n in 1usize..7,
            rank in 1usize..7,
            entries in proptest::collection::vec(-2.0f64..2.0, 49),
        ) {
            let rank = rank.min(n);
            let d = psd_from(&entries, n, rank);
            let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            for method in [Factorization::Eigen, Factorization::Cholesky] {
                let f = NoiseFactor::new(&d, n, method).unwrap();
                let c = f.covariance();
                for k in 0..n * n {
                    prop_assert!((c[k] - d[k]).abs() <= 1e-6 * scale, "{:?}", method);
                }
            }
        }
    }
}
