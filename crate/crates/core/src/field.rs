//! Reproducible synthetic data: nested point clouds on the hypercube or
//! n-sphere, and Gaussian random field draws from the trend-plus-noise
//! model via dense Cholesky sampling.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::design_matrix_unchecked;
use crate::error::{Error, Result};
use crate::index_set::MultiIndexSet;
use crate::kernel::{cov_matrix, KernelSpec};
use crate::points::PointSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Cube,
    Sphere,
}

/// Draw `n` locations in `R^d`. The stream is consumed point by point,
/// so for a fixed seed the first n' points of a larger draw equal the
/// n'-point draw: nested observation sets come for free.
pub fn sample_points(shape: Shape, n: usize, d: usize, seed: u64) -> Result<PointSet> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter {
            name: "n/d",
            reason: "need n >= 1 and d >= 1".into(),
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d);
    match shape {
        Shape::Cube => {
            for _ in 0..n {
                for _ in 0..d {
                    data.push(rng.gen_range(-1.0..1.0));
                }
            }
        }
        Shape::Sphere => {
            for _ in 0..n {
                let start = data.len();
                let mut norm2 = 0.0;
                for _ in 0..d {
                    let g: f64 = rng.sample(StandardNormal);
                    norm2 += g * g;
                    data.push(g);
                }
                let inv = 1.0 / norm2.sqrt();
                for x in &mut data[start..] {
                    *x *= inv;
                }
            }
        }
    }
    PointSet::new(n, d, data)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleDiagnostics {
    /// Diagonal jitter added when the plain factorization failed.
    pub jitter: Option<f64>,
}

/// Factorized sampler: one dense Cholesky of C(theta), then any number
/// of replicate draws `Z = M beta + G xi`.
pub struct FieldSampler {
    chol_l: DMatrix<f64>,
    trend: DVector<f64>,
    pub diagnostics: SampleDiagnostics,
}

impl FieldSampler {
    pub fn new(
        points: &PointSet,
        kernel: &KernelSpec,
        beta: &[f64],
        trend_set: &MultiIndexSet,
    ) -> Result<Self> {
        if beta.len() != trend_set.len() {
            return Err(Error::DimensionMismatch {
                expected: trend_set.len(),
                got: beta.len(),
            });
        }
        let c = cov_matrix(points, points, kernel)?;
        let n = c.nrows();
        let mut diagnostics = SampleDiagnostics { jitter: None };
        let chol = match Cholesky::new(c.clone()) {
            Some(f) => f,
            None => {
                let jitter = 1e-12 * c.trace() / n as f64;
                diagnostics.jitter = Some(jitter);
                let mut cj = c;
                for i in 0..n {
                    cj[(i, i)] += jitter;
                }
                Cholesky::new(cj).ok_or(Error::SamplingFactorization)?
            }
        };
        let trend = if trend_set.is_empty() {
            DVector::zeros(n)
        } else {
            let m = design_matrix_unchecked(points, trend_set);
            &m * DVector::from_column_slice(beta)
        };
        Ok(Self {
            chol_l: chol.unpack(),
            trend,
            diagnostics,
        })
    }

    /// One realization from the given seed; bitwise reproducible.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let n = self.trend.len();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let xi: DVector<f64> =
            DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (&self.trend + &self.chol_l * xi).data.into()
    }

    /// Derived seed for replicate k, per the seed-xor convention.
    pub fn replicate_seed(base: u64, k: usize) -> u64 {
        base ^ k as u64
    }
}

/// One-shot field draw; see [`FieldSampler`] for replicate batches.
pub fn sample_field(
    points: &PointSet,
    kernel: &KernelSpec,
    beta: &[f64],
    trend_set: &MultiIndexSet,
    seed: u64,
) -> Result<(Vec<f64>, SampleDiagnostics)> {
    let sampler = FieldSampler::new(points, kernel, beta, trend_set)?;
    let z = sampler.sample(seed);
    Ok((z, sampler.diagnostics.clone()))
}
