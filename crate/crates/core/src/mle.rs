//! Multi-level log-likelihood on partial transforms and its
//! maximization over the Matern parameters.
//!
//! The retained sparsity pattern and the factorization symbolics
//! depend only on the geometry, so one context serves every parameter
//! evaluation; each evaluation refreshes kernel values over cached
//! distances, refactors numerically, and reuses the factor for both
//! the determinant and the quadratic form.

use serde::{Deserialize, Serialize};

use crate::basis::MultiLevelBasis;
use crate::cov::{AssemblyPlan, CovSource};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::points::PointSet;
use crate::sparse::CholPlan;
use crate::tree::PartitionTree;
use std::sync::Arc;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LikelihoodEvaluation {
    pub nu: f64,
    pub rho: f64,
    /// Truncation level n of the partial transform.
    pub level: i32,
    /// The three additive parts: value = constant + log_det + quadratic.
    pub constant_term: f64,
    pub log_det_term: f64,
    pub quadratic_term: f64,
    pub value: f64,
    /// False when the sparse factorization found a nonpositive pivot;
    /// the value is then -infinity.
    pub spd: bool,
    /// Zero-dimensional transform (no detail rows at this level).
    pub degenerate: bool,
    pub factor_nnz: usize,
}

/// Geometry-fixed state for likelihood sweeps: pattern, symbolic
/// factorization, cached pairwise distances.
pub struct LikelihoodContext<'a> {
    pub basis: &'a MultiLevelBasis,
    pub level: i32,
    pub tau: f64,
    plan: AssemblyPlan,
    chol_plan: Option<CholPlan>,
    dists: Arc<Vec<f64>>,
    n: usize,
}

impl<'a> LikelihoodContext<'a> {
    pub fn new(
        basis: &'a MultiLevelBasis,
        tree: &PartitionTree,
        points: &PointSet,
        tau: f64,
        level: i32,
    ) -> Self {
        let plan = AssemblyPlan::new(basis, tree, points, tau, level);
        let chol_plan = (plan.dim > 0).then(|| CholPlan::new(plan.pattern(), None));
        let dists = Arc::new(CovSource::distance_matrix(points, &tree.permutation));
        LikelihoodContext {
            basis,
            level,
            tau,
            plan,
            chol_plan,
            dists,
            n: points.len(),
        }
    }

    /// Retained fraction of the truncated matrix.
    pub fn sparsity(&self) -> f64 {
        self.plan.sparsity()
    }

    pub fn dim(&self) -> usize {
        self.plan.dim
    }

    /// Partial transform of a data vector down to this context's level.
    pub fn transform(&self, z: &[f64]) -> Vec<f64> {
        self.basis.partial_transform(z, self.level)
    }

    /// Evaluate the multi-level log-likelihood at (nu, rho) for
    /// already-transformed data `zw`.
    pub fn evaluate(&self, nu: f64, rho: f64, zw: &[f64]) -> Result<LikelihoodEvaluation> {
        let spec = KernelSpec::matern(nu, rho);
        spec.validate()?;
        let dim = self.plan.dim;
        assert_eq!(zw.len(), dim);
        let constant_term = -(dim as f64) / 2.0 * (2.0 * std::f64::consts::PI).ln();
        if dim == 0 {
            return Ok(LikelihoodEvaluation {
                nu,
                rho,
                level: self.level,
                constant_term,
                log_det_term: 0.0,
                quadratic_term: 0.0,
                value: constant_term,
                spd: true,
                degenerate: true,
                factor_nnz: 0,
            });
        }
        let kernel = spec.prepare()?;
        // Patterns reading most of the matrix amortize one parallel
        // fill; sparse ones evaluate only what the blocks touch.
        let full = (self.n * self.n) as u64;
        let cov = if self.plan.lookup_count * 2 < full {
            CovSource::LazyFromDistances {
                n: self.n,
                dists: Arc::clone(&self.dists),
                kernel,
            }
        } else {
            CovSource::from_distances(self.n, &self.dists, &kernel)
        };
        let cw = self.plan.assemble(self.basis, &cov);
        match self.chol_plan.as_ref().unwrap().factor(&cw.mat) {
            Ok(factor) => {
                let log_det_term = -0.5 * factor.log_det();
                let quadratic_term = -0.5 * factor.quad_form(zw);
                Ok(LikelihoodEvaluation {
                    nu,
                    rho,
                    level: self.level,
                    constant_term,
                    log_det_term,
                    quadratic_term,
                    value: constant_term + log_det_term + quadratic_term,
                    spd: true,
                    degenerate: false,
                    factor_nnz: factor.factor_nnz(),
                })
            }
            Err(Error::NotPositiveDefinite { .. }) => Ok(LikelihoodEvaluation {
                nu,
                rho,
                level: self.level,
                constant_term,
                log_det_term: f64::NEG_INFINITY,
                quadratic_term: 0.0,
                value: f64::NEG_INFINITY,
                spd: false,
                degenerate: false,
                factor_nnz: 0,
            }),
            Err(e) => Err(e),
        }
    }
}

/// One-shot evaluation (builds a fresh context).
#[allow(clippy::too_many_arguments)]
pub fn multilevel_loglik(
    nu: f64,
    rho: f64,
    z: &[f64],
    basis: &MultiLevelBasis,
    tree: &PartitionTree,
    points: &PointSet,
    tau: f64,
    level: i32,
) -> Result<LikelihoodEvaluation> {
    let ctx = LikelihoodContext::new(basis, tree, points, tau, level);
    let zw = ctx.transform(z);
    ctx.evaluate(nu, rho, &zw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxEvaluations,
    /// The objective was flat across the starting simplex.
    NonIdentifiable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub nu: f64,
    pub rho: f64,
    pub value: f64,
    pub evaluations: usize,
    pub status: FitStatus,
    /// Every evaluated (nu, rho, value).
    pub trace: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub nu0: f64,
    pub rho0: f64,
    /// Relative perturbation building the starting simplex.
    pub perturbation: f64,
    /// Simplex value-spread tolerance.
    pub tolerance: f64,
    pub max_evaluations: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            nu0: 1.0,
            rho0: 1.0,
            perturbation: 0.2,
            tolerance: 1e-6,
            max_evaluations: 500,
        }
    }
}

/// Maximize the multi-level likelihood by Nelder-Mead in
/// (log nu, log rho); positivity holds by construction.
pub fn mle_fit(ctx: &LikelihoodContext, z: &[f64], cfg: &OptimizerConfig) -> Result<FitResult> {
    let zw = ctx.transform(z);
    let mut trace: Vec<(f64, f64, f64)> = Vec::new();
    let mut evals = 0usize;
    let objective = |u: [f64; 2], evals: &mut usize, trace: &mut Vec<(f64, f64, f64)>| -> Result<f64> {
        let (nu, rho) = (u[0].exp(), u[1].exp());
        let ev = ctx.evaluate(nu, rho, &zw)?;
        *evals += 1;
        trace.push((nu, rho, ev.value));
        // Minimize the negative log-likelihood.
        Ok(if ev.value.is_finite() {
            -ev.value
        } else {
            f64::INFINITY
        })
    };

    let u0 = [cfg.nu0.ln(), cfg.rho0.ln()];
    let step = (1.0 + cfg.perturbation).ln();
    let mut simplex = [u0, [u0[0] + step, u0[1]], [u0[0], u0[1] + step]];
    let mut values = [0.0f64; 3];
    for k in 0..3 {
        values[k] = objective(simplex[k], &mut evals, &mut trace)?;
    }
    if values.iter().all(|v| v.is_infinite()) {
        return Err(Error::InfeasibleStart);
    }
    let spread_of = |values: &[f64; 3]| {
        let finite: Vec<f64> = values.iter().cloned().filter(|v| v.is_finite()).collect();
        if finite.len() < 3 {
            f64::INFINITY
        } else {
            let hi = finite.iter().cloned().fold(f64::MIN, f64::max);
            let lo = finite.iter().cloned().fold(f64::MAX, f64::min);
            hi - lo
        }
    };
    let mut status = if spread_of(&values) < cfg.tolerance {
        FitStatus::NonIdentifiable
    } else {
        FitStatus::Converged
    };

    if status != FitStatus::NonIdentifiable {
        loop {
            if spread_of(&values) < cfg.tolerance {
                status = FitStatus::Converged;
                break;
            }
            if evals >= cfg.max_evaluations {
                status = FitStatus::MaxEvaluations;
                break;
            }
            // Order best (b) .. worst (w).
            let mut idx = [0usize, 1, 2];
            idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
            let (b, m, w) = (idx[0], idx[1], idx[2]);
            let centroid = [
                0.5 * (simplex[b][0] + simplex[m][0]),
                0.5 * (simplex[b][1] + simplex[m][1]),
            ];
            let reflect = [
                centroid[0] + (centroid[0] - simplex[w][0]),
                centroid[1] + (centroid[1] - simplex[w][1]),
            ];
            let fr = objective(reflect, &mut evals, &mut trace)?;
            if fr < values[b] {
                let expand = [
                    centroid[0] + 2.0 * (centroid[0] - simplex[w][0]),
                    centroid[1] + 2.0 * (centroid[1] - simplex[w][1]),
                ];
                let fe = objective(expand, &mut evals, &mut trace)?;
                if fe < fr {
                    simplex[w] = expand;
                    values[w] = fe;
                } else {
                    simplex[w] = reflect;
                    values[w] = fr;
                }
            } else if fr < values[m] {
                simplex[w] = reflect;
                values[w] = fr;
            } else {
                let contract = [
                    centroid[0] + 0.5 * (simplex[w][0] - centroid[0]),
                    centroid[1] + 0.5 * (simplex[w][1] - centroid[1]),
                ];
                let fc = objective(contract, &mut evals, &mut trace)?;
                if fc < values[w] {
                    simplex[w] = contract;
                    values[w] = fc;
                } else {
                    // Shrink towards the best vertex.
                    for k in [m, w] {
                        simplex[k] = [
                            0.5 * (simplex[k][0] + simplex[b][0]),
                            0.5 * (simplex[k][1] + simplex[b][1]),
                        ];
                        values[k] = objective(simplex[k], &mut evals, &mut trace)?;
                    }
                }
            }
        }
    }

    let mut best = 0;
    for k in 1..3 {
        if values[k] < values[best] {
            best = k;
        }
    }
    Ok(FitResult {
        nu: simplex[best][0].exp(),
        rho: simplex[best][1].exp(),
        value: -values[best],
        evaluations: evals,
        status,
        trace,
    })
}
