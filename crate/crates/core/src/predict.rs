//! Kriging through the multi-level transform: PCG on W C W^T for the
//! detail coefficients, generalized-least-squares recovery of the
//! trend, pointwise prediction and the dense-path mean squared error.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::basis::MultiLevelBasis;
use crate::cov::CovSource;
use crate::error::{Error, Result};
use crate::index_set::MultiIndexSet;
use crate::kernel::KernelSpec;
use crate::par;
use crate::points::PointSet;
use crate::precond::BlockPreconditioner;
use crate::sparse::{lanczos_extremes, pcg_solve, LinOp};

/// Condition estimate below which the identity preconditioner is kept.
const WELL_CONDITIONED_KAPPA: f64 = 100.0;

/// The operator v -> W ( C ( W^T v ) ) on detail coefficients.
pub struct WcwOperator<'a> {
    pub basis: &'a MultiLevelBasis,
    pub cov: &'a CovSource,
}

impl LinOp for WcwOperator<'_> {
    fn dim(&self) -> usize {
        self.basis.n_detail()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let a = self.basis.apply_wt(v);
        // Gather to permuted order, multiply, scatter back.
        let n = self.basis.n;
        let perm = &self.basis.permutation;
        let a_perm: Vec<f64> = (0..n).map(|k| a[perm[k]]).collect();
        let rows: Vec<usize> = (0..n).collect();
        let b_perm = par::map_collect(&rows, |&i| {
            let mut row = vec![0.0; n];
            self.cov.row_into(i, 0..n, &mut row);
            let mut acc = 0.0;
            for (x, y) in row.iter().zip(&a_perm) {
                acc += x * y;
            }
            acc
        });
        let mut b = vec![0.0; n];
        for (k, &orig) in perm.iter().enumerate() {
            b[orig] = b_perm[k];
        }
        self.basis.apply_w(&b)
    }
}

#[derive(Debug, Clone)]
pub struct GammaSolution {
    pub gamma_w: Vec<f64>,
    /// gamma = W^T gamma_w, length N.
    pub gamma: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
    /// Whether the block preconditioner was actually applied.
    pub preconditioned: bool,
}

/// Solve C_W gamma_W = W Z by PCG with the three-step matvec. When
/// preconditioning is requested but a short Lanczos probe reports a
/// small condition number, the identity preconditioner is kept.
pub fn solve_gamma(
    basis: &MultiLevelBasis,
    cov: &CovSource,
    z: &[f64],
    precond_on: bool,
    eps: f64,
    max_iter: usize,
) -> Result<GammaSolution> {
    let zw = basis.apply_w(z);
    // Data in the trend span transforms to rounding noise; there is
    // nothing to solve for.
    let znorm: f64 = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    let zwnorm: f64 = zw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if zwnorm <= 1e-12 * znorm {
        return Ok(GammaSolution {
            gamma_w: vec![0.0; basis.n_detail()],
            gamma: vec![0.0; basis.n],
            iterations: 0,
            residual: 0.0,
            residual_history: Vec::new(),
            preconditioned: false,
        });
    }
    let op = WcwOperator { basis, cov };
    let mut use_blocks = precond_on;
    if precond_on {
        let (lo, hi) = lanczos_extremes(&op, 30, 0xeb7);
        if lo > 0.0 && hi / lo < WELL_CONDITIONED_KAPPA {
            use_blocks = false;
        }
    }
    let pre = if use_blocks {
        BlockPreconditioner::new(basis, cov, -1)?
    } else {
        BlockPreconditioner::identity(basis.n_detail())
    };
    let sol = pcg_solve(&op, &pre, &zw, eps, max_iter)?;
    let gamma = basis.apply_wt(&sol.x);
    Ok(GammaSolution {
        gamma_w: sol.x,
        gamma,
        iterations: sol.iterations,
        residual: sol.residual,
        residual_history: sol.residual_history,
        preconditioned: use_blocks,
    })
}

/// Trend coefficients from the least-squares projection
/// beta = (M^T M)^{-1} M^T (Z - C gamma).
pub fn recover_beta(
    gamma: &[f64],
    z: &[f64],
    trend_m: &DMatrix<f64>,
    kernel: &KernelSpec,
    points: &PointSet,
) -> Result<Vec<f64>> {
    let cg = crate::kernel::cov_matvec(points, kernel, gamma)?;
    let rhs = DVector::from_iterator(z.len(), z.iter().zip(&cg).map(|(a, b)| a - b));
    lsq(trend_m, &rhs)
}

/// Same projection with a covariance source instead of kernel evals.
pub fn recover_beta_with_cov(
    gamma: &[f64],
    z: &[f64],
    trend_m: &DMatrix<f64>,
    basis: &MultiLevelBasis,
    cov: &CovSource,
) -> Result<Vec<f64>> {
    let n = z.len();
    let perm = &basis.permutation;
    let g_perm: Vec<f64> = (0..n).map(|k| gamma[perm[k]]).collect();
    let rows: Vec<usize> = (0..n).collect();
    let cg_perm = par::map_collect(&rows, |&i| {
        let mut row = vec![0.0; n];
        cov.row_into(i, 0..n, &mut row);
        row.iter().zip(&g_perm).map(|(a, b)| a * b).sum::<f64>()
    });
    let mut cg = vec![0.0; n];
    for (k, &orig) in perm.iter().enumerate() {
        cg[orig] = cg_perm[k];
    }
    let rhs = DVector::from_iterator(n, z.iter().zip(&cg).map(|(a, b)| a - b));
    lsq(trend_m, &rhs)
}

fn lsq(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<Vec<f64>> {
    let qr = m.clone().qr();
    let qtb = qr.q().tr_mul(rhs);
    let r = qr.r();
    let sol = r
        .solve_upper_triangular(&qtb)
        .ok_or(Error::RankDeficient {
            rank: 0,
            cols: m.ncols(),
            deficient: Vec::new(),
        })?;
    Ok(sol.iter().cloned().collect())
}

/// Kriging prediction at one target: k(x0)^T beta + c(x0)^T gamma.
pub fn predict(
    x0: &[f64],
    beta: &[f64],
    gamma: &[f64],
    kernel: &KernelSpec,
    points: &PointSet,
    trend_set: &MultiIndexSet,
) -> Result<f64> {
    let prepared = kernel.prepare()?;
    debug_assert_eq!(beta.len(), trend_set.len());
    let mut acc = 0.0;
    for (p, &b) in trend_set.indices.iter().zip(beta) {
        acc += crate::index_set::eval_monomial(p, x0) * b;
    }
    for (i, &g) in gamma.iter().enumerate() {
        acc += prepared.eval(kernel.distance(x0, points.row(i))) * g;
    }
    Ok(acc)
}

/// Dense-path predictor state: C factorized once, reusable across
/// targets for predictions and mean squared errors.
pub struct DensePredictor {
    chol: Cholesky<f64, nalgebra::Dyn>,
    trend_m: DMatrix<f64>,
    /// (M^T C^{-1} M)^{-1}
    gls_inv: DMatrix<f64>,
}

impl DensePredictor {
    pub fn new(points: &PointSet, kernel: &KernelSpec, trend_m: &DMatrix<f64>) -> Result<Self> {
        let c = crate::kernel::cov_matrix(points, points, kernel)?;
        let chol = Cholesky::new(c).ok_or(Error::NotPositiveDefinite {
            column: 0,
            pivot: f64::NAN,
        })?;
        let cinv_m = chol.solve(trend_m);
        let gls = trend_m.transpose() * &cinv_m;
        let gls_inv = gls.try_inverse().ok_or(Error::RankDeficient {
            rank: 0,
            cols: trend_m.ncols(),
            deficient: Vec::new(),
        })?;
        Ok(Self {
            chol,
            trend_m: trend_m.clone(),
            gls_inv,
        })
    }

    /// MSE at a target: 1 + u^T (M^T C^{-1} M)^{-1} u - c^T C^{-1} c
    /// with u = M^T C^{-1} c - k(x0).
    pub fn mse(
        &self,
        x0: &[f64],
        kernel: &KernelSpec,
        points: &PointSet,
        trend_set: &MultiIndexSet,
    ) -> Result<f64> {
        let prepared = kernel.prepare()?;
        let n = points.len();
        let c0 = DVector::from_iterator(
            n,
            (0..n).map(|i| prepared.eval(kernel.distance(x0, points.row(i)))),
        );
        let k0 = DVector::from_iterator(
            trend_set.len(),
            trend_set
                .indices
                .iter()
                .map(|p| crate::index_set::eval_monomial(p, x0)),
        );
        let cinv_c = self.chol.solve(&c0);
        let u = self.trend_m.transpose() * &cinv_c - k0;
        let quad = (&self.gls_inv * &u).dot(&u);
        Ok(1.0 + quad - c0.dot(&cinv_c))
    }
}

/// One-shot MSE, factorizing a fresh dense covariance.
pub fn prediction_mse(
    x0: &[f64],
    kernel: &KernelSpec,
    points: &PointSet,
    trend_m: &DMatrix<f64>,
    trend_set: &MultiIndexSet,
) -> Result<f64> {
    DensePredictor::new(points, kernel, trend_m)?.mse(x0, kernel, points, trend_set)
}
