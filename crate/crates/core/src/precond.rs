//! Block-diagonal preconditioner: one dense Gram block per tree cell
//! and level, holding the interactions of the cell's own detail
//! vectors through the covariance.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::basis::MultiLevelBasis;
use crate::cov::CovSource;
use crate::error::{Error, Result};
use crate::sparse::Precond;

pub struct BlockPreconditioner {
    /// (flat row range, factorized block), covering levels >= min_level.
    blocks: Vec<((usize, usize), Cholesky<f64, nalgebra::Dyn>)>,
    pub dim: usize,
    /// Identity mode: apply is a copy.
    pub identity: bool,
}

impl BlockPreconditioner {
    /// Factorize every cell's Gram block psi^T C psi for levels down to
    /// `min_level`. Blocks of a positive definite kernel are SPD.
    pub fn new(basis: &MultiLevelBasis, cov: &CovSource, min_level: i32) -> Result<Self> {
        let dim = basis.rows_through_level(min_level);
        let groups: Vec<_> = basis
            .row_groups()
            .into_iter()
            .filter(|g| g.level >= min_level)
            .collect();
        let mut blocks = Vec::with_capacity(groups.len());
        for g in groups {
            let m = g.rows.1 - g.rows.0;
            let s = g.support.1 - g.support.0;
            // T = C[supp, supp] * Psi^T, then B = Psi * T.
            let mut t = DMatrix::zeros(s, m);
            let mut phi_row = vec![0.0; s];
            for a in 0..s {
                cov.row_into(g.support.0 + a, g.support.0..g.support.1, &mut phi_row);
                for c in 0..m {
                    let psi = &basis.w_rows[g.rows.0 + c].values;
                    let mut acc = 0.0;
                    for k in 0..s {
                        acc += phi_row[k] * psi[k];
                    }
                    t[(a, c)] = acc;
                }
            }
            let mut block = DMatrix::zeros(m, m);
            for r in 0..m {
                let psi = &basis.w_rows[g.rows.0 + r].values;
                for c in 0..m {
                    let mut acc = 0.0;
                    for k in 0..s {
                        acc += psi[k] * t[(k, c)];
                    }
                    block[(r, c)] = acc;
                }
            }
            // Exact symmetry before factorization.
            for r in 0..m {
                for c in r + 1..m {
                    let v = 0.5 * (block[(r, c)] + block[(c, r)]);
                    block[(r, c)] = v;
                    block[(c, r)] = v;
                }
            }
            let chol = Cholesky::new(block).ok_or(Error::NotPositiveDefinite {
                column: g.rows.0,
                pivot: f64::NAN,
            })?;
            blocks.push(((g.rows.0, g.rows.1), chol));
        }
        Ok(Self {
            blocks,
            dim,
            identity: false,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            blocks: Vec::new(),
            dim,
            identity: true,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }
}

impl Precond for BlockPreconditioner {
    fn solve(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.dim);
        if self.identity {
            return r.to_vec();
        }
        let mut out = vec![0.0; self.dim];
        for ((lo, hi), chol) in &self.blocks {
            let seg = DVector::from_column_slice(&r[*lo..*hi]);
            let sol = chol.solve(&seg);
            out[*lo..*hi].copy_from_slice(sol.as_slice());
        }
        out
    }
}
