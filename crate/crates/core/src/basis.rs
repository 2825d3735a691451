//! Orthonormal multi-level basis adapted to a partition tree and a
//! polynomial trend space.
//!
//! The construction sweeps the tree bottom-up. Each cell carries a set
//! of orthonormal vectors supported on its contiguous slice of the
//! permuted observations: unit vectors for leaves, the children's
//! scaling vectors for internal cells. An SVD of the cell's moment
//! matrix against the accuracy design matrix splits them into scaling
//! vectors (pushed to the parent) and detail vectors with vanishing
//! moments (emitted as rows of W at that level). The final split at
//! level -1 uses the trend matrix itself and leaves the rows of L.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::index_set::{eval_monomial, MultiIndexSet};
use crate::par;
use crate::points::PointSet;
use crate::tree::PartitionTree;

/// Relative singular-value threshold for the numerical rank of a cell
/// moment matrix: sigma_k >= 1e-10 * sqrt(s) * sigma_max.
const RANK_EPS: f64 = 1e-10;

/// Cell-local orthonormality slack that triggers re-orthogonalization.
const REORTH_TRIGGER: f64 = 1e-12;

/// One basis vector: dense over its owning cell's contiguous slice
/// [start, start+len) of the permuted observation order.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisRow {
    /// Level q in -1..=t for detail rows; TREND_LEVEL_TAG for rows of L.
    pub level: i32,
    /// Owning tree cell.
    pub cell: u32,
    /// First permuted position of the support.
    pub start: usize,
    pub values: Vec<f64>,
}

impl BasisRow {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }
}

pub const TREND_LEVEL_TAG: i32 = -2;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLevelBasis {
    pub n: usize,
    /// Effective trend dimension p: the number of rows of L. Equals the
    /// trend set cardinality unless a deficient trend was allowed.
    pub p: usize,
    /// Columns the trend design matrix lost to numerical dependence.
    pub trend_rank_deficiency: usize,
    /// Accuracy dimension p~.
    pub p_tilde: usize,
    /// Maximal tree depth.
    pub t: usize,
    /// Detail rows, ordered level t down to -1, then by cell id, then
    /// local index; this is the flat ordering of W and of all partial
    /// transforms.
    pub w_rows: Vec<BasisRow>,
    /// Row range [start, end) of each level, ordered t down to -1.
    pub level_ranges: Vec<(i32, usize, usize)>,
    /// Orthonormal rows spanning the trend space.
    pub l_rows: Vec<BasisRow>,
    /// permutation[pos] = original observation index (copied from the tree).
    pub permutation: Vec<usize>,
}

/// Design matrix: entry (i, j) = monomial_j(x_i), columns in the index
/// set's deterministic order. Fails when the columns are not numerically
/// independent, reporting the deficient column set.
pub fn design_matrix(points: &PointSet, index_set: &MultiIndexSet) -> Result<DMatrix<f64>> {
    let m = design_matrix_unchecked(points, index_set);
    let p = m.ncols();
    if points.len() < p {
        return Err(Error::InvalidParameter {
            name: "points",
            reason: format!("need at least {p} observations for {p} columns"),
        });
    }
    let qr = m.clone().col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..p).map(|i| r[(i, i)].abs()).collect();
    let tol = diag[0] * 1e-12 * (points.len().max(p) as f64).sqrt();
    let rank = diag.iter().take_while(|&&d| d > tol).count();
    if rank < p {
        // Column pivoting pushes the most dependent columns last;
        // recover their original positions from the permutation.
        let mut scratch = DMatrix::<f64>::from_fn(1, p, |_, j| j as f64);
        qr.p().permute_columns(&mut scratch);
        let deficient: Vec<usize> = (rank..p).map(|k| scratch[(0, k)] as usize).collect();
        return Err(Error::RankDeficient {
            rank,
            cols: p,
            deficient,
        });
    }
    Ok(m)
}

/// Design matrix without the rank check.
pub fn design_matrix_unchecked(points: &PointSet, index_set: &MultiIndexSet) -> DMatrix<f64> {
    let n = points.len();
    let p = index_set.len();
    DMatrix::from_fn(n, p, |i, j| eval_monomial(&index_set.indices[j], points.row(i)))
}

/// Split an orthonormal set of cell vectors into scaling and detail
/// vectors against a moment matrix `M~^T V` (p~ x s).
///
/// Returns `(vectors * S, vectors * D)`: the scaling block spans the
/// row-space directions (numerical rank a of them), the detail block
/// the nullspace directions, which annihilate every moment column.
pub fn local_split(
    vectors: &DMatrix<f64>,
    moment: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (scaling_coeff, detail_coeff) = split_coefficients(moment);
    (vectors * &scaling_coeff, vectors * &detail_coeff)
}

/// Coefficient form of [`local_split`]: orthonormal (s x a) and
/// (s x (s-a)) blocks with the detail block in the numerical nullspace
/// of the moment matrix.
pub fn split_coefficients(moment: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let s = moment.ncols();
    if s == 0 {
        return (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0));
    }
    let svd = moment.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma = &svd.singular_values;
    let smax = sigma.iter().cloned().fold(0.0f64, f64::max);
    let tol = RANK_EPS * (s as f64).sqrt() * smax;
    let rank = if smax == 0.0 {
        0
    } else {
        sigma.iter().filter(|&&x| x >= tol).count()
    };
    let scaling = v_t.rows(0, rank).transpose();
    let n_detail = s - rank;
    if n_detail == 0 {
        return (scaling, DMatrix::zeros(s, 0));
    }
    // Orthonormal completion of the scaling columns: pivoted QR of the
    // projector onto their complement, keeping the leading columns.
    let proj = DMatrix::identity(s, s) - &scaling * scaling.transpose();
    let qr = proj.col_piv_qr();
    let q = qr.q();
    let mut detail = q.columns(0, n_detail).into_owned();
    // One Gram-Schmidt pass tightens the orthogonality lost to rounding
    // in the projector.
    for j in 0..n_detail {
        let mut col = detail.column(j).into_owned();
        for k in 0..rank {
            let dot = col.dot(&scaling.column(k));
            col.axpy(-dot, &scaling.column(k).into_owned(), 1.0);
        }
        for k in 0..j {
            let prev = detail.column(k).into_owned();
            let dot = col.dot(&prev);
            col.axpy(-dot, &prev, 1.0);
        }
        col /= col.norm();
        detail.set_column(j, &col);
    }
    (scaling, detail)
}

/// Options for [`build_basis`].
#[derive(Debug, Clone, Copy, Default)]
pub struct BasisOptions {
    /// Accuracy offset a: the accuracy set is the index set at w + a.
    pub accuracy_offset: u32,
    /// Use the extended (index-doubled) accuracy set.
    pub extended: bool,
    /// Accept a trend design matrix whose columns are numerically
    /// dependent, shrinking L to the numerical rank instead of failing.
    /// Sphere data makes this common: on the unit sphere the quadratic
    /// monomials satisfy x_1^2 + ... + x_d^2 = 1, so any index set
    /// containing the constant and all squares is deficient.
    pub allow_deficient_trend: bool,
}

/// The accuracy index set implied by a trend set and options.
pub fn accuracy_set(trend_set: &MultiIndexSet, opts: BasisOptions) -> Result<MultiIndexSet> {
    let base = if opts.accuracy_offset == 0 {
        trend_set.clone()
    } else {
        crate::index_set::build_index_set(
            trend_set.kind,
            trend_set.d,
            trend_set.w + opts.accuracy_offset,
        )?
    };
    if opts.extended {
        crate::index_set::extend_index_set(&base)
    } else {
        Ok(base)
    }
}

struct CellOutput {
    details: DMatrix<f64>,
    scaling: DMatrix<f64>,
    start: usize,
}

/// Build the orthonormal multi-level basis for `points` over `tree`,
/// with trend space spanned by `trend_set` and the accuracy space from
/// `opts`. Requires N >= p~ and a full-rank trend design matrix.
pub fn build_basis(
    tree: &PartitionTree,
    points: &PointSet,
    trend_set: &MultiIndexSet,
    opts: BasisOptions,
) -> Result<MultiLevelBasis> {
    let n = points.len();
    let acc_set = accuracy_set(trend_set, opts)?;
    let p_tilde = acc_set.len();
    let p = trend_set.len();
    if n < p_tilde {
        return Err(Error::InvalidParameter {
            name: "points",
            reason: format!("need N >= p~ = {p_tilde}, got N = {n}"),
        });
    }
    // Trend matrix must have full column rank unless the caller opted
    // into rank adaptation; cell moment matrices may always be
    // deficient and are handled by the rank split.
    let trend_m = if opts.allow_deficient_trend {
        design_matrix_unchecked(points, trend_set)
    } else {
        design_matrix(points, trend_set)?
    };
    let acc_m = design_matrix_unchecked(points, &acc_set);

    let acc_perm = gather_rows(&acc_m, &tree.permutation);
    let trend_perm = gather_rows(&trend_m, &tree.permutation);

    let mut pending: Vec<Option<(usize, DMatrix<f64>)>> = vec![None; tree.nodes.len()];
    let mut w_rows: Vec<BasisRow> = Vec::new();
    let mut level_ranges: Vec<(i32, usize, usize)> = Vec::new();

    for q in (0..=tree.t).rev() {
        let row_start = w_rows.len();
        let cells = &tree.levels[q];
        let pending_ref = &pending;
        let outputs: Vec<(usize, Option<CellOutput>)> = par::map_collect(cells, |&id| {
            let node = &tree.nodes[id];
            let (start, vectors) = if node.is_leaf() {
                let len = node.len();
                (node.range.0, DMatrix::identity(len, len))
            } else {
                let (l, r) = node.children.unwrap();
                let lp = pending_ref[l].as_ref().expect("child processed");
                let rp = pending_ref[r].as_ref().expect("child processed");
                let (ls, lm) = (lp.0, &lp.1);
                let (rs, rm) = (rp.0, &rp.1);
                debug_assert_eq!(rs, ls + lm.nrows());
                let rows = lm.nrows() + rm.nrows();
                let cols = lm.ncols() + rm.ncols();
                let mut v = DMatrix::zeros(rows, cols);
                v.view_mut((0, 0), (lm.nrows(), lm.ncols())).copy_from(lm);
                v.view_mut((lm.nrows(), lm.ncols()), (rm.nrows(), rm.ncols()))
                    .copy_from(rm);
                (ls, v)
            };
            if vectors.ncols() == 0 {
                return (id, None);
            }
            let local_acc = acc_perm.rows(start, vectors.nrows()).into_owned();
            let moment = local_acc.transpose() * &vectors;
            let (mut scaling, mut details) = local_split(&vectors, &moment);
            reorthogonalize_if_needed(&mut scaling, &mut details);
            (
                id,
                Some(CellOutput {
                    details,
                    scaling,
                    start,
                }),
            )
        });
        for (id, out) in outputs {
            let Some(out) = out else { continue };
            for c in 0..out.details.ncols() {
                w_rows.push(BasisRow {
                    level: q as i32,
                    cell: id as u32,
                    start: out.start,
                    values: out.details.column(c).iter().cloned().collect(),
                });
            }
            pending[id] = Some((out.start, out.scaling));
        }
        // Children blocks were consumed by this level.
        for &id in cells {
            if let Some((l, r)) = tree.nodes[id].children {
                pending[l] = None;
                pending[r] = None;
            }
        }
        level_ranges.push((q as i32, row_start, w_rows.len()));
    }

    // Level -1: split the root's scaling vectors against the trend.
    let (root_start, root_scaling) = pending[0].take().expect("root always yields scalings");
    debug_assert_eq!(root_start, 0);
    let moment = trend_perm.transpose() * &root_scaling;
    let (mut l_block, mut minus1) = local_split(&root_scaling, &moment);
    reorthogonalize_if_needed(&mut l_block, &mut minus1);
    let p_eff = l_block.ncols();
    if p_eff != p && !opts.allow_deficient_trend {
        return Err(Error::RankDeficient {
            rank: p_eff,
            cols: p,
            deficient: (p_eff..p).collect(),
        });
    }
    let row_start = w_rows.len();
    for c in 0..minus1.ncols() {
        w_rows.push(BasisRow {
            level: -1,
            cell: 0,
            start: 0,
            values: minus1.column(c).iter().cloned().collect(),
        });
    }
    level_ranges.push((-1, row_start, w_rows.len()));

    let l_rows: Vec<BasisRow> = (0..l_block.ncols())
        .map(|c| BasisRow {
            level: TREND_LEVEL_TAG,
            cell: 0,
            start: 0,
            values: l_block.column(c).iter().cloned().collect(),
        })
        .collect();

    debug_assert_eq!(w_rows.len() + p_eff, n, "decomposition must be complete");

    Ok(MultiLevelBasis {
        n,
        p: p_eff,
        trend_rank_deficiency: p - p_eff,
        p_tilde,
        t: tree.t,
        w_rows,
        level_ranges,
        l_rows,
        permutation: tree.permutation.clone(),
    })
}

fn gather_rows(m: &DMatrix<f64>, permutation: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (pos, &orig) in permutation.iter().enumerate() {
        out.row_mut(pos).copy_from(&m.row(orig));
    }
    out
}

fn reorthogonalize_if_needed(scaling: &mut DMatrix<f64>, details: &mut DMatrix<f64>) {
    let m = scaling.ncols() + details.ncols();
    if m == 0 {
        return;
    }
    let s = scaling.nrows();
    let mut joint = DMatrix::zeros(s, m);
    joint
        .view_mut((0, 0), (s, scaling.ncols()))
        .copy_from(scaling);
    joint
        .view_mut((0, scaling.ncols()), (s, details.ncols()))
        .copy_from(details);
    let gram = joint.transpose() * &joint;
    let mut resid = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let want = if i == j { 1.0 } else { 0.0 };
            resid = resid.max((gram[(i, j)] - want).abs());
        }
    }
    if resid <= REORTH_TRIGGER {
        return;
    }
    // Modified Gram-Schmidt, scaling vectors first so detail vectors
    // keep their vanishing moments.
    for j in 0..m {
        for _ in 0..2 {
            for k in 0..j {
                let prev = joint.column(k).into_owned();
                let dot = joint.column(j).dot(&prev);
                joint.column_mut(j).axpy(-dot, &prev, 1.0);
            }
        }
        let norm = joint.column(j).norm();
        joint.column_mut(j).scale_mut(1.0 / norm);
    }
    scaling.copy_from(&joint.view((0, 0), (s, scaling.ncols())));
    details.copy_from(&joint.view((0, scaling.ncols()), (s, details.ncols())));
}

impl MultiLevelBasis {
    /// Number of detail vectors, N - p.
    pub fn n_detail(&self) -> usize {
        self.w_rows.len()
    }

    /// Rows of the stacked blocks for levels t down to `level`.
    pub fn rows_through_level(&self, level: i32) -> usize {
        self.level_ranges
            .iter()
            .filter(|(q, _, _)| *q >= level)
            .map(|(_, a, b)| b - a)
            .sum()
    }

    /// Row index range of one level in the flat ordering.
    pub fn level_rows(&self, level: i32) -> (usize, usize) {
        self.level_ranges
            .iter()
            .find(|(q, _, _)| *q == level)
            .map(|(_, a, b)| (*a, *b))
            .unwrap_or((0, 0))
    }

    /// Contiguous runs of rows owned by one (level, cell) pair, in flat
    /// order.
    pub fn row_groups(&self) -> Vec<RowGroup> {
        let mut groups: Vec<RowGroup> = Vec::new();
        for (i, row) in self.w_rows.iter().enumerate() {
            match groups.last_mut() {
                Some(g) if g.level == row.level && g.cell == row.cell => {
                    g.rows.1 = i + 1;
                }
                _ => groups.push(RowGroup {
                    level: row.level,
                    cell: row.cell,
                    rows: (i, i + 1),
                    support: (row.start, row.start + row.nnz()),
                }),
            }
        }
        groups
    }

    /// W v; input indexed by original observation id.
    pub fn apply_w(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        self.apply_rows(&self.w_rows, v)
    }

    /// L v: coordinates in the trend space.
    pub fn apply_l(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        self.apply_rows(&self.l_rows, v)
    }

    fn apply_rows(&self, rows: &[BasisRow], v: &[f64]) -> Vec<f64> {
        par::map_collect(rows, |row| {
            let mut acc = 0.0;
            for (k, &val) in row.values.iter().enumerate() {
                acc += val * v[self.permutation[row.start + k]];
            }
            acc
        })
    }

    /// W^T u for u of length N - p.
    pub fn apply_wt(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.w_rows.len());
        let mut out = vec![0.0; self.n];
        for (row, &ui) in self.w_rows.iter().zip(u) {
            for (k, &val) in row.values.iter().enumerate() {
                out[self.permutation[row.start + k]] += val * ui;
            }
        }
        out
    }

    /// L^T u for u of length p.
    pub fn apply_lt(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.l_rows.len());
        let mut out = vec![0.0; self.n];
        for (row, &ui) in self.l_rows.iter().zip(u) {
            for (k, &val) in row.values.iter().enumerate() {
                out[self.permutation[row.start + k]] += val * ui;
            }
        }
        out
    }

    /// Stacked blocks W_t .. W_level applied to z; level = -1 is the
    /// full W z.
    pub fn partial_transform(&self, z: &[f64], level: i32) -> Vec<f64> {
        assert!(level >= -1 && level <= self.t as i32);
        let rows = self.rows_through_level(level);
        self.apply_rows(&self.w_rows[..rows], z)
    }

    /// Exact max-norm of P P^T - I over the stacked [W; L] rows. Rows
    /// from disjoint cells have disjoint supports and contribute exact
    /// zeros, so only nested cell pairs are visited.
    pub fn orthonormality_residual(&self) -> f64 {
        let groups = self.row_groups();
        let mut resid = 0.0f64;
        for (gi, ga) in groups.iter().enumerate() {
            for gb in groups.iter().skip(gi) {
                let contains = gb.support.0 <= ga.support.0 && ga.support.1 <= gb.support.1;
                let contained = ga.support.0 <= gb.support.0 && gb.support.1 <= ga.support.1;
                if !(contains || contained) {
                    continue;
                }
                for r in ga.rows.0..ga.rows.1 {
                    for c in gb.rows.0.max(r)..gb.rows.1 {
                        let dot = row_dot(&self.w_rows[r], &self.w_rows[c]);
                        let want = if r == c { 1.0 } else { 0.0 };
                        resid = resid.max((dot - want).abs());
                    }
                }
            }
            for r in ga.rows.0..ga.rows.1 {
                for lrow in &self.l_rows {
                    resid = resid.max(row_dot(&self.w_rows[r], lrow).abs());
                }
            }
        }
        for (i, a) in self.l_rows.iter().enumerate() {
            for (j, b) in self.l_rows.iter().enumerate().skip(i) {
                let dot = row_dot(a, b);
                let want = if i == j { 1.0 } else { 0.0 };
                resid = resid.max((dot - want).abs());
            }
        }
        resid
    }

    /// max |W M| over all detail rows and columns of `m` (original
    /// observation order).
    pub fn trend_residual(&self, m: &DMatrix<f64>) -> f64 {
        let rows: Vec<&BasisRow> = self.w_rows.iter().collect();
        self.rows_design_residual(&rows, m)
    }

    /// max |W_q M~| over detail rows with level >= 0.
    pub fn accuracy_residual(&self, m_acc: &DMatrix<f64>) -> f64 {
        let rows: Vec<&BasisRow> = self.w_rows.iter().filter(|r| r.level >= 0).collect();
        self.rows_design_residual(&rows, m_acc)
    }

    fn rows_design_residual(&self, rows: &[&BasisRow], m: &DMatrix<f64>) -> f64 {
        let per_row = par::map_collect(rows, |row| {
            let mut worst = 0.0f64;
            for c in 0..m.ncols() {
                let mut acc = 0.0;
                for (k, &val) in row.values.iter().enumerate() {
                    acc += val * m[(self.permutation[row.start + k], c)];
                }
                worst = worst.max(acc.abs());
            }
            worst
        });
        per_row.into_iter().fold(0.0, f64::max)
    }

    /// Dense W in original observation order; desk-scale oracle helper.
    pub fn dense_w(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.w_rows.len(), self.n);
        for (i, row) in self.w_rows.iter().enumerate() {
            for (k, &val) in row.values.iter().enumerate() {
                w[(i, self.permutation[row.start + k])] = val;
            }
        }
        w
    }

    /// Dense L in original observation order.
    pub fn dense_l(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.l_rows.len(), self.n);
        for (i, row) in self.l_rows.iter().enumerate() {
            for (k, &val) in row.values.iter().enumerate() {
                l[(i, self.permutation[row.start + k])] = val;
            }
        }
        l
    }
}

/// Rows of one (level, cell) pair and their common support range in
/// permuted positions.
#[derive(Debug, Clone, Copy)]
pub struct RowGroup {
    pub level: i32,
    pub cell: u32,
    /// Flat row range [start, end).
    pub rows: (usize, usize),
    /// Permuted-position support range [start, end).
    pub support: (usize, usize),
}

fn row_dot(a: &BasisRow, b: &BasisRow) -> f64 {
    let lo = a.start.max(b.start);
    let hi = (a.start + a.nnz()).min(b.start + b.nnz());
    if lo >= hi {
        return 0.0;
    }
    let mut acc = 0.0;
    for pos in lo..hi {
        acc += a.values[pos - a.start] * b.values[pos - b.start];
    }
    acc
}
