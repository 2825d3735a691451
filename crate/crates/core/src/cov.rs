//! Multi-level covariance matrices: the dense C_W = W C W^T oracle and
//! the sparsified block version assembled cell pair by cell pair under
//! the level-dependent distance criterion.
//!
//! The retained pattern depends only on the geometry (tree searches at
//! radius tau_{i,j}), so it is planned once and refilled numerically
//! for every new covariance parameter.

use std::collections::BTreeSet;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::basis::MultiLevelBasis;
use crate::error::Result;
use crate::kernel::{KernelSpec, PreparedKernel, DEFAULT_DENSE_CAP};
use crate::par;
use crate::points::PointSet;
use crate::sparse::SparseSym;
use crate::tree::PartitionTree;

/// Level-pair truncation radius tau_{i,j} = tau * 2^(t - (i+j)/2).
pub fn tau_schedule(tau: f64, t: usize, i: usize, j: usize) -> f64 {
    debug_assert!((1..=t).contains(&i) && (1..=t).contains(&j));
    tau * (t as f64 - (i + j) as f64 / 2.0).exp2()
}

/// Source of covariance rows in permuted observation order.
pub enum CovSource {
    /// Dense kernel matrix, row-major, permuted order.
    Dense { n: usize, rows: Vec<f64> },
    /// Evaluate on demand.
    Lazy {
        perm_points: PointSet,
        kernel: PreparedKernel,
        spec: KernelSpec,
    },
    /// Evaluate on demand over a shared distance matrix; cheap when
    /// only a small fraction of entries will be read.
    LazyFromDistances {
        n: usize,
        dists: Arc<Vec<f64>>,
        kernel: PreparedKernel,
    },
}

impl CovSource {
    /// Materialize the kernel matrix when it fits the cap, otherwise
    /// keep a lazy evaluator.
    pub fn build(points: &PointSet, permutation: &[usize], spec: &KernelSpec) -> Result<Self> {
        Self::build_capped(points, permutation, spec, DEFAULT_DENSE_CAP)
    }

    pub fn build_capped(
        points: &PointSet,
        permutation: &[usize],
        spec: &KernelSpec,
        cap: usize,
    ) -> Result<Self> {
        let n = points.len();
        let perm_points = points.subset(permutation);
        let kernel = spec.prepare()?;
        if n.saturating_mul(n) <= cap {
            let mut rows = vec![0.0f64; n * n];
            par::for_each_indexed_chunk(&mut rows, n, |start, slab| {
                let i = start / n;
                let xi = perm_points.row(i);
                for (j, out) in slab.iter_mut().enumerate() {
                    *out = kernel.eval(spec.distance(xi, perm_points.row(j)));
                }
            });
            Ok(CovSource::Dense { n, rows })
        } else {
            Ok(CovSource::Lazy {
                perm_points,
                kernel,
                spec: spec.clone(),
            })
        }
    }

    /// Pairwise distance matrix in permuted order, row-major. Distances
    /// are covariance-parameter independent for the isotropic families,
    /// so likelihood sweeps reuse them across evaluations.
    pub fn distance_matrix(points: &PointSet, permutation: &[usize]) -> Vec<f64> {
        let n = points.len();
        let perm_points = points.subset(permutation);
        let mut dists = vec![0.0f64; n * n];
        par::for_each_indexed_chunk(&mut dists, n, |start, slab| {
            let i = start / n;
            let xi = perm_points.row(i);
            for (j, out) in slab.iter_mut().enumerate() {
                *out = crate::points::euclidean(xi, perm_points.row(j));
            }
        });
        dists
    }

    /// Apply a prepared kernel over a cached distance matrix.
    pub fn from_distances(n: usize, dists: &[f64], kernel: &PreparedKernel) -> Self {
        debug_assert_eq!(dists.len(), n * n);
        let mut rows = vec![0.0f64; n * n];
        par::for_each_indexed_chunk(&mut rows, n, |start, slab| {
            for (k, out) in slab.iter_mut().enumerate() {
                *out = kernel.eval(dists[start + k]);
            }
        });
        CovSource::Dense { n, rows }
    }

    /// Wrap an existing dense covariance given in ORIGINAL observation
    /// order (oracle and stub path).
    pub fn from_dense_original(c: &DMatrix<f64>, permutation: &[usize]) -> Self {
        let n = c.nrows();
        let mut rows = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                rows[i * n + j] = c[(permutation[i], permutation[j])];
            }
        }
        CovSource::Dense { n, rows }
    }

    pub fn dim(&self) -> usize {
        match self {
            CovSource::Dense { n, .. } => *n,
            CovSource::Lazy { perm_points, .. } => perm_points.len(),
            CovSource::LazyFromDistances { n, .. } => *n,
        }
    }

    /// Copy phi(pos_a, rb) into `out` for permuted positions.
    #[inline]
    pub fn row_into(&self, pos_a: usize, rb: Range<usize>, out: &mut [f64]) {
        debug_assert_eq!(out.len(), rb.len());
        match self {
            CovSource::Dense { n, rows } => {
                out.copy_from_slice(&rows[pos_a * n + rb.start..pos_a * n + rb.end]);
            }
            CovSource::Lazy {
                perm_points,
                kernel,
                spec,
            } => {
                let xa = perm_points.row(pos_a);
                for (k, j) in rb.enumerate() {
                    out[k] = kernel.eval(spec.distance(xa, perm_points.row(j)));
                }
            }
            CovSource::LazyFromDistances { n, dists, kernel } => {
                let row = &dists[pos_a * n + rb.start..pos_a * n + rb.end];
                for (out, &r) in out.iter_mut().zip(row) {
                    *out = kernel.eval(r);
                }
            }
        }
    }
}

/// Exact dense (N-p) x (N-p) multi-level covariance W C W^T, through a
/// covariance source; desk-scale oracle.
pub fn assemble_dense_cw(basis: &MultiLevelBasis, cov: &CovSource) -> DMatrix<f64> {
    let n = basis.n;
    let m = basis.n_detail();
    // B = C_perm * Psi^T (N x m), rows computed independently.
    let mut b = vec![0.0f64; n * m];
    par::for_each_indexed_chunk(&mut b, m, |start, slab| {
        let i = start / m;
        let mut phi_row = vec![0.0; n];
        cov.row_into(i, 0..n, &mut phi_row);
        for (r, out) in slab.iter_mut().enumerate() {
            let row = &basis.w_rows[r];
            let mut acc = 0.0;
            for (k, &v) in row.values.iter().enumerate() {
                acc += v * phi_row[row.start + k];
            }
            *out = acc;
        }
    });
    // C_W[r][c] = sum_i psi_r[i] B[i][c].
    let mut out = DMatrix::zeros(m, m);
    let cols: Vec<usize> = (0..m).collect();
    let contributions = par::map_collect(&cols, |&r| {
        let row = &basis.w_rows[r];
        let mut line = vec![0.0f64; m];
        for (k, &v) in row.values.iter().enumerate() {
            let pos = row.start + k;
            let brow = &b[pos * m..(pos + 1) * m];
            for c in 0..m {
                line[c] += v * brow[c];
            }
        }
        line
    });
    for (r, line) in contributions.into_iter().enumerate() {
        for c in 0..m {
            out[(r, c)] = line[c];
        }
    }
    // Exact symmetrization: the two accumulation orders differ by
    // rounding only.
    for r in 0..m {
        for c in r + 1..m {
            let v = 0.5 * (out[(r, c)] + out[(c, r)]);
            out[(r, c)] = v;
            out[(c, r)] = v;
        }
    }
    out
}

/// Dense multi-level covariance from a kernel spec (builds the source).
pub fn dense_cw(
    basis: &MultiLevelBasis,
    tree: &PartitionTree,
    points: &PointSet,
    spec: &KernelSpec,
) -> Result<DMatrix<f64>> {
    let cov = CovSource::build(points, &tree.permutation, spec)?;
    Ok(assemble_dense_cw(basis, &cov))
}

#[derive(Debug, Clone, Copy)]
struct PlanGroup {
    level: i32,
    #[allow(dead_code)]
    cell: u32,
    rows: (usize, usize),
    support: (usize, usize),
}

/// Geometry-dependent part of the sparse assembly: retained group
/// pairs and the slot map into the CSC value array.
pub struct AssemblyPlan {
    pub min_level: i32,
    pub t: usize,
    pub dim: usize,
    groups: Vec<PlanGroup>,
    /// Retained pairs (ga, gb) with ga <= gb in flat group order.
    pairs: Vec<(u32, u32)>,
    /// Kernel evaluations one numeric fill needs (support products
    /// summed over retained pairs).
    pub lookup_count: u64,
    /// Zero-valued matrix carrying the full symmetric pattern.
    pattern: SparseSym,
    /// Per pair: value slots for the (rows_a x rows_b) block, row-major,
    /// and for its mirror when the groups differ.
    slots: Vec<(Vec<u32>, Option<Vec<u32>>)>,
    /// Row ranges per level of the truncated matrix.
    pub level_ranges: Vec<(i32, usize, usize)>,
}

impl AssemblyPlan {
    /// Plan the retained pattern for levels t..min_level with parameter
    /// tau. Blocks with either level <= 0 are kept in full (their
    /// truncation error vanishes); pairs at levels i, j >= 1 are kept
    /// when the tree search at radius tau_{i,j} from one cell reaches
    /// the other. Every cell's self pair is always present.
    pub fn new(
        basis: &MultiLevelBasis,
        tree: &PartitionTree,
        points: &PointSet,
        tau: f64,
        min_level: i32,
    ) -> Self {
        assert!(min_level >= -1 && min_level <= tree.t as i32);
        let dim = basis.rows_through_level(min_level);
        let groups: Vec<PlanGroup> = basis
            .row_groups()
            .into_iter()
            .filter(|g| g.level >= min_level)
            .map(|g| PlanGroup {
                level: g.level,
                cell: g.cell,
                rows: g.rows,
                support: g.support,
            })
            .collect();
        // Group lookup by (level, cell).
        let mut by_level_cell: std::collections::HashMap<(i32, u32), u32> = Default::default();
        for (gi, g) in groups.iter().enumerate() {
            let cell = basis.row_groups()[0].cell; // placeholder避
            let _ = cell;
            by_level_cell.insert((g.level, g.cell_id()), gi as u32);
        }
        let mut pair_set: BTreeSet<(u32, u32)> = BTreeSet::new();
        // Self pairs.
        for gi in 0..groups.len() as u32 {
            pair_set.insert((gi, gi));
        }
        let levels: Vec<i32> = {
            let mut ls: Vec<i32> = groups.iter().map(|g| g.level).collect();
            ls.sort_unstable();
            ls.dedup();
            ls
        };
        for &li in &levels {
            for &lj in &levels {
                if li > lj {
                    continue;
                }
                if li <= 0 || lj <= 0 {
                    // Dense strip: all pairs between these levels.
                    for (ga, a) in groups.iter().enumerate() {
                        if a.level != li {
                            continue;
                        }
                        for (gb, b) in groups.iter().enumerate() {
                            if b.level != lj {
                                continue;
                            }
                            let (x, y) = ordered(ga as u32, gb as u32);
                            pair_set.insert((x, y));
                        }
                    }
                    continue;
                }
                let radius = tau_schedule(tau, tree.t, li as usize, lj as usize);
                for (ga, a) in groups.iter().enumerate() {
                    if a.level != li {
                        continue;
                    }
                    let found =
                        tree.search_from_cell(points, a.cell_id() as usize, lj as usize, radius);
                    for node in found {
                        if let Some(&gb) = by_level_cell.get(&(lj, node as u32)) {
                            let (x, y) = ordered(ga as u32, gb);
                            pair_set.insert((x, y));
                        }
                    }
                }
            }
        }
        let pairs: Vec<(u32, u32)> = pair_set.into_iter().collect();
        let lookup_count: u64 = pairs
            .iter()
            .map(|&(ga, gb)| {
                let a = &groups[ga as usize];
                let b = &groups[gb as usize];
                (a.support.1 - a.support.0) as u64 * (b.support.1 - b.support.0) as u64
            })
            .sum();

        // Column counts for the full symmetric pattern.
        let mut col_count = vec![0usize; dim + 1];
        for &(ga, gb) in &pairs {
            let a = &groups[ga as usize];
            let b = &groups[gb as usize];
            let ma = a.rows.1 - a.rows.0;
            let mb = b.rows.1 - b.rows.0;
            for c in b.rows.0..b.rows.1 {
                col_count[c + 1] += ma;
            }
            if ga != gb {
                for c in a.rows.0..a.rows.1 {
                    col_count[c + 1] += mb;
                }
            }
        }
        for j in 0..dim {
            col_count[j + 1] += col_count[j];
        }
        let col_ptr = col_count;
        let mut row_idx = vec![0u32; col_ptr[dim]];
        let mut cursor: Vec<usize> = col_ptr[..dim].to_vec();
        for &(ga, gb) in &pairs {
            let a = groups[ga as usize];
            let b = groups[gb as usize];
            for c in b.rows.0..b.rows.1 {
                for r in a.rows.0..a.rows.1 {
                    row_idx[cursor[c]] = r as u32;
                    cursor[c] += 1;
                }
            }
            if ga != gb {
                for c in a.rows.0..a.rows.1 {
                    for r in b.rows.0..b.rows.1 {
                        row_idx[cursor[c]] = r as u32;
                        cursor[c] += 1;
                    }
                }
            }
        }
        // Sort rows within each column (groups were inserted in pair
        // order, not row order).
        for j in 0..dim {
            row_idx[col_ptr[j]..col_ptr[j + 1]].sort_unstable();
        }
        let pattern = SparseSym {
            n: dim,
            col_ptr: col_ptr.clone(),
            row_idx,
            vals: vec![0.0; col_ptr[dim]],
        };
        // Slot lookup per pair via binary search in the sorted columns.
        let find = |r: usize, c: usize| -> u32 {
            let lo = pattern.col_ptr[c];
            let hi = pattern.col_ptr[c + 1];
            let seg = &pattern.row_idx[lo..hi];
            lo as u32 + seg.partition_point(|&x| (x as usize) < r) as u32
        };
        let slots: Vec<(Vec<u32>, Option<Vec<u32>>)> = pairs
            .iter()
            .map(|&(ga, gb)| {
                let a = groups[ga as usize];
                let b = groups[gb as usize];
                let mut up = Vec::with_capacity(
                    (a.rows.1 - a.rows.0) * (b.rows.1 - b.rows.0),
                );
                for r in a.rows.0..a.rows.1 {
                    for c in b.rows.0..b.rows.1 {
                        up.push(find(r, c));
                    }
                }
                let down = (ga != gb).then(|| {
                    let mut dn = Vec::with_capacity(up.len());
                    for r in a.rows.0..a.rows.1 {
                        for c in b.rows.0..b.rows.1 {
                            dn.push(find(c, r));
                        }
                    }
                    dn
                });
                (up, down)
            })
            .collect();
        let level_ranges: Vec<(i32, usize, usize)> = basis
            .level_ranges
            .iter()
            .filter(|(q, _, _)| *q >= min_level)
            .cloned()
            .collect();
        AssemblyPlan {
            min_level,
            t: tree.t,
            dim,
            lookup_count,
            groups,
            pairs,
            pattern,
            slots,
            level_ranges,
        }
    }

    /// Zero-valued pattern matrix (full symmetric CSC).
    pub fn pattern(&self) -> &SparseSym {
        &self.pattern
    }

    /// Per-level-pair assembly cost: retained cell pairs and the kernel
    /// evaluations (support products) one numeric fill spends on them.
    pub fn cost_profile(&self) -> Vec<BlockCost> {
        let mut acc: std::collections::BTreeMap<(i32, i32), BlockCost> = Default::default();
        for &(ga, gb) in &self.pairs {
            let a = &self.groups[ga as usize];
            let b = &self.groups[gb as usize];
            let key = (a.level.min(b.level), a.level.max(b.level));
            let e = acc.entry(key).or_insert(BlockCost {
                level_i: key.0,
                level_j: key.1,
                cell_pairs: 0,
                kernel_evals: 0,
                entries: 0,
            });
            e.cell_pairs += 1;
            e.kernel_evals +=
                (a.support.1 - a.support.0) as u64 * (b.support.1 - b.support.0) as u64;
            e.entries += (a.rows.1 - a.rows.0) as u64 * (b.rows.1 - b.rows.0) as u64;
        }
        acc.into_values().collect()
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    /// Fraction of stored entries relative to the dense dimension.
    pub fn sparsity(&self) -> f64 {
        self.pattern.nnz() as f64 / (self.dim as f64 * self.dim as f64)
    }

    /// Numeric fill for one covariance: every retained block entry is
    /// psi_a^T C psi_b computed by direct summation over the supports.
    pub fn assemble(&self, basis: &MultiLevelBasis, cov: &CovSource) -> BlockSparseMatrix {
        let blocks = par::map_collect(&self.pairs, |&(ga, gb)| {
            let a = self.groups[ga as usize];
            let b = self.groups[gb as usize];
            let mut vals = block_values(basis, cov, a, b);
            if ga == gb {
                // Same-cell block: mirror the upper triangle so stored
                // symmetry is exact, not just up to rounding.
                let m = a.rows.1 - a.rows.0;
                for r in 0..m {
                    for c in r + 1..m {
                        vals[c * m + r] = vals[r * m + c];
                    }
                }
            }
            vals
        });
        let mut mat = self.pattern.clone();
        for (k, vals) in blocks.iter().enumerate() {
            let (up, down) = &self.slots[k];
            for (slot, &v) in up.iter().zip(vals) {
                mat.vals[*slot as usize] = v;
            }
            if let Some(down) = down {
                for (slot, &v) in down.iter().zip(vals) {
                    mat.vals[*slot as usize] = v;
                }
            }
        }
        BlockSparseMatrix {
            t: self.t,
            min_level: self.min_level,
            dim: self.dim,
            level_ranges: self.level_ranges.clone(),
            mat,
        }
    }
}

impl PlanGroup {
    fn cell_id(&self) -> u32 {
        self.cell
    }
}

fn ordered(a: u32, b: u32) -> (u32, u32) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// psi_A^T C psi_B for all row combinations of two groups, row-major.
fn block_values(
    basis: &MultiLevelBasis,
    cov: &CovSource,
    a: PlanGroup,
    b: PlanGroup,
) -> Vec<f64> {
    let ma = a.rows.1 - a.rows.0;
    let mb = b.rows.1 - b.rows.0;
    let sa = a.support.1 - a.support.0;
    let sb = b.support.1 - b.support.0;
    // T[a_local][c] = sum_b phi(a, b) psi_c[b]
    let mut t = vec![0.0f64; sa * mb];
    let mut phi_row = vec![0.0f64; sb];
    for al in 0..sa {
        cov.row_into(a.support.0 + al, b.support.0..b.support.1, &mut phi_row);
        let trow = &mut t[al * mb..(al + 1) * mb];
        for (c, out) in trow.iter_mut().enumerate() {
            let psi = &basis.w_rows[b.rows.0 + c].values;
            let mut acc = 0.0;
            for k in 0..sb {
                acc += phi_row[k] * psi[k];
            }
            *out = acc;
        }
    }
    let mut e = vec![0.0f64; ma * mb];
    for (r, erow) in e.chunks_exact_mut(mb).enumerate() {
        let psi = &basis.w_rows[a.rows.0 + r].values;
        for (al, &w) in psi.iter().enumerate() {
            let trow = &t[al * mb..(al + 1) * mb];
            for c in 0..mb {
                erow[c] += w * trow[c];
            }
        }
    }
    e
}

/// Work one level-pair block costs during assembly.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct BlockCost {
    pub level_i: i32,
    pub level_j: i32,
    pub cell_pairs: u64,
    pub kernel_evals: u64,
    pub entries: u64,
}

/// Sparse multi-level covariance for levels t..min_level.
#[derive(Debug, Clone)]
pub struct BlockSparseMatrix {
    pub t: usize,
    pub min_level: i32,
    pub dim: usize,
    pub level_ranges: Vec<(i32, usize, usize)>,
    pub mat: SparseSym,
}

impl BlockSparseMatrix {
    pub fn nnz(&self) -> usize {
        self.mat.nnz()
    }

    pub fn sparsity(&self) -> f64 {
        self.nnz() as f64 / (self.dim as f64 * self.dim as f64)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.mat.to_dense()
    }

    /// COO triplets of one level-pair block (local indices within the
    /// block), for persistence and inspection.
    pub fn block_triplets(&self, li: i32, lj: i32) -> Vec<(u32, u32, f64)> {
        let (ra, rb) = (self.rows_of(li), self.rows_of(lj));
        let mut out = Vec::new();
        for c in rb.0..rb.1 {
            for p in self.mat.col_ptr[c]..self.mat.col_ptr[c + 1] {
                let r = self.mat.row_idx[p] as usize;
                if r >= ra.0 && r < ra.1 {
                    out.push(((r - ra.0) as u32, (c - rb.0) as u32, self.mat.vals[p]));
                }
            }
        }
        out
    }

    fn rows_of(&self, level: i32) -> (usize, usize) {
        self.level_ranges
            .iter()
            .find(|(q, _, _)| *q == level)
            .map(|(_, a, b)| (*a, *b))
            .unwrap_or((0, 0))
    }
}

/// One-shot sparse assembly.
pub fn assemble_sparse_cw(
    basis: &MultiLevelBasis,
    tree: &PartitionTree,
    points: &PointSet,
    spec: &KernelSpec,
    tau: f64,
    min_level: i32,
) -> Result<BlockSparseMatrix> {
    let plan = AssemblyPlan::new(basis, tree, points, tau, min_level);
    let cov = CovSource::build(points, &tree.permutation, spec)?;
    Ok(plan.assemble(basis, &cov))
}

/// (max-norm, spectral-norm estimate) of E = dense - sparse. The
/// spectral norm comes from power iteration on E^T E, 50 iterations or
/// relative change below 1e-6.
pub fn truncation_gap(dense: &DMatrix<f64>, sparse: &BlockSparseMatrix) -> (f64, f64) {
    let e = dense - sparse.to_dense();
    (e.abs().max(), spectral_norm(&e))
}

/// Spectral norm of a general square matrix by power iteration on
/// E^T E.
pub fn spectral_norm(e: &DMatrix<f64>) -> f64 {
    let n = e.ncols();
    if n == 0 {
        return 0.0;
    }
    let mut v = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
    // Deterministic perturbation breaks symmetry-trap starts.
    for i in 0..n {
        v[i] += ((i % 7) as f64 - 3.0) * 1e-3;
    }
    v /= v.norm();
    let mut sigma2 = 0.0f64;
    for _ in 0..50 {
        let w = e.transpose() * (e * &v);
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / nw;
        if (next - sigma2).abs() <= 1e-6 * next.abs() {
            sigma2 = next;
            break;
        }
        sigma2 = next;
    }
    sigma2.max(0.0).sqrt()
}

/// Condition number of a dense symmetric positive definite matrix via
/// its eigenvalues.
pub fn dense_condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &e in eig.iter() {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    hi / lo
}
