//! Sparse symmetric matrices with a minimum-degree ordering, an
//! up-looking sparse LDL^T factorization (Cholesky in product form)
//! with a reusable symbolic plan, preconditioned conjugate gradients,
//! and extreme singular value estimation.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// Below this dimension the factorization falls back to a dense
/// Cholesky; at desk scale the crossover is irrelevant for accuracy.
pub const DENSE_FALLBACK_DIM: usize = 512;

/// Symmetric sparse matrix in CSC with the full (mirrored) pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<u32>,
    pub vals: Vec<f64>,
}

impl SparseSym {
    /// Build from (row, col, val) triplets of the FULL symmetric
    /// pattern; duplicate entries are summed.
    pub fn from_triplets(n: usize, triplets: &[(u32, u32, f64)]) -> Self {
        let mut count = vec![0usize; n + 1];
        for &(_, c, _) in triplets {
            count[c as usize + 1] += 1;
        }
        for j in 0..n {
            count[j + 1] += count[j];
        }
        let col_ptr_raw = count;
        let mut row_idx = vec![0u32; triplets.len()];
        let mut vals = vec![0.0f64; triplets.len()];
        let mut cursor = col_ptr_raw.clone();
        for &(r, c, v) in triplets {
            let slot = cursor[c as usize];
            row_idx[slot] = r;
            vals[slot] = v;
            cursor[c as usize] += 1;
        }
        let mut out_ptr = vec![0usize; n + 1];
        let mut out_rows: Vec<u32> = Vec::with_capacity(triplets.len());
        let mut out_vals: Vec<f64> = Vec::with_capacity(triplets.len());
        for j in 0..n {
            let lo = col_ptr_raw[j];
            let hi = col_ptr_raw[j + 1];
            let mut col: Vec<(u32, f64)> = row_idx[lo..hi]
                .iter()
                .cloned()
                .zip(vals[lo..hi].iter().cloned())
                .collect();
            col.sort_unstable_by_key(|&(r, _)| r);
            let col_start = out_rows.len();
            for (r, v) in col {
                if out_rows.len() > col_start && *out_rows.last().unwrap() == r {
                    *out_vals.last_mut().unwrap() += v;
                } else {
                    out_rows.push(r);
                    out_vals.push(v);
                }
            }
            out_ptr[j + 1] = out_rows.len();
        }
        SparseSym {
            n,
            col_ptr: out_ptr,
            row_idx: out_rows,
            vals: out_vals,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>, drop_tol: f64) -> Self {
        let n = m.nrows();
        let mut trips = Vec::new();
        for j in 0..n {
            for i in 0..n {
                if m[(i, j)].abs() > drop_tol || i == j {
                    trips.push((i as u32, j as u32, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(n, &trips)
    }

    pub fn identity(n: usize) -> Self {
        let trips: Vec<(u32, u32, f64)> = (0..n as u32).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &trips)
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                m[(self.row_idx[p] as usize, j)] = self.vals[p];
            }
        }
        m
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[p] as usize] += self.vals[p] * xj;
            }
        }
        y
    }
}

/// Approximate-minimum-degree-style fill-reducing ordering on the
/// quotient graph, with element absorption. Returns perm where
/// perm[k] = original index eliminated at step k.
pub fn fill_reducing_ordering(a: &SparseSym) -> Vec<usize> {
    let n = a.n;
    if n == 0 {
        return Vec::new();
    }
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    for j in 0..n {
        for p in a.col_ptr[j]..a.col_ptr[j + 1] {
            let i = a.row_idx[p] as usize;
            if i != j {
                adj[j].push(i as u32);
            }
        }
    }
    let mut elems_of: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut members: Vec<Vec<u32>> = Vec::new();
    let mut eliminated = vec![false; n];
    let mut absorbed: Vec<bool> = Vec::new();
    let mut degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|i| Reverse((degree[i], i))).collect();
    let mut order = Vec::with_capacity(n);
    let mut stamp = vec![usize::MAX; n];

    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != degree[v] {
            continue; // stale entry
        }
        eliminated[v] = true;
        order.push(v);
        let mark = order.len();
        stamp[v] = mark;
        let mut clique: Vec<u32> = Vec::new();
        for &u in &adj[v] {
            let u = u as usize;
            if !eliminated[u] && stamp[u] != mark {
                stamp[u] = mark;
                clique.push(u as u32);
            }
        }
        for &e in &elems_of[v] {
            if absorbed[e as usize] {
                continue;
            }
            for &u in &members[e as usize] {
                let u = u as usize;
                if !eliminated[u] && stamp[u] != mark {
                    stamp[u] = mark;
                    clique.push(u as u32);
                }
            }
            absorbed[e as usize] = true;
        }
        clique.sort_unstable();
        let e_new = members.len() as u32;
        members.push(clique.clone());
        absorbed.push(false);
        for &u in &clique {
            let u = u as usize;
            elems_of[u].retain(|&e| !absorbed[e as usize]);
            elems_of[u].push(e_new);
            adj[u].retain(|&w| !eliminated[w as usize]);
            // Approximate external degree, overlaps overcounted.
            let mut d = adj[u].len();
            for &e in &elems_of[u] {
                d += members[e as usize].len().saturating_sub(1);
            }
            degree[u] = d;
            heap.push(Reverse((d, u)));
        }
    }
    order
}

/// Factor fill (entries of L including the diagonal) of the pattern
/// under a permutation, by symbolic elimination.
pub fn symbolic_fill(a: &SparseSym, perm: &[usize]) -> usize {
    let plan = CholPlan::with_symbolic(a, perm.to_vec());
    plan.factor_nnz()
}

/// Elimination tree and factor pattern for a fixed sparsity structure,
/// reusable across numeric refactorizations.
#[derive(Debug, Clone)]
pub struct CholPlan {
    pub n: usize,
    /// perm[k] = original index at permuted position k.
    pub perm: Vec<usize>,
    pub iperm: Vec<usize>,
    dense: bool,
    lp: Vec<usize>,
    li: Vec<u32>,
    /// Per permuted row k: (column j, slot), ascending in j.
    row_ops: Vec<Vec<(u32, u32)>>,
    /// Permuted upper-triangle gather: per row k, (permuted row i <= k,
    /// source value index in A).
    gather: Vec<Vec<(u32, u32)>>,
}

impl CholPlan {
    pub fn new(a: &SparseSym, perm: Option<Vec<usize>>) -> Self {
        let perm = perm.unwrap_or_else(|| fill_reducing_ordering(a));
        if a.n < DENSE_FALLBACK_DIM {
            let mut iperm = vec![0usize; a.n];
            for (k, &orig) in perm.iter().enumerate() {
                iperm[orig] = k;
            }
            return CholPlan {
                n: a.n,
                perm,
                iperm,
                dense: true,
                lp: Vec::new(),
                li: Vec::new(),
                row_ops: Vec::new(),
                gather: Vec::new(),
            };
        }
        Self::with_symbolic(a, perm)
    }

    /// Always runs the sparse symbolic pass, regardless of dimension.
    pub fn with_symbolic(a: &SparseSym, perm: Vec<usize>) -> Self {
        let n = a.n;
        let mut iperm = vec![0usize; n];
        for (k, &orig) in perm.iter().enumerate() {
            iperm[orig] = k;
        }
        let mut gather: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
        for j_orig in 0..n {
            for p in a.col_ptr[j_orig]..a.col_ptr[j_orig + 1] {
                let i_orig = a.row_idx[p] as usize;
                let (pi, pj) = (iperm[i_orig], iperm[j_orig]);
                if pi <= pj {
                    gather[pj].push((pi as u32, p as u32));
                }
            }
        }
        for g in &mut gather {
            g.sort_unstable_by_key(|&(i, _)| i);
        }
        // Elimination tree over the permuted upper pattern.
        let mut parent = vec![usize::MAX; n];
        let mut ancestor = vec![usize::MAX; n];
        for k in 0..n {
            for &(i, _) in &gather[k] {
                let mut i = i as usize;
                while i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == usize::MAX {
                        parent[i] = k;
                        break;
                    }
                    if next == k {
                        break;
                    }
                    i = next;
                }
            }
        }
        // Row patterns of L via etree reach; slots assigned in the
        // ascending row order the numeric pass will follow.
        let mut lnz = vec![0usize; n];
        let mut mark = vec![usize::MAX; n];
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut path: Vec<u32> = Vec::new();
        for k in 0..n {
            mark[k] = k;
            let mut reach: Vec<u32> = Vec::new();
            for &(i, _) in &gather[k] {
                let mut i = i as usize;
                path.clear();
                while i < k && mark[i] != k {
                    mark[i] = k;
                    path.push(i as u32);
                    match parent[i] {
                        usize::MAX => break,
                        next => i = next,
                    }
                }
                reach.extend(path.iter());
            }
            reach.sort_unstable();
            for &j in &reach {
                lnz[j as usize] += 1;
            }
            rows[k] = reach;
        }
        let mut lp = vec![0usize; n + 1];
        for j in 0..n {
            lp[j + 1] = lp[j] + lnz[j];
        }
        let mut cursor = lp.clone();
        let mut li = vec![0u32; lp[n]];
        let mut row_ops: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
        for (k, reach) in rows.into_iter().enumerate() {
            let mut ops = Vec::with_capacity(reach.len());
            for &j in &reach {
                let slot = cursor[j as usize];
                li[slot] = k as u32;
                cursor[j as usize] += 1;
                ops.push((j, slot as u32));
            }
            row_ops[k] = ops;
        }
        CholPlan {
            n,
            perm,
            iperm,
            dense: false,
            lp,
            li,
            row_ops,
            gather,
        }
    }

    /// Entries of L including the diagonal.
    pub fn factor_nnz(&self) -> usize {
        if self.dense {
            self.n * (self.n + 1) / 2
        } else {
            self.lp[self.n] + self.n
        }
    }

    /// Numeric factorization; the matrix must carry this plan's pattern
    /// (a subset is fine, missing entries are zeros).
    pub fn factor(&self, a: &SparseSym) -> Result<CholFactor> {
        assert_eq!(a.n, self.n);
        let n = self.n;
        if self.dense {
            let mut m = DMatrix::zeros(n, n);
            for j in 0..n {
                for p in a.col_ptr[j]..a.col_ptr[j + 1] {
                    let i = a.row_idx[p] as usize;
                    m[(self.iperm[i], self.iperm[j])] = a.vals[p];
                }
            }
            return match nalgebra::Cholesky::new(m.clone()) {
                Some(f) => Ok(CholFactor {
                    n,
                    perm: self.perm.clone(),
                    backend: FactorBackend::Dense { l: f.unpack() },
                }),
                None => {
                    let (col, pivot) = first_bad_pivot(&m);
                    Err(Error::NotPositiveDefinite {
                        column: self.perm[col],
                        pivot,
                    })
                }
            };
        }
        let mut lx = vec![0.0f64; self.lp[n]];
        let mut d = vec![0.0f64; n];
        let mut y = vec![0.0f64; n];
        let mut lnz_done = vec![0usize; n];
        for k in 0..n {
            let mut dk = 0.0;
            for &(i, src) in &self.gather[k] {
                if (i as usize) == k {
                    dk = a.vals[src as usize];
                } else {
                    y[i as usize] = a.vals[src as usize];
                }
            }
            for &(j, slot) in &self.row_ops[k] {
                let j = j as usize;
                let yj = y[j];
                y[j] = 0.0;
                let lo = self.lp[j];
                let hi = lo + lnz_done[j];
                for p in lo..hi {
                    y[self.li[p] as usize] -= lx[p] * yj;
                }
                let lkj = yj / d[j];
                dk -= yj * lkj;
                lx[slot as usize] = lkj;
                lnz_done[j] += 1;
                debug_assert_eq!(self.li[slot as usize] as usize, k);
            }
            if dk <= 0.0 || !dk.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    column: self.perm[k],
                    pivot: dk,
                });
            }
            d[k] = dk;
        }
        Ok(CholFactor {
            n,
            perm: self.perm.clone(),
            backend: FactorBackend::Sparse {
                lp: self.lp.clone(),
                li: self.li.clone(),
                lx,
                d,
            },
        })
    }
}

/// One-shot ordering + symbolic + numeric factorization.
pub fn sparse_cholesky(a: &SparseSym) -> Result<CholFactor> {
    CholPlan::new(a, None).factor(a)
}

/// Factor of P^T A P = G G^T, stored as unit L and positive D with
/// G = L sqrt(D).
#[derive(Debug, Clone)]
pub struct CholFactor {
    pub n: usize,
    pub perm: Vec<usize>,
    backend: FactorBackend,
}

#[derive(Debug, Clone)]
enum FactorBackend {
    Dense {
        l: DMatrix<f64>,
    },
    Sparse {
        lp: Vec<usize>,
        li: Vec<u32>,
        lx: Vec<f64>,
        d: Vec<f64>,
    },
}

impl CholFactor {
    /// log det A = 2 sum log G_ii.
    pub fn log_det(&self) -> f64 {
        match &self.backend {
            FactorBackend::Dense { l, .. } => {
                2.0 * (0..self.n).map(|i| l[(i, i)].ln()).sum::<f64>()
            }
            FactorBackend::Sparse { d, .. } => d.iter().map(|&x| x.ln()).sum(),
        }
    }

    /// Diagonal of G in permuted order.
    pub fn g_diag(&self) -> Vec<f64> {
        match &self.backend {
            FactorBackend::Dense { l, .. } => (0..self.n).map(|i| l[(i, i)]).collect(),
            FactorBackend::Sparse { d, .. } => d.iter().map(|&x| x.sqrt()).collect(),
        }
    }

    /// Entries of G including the diagonal.
    pub fn factor_nnz(&self) -> usize {
        match &self.backend {
            FactorBackend::Dense { .. } => self.n * (self.n + 1) / 2,
            FactorBackend::Sparse { lx, .. } => lx.len() + self.n,
        }
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        match &self.backend {
            FactorBackend::Dense { l } => {
                let mut y: Vec<f64> = (0..self.n).map(|k| b[self.perm[k]]).collect();
                // L z = y
                for i in 0..self.n {
                    let mut acc = y[i];
                    for j in 0..i {
                        acc -= l[(i, j)] * y[j];
                    }
                    y[i] = acc / l[(i, i)];
                }
                // L^T w = z
                for i in (0..self.n).rev() {
                    let mut acc = y[i];
                    for j in i + 1..self.n {
                        acc -= l[(j, i)] * y[j];
                    }
                    y[i] = acc / l[(i, i)];
                }
                let mut x = vec![0.0; self.n];
                for k in 0..self.n {
                    x[self.perm[k]] = y[k];
                }
                x
            }
            FactorBackend::Sparse { lp, li, lx, d, .. } => {
                let mut y: Vec<f64> = (0..self.n).map(|k| b[self.perm[k]]).collect();
                for j in 0..self.n {
                    let yj = y[j];
                    if yj != 0.0 {
                        for p in lp[j]..lp[j + 1] {
                            y[li[p] as usize] -= lx[p] * yj;
                        }
                    }
                }
                for j in 0..self.n {
                    y[j] /= d[j];
                }
                for j in (0..self.n).rev() {
                    let mut acc = y[j];
                    for p in lp[j]..lp[j + 1] {
                        acc -= lx[p] * y[li[p] as usize];
                    }
                    y[j] = acc;
                }
                let mut x = vec![0.0; self.n];
                for k in 0..self.n {
                    x[self.perm[k]] = y[k];
                }
                x
            }
        }
    }

    /// b^T A^{-1} b through one forward sweep.
    pub fn quad_form(&self, b: &[f64]) -> f64 {
        match &self.backend {
            FactorBackend::Dense { l, .. } => {
                let mut y: Vec<f64> = (0..self.n).map(|k| b[self.perm[k]]).collect();
                for i in 0..self.n {
                    let mut acc = y[i];
                    for j in 0..i {
                        acc -= l[(i, j)] * y[j];
                    }
                    y[i] = acc / l[(i, i)];
                }
                y.iter().map(|v| v * v).sum()
            }
            FactorBackend::Sparse { lp, li, lx, d, .. } => {
                let mut y: Vec<f64> = (0..self.n).map(|k| b[self.perm[k]]).collect();
                for j in 0..self.n {
                    let yj = y[j];
                    if yj != 0.0 {
                        for p in lp[j]..lp[j + 1] {
                            y[li[p] as usize] -= lx[p] * yj;
                        }
                    }
                }
                y.iter().zip(d).map(|(v, dk)| v * v / dk).sum()
            }
        }
    }
}

fn first_bad_pivot(m: &DMatrix<f64>) -> (usize, f64) {
    let n = m.nrows();
    let mut a = m.clone();
    for k in 0..n {
        let pivot = a[(k, k)];
        if pivot <= 0.0 || !pivot.is_finite() {
            return (k, pivot);
        }
        let root = pivot.sqrt();
        for i in k + 1..n {
            a[(i, k)] /= root;
        }
        for j in k + 1..n {
            for i in j..n {
                let v = a[(i, k)] * a[(j, k)];
                a[(i, j)] -= v;
            }
        }
    }
    (n - 1, a[(n - 1, n - 1)])
}

/// Abstract symmetric operator for iterative methods.
pub trait LinOp {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
}

impl LinOp for SparseSym {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matvec(x)
    }
}

impl LinOp for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let v = nalgebra::DVector::from_column_slice(x);
        (self * v).iter().cloned().collect()
    }
}

/// Preconditioner interface: application of M^{-1}.
pub trait Precond {
    fn solve(&self, r: &[f64]) -> Vec<f64>;
}

/// Identity preconditioner.
pub struct IdentityPrecond;

impl Precond for IdentityPrecond {
    fn solve(&self, r: &[f64]) -> Vec<f64> {
        r.to_vec()
    }
}

impl Precond for CholFactor {
    fn solve(&self, r: &[f64]) -> Vec<f64> {
        CholFactor::solve(self, r)
    }
}

#[derive(Debug, Clone)]
pub struct PcgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Relative recurrence residual per iteration.
    pub residual_history: Vec<f64>,
    /// Final true relative residual of the unpreconditioned system.
    pub residual: f64,
}

/// Preconditioned conjugate gradients. Convergence is declared on the
/// true unpreconditioned residual ||b - Ax|| / ||b||, recomputed every
/// ten iterations and whenever the recurrence suggests convergence.
pub fn pcg_solve(
    op: &dyn LinOp,
    precond: &dyn Precond,
    b: &[f64],
    eps: f64,
    max_iter: usize,
) -> Result<PcgSolution> {
    assert!(eps > 0.0);
    let n = op.dim();
    assert_eq!(b.len(), n);
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(PcgSolution {
            x: vec![0.0; n],
            iterations: 0,
            residual_history: Vec::new(),
            residual: 0.0,
        });
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = precond.solve(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut history = Vec::new();
    let mut best_resid = f64::INFINITY;

    for iter in 1..=max_iter {
        let ap = op.apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NoConvergence {
                iterations: iter,
                residual: norm2(&r) / bnorm,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rec_rel = norm2(&r) / bnorm;
        history.push(rec_rel);
        if rec_rel <= eps || iter % 10 == 0 {
            // True residual of the unpreconditioned system.
            let ax = op.apply(&x);
            let true_rel = {
                let mut s = 0.0;
                for i in 0..n {
                    let t = b[i] - ax[i];
                    s += t * t;
                }
                s.sqrt() / bnorm
            };
            best_resid = best_resid.min(true_rel);
            if true_rel <= eps {
                return Ok(PcgSolution {
                    x,
                    iterations: iter,
                    residual_history: history,
                    residual: true_rel,
                });
            }
        }
        z = precond.solve(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let ax = op.apply(&x);
    let mut s = 0.0;
    for i in 0..n {
        let t = b[i] - ax[i];
        s += t * t;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: best_resid.min(s.sqrt() / bnorm),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn seeded_unit_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nv = norm2(&v);
    for x in &mut v {
        *x /= nv;
    }
    v
}

/// Largest eigenvalue magnitude of a symmetric operator by power
/// iteration.
pub fn power_iteration(op: &dyn LinOp, tol: f64, max_iter: usize) -> f64 {
    let n = op.dim();
    let mut v = seeded_unit_vector(n, 0x5eed);
    let mut lambda = 0.0f64;
    for _ in 0..max_iter {
        let w = op.apply(&v);
        let nw = norm2(&w);
        if nw == 0.0 {
            return 0.0;
        }
        let next = dot(&v, &w);
        for i in 0..n {
            v[i] = w[i] / nw;
        }
        if (next - lambda).abs() <= tol * next.abs() {
            return next.abs();
        }
        lambda = next;
    }
    lambda.abs()
}

/// Ritz estimates of the extreme eigenvalues of a symmetric operator
/// from a fully reorthogonalized Lanczos recurrence.
pub fn lanczos_extremes(op: &dyn LinOp, steps: usize, seed: u64) -> (f64, f64) {
    let n = op.dim();
    let m = steps.min(n);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut v = seeded_unit_vector(n, seed);
    let mut beta = 0.0f64;
    let mut v_prev = vec![0.0; n];
    for _ in 0..m {
        let mut w = op.apply(&v);
        let alpha = dot(&w, &v);
        for i in 0..n {
            w[i] -= alpha * v[i] + beta * v_prev[i];
        }
        // Full reorthogonalization keeps the Ritz values clean at the
        // small step counts used here.
        for qk in &q {
            let c = dot(&w, qk);
            for i in 0..n {
                w[i] -= c * qk[i];
            }
        }
        q.push(v.clone());
        alphas.push(alpha);
        let nb = norm2(&w);
        if nb < 1e-14 {
            break;
        }
        betas.push(nb);
        v_prev = v;
        v = w.iter().map(|x| x / nb).collect();
        beta = nb;
    }
    let k = alphas.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = t.symmetric_eigenvalues();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &e in eig.iter() {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    (lo, hi)
}

#[derive(Debug, Clone)]
pub struct ExtremeSingularValues {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// True when sigma_min fell back to a Lanczos Ritz value because
    /// the factorization failed.
    pub approximate_min: bool,
}

/// Extreme singular values of a symmetric positive definite sparse
/// matrix: sigma_max by power iteration, sigma_min by inverse power
/// iteration through the sparse factor, with a Lanczos fallback.
pub fn extreme_singular_values(a: &SparseSym) -> ExtremeSingularValues {
    let sigma_max = power_iteration(a, 1e-8, 2000);
    match sparse_cholesky(a) {
        Ok(factor) => {
            let inv = InverseOp { factor: &factor, n: a.n };
            let inv_max = power_iteration(&inv, 1e-8, 2000);
            ExtremeSingularValues {
                sigma_min: 1.0 / inv_max,
                sigma_max,
                approximate_min: false,
            }
        }
        Err(_) => {
            let (lo, _) = lanczos_extremes(a, 100, 0x1a2b);
            ExtremeSingularValues {
                sigma_min: lo,
                sigma_max,
                approximate_min: true,
            }
        }
    }
}

struct InverseOp<'a> {
    factor: &'a CholFactor,
    n: usize,
}

impl LinOp for InverseOp<'_> {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.factor.solve(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_spd(n: usize, density: f64, seed: u64) -> SparseSym {
        use rand::Rng as _;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut trips: Vec<(u32, u32, f64)> = Vec::new();
        let mut row_sums = vec![0.0f64; n];
        for i in 0..n {
            for j in 0..i {
                if rng.gen::<f64>() < density {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    trips.push((i as u32, j as u32, v));
                    trips.push((j as u32, i as u32, v));
                    row_sums[i] += v.abs();
                    row_sums[j] += v.abs();
                }
            }
        }
        for i in 0..n {
            // Diagonal dominance makes it safely SPD.
            trips.push((i as u32, i as u32, row_sums[i] + 1.0));
        }
        SparseSym::from_triplets(n, &trips)
    }

    fn grid_laplacian(side: usize) -> SparseSym {
        let n = side * side;
        let idx = |i: usize, j: usize| (i * side + j) as u32;
        let mut trips = Vec::new();
        for i in 0..side {
            for j in 0..side {
                trips.push((idx(i, j), idx(i, j), 4.0));
                if i + 1 < side {
                    trips.push((idx(i, j), idx(i + 1, j), -1.0));
                    trips.push((idx(i + 1, j), idx(i, j), -1.0));
                }
                if j + 1 < side {
                    trips.push((idx(i, j), idx(i, j + 1), -1.0));
                    trips.push((idx(i, j + 1), idx(i, j), -1.0));
                }
            }
        }
        SparseSym::from_triplets(n, &trips)
    }

    #[test]
    fn identity_factor() {
        let a = SparseSym::identity(40);
        let f = sparse_cholesky(&a).unwrap();
        assert_eq!(f.log_det(), 0.0);
        let b: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let x = f.solve(&b);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn two_by_two_hand_factorization() {
        let a = SparseSym::from_triplets(
            2,
            &[(0, 0, 4.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 3.0)],
        );
        // Natural order so the hand result G = [[2,0],[1,sqrt(2)]]
        // applies.
        let plan = CholPlan::new(&a, Some(vec![0, 1]));
        let f = plan.factor(&a).unwrap();
        let g = f.g_diag();
        assert!((g[0] - 2.0).abs() < 1e-15);
        assert!((g[1] - 2f64.sqrt()).abs() < 1e-15);
        assert!((f.log_det() - 8f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn sparse_path_round_trip_residual() {
        // Forced through the sparse path (dimension above fallback).
        let n = 600;
        let a = random_spd(n, 0.02, 7);
        let f = sparse_cholesky(&a).unwrap();
        // Check A x = b solves rather than materializing G G^T.
        let b: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let x = f.solve(&b);
        let ax = a.matvec(&x);
        let num: f64 = ax
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|q| q * q).sum::<f64>().sqrt();
        assert!(num / den < 1e-12, "residual {}", num / den);
    }

    #[test]
    fn dense_and_sparse_paths_agree() {
        let n = 200;
        let a = random_spd(n, 0.05, 3);
        let dense = CholPlan::new(&a, None).factor(&a).unwrap();
        let sparse = CholPlan::with_symbolic(&a, fill_reducing_ordering(&a))
            .factor(&a)
            .unwrap();
        assert!((dense.log_det() - sparse.log_det()).abs() <= 1e-9 * dense.log_det().abs());
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let xd = dense.solve(&b);
        let xs = sparse.solve(&b);
        for (p, q) in xd.iter().zip(&xs) {
            assert!((p - q).abs() < 1e-9);
        }
        let qd = dense.quad_form(&b);
        let qs = sparse.quad_form(&b);
        assert!((qd - qs).abs() <= 1e-9 * qd.abs());
    }

    #[test]
    fn log_det_matches_dense_eigenvalues() {
        let n = 300;
        let a = random_spd(n, 0.05, 11);
        let f = sparse_cholesky(&a).unwrap();
        let eig = a.to_dense().symmetric_eigenvalues();
        let want: f64 = eig.iter().map(|x| x.ln()).sum();
        assert!(
            (f.log_det() - want).abs() <= 1e-8 * want.abs(),
            "{} vs {}",
            f.log_det(),
            want
        );
    }

    #[test]
    fn not_spd_reports_column() {
        let mut trips = vec![(0u32, 0u32, 1.0)];
        trips.push((1, 1, -2.0));
        trips.push((2, 2, 1.0));
        let a = SparseSym::from_triplets(3, &trips);
        match CholPlan::new(&a, Some(vec![0, 1, 2])).factor(&a) {
            Err(Error::NotPositiveDefinite { column, pivot }) => {
                assert_eq!(column, 1);
                assert!(pivot <= 0.0);
            }
            other => panic!("expected SPD failure, got {other:?}"),
        }
    }

    #[test]
    fn ordering_examples() {
        // Diagonal: any permutation, fill = n.
        let diag = SparseSym::identity(30);
        let perm = fill_reducing_ordering(&diag);
        assert_eq!(perm.len(), 30);
        assert_eq!(symbolic_fill(&diag, &perm), 30);

        // Tridiagonal: already minimal, fill unchanged by natural order.
        let mut trips = Vec::new();
        for i in 0..50u32 {
            trips.push((i, i, 2.0));
            if i + 1 < 50 {
                trips.push((i, i + 1, -1.0));
                trips.push((i + 1, i, -1.0));
            }
        }
        let tri = SparseSym::from_triplets(50, &trips);
        let natural: Vec<usize> = (0..50).collect();
        assert_eq!(symbolic_fill(&tri, &natural), 99);
        let amd = fill_reducing_ordering(&tri);
        assert!(symbolic_fill(&tri, &amd) <= 120, "near-minimal on a path");

        // 32x32 five-point Laplacian: must beat natural ordering.
        let grid = grid_laplacian(32);
        let natural: Vec<usize> = (0..grid.n).collect();
        let nat_fill = symbolic_fill(&grid, &natural);
        let amd = fill_reducing_ordering(&grid);
        let amd_fill = symbolic_fill(&grid, &amd);
        assert!(
            amd_fill < nat_fill,
            "amd fill {amd_fill} vs natural {nat_fill}"
        );
    }

    #[test]
    fn pcg_on_identity_converges_in_one_iteration() {
        let a = SparseSym::identity(25);
        let b: Vec<f64> = (0..25).map(|i| i as f64 - 7.0).collect();
        let sol = pcg_solve(&a, &IdentityPrecond, &b, 1e-10, 100).unwrap();
        assert_eq!(sol.iterations, 1);
        for (x, want) in sol.x.iter().zip(&b) {
            assert!((x - want).abs() < 1e-12);
        }
    }

    #[test]
    fn pcg_zero_rhs() {
        let a = SparseSym::identity(10);
        let sol = pcg_solve(&a, &IdentityPrecond, &vec![0.0; 10], 1e-8, 10).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.x.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pcg_matches_direct_solve() {
        let n = 150;
        let a = random_spd(n, 0.1, 21);
        let b: Vec<f64> = (0..n).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let sol = pcg_solve(&a, &IdentityPrecond, &b, 1e-10, 5000).unwrap();
        let f = sparse_cholesky(&a).unwrap();
        let x = f.solve(&b);
        let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff: f64 = sol
            .x
            .iter()
            .zip(&x)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        assert!(diff / nx < 1e-8);
    }

    #[test]
    fn pcg_max_iter_error_carries_history() {
        let n = 120;
        let a = random_spd(n, 0.08, 5);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        match pcg_solve(&a, &IdentityPrecond, &b, 1e-14, 2) {
            Err(Error::NoConvergence { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual.is_finite());
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn extreme_singular_values_diag() {
        let trips: Vec<(u32, u32, f64)> = (0..10).map(|i| (i, i, i as f64 + 1.0)).collect();
        let a = SparseSym::from_triplets(10, &trips);
        let ext = extreme_singular_values(&a);
        assert!(!ext.approximate_min);
        assert!((ext.sigma_max - 10.0).abs() < 1e-6);
        assert!((ext.sigma_min - 1.0).abs() < 1e-6);

        let id = SparseSym::identity(17);
        let ext = extreme_singular_values(&id);
        assert!((ext.sigma_max - 1.0).abs() < 1e-9);
        assert!((ext.sigma_min - 1.0).abs() < 1e-9);
    }

    #[test]
    fn extreme_singular_values_match_dense_eig() {
        let a = random_spd(200, 0.05, 31);
        let ext = extreme_singular_values(&a);
        let eig = a.to_dense().symmetric_eigenvalues();
        let max = eig.iter().cloned().fold(f64::MIN, f64::max);
        let min = eig.iter().cloned().fold(f64::MAX, f64::min);
        assert!((ext.sigma_max - max).abs() <= 1e-3 * max);
        assert!((ext.sigma_min - min).abs() <= 1e-3 * min.abs());
    }

    #[test]
    fn lanczos_brackets_spectrum() {
        let a = random_spd(150, 0.08, 41);
        let (lo, hi) = lanczos_extremes(&a, 100, 9);
        let eig = a.to_dense().symmetric_eigenvalues();
        let max = eig.iter().cloned().fold(f64::MIN, f64::max);
        let min = eig.iter().cloned().fold(f64::MAX, f64::min);
        assert!(lo >= min - 1e-8 && lo <= min + 0.05 * (max - min));
        assert!((hi - max).abs() <= 1e-6 * max);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn pcg_scaling_invariance(k in -3i32..6) {
            // Scaling the rhs by a power of two scales the iterates
            // exactly and leaves the iteration count unchanged.
            let n = 80;
            let a = random_spd(n, 0.1, 77);
            let b: Vec<f64> = (0..n).map(|i| ((i * 29) % 13) as f64 - 6.0).collect();
            let alpha = (2f64).powi(k);
            let scaled: Vec<f64> = b.iter().map(|x| x * alpha).collect();
            let s1 = pcg_solve(&a, &IdentityPrecond, &b, 1e-9, 4000).unwrap();
            let s2 = pcg_solve(&a, &IdentityPrecond, &scaled, 1e-9, 4000).unwrap();
            prop_assert_eq!(s1.iterations, s2.iterations);
            for (x1, x2) in s1.x.iter().zip(&s2.x) {
                prop_assert_eq!((x1 * alpha).to_bits(), x2.to_bits());
            }
        }
    }
}
