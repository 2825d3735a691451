//! Binary containers for the basis and the sparse multi-level
//! covariance, plus a MatrixMarket text export. All numbers are
//! little-endian; round trips are bit-exact.

use std::io::{Read, Write};

use crate::basis::{BasisRow, MultiLevelBasis};
use crate::cov::BlockSparseMatrix;
use crate::error::{Error, Result};
use crate::sparse::SparseSym;

const BASIS_MAGIC: &[u8; 4] = b"MLBZ";
const MATRIX_MAGIC: &[u8; 4] = b"MLCW";
const VERSION: u32 = 1;

fn w64(out: &mut impl Write, v: u64) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn wi32(out: &mut impl Write, v: i32) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn wf64(out: &mut impl Write, v: f64) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn r64(inp: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    inp.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn ri32(inp: &mut impl Read) -> Result<i32> {
    let mut b = [0u8; 4];
    inp.read_exact(&mut b)?;
    Ok(i32::from_le_bytes(b))
}

fn rf64(inp: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    inp.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn write_row(out: &mut impl Write, row: &BasisRow) -> Result<()> {
    wi32(out, row.level)?;
    w64(out, row.cell as u64)?;
    w64(out, row.start as u64)?;
    w64(out, row.values.len() as u64)?;
    for &v in &row.values {
        wf64(out, v)?;
    }
    Ok(())
}

fn read_row(inp: &mut impl Read) -> Result<BasisRow> {
    let level = ri32(inp)?;
    let cell = r64(inp)? as u32;
    let start = r64(inp)? as usize;
    let len = r64(inp)? as usize;
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        values.push(rf64(inp)?);
    }
    Ok(BasisRow {
        level,
        cell,
        start,
        values,
    })
}

pub fn save_basis(basis: &MultiLevelBasis, mut out: impl Write) -> Result<()> {
    out.write_all(BASIS_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    w64(&mut out, basis.n as u64)?;
    w64(&mut out, basis.p as u64)?;
    w64(&mut out, basis.trend_rank_deficiency as u64)?;
    w64(&mut out, basis.p_tilde as u64)?;
    w64(&mut out, basis.t as u64)?;
    w64(&mut out, basis.level_ranges.len() as u64)?;
    for &(q, a, b) in &basis.level_ranges {
        wi32(&mut out, q)?;
        w64(&mut out, a as u64)?;
        w64(&mut out, b as u64)?;
    }
    w64(&mut out, basis.w_rows.len() as u64)?;
    for row in &basis.w_rows {
        write_row(&mut out, row)?;
    }
    w64(&mut out, basis.l_rows.len() as u64)?;
    for row in &basis.l_rows {
        write_row(&mut out, row)?;
    }
    w64(&mut out, basis.permutation.len() as u64)?;
    for &p in &basis.permutation {
        w64(&mut out, p as u64)?;
    }
    Ok(())
}

pub fn load_basis(mut inp: impl Read) -> Result<MultiLevelBasis> {
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic)?;
    if &magic != BASIS_MAGIC {
        return Err(Error::Corrupt("bad basis magic".into()));
    }
    let mut ver = [0u8; 4];
    inp.read_exact(&mut ver)?;
    if u32::from_le_bytes(ver) != VERSION {
        return Err(Error::Corrupt("unsupported basis version".into()));
    }
    let n = r64(&mut inp)? as usize;
    let p = r64(&mut inp)? as usize;
    let trend_rank_deficiency = r64(&mut inp)? as usize;
    let p_tilde = r64(&mut inp)? as usize;
    let t = r64(&mut inp)? as usize;
    let n_levels = r64(&mut inp)? as usize;
    let mut level_ranges = Vec::with_capacity(n_levels);
    for _ in 0..n_levels {
        let q = ri32(&mut inp)?;
        let a = r64(&mut inp)? as usize;
        let b = r64(&mut inp)? as usize;
        level_ranges.push((q, a, b));
    }
    let nw = r64(&mut inp)? as usize;
    let mut w_rows = Vec::with_capacity(nw);
    for _ in 0..nw {
        w_rows.push(read_row(&mut inp)?);
    }
    let nl = r64(&mut inp)? as usize;
    let mut l_rows = Vec::with_capacity(nl);
    for _ in 0..nl {
        l_rows.push(read_row(&mut inp)?);
    }
    let np = r64(&mut inp)? as usize;
    if np != n {
        return Err(Error::Corrupt("permutation length mismatch".into()));
    }
    let mut permutation = Vec::with_capacity(np);
    for _ in 0..np {
        permutation.push(r64(&mut inp)? as usize);
    }
    Ok(MultiLevelBasis {
        n,
        p,
        trend_rank_deficiency,
        p_tilde,
        t,
        w_rows,
        level_ranges,
        l_rows,
        permutation,
    })
}

pub fn save_matrix(m: &BlockSparseMatrix, mut out: impl Write) -> Result<()> {
    out.write_all(MATRIX_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    w64(&mut out, m.t as u64)?;
    wi32(&mut out, m.min_level)?;
    w64(&mut out, m.dim as u64)?;
    w64(&mut out, m.level_ranges.len() as u64)?;
    for &(q, a, b) in &m.level_ranges {
        wi32(&mut out, q)?;
        w64(&mut out, a as u64)?;
        w64(&mut out, b as u64)?;
    }
    // COO triplets per level-pair block, upper blocks only; the mirror
    // is implied by symmetry.
    let levels: Vec<i32> = m.level_ranges.iter().map(|&(q, _, _)| q).collect();
    let mut blocks: Vec<(i32, i32, Vec<(u32, u32, f64)>)> = Vec::new();
    for (ai, &li) in levels.iter().enumerate() {
        for &lj in levels.iter().skip(ai) {
            let mut trips = m.block_triplets(li, lj);
            if li == lj {
                // Same-level blocks carry both triangles; keep one,
                // the load mirrors it back.
                trips.retain(|&(r, c, _)| r >= c);
            }
            if !trips.is_empty() {
                blocks.push((li, lj, trips));
            }
        }
    }
    w64(&mut out, blocks.len() as u64)?;
    for (li, lj, trips) in blocks {
        wi32(&mut out, li)?;
        wi32(&mut out, lj)?;
        w64(&mut out, trips.len() as u64)?;
        for (r, c, v) in trips {
            w64(&mut out, r as u64)?;
            w64(&mut out, c as u64)?;
            wf64(&mut out, v)?;
        }
    }
    Ok(())
}

pub fn load_matrix(mut inp: impl Read) -> Result<BlockSparseMatrix> {
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::Corrupt("bad matrix magic".into()));
    }
    let mut ver = [0u8; 4];
    inp.read_exact(&mut ver)?;
    if u32::from_le_bytes(ver) != VERSION {
        return Err(Error::Corrupt("unsupported matrix version".into()));
    }
    let t = r64(&mut inp)? as usize;
    let min_level = ri32(&mut inp)?;
    let dim = r64(&mut inp)? as usize;
    let n_levels = r64(&mut inp)? as usize;
    let mut level_ranges = Vec::with_capacity(n_levels);
    for _ in 0..n_levels {
        let q = ri32(&mut inp)?;
        let a = r64(&mut inp)? as usize;
        let b = r64(&mut inp)? as usize;
        level_ranges.push((q, a, b));
    }
    let row_of = |level: i32, local: usize| -> u32 {
        let (_, a, _) = level_ranges.iter().find(|&&(q, _, _)| q == level).unwrap();
        (a + local) as u32
    };
    let n_blocks = r64(&mut inp)? as usize;
    let mut trips: Vec<(u32, u32, f64)> = Vec::new();
    for _ in 0..n_blocks {
        let li = ri32(&mut inp)?;
        let lj = ri32(&mut inp)?;
        let nt = r64(&mut inp)? as usize;
        for _ in 0..nt {
            let r = r64(&mut inp)? as usize;
            let c = r64(&mut inp)? as usize;
            let v = rf64(&mut inp)?;
            let gr = row_of(li, r);
            let gc = row_of(lj, c);
            trips.push((gr, gc, v));
            if gr != gc {
                trips.push((gc, gr, v));
            }
        }
    }
    Ok(BlockSparseMatrix {
        t,
        min_level,
        dim,
        level_ranges,
        mat: SparseSym::from_triplets(dim, &trips),
    })
}

/// MatrixMarket coordinate text (symmetric, lower triangle).
pub fn to_matrix_market(m: &BlockSparseMatrix) -> String {
    let s = &m.mat;
    let mut lines = Vec::new();
    for j in 0..s.n {
        for p in s.col_ptr[j]..s.col_ptr[j + 1] {
            let i = s.row_idx[p] as usize;
            if i >= j {
                lines.push(format!("{} {} {}", i + 1, j + 1, s.vals[p]));
            }
        }
    }
    let mut out = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
    out.push_str(&format!("{} {} {}\n", s.n, s.n, lines.len()));
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    out
}
