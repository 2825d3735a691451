//! Multivariate polynomial index sets: tensor product, total degree,
//! Smolyak and hyperbolic cross, plus the extended variant obtained by
//! doubling each index.
//!
//! Enumeration is lazy with per-dimension pruning. All defining
//! predicates are coordinate-monotone, so a branch can be abandoned as
//! soon as the partial prefix violates the budget; the tensor-product
//! bounding box is never materialized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default guard on the number of generated indices.
pub const DEFAULT_CARDINALITY_CAP: usize = 100_000;

/// A single multi-index `p = [p_1, ..., p_d]` of monomial exponents.
pub type MultiIndex = Vec<u32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexSetKind {
    Tp,
    Td,
    Sm,
    Hc,
    ExtendedTd,
    ExtendedSm,
    ExtendedHc,
}

impl IndexSetKind {
    pub fn is_extended(self) -> bool {
        matches!(
            self,
            IndexSetKind::ExtendedTd | IndexSetKind::ExtendedSm | IndexSetKind::ExtendedHc
        )
    }

    fn base(self) -> IndexSetKind {
        match self {
            IndexSetKind::ExtendedTd => IndexSetKind::Td,
            IndexSetKind::ExtendedSm => IndexSetKind::Sm,
            IndexSetKind::ExtendedHc => IndexSetKind::Hc,
            k => k,
        }
    }

    fn extended(self) -> Option<IndexSetKind> {
        match self {
            IndexSetKind::Td => Some(IndexSetKind::ExtendedTd),
            IndexSetKind::Sm => Some(IndexSetKind::ExtendedSm),
            IndexSetKind::Hc => Some(IndexSetKind::ExtendedHc),
            _ => None,
        }
    }
}

/// An ordered, duplicate-free set of multi-indices for one `(kind, d, w)`.
///
/// The ordering is graded lexicographic (total degree first, ties by
/// descending exponent tuple) so design-matrix columns are reproducible
/// across runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    pub kind: IndexSetKind,
    pub d: usize,
    pub w: u32,
    pub indices: Vec<MultiIndex>,
}

impl MultiIndexSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Largest total degree present in the set.
    pub fn max_degree(&self) -> u32 {
        self.indices
            .iter()
            .map(|p| p.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }
}

/// Smolyak level function: f(0)=0, f(1)=1, f(p)=ceil(log2 p) for p >= 2.
pub fn smolyak_level(p: u32) -> u32 {
    match p {
        0 => 0,
        1 => 1,
        _ => 32 - (p - 1).leading_zeros(),
    }
}

/// Does `p` satisfy the defining predicate of `(kind, w)`?
pub fn satisfies(kind: IndexSetKind, w: u32, p: &[u32]) -> bool {
    match kind.base() {
        IndexSetKind::Tp => p.iter().all(|&pi| pi <= w),
        IndexSetKind::Td => p.iter().sum::<u32>() <= w,
        IndexSetKind::Sm => p.iter().map(|&pi| smolyak_level(pi)).sum::<u32>() <= w,
        IndexSetKind::Hc => {
            let mut prod: u64 = 1;
            for &pi in p {
                prod = prod.saturating_mul(pi as u64 + 1);
                if prod > w as u64 {
                    return false;
                }
            }
            true
        }
        _ => unreachable!(),
    }
}

fn grlex_cmp(a: &[u32], b: &[u32]) -> std::cmp::Ordering {
    let da: u32 = a.iter().sum();
    let db: u32 = b.iter().sum();
    // Ties resolved by descending exponent tuple, matching column
    // conventions like [(0,0),(1,0),(0,1),(2,0),...].
    da.cmp(&db).then_with(|| b.cmp(a))
}

fn sort_indices(indices: &mut [MultiIndex]) {
    indices.sort_by(|a, b| grlex_cmp(a, b));
}

/// Enumerate every multi-index of `(kind, d, w)` in the deterministic
/// graded-lex order, erroring out past `cap` generated indices.
pub fn build_index_set_capped(
    kind: IndexSetKind,
    d: usize,
    w: u32,
    cap: usize,
) -> Result<MultiIndexSet> {
    if d == 0 {
        return Err(Error::InvalidParameter {
            name: "d",
            reason: "dimension must be at least 1".into(),
        });
    }
    if kind.is_extended() {
        let base = build_index_set_capped(kind.base(), d, w, cap)?;
        return extend_index_set_capped(&base, cap);
    }
    let mut indices = Vec::new();
    let mut prefix = vec![0u32; d];
    enumerate(kind, w, d, 0, &mut prefix, &mut indices, cap)?;
    sort_indices(&mut indices);
    Ok(MultiIndexSet { kind, d, w, indices })
}

pub fn build_index_set(kind: IndexSetKind, d: usize, w: u32) -> Result<MultiIndexSet> {
    build_index_set_capped(kind, d, w, DEFAULT_CARDINALITY_CAP)
}

/// Recursive enumeration with per-dimension pruning. Each predicate is
/// non-decreasing in every coordinate, so once the prefix plus the next
/// candidate exponent exceeds the budget, the remaining exponent range
/// for that dimension can be skipped.
fn enumerate(
    kind: IndexSetKind,
    w: u32,
    d: usize,
    dim: usize,
    prefix: &mut Vec<u32>,
    out: &mut Vec<MultiIndex>,
    cap: usize,
) -> Result<()> {
    if dim == d {
        if out.len() >= cap {
            return Err(Error::CardinalityCap {
                cap,
                reached: out.len() + 1,
            });
        }
        out.push(prefix.clone());
        return Ok(());
    }
    let mut pi = 0u32;
    loop {
        prefix[dim] = pi;
        if !satisfies(kind, w, &prefix[..=dim]) {
            break;
        }
        enumerate(kind, w, d, dim + 1, prefix, out, cap)?;
        pi += 1;
    }
    prefix[dim] = 0;
    Ok(())
}

/// Union of `{p}` and `{2p}` over the base set, deduplicated, in the
/// same deterministic order.
pub fn extend_index_set(base: &MultiIndexSet) -> Result<MultiIndexSet> {
    extend_index_set_capped(base, DEFAULT_CARDINALITY_CAP)
}

pub fn extend_index_set_capped(base: &MultiIndexSet, cap: usize) -> Result<MultiIndexSet> {
    let kind = base.kind.extended().ok_or(Error::InvalidParameter {
        name: "kind",
        reason: format!("{:?} has no extended variant", base.kind),
    })?;
    let mut indices = base.indices.clone();
    for p in &base.indices {
        indices.push(p.iter().map(|&e| 2 * e).collect());
    }
    sort_indices(&mut indices);
    indices.dedup();
    if indices.len() > cap {
        return Err(Error::CardinalityCap {
            cap,
            reached: indices.len(),
        });
    }
    Ok(MultiIndexSet {
        kind,
        d: base.d,
        w: base.w,
        indices,
    })
}

/// Evaluate the monomial `prod_n x_n^{p_n}` with the convention 0^0 = 1.
pub fn eval_monomial(p: &[u32], x: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), x.len());
    let mut acc = 1.0;
    for (&e, &xi) in p.iter().zip(x) {
        if e > 0 {
            acc *= xi.powi(e as i32);
        }
    }
    acc
}

/// Number of Clenshaw-Curtis nodes at level `i >= 1`: m(1)=1, else 2^(i-1)+1.
pub fn cc_node_count(i: u32) -> usize {
    if i == 1 {
        1
    } else {
        (1usize << (i - 1)) + 1
    }
}

/// Nested Clenshaw-Curtis abscissas (extrema of Chebyshev polynomials)
/// at level `i >= 1`, ordered ascending in [-1, 1]. Symmetry is enforced
/// bit-exactly so that abscissas(i) is a subset of abscissas(i+1).
pub fn smolyak_abscissas(i: u32) -> Vec<f64> {
    assert!(i >= 1, "abscissa level starts at 1");
    let m = cc_node_count(i);
    if m == 1 {
        return vec![0.0];
    }
    let n = m - 1;
    (0..m)
        .map(|j| {
            if 2 * j == n {
                0.0
            } else if 2 * j < n {
                -(std::f64::consts::PI * j as f64 / n as f64).cos()
            } else {
                (std::f64::consts::PI * (n - j) as f64 / n as f64).cos()
            }
        })
        .collect()
}

/// Bounds on the number of collocation knots of the level-w sparse grid:
/// `d(2^w - 1) <= eta <= (2ed)^w min{w+1, 2ed}`.
pub fn collocation_count_bounds(d: usize, w: u32) -> (f64, f64) {
    let d = d as f64;
    let two_e_d = 2.0 * std::f64::consts::E * d;
    let lower = d * ((2f64).powi(w as i32) - 1.0);
    let upper = two_e_d.powi(w as i32) * (w as f64 + 1.0).min(two_e_d);
    (lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn card(kind: IndexSetKind, d: usize, w: u32) -> usize {
        build_index_set(kind, d, w).unwrap().len()
    }

    fn binomial(n: u64, k: u64) -> u64 {
        let k = k.min(n - k);
        let mut acc = 1u64;
        for i in 0..k {
            acc = acc * (n - i) / (i + 1);
        }
        acc
    }

    #[test]
    fn reported_cardinalities() {
        assert_eq!(card(IndexSetKind::Td, 3, 7), 120);
        assert_eq!(card(IndexSetKind::Td, 3, 4), 35);
        assert_eq!(card(IndexSetKind::Hc, 50, 4), 1376);
        assert_eq!(card(IndexSetKind::Hc, 50, 5), 1426);
    }

    #[test]
    fn w_zero_is_constant_only() {
        for kind in [
            IndexSetKind::Tp,
            IndexSetKind::Td,
            IndexSetKind::Sm,
            IndexSetKind::Hc,
        ] {
            let s = build_index_set(kind, 4, 0).unwrap();
            // HC at w=0 is empty under prod(p_i+1) <= 0; the other kinds
            // keep the constant. The all-zero index needs prod = 1 <= w,
            // so HC demands w >= 1 for a nonempty set.
            if kind == IndexSetKind::Hc {
                assert!(s.is_empty());
                let s1 = build_index_set(kind, 4, 1).unwrap();
                assert_eq!(s1.indices, vec![vec![0, 0, 0, 0]]);
            } else {
                assert_eq!(s.indices, vec![vec![0, 0, 0, 0]]);
            }
        }
    }

    #[test]
    fn td_cardinality_is_binomial() {
        for d in 1..=10usize {
            for w in 0..=8u32 {
                assert_eq!(
                    card(IndexSetKind::Td, d, w) as u64,
                    binomial(d as u64 + w as u64, w as u64),
                    "d={d} w={w}"
                );
            }
        }
    }

    #[test]
    fn brute_force_agreement_small() {
        // Every member satisfies the predicate, every non-member of the
        // TP bounding box violates it.
        for kind in [IndexSetKind::Td, IndexSetKind::Sm, IndexSetKind::Hc] {
            for d in 1..=4usize {
                for w in 0..=6u32 {
                    let set = build_index_set(kind, d, w).unwrap();
                    let mut brute = Vec::new();
                    // Largest feasible single coordinate: 2^w for SM
                    // (f(2^w) = w), w elsewhere; +1 margin of violators.
                    let bound = match kind {
                        IndexSetKind::Sm => (1u32 << w) + 1,
                        _ => w + 1,
                    };
                    let mut p = vec![0u32; d];
                    loop {
                        if satisfies(kind, w, &p) {
                            brute.push(p.clone());
                        }
                        let mut k = 0;
                        loop {
                            if k == d {
                                break;
                            }
                            p[k] += 1;
                            if p[k] > bound {
                                p[k] = 0;
                                k += 1;
                            } else {
                                break;
                            }
                        }
                        if k == d {
                            break;
                        }
                    }
                    sort_indices(&mut brute);
                    assert_eq!(set.indices, brute, "{kind:?} d={d} w={w}");
                }
            }
        }
    }

    #[test]
    fn nested_in_w() {
        for kind in [IndexSetKind::Td, IndexSetKind::Sm, IndexSetKind::Hc] {
            for w in 1..=6u32 {
                let small = build_index_set(kind, 3, w - 1).unwrap();
                let big = build_index_set(kind, 3, w).unwrap();
                for p in &small.indices {
                    assert!(big.indices.contains(p));
                }
            }
        }
    }

    #[test]
    fn sm_hc_grow_slower_than_td_at_matched_degree() {
        // TD(w) is a subset of SM(w), so the comparison that makes the
        // curse-of-dimensionality point is at equal resolved degree:
        // SM at level w covers single-coordinate degree 2^w and HC
        // degree w-1, so compare against TD at those degrees.
        for d in 5..=8usize {
            for w in 3..=4u32 {
                let sm = card(IndexSetKind::Sm, d, w);
                let td_matched =
                    build_index_set_capped(IndexSetKind::Td, d, 1 << w, 100_000_000)
                        .unwrap()
                        .len();
                assert!(sm < td_matched, "SM d={d} w={w}: {sm} vs {td_matched}");
                let hc = card(IndexSetKind::Hc, d, w);
                let td_hc = card(IndexSetKind::Td, d, w - 1);
                assert!(hc < td_hc, "HC d={d} w={w}: {hc} vs {td_hc}");
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let err = build_index_set_capped(IndexSetKind::Td, 8, 8, 100).unwrap_err();
        assert!(matches!(err, Error::CardinalityCap { cap: 100, .. }));
    }

    #[test]
    fn extend_examples() {
        let zero = MultiIndexSet {
            kind: IndexSetKind::Sm,
            d: 2,
            w: 0,
            indices: vec![vec![0, 0]],
        };
        assert_eq!(extend_index_set(&zero).unwrap().indices, vec![vec![0, 0]]);

        let base = build_index_set(IndexSetKind::Td, 2, 1).unwrap();
        assert_eq!(base.indices, vec![vec![0, 0], vec![1, 0], vec![0, 1]]);
        let ext = extend_index_set(&base).unwrap();
        assert_eq!(
            ext.indices,
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![0, 2]]
        );
    }

    #[test]
    fn monomial_values() {
        assert_eq!(eval_monomial(&[0, 0, 0], &[3.0, -1.0, 9.0]), 1.0);
        assert_eq!(eval_monomial(&[2, 1], &[3.0, -2.0]), -18.0);
        assert_eq!(eval_monomial(&[1, 0, 3], &[0.5, 7.0, 2.0]), 4.0);
        // 0^0 = 1
        assert_eq!(eval_monomial(&[0], &[0.0]), 1.0);
    }

    #[test]
    fn abscissa_levels() {
        assert_eq!(smolyak_abscissas(1), vec![0.0]);
        let l2 = smolyak_abscissas(2);
        assert_eq!(l2, vec![-1.0, 0.0, 1.0]);
        let l3 = smolyak_abscissas(3);
        assert_eq!(l3.len(), 5);
        let s = (2f64).sqrt() / 2.0;
        for (got, want) in l3.iter().zip([-1.0, -s, 0.0, s, 1.0]) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn abscissas_are_nested_bit_exactly() {
        for i in 1..=6u32 {
            let a = smolyak_abscissas(i);
            let b = smolyak_abscissas(i + 1);
            for x in &a {
                assert!(
                    b.iter().any(|y| y.to_bits() == x.to_bits()),
                    "level {i} node {x} missing at level {}",
                    i + 1
                );
            }
        }
    }

    #[test]
    fn collocation_bound_values() {
        assert_eq!(collocation_count_bounds(1, 0), (0.0, 1.0));
        let (lo, _) = collocation_count_bounds(3, 2);
        assert_eq!(lo, 9.0);
        for d in 1..=60 {
            for w in 0..=10 {
                let (lo, hi) = collocation_count_bounds(d, w);
                assert!(lo <= hi, "d={d} w={w}");
            }
        }
    }

    proptest! {
        #[test]
        fn members_satisfy_predicate(d in 1usize..5, w in 0u32..7, kind_ix in 0usize..3) {
            let kind = [IndexSetKind::Td, IndexSetKind::Sm, IndexSetKind::Hc][kind_ix];
            let set = build_index_set(kind, d, w).unwrap();
            for p in &set.indices {
                prop_assert!(satisfies(kind, w, p));
            }
            let mut dedup = set.indices.clone();
            dedup.dedup();
            prop_assert_eq!(dedup.len(), set.indices.len());
        }

        #[test]
        fn extension_at_most_doubles(d in 1usize..4, w in 0u32..5) {
            let base = build_index_set(IndexSetKind::Sm, d, w).unwrap();
            let ext = extend_index_set(&base).unwrap();
            prop_assert!(ext.len() <= 2 * base.len());
            prop_assert!(ext.len() >= base.len());
        }
    }
}
