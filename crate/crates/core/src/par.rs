//! Thin indirection over rayon so the crate builds with or without the
//! `parallel` feature. Reductions stay sequential over the collected
//! results, which keeps outputs independent of the worker count.

#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Sequential reference version, kept callable in every build so benches
/// can compare the two paths directly.
pub fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn for_each_indexed_chunk<U, F>(out: &mut [U], chunk: usize, f: F)
where
    U: Send,
    F: Fn(usize, &mut [U]) + Sync + Send,
{
    use rayon::prelude::*;
    if out.is_empty() || chunk == 0 {
        return;
    }
    out.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(c, slab)| f(c * chunk, slab));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_indexed_chunk<U, F>(out: &mut [U], chunk: usize, f: F)
where
    F: Fn(usize, &mut [U]),
{
    if out.is_empty() || chunk == 0 {
        return;
    }
    for (c, slab) in out.chunks_mut(chunk).enumerate() {
        f(c * chunk, slab);
    }
}
