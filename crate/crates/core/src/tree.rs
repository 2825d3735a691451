//! Binary random-projection / kD partition tree over the observation
//! locations, and the radius-limited cell search that drives the
//! covariance sparsification.
//!
//! Splits sort the cell's slice of the index permutation by projection
//! value (stably, so ties keep their array order), put the first
//! ceil(s/2) entries left, and record the lower-median projection as
//! the threshold. Cells are numbered breadth-first, matching the level
//! sets used by the multi-level basis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::points::PointSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRule {
    Rp,
    Kd,
}

/// Direction a cell was split along: a fresh random unit vector for RP
/// trees, a coordinate axis for kD trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitVector {
    Unit(Vec<f64>),
    Axis(usize),
}

impl SplitVector {
    #[inline]
    pub fn project(&self, x: &[f64]) -> f64 {
        match self {
            SplitVector::Unit(v) => v.iter().zip(x).map(|(a, b)| a * b).sum(),
            SplitVector::Axis(k) => x[*k],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeNode {
    pub node_id: usize,
    pub depth: usize,
    /// Contiguous slice [start, end) of the permuted index array.
    pub range: (usize, usize),
    pub split: Option<SplitVector>,
    pub threshold: f64,
    pub children: Option<(usize, usize)>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    pub fn len(&self) -> usize {
        self.range.1 - self.range.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionTree {
    pub nodes: Vec<TreeNode>,
    /// Maximal depth t.
    pub t: usize,
    /// permutation[pos] = original observation index.
    pub permutation: Vec<usize>,
    /// Node ids at each depth 0..=t.
    pub levels: Vec<Vec<usize>>,
    pub rule: SplitRule,
    pub n0: usize,
    pub seed: u64,
}

/// Build the tree. Leaves hold fewer than `n0` points; internal splits
/// are balanced with |left| = ceil(s/2).
pub fn build_tree(points: &PointSet, n0: usize, rule: SplitRule, seed: u64) -> Result<PartitionTree> {
    if points.is_empty() {
        return Err(Error::InvalidParameter {
            name: "points",
            reason: "need at least one observation".into(),
        });
    }
    if n0 < 2 {
        return Err(Error::InvalidParameter {
            name: "n0",
            reason: "leaf capacity must be at least 2".into(),
        });
    }
    if let Some((a, b)) = points.find_duplicate() {
        return Err(Error::DuplicatePoints(a, b));
    }
    let n = points.len();
    let d = points.dim();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut permutation: Vec<usize> = (0..n).collect();
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut queue: VecDeque<(usize, usize, usize)> = VecDeque::new(); // (node slot, start, end)

    nodes.push(TreeNode {
        node_id: 0,
        depth: 0,
        range: (0, n),
        split: None,
        threshold: f64::NAN,
        children: None,
    });
    queue.push_back((0, 0, n));

    while let Some((slot, start, end)) = queue.pop_front() {
        let s = end - start;
        if s < n0 {
            continue;
        }
        let depth = nodes[slot].depth;
        let split = match rule {
            SplitRule::Rp => {
                let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in &mut v {
                    *x /= norm;
                }
                SplitVector::Unit(v)
            }
            SplitRule::Kd => SplitVector::Axis(depth % d),
        };
        let seg = &mut permutation[start..end];
        seg.sort_by(|&a, &b| {
            split
                .project(points.row(a))
                .partial_cmp(&split.project(points.row(b)))
                .unwrap()
        });
        let left_len = s.div_ceil(2);
        let threshold = split.project(points.row(permutation[start + left_len - 1]));

        let left_id = nodes.len();
        let right_id = left_id + 1;
        nodes.push(TreeNode {
            node_id: left_id,
            depth: depth + 1,
            range: (start, start + left_len),
            split: None,
            threshold: f64::NAN,
            children: None,
        });
        nodes.push(TreeNode {
            node_id: right_id,
            depth: depth + 1,
            range: (start + left_len, end),
            split: None,
            threshold: f64::NAN,
            children: None,
        });
        nodes[slot].split = Some(split);
        nodes[slot].threshold = threshold;
        nodes[slot].children = Some((left_id, right_id));
        queue.push_back((left_id, start, start + left_len));
        queue.push_back((right_id, start + left_len, end));
    }

    let t = nodes.iter().map(|n| n.depth).max().unwrap_or(0);
    let mut levels = vec![Vec::new(); t + 1];
    for node in &nodes {
        levels[node.depth].push(node.node_id);
    }
    Ok(PartitionTree {
        nodes,
        t,
        permutation,
        levels,
        rule,
        n0,
        seed,
    })
}

impl PartitionTree {
    /// Original observation indices inside a node's cell.
    pub fn cell_indices(&self, node_id: usize) -> &[usize] {
        let (a, b) = self.nodes[node_id].range;
        &self.permutation[a..b]
    }

    /// All node ids at `target_depth` reachable by the tau-ball descent:
    /// at an internal node, a subtree is skipped when every query point
    /// projects at least tau beyond the threshold on the other side.
    /// Leaves shallower than the target depth end the branch.
    ///
    /// A subtree skipped here holds only points whose projection gap to
    /// the query set exceeds tau, hence whose Euclidean distance does
    /// too, so no cell within distance tau is ever missed. A one-sided
    /// variant that prunes the right subtree only keeps every left-side
    /// cell reachable from anywhere and caps sparsification near fifty
    /// percent, hence the symmetric rule.
    pub fn search_cells(&self, k: &PointSet, target_depth: usize, tau: f64) -> Vec<usize> {
        assert!(!k.is_empty(), "query set must be non-empty");
        assert!(tau >= 0.0);
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if node.depth == target_depth {
                out.push(id);
                continue;
            }
            let Some((l, r)) = node.children else {
                continue;
            };
            let split = node.split.as_ref().expect("internal node has a split");
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for x in k.rows() {
                let p = split.project(x);
                lo = lo.min(p);
                hi = hi.max(p);
            }
            // Right subtree holds projections >= threshold.
            if !(hi + tau <= node.threshold) {
                stack.push(r);
            }
            // Left subtree holds projections <= threshold.
            if !(lo - tau > node.threshold) {
                stack.push(l);
            }
        }
        out.sort_unstable();
        out
    }

    /// Convenience wrapper: the query set is a cell of this tree.
    pub fn search_from_cell(&self, points: &PointSet, node_id: usize, target_depth: usize, tau: f64) -> Vec<usize> {
        let k = points.subset(self.cell_indices(node_id));
        self.search_cells(&k, target_depth, tau)
    }

    pub fn stats(&self) -> TreeStats {
        TreeStats {
            n: self.permutation.len(),
            t: self.t,
            rule: self.rule,
            n0: self.n0,
            seed: self.seed,
            cells_per_depth: self.levels.iter().map(|l| l.len()).collect(),
            leaf_sizes: self
                .nodes
                .iter()
                .filter(|n| n.is_leaf())
                .map(|n| n.len())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeStats {
    pub n: usize,
    pub t: usize,
    pub rule: SplitRule,
    pub n0: usize,
    pub seed: u64,
    pub cells_per_depth: Vec<usize>,
    pub leaf_sizes: Vec<usize>,
}
