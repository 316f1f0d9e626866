//! Linear forest of quadtrees/octrees with uniform-grid leaf patches.
//!
//! Leaves are stored as one flat list sorted by (tree id, key order); rank
//! ownership is described by partition markers, so any operation that only
//! routes data (the partition search in particular) never has to look at
//! leaf contents.

use crate::error::{Error, Result};
use crate::morton::{max_level, MortonKey};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One tree of the forest with its affine map to physical space.
///
/// The reference cube [0,1)^dim maps to the physical box
/// `[origin, origin + extent)` by scale and shift only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tree {
    pub tree_id: usize,
    /// Physical origin in km; unused axes zero.
    pub origin: [f64; 3],
    /// Physical extent in km; components strictly positive, unused axes one.
    pub extent: [f64; 3],
}

impl Tree {
    pub fn new(tree_id: usize, dim: usize, origin: &[f64], extent: &[f64]) -> Result<Self> {
        let mut o = [0.0; 3];
        let mut e = [1.0; 3];
        for i in 0..dim {
            if extent[i] <= 0.0 {
                return Err(Error::Config {
                    field: format!("tree[{tree_id}].extent[{i}]"),
                    message: "must be strictly positive".into(),
                });
            }
            o[i] = origin[i];
            e[i] = extent[i];
        }
        Ok(Tree {
            tree_id,
            origin: o,
            extent: e,
        })
    }
}

/// One forest leaf: a uniform grid of cells with named scalar fields.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Patch {
    pub tree_id: usize,
    pub key: MortonKey,
    /// Cells per axis; unused axes one.
    pub cells: [usize; 3],
    /// Field name -> row-major (x fastest) cell-center values.
    pub fields: BTreeMap<String, Vec<f64>>,
}

impl Patch {
    pub fn cell_count(&self) -> usize {
        self.cells[0] * self.cells[1] * self.cells[2]
    }

    pub fn field(&self, name: &str) -> Result<&[f64]> {
        self.fields
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingField(name.to_string()))
    }

    /// All field arrays must match the cell count.
    pub fn check_fields(&self) -> Result<()> {
        let n = self.cell_count();
        for (name, values) in &self.fields {
            if values.len() != n {
                return Err(Error::Config {
                    field: format!("patch field '{name}'"),
                    message: format!("length {} != cell count {n}", values.len()),
                });
            }
        }
        Ok(())
    }
}

/// Position of a leaf in the global space-filling-curve order: tree id first,
/// then the Morton code of the key's first descendant at the maximum level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct GlobalPos {
    pub tree: usize,
    pub code: u64,
}

/// Per-rank ownership boundaries: `bounds[r]` is the global position of the
/// first leaf owned by rank r, `bounds[rank_count]` is a terminal sentinel
/// past every tree. Rank r owns positions in `[bounds[r], bounds[r+1])`.
#[derive(Clone, Debug)]
pub struct PartitionMarkers {
    pub dim: usize,
    pub bounds: Vec<GlobalPos>,
}

impl PartitionMarkers {
    pub fn rank_count(&self) -> usize {
        self.bounds.len() - 1
    }
}

/// Report of one refinement pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RefineReport {
    pub flagged: usize,
    pub refined: usize,
    /// Flags ignored because the leaf already sits at the maximum level.
    pub skipped_at_max_level: usize,
}

/// A complete linear forest with a simulated-rank partition.
#[derive(Clone, Debug)]
pub struct Forest {
    pub dim: usize,
    pub trees: Vec<Tree>,
    /// Sorted ascending by (tree_id, key order).
    pub leaves: Vec<Patch>,
    pub rank_count: usize,
    /// Leaf-index boundaries per rank, length rank_count + 1.
    marker_idx: Vec<usize>,
}

impl Forest {
    /// Uniformly refined forest: every tree carries 2^(dim*level) leaves with
    /// `cells` cells per axis and empty field maps. Ranks get contiguous,
    /// maximally even leaf ranges.
    pub fn build_uniform(
        dim: usize,
        trees: Vec<Tree>,
        level: u8,
        cells: &[usize],
        rank_count: usize,
    ) -> Result<Forest> {
        if level > max_level(dim) {
            return Err(Error::InvalidKey(format!(
                "level {level} exceeds maximum {}",
                max_level(dim)
            )));
        }
        if rank_count == 0 {
            return Err(Error::Config {
                field: "rank_count".into(),
                message: "must be at least 1".into(),
            });
        }
        let mut c = [1usize; 3];
        for i in 0..dim {
            if cells[i] == 0 {
                return Err(Error::Config {
                    field: format!("cells[{i}]"),
                    message: "must be at least 1".into(),
                });
            }
            c[i] = cells[i];
        }
        let per_axis = 1u64 << level;
        let mut leaves = Vec::new();
        for tree in &trees {
            let mut keys = Vec::with_capacity((per_axis as usize).pow(dim as u32));
            let mut coords = [0u32; 3];
            // Enumerate all level-`level` keys, then sort into curve order.
            loop {
                keys.push(MortonKey::encode(dim, level, &coords[..dim])?);
                let mut axis = 0;
                loop {
                    coords[axis] += 1;
                    if u64::from(coords[axis]) < per_axis {
                        break;
                    }
                    coords[axis] = 0;
                    axis += 1;
                    if axis == dim {
                        break;
                    }
                }
                if axis == dim {
                    break;
                }
            }
            keys.sort_by(|a, b| a.compare(b, dim));
            for key in keys {
                leaves.push(Patch {
                    tree_id: tree.tree_id,
                    key,
                    cells: c,
                    fields: BTreeMap::new(),
                });
            }
        }
        let marker_idx = even_markers(leaves.len(), rank_count)?;
        Ok(Forest {
            dim,
            trees,
            leaves,
            rank_count,
            marker_idx,
        })
    }

    /// Reassemble a forest from its parts, checking all invariants.
    pub fn from_parts(
        dim: usize,
        trees: Vec<Tree>,
        leaves: Vec<Patch>,
        rank_count: usize,
        marker_idx: Vec<usize>,
    ) -> Result<Forest> {
        let forest = Forest {
            dim,
            trees,
            leaves,
            rank_count,
            marker_idx,
        };
        forest.check_invariants()?;
        Ok(forest)
    }

    /// Leaf-index boundaries per rank, length rank_count + 1.
    pub fn marker_indices(&self) -> &[usize] {
        &self.marker_idx
    }

    /// Leaf-index range owned by `rank`.
    pub fn rank_range(&self, rank: usize) -> std::ops::Range<usize> {
        self.marker_idx[rank]..self.marker_idx[rank + 1]
    }

    pub fn local_leaves(&self, rank: usize) -> &[Patch] {
        &self.leaves[self.rank_range(rank)]
    }

    /// Rank owning global leaf index `idx`.
    pub fn owner_of_leaf(&self, idx: usize) -> usize {
        debug_assert!(idx < self.leaves.len());
        self.marker_idx.partition_point(|&m| m <= idx) - 1
    }

    pub fn global_pos(&self, leaf: &Patch) -> GlobalPos {
        GlobalPos {
            tree: leaf.tree_id,
            code: leaf.key.code(self.dim),
        }
    }

    /// Ownership markers in global curve coordinates; a pure function of the
    /// partition, independent of leaf payloads.
    pub fn markers(&self) -> PartitionMarkers {
        let sentinel = GlobalPos {
            tree: self.trees.len(),
            code: 0,
        };
        let bounds = self
            .marker_idx
            .iter()
            .map(|&i| {
                if i < self.leaves.len() {
                    self.global_pos(&self.leaves[i])
                } else {
                    sentinel
                }
            })
            .collect();
        PartitionMarkers {
            dim: self.dim,
            bounds,
        }
    }

    /// Replace every flagged leaf by its 2^dim children. Child fields are
    /// produced by `init(tree, parent, child_key)`; flags on maximum-level
    /// leaves are counted and ignored. Markers are reset to the even count
    /// partition.
    pub fn refine<P, F>(&self, predicate: P, init: F) -> (Forest, RefineReport)
    where
        P: Fn(&Patch) -> bool,
        F: Fn(&Tree, &Patch, &MortonKey) -> BTreeMap<String, Vec<f64>>,
    {
        let lmax = max_level(self.dim);
        let mut report = RefineReport::default();
        let mut leaves = Vec::with_capacity(self.leaves.len());
        for leaf in &self.leaves {
            if predicate(leaf) {
                report.flagged += 1;
                if leaf.key.level() >= lmax {
                    report.skipped_at_max_level += 1;
                    leaves.push(leaf.clone());
                    continue;
                }
                report.refined += 1;
                let tree = &self.trees[leaf.tree_id];
                for child in leaf.key.children(self.dim).expect("level checked") {
                    leaves.push(Patch {
                        tree_id: leaf.tree_id,
                        key: child,
                        cells: leaf.cells,
                        fields: init(tree, leaf, &child),
                    });
                }
            } else {
                leaves.push(leaf.clone());
            }
        }
        let marker_idx = even_markers(leaves.len(), self.rank_count)
            .unwrap_or_else(|_| vec![0; self.rank_count + 1]);
        (
            Forest {
                dim: self.dim,
                trees: self.trees.clone(),
                leaves,
                rank_count: self.rank_count,
                marker_idx,
            },
            report,
        )
    }

    /// Move partition markers so per-rank weight sums approach the ideal.
    ///
    /// Greedy prefix rule: the marker of rank r is the first position whose
    /// weight prefix sum reaches `r * total / rank_count`. The resulting
    /// per-rank sums differ from the ideal by at most the maximum single
    /// weight. All-zero weights fall back to the even count partition.
    pub fn partition_weighted<W>(&self, weight: W) -> Result<Forest>
    where
        W: Fn(&Patch) -> f64,
    {
        let n = self.leaves.len();
        let r = self.rank_count;
        let weights: Vec<f64> = self.leaves.iter().map(&weight).collect();
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Config {
                field: "weight".into(),
                message: format!("weights must be finite and non-negative, got {w}"),
            });
        }
        let total: f64 = weights.iter().sum();
        let marker_idx = if total == 0.0 {
            even_markers(n, r)?
        } else {
            let mut idx = Vec::with_capacity(r + 1);
            idx.push(0usize);
            let mut prefix = 0.0;
            let mut m = 0usize;
            for rank in 1..r {
                let threshold = rank as f64 * total / r as f64;
                while m < n && prefix < threshold {
                    prefix += weights[m];
                    m += 1;
                }
                idx.push(m);
            }
            idx.push(n);
            idx
        };
        let mut forest = self.clone();
        forest.marker_idx = marker_idx;
        Ok(forest)
    }

    /// Sum of leaf-box measures per tree; 1 for a complete forest.
    pub fn tree_measures(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.trees.len()];
        for leaf in &self.leaves {
            sums[leaf.tree_id] += leaf.key.to_box(self.dim).measure(self.dim);
        }
        sums
    }

    /// Leaf list is sorted, complete per tree, and markers are consistent.
    pub fn check_invariants(&self) -> Result<()> {
        for pair in self.leaves.windows(2) {
            let a = self.global_pos(&pair[0]);
            let b = self.global_pos(&pair[1]);
            if a >= b {
                return Err(Error::InvalidKey(format!(
                    "leaf order violated at {a:?} >= {b:?}"
                )));
            }
        }
        for (tree_idx, sum) in self.tree_measures().iter().enumerate() {
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidKey(format!(
                    "tree {tree_idx} incomplete: leaf measure sum {sum}"
                )));
            }
        }
        if self.marker_idx.len() != self.rank_count + 1
            || self.marker_idx[0] != 0
            || *self.marker_idx.last().unwrap() != self.leaves.len()
            || self.marker_idx.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::InvalidKey("partition markers inconsistent".into()));
        }
        for leaf in &self.leaves {
            leaf.check_fields()?;
        }
        Ok(())
    }
}

/// Maximally even contiguous split of `n` leaves into `ranks` ranges;
/// boundary of rank r at `ceil(r * n / ranks)` so it agrees with the weighted
/// greedy prefix rule under uniform weights.
pub fn even_markers(n: usize, ranks: usize) -> Result<Vec<usize>> {
    if ranks > n {
        return Err(Error::MoreRanksThanLeaves { ranks, leaves: n });
    }
    Ok((0..=ranks).map(|r| (r * n).div_ceil(ranks)).collect())
}
