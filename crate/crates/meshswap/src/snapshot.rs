//! JSON snapshots of a forest's structure: trees, leaves and partition
//! markers. Field data is intentionally excluded; snapshots describe mesh
//! shape for the verify subcommand and golden tests.

use crate::error::{Error, Result};
use crate::forest::{Forest, Patch, Tree};
use crate::morton::MortonKey;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSnapshot {
    pub tree_id: usize,
    pub origin: Vec<f64>,
    pub extent: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeafSnapshot {
    pub tree_id: usize,
    pub level: u8,
    pub coords: Vec<u32>,
    pub cells: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestSnapshot {
    pub dimension: usize,
    pub rank_count: usize,
    pub trees: Vec<TreeSnapshot>,
    pub leaves: Vec<LeafSnapshot>,
    /// Leaf-index ownership boundaries, length rank_count + 1.
    pub markers: Vec<usize>,
}

impl ForestSnapshot {
    pub fn from_forest(forest: &Forest) -> ForestSnapshot {
        let dim = forest.dim;
        ForestSnapshot {
            dimension: dim,
            rank_count: forest.rank_count,
            trees: forest
                .trees
                .iter()
                .map(|t| TreeSnapshot {
                    tree_id: t.tree_id,
                    origin: t.origin[..dim].to_vec(),
                    extent: t.extent[..dim].to_vec(),
                })
                .collect(),
            leaves: forest
                .leaves
                .iter()
                .map(|l| LeafSnapshot {
                    tree_id: l.tree_id,
                    level: l.key.level(),
                    coords: l.key.coords()[..dim].to_vec(),
                    cells: l.cells[..dim].to_vec(),
                })
                .collect(),
            markers: forest.marker_indices().to_vec(),
        }
    }

    /// Rebuild a structural forest (empty field maps) and re-check every
    /// forest invariant. Untrusted input ends up here, so everything is
    /// validated.
    pub fn to_forest(&self) -> Result<Forest> {
        let dim = self.dimension;
        if dim != 2 && dim != 3 {
            return Err(Error::Config {
                field: "dimension".into(),
                message: format!("must be 2 or 3, got {dim}"),
            });
        }
        let mut trees = Vec::with_capacity(self.trees.len());
        for (i, t) in self.trees.iter().enumerate() {
            if t.tree_id != i {
                return Err(Error::Config {
                    field: format!("trees[{i}].tree_id"),
                    message: "tree ids must be dense and ordered".into(),
                });
            }
            if t.origin.len() != dim || t.extent.len() != dim {
                return Err(Error::Config {
                    field: format!("trees[{i}]"),
                    message: format!("origin/extent must have {dim} components"),
                });
            }
            if t.origin.iter().chain(&t.extent).any(|x| !x.is_finite()) {
                return Err(Error::Config {
                    field: format!("trees[{i}]"),
                    message: "origin/extent must be finite".into(),
                });
            }
            trees.push(Tree::new(i, dim, &t.origin, &t.extent)?);
        }
        let mut leaves = Vec::with_capacity(self.leaves.len());
        for (i, l) in self.leaves.iter().enumerate() {
            if l.tree_id >= trees.len() {
                return Err(Error::Config {
                    field: format!("leaves[{i}].tree_id"),
                    message: "out of range".into(),
                });
            }
            if l.cells.len() != dim || l.cells.iter().any(|&c| c == 0 || c > 1 << 20) {
                return Err(Error::Config {
                    field: format!("leaves[{i}].cells"),
                    message: format!("must be {dim} components in [1, 2^20]"),
                });
            }
            let key = MortonKey::encode(dim, l.level, &l.coords)?;
            let mut cells = [1usize; 3];
            cells[..dim].copy_from_slice(&l.cells);
            leaves.push(Patch {
                tree_id: l.tree_id,
                key,
                cells,
                fields: BTreeMap::new(),
            });
        }
        if self.rank_count == 0 || self.markers.len() != self.rank_count + 1 {
            return Err(Error::Config {
                field: "markers".into(),
                message: "length must be rank_count + 1 with rank_count >= 1".into(),
            });
        }
        Forest::from_parts(dim, trees, leaves, self.rank_count, self.markers.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<ForestSnapshot> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_forest() -> Forest {
        let tree = Tree::new(0, 2, &[0.0, 10.0], &[100.0, 50.0]).unwrap();
        let forest = Forest::build_uniform(2, vec![tree], 2, &[4, 8], 3).unwrap();
        let (forest, _) = forest.refine(
            |p| p.key.coords()[0] == 0 && p.key.coords()[1] == 0,
            |_, _, _| BTreeMap::new(),
        );
        forest
    }

    #[test]
    fn snapshot_roundtrip() {
        let forest = sample_forest();
        let snap = ForestSnapshot::from_forest(&forest);
        let back = snap.to_forest().unwrap();
        assert_eq!(back.leaves.len(), forest.leaves.len());
        assert_eq!(back.marker_indices(), forest.marker_indices());
        for (a, b) in back.leaves.iter().zip(&forest.leaves) {
            assert_eq!(a.key, b.key);
            assert_eq!(a.cells, b.cells);
        }
        let json = snap.to_json();
        assert_eq!(ForestSnapshot::from_json(&json).unwrap(), snap);
    }

    #[test]
    fn unsorted_leaves_rejected() {
        let forest = sample_forest();
        let mut snap = ForestSnapshot::from_forest(&forest);
        snap.leaves.swap(0, 1);
        assert!(snap.to_forest().is_err());
    }

    #[test]
    fn incomplete_forest_rejected() {
        let forest = sample_forest();
        let mut snap = ForestSnapshot::from_forest(&forest);
        snap.leaves.pop();
        snap.markers = vec![0, 1, 2, snap.leaves.len()];
        assert!(snap.to_forest().is_err());
    }

    #[test]
    fn bad_marker_length_rejected() {
        let forest = sample_forest();
        let mut snap = ForestSnapshot::from_forest(&forest);
        snap.markers.pop();
        assert!(snap.to_forest().is_err());
    }

    #[test]
    fn garbage_json_is_an_error_not_a_panic() {
        for text in ["", "{", "[1,2,3]", "{\"dimension\": 9}"] {
            assert!(ForestSnapshot::from_json(text).is_err());
        }
    }
}
