//! Two-stage query search over a distributed forest.
//!
//! Stage one assigns each query to the rank owning the containing leaf using
//! only the partition markers (no leaf data, no communication). Stage two runs
//! on the owning rank and walks its local leaves top-down to the one leaf that
//! contains the query. Both stages are driven by a user intersection callback
//! that must be monotone: once it rejects a box it rejects every sub-box.

use crate::coords::physical_to_reference;
use crate::forest::{GlobalPos, PartitionMarkers, Patch, Tree};
use crate::morton::{max_level, MortonKey, RefBox};

/// Per-rank routing decision for one query batch.
#[derive(Clone, Debug)]
pub struct RankAssignment {
    /// `per_rank[r]` holds the indices of queries routed to rank r.
    pub per_rank: Vec<Vec<usize>>,
    /// Queries rejected by the callback at every tree root.
    pub unmatched: Vec<usize>,
    /// Virtual keys visited during the traversal.
    pub keys_visited: usize,
}

/// Result of a rank-local leaf search.
#[derive(Clone, Copy, Debug, Default)]
pub struct LocalSearchStats {
    pub matches: usize,
    pub keys_visited: usize,
}

/// Communication-free partition search: route queries to owner ranks using
/// only markers and tree geometry.
///
/// The traversal recurses over virtual keys; as soon as a single rank's
/// marker range covers a whole subtree, the surviving queries are assigned to
/// that rank without descending further.
pub fn search_partition<Q, F>(
    markers: &PartitionMarkers,
    trees: &[Tree],
    queries: &[Q],
    cb: F,
) -> RankAssignment
where
    F: Fn(&Q, &Tree, &RefBox, bool) -> bool,
{
    search_partition_impl(markers, trees, queries, cb, true)
}

/// [`search_partition`] with subtree pruning disabled: the traversal always
/// recurses to the maximum level. Same assignments, more visited keys; kept
/// for the pruning-soundness check.
pub fn search_partition_unpruned<Q, F>(
    markers: &PartitionMarkers,
    trees: &[Tree],
    queries: &[Q],
    cb: F,
) -> RankAssignment
where
    F: Fn(&Q, &Tree, &RefBox, bool) -> bool,
{
    search_partition_impl(markers, trees, queries, cb, false)
}

fn search_partition_impl<Q, F>(
    markers: &PartitionMarkers,
    trees: &[Tree],
    queries: &[Q],
    cb: F,
    prune: bool,
) -> RankAssignment
where
    F: Fn(&Q, &Tree, &RefBox, bool) -> bool,
{
    let dim = markers.dim;
    let rank_count = markers.rank_count();
    let mut per_rank = vec![Vec::new(); rank_count];
    let mut assigned = vec![false; queries.len()];
    let mut keys_visited = 0usize;

    // Largest rank whose marker does not exceed the position.
    let rank_of = |pos: GlobalPos| -> usize {
        markers
            .bounds
            .partition_point(|b| *b <= pos)
            .saturating_sub(1)
    };

    struct Ctx<'a, Q, F> {
        dim: usize,
        tree: &'a Tree,
        tree_idx: usize,
        queries: &'a [Q],
        cb: &'a F,
        prune: bool,
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse<Q, F>(
        ctx: &Ctx<'_, Q, F>,
        key: MortonKey,
        active: Vec<usize>,
        rank_of: &dyn Fn(GlobalPos) -> usize,
        per_rank: &mut [Vec<usize>],
        assigned: &mut [bool],
        keys_visited: &mut usize,
    ) where
        F: Fn(&Q, &Tree, &RefBox, bool) -> bool,
    {
        *keys_visited += 1;
        let first = GlobalPos {
            tree: ctx.tree_idx,
            code: key.code(ctx.dim),
        };
        let last = GlobalPos {
            tree: ctx.tree_idx,
            code: key.last_descendant_code(ctx.dim),
        };
        let r_lo = rank_of(first);
        let r_hi = rank_of(last);
        if (ctx.prune && r_lo == r_hi) || key.level() >= max_level(ctx.dim) {
            debug_assert_eq!(r_lo, r_hi);
            for idx in active {
                per_rank[r_lo].push(idx);
                assigned[idx] = true;
            }
            return;
        }
        for child in key.children(ctx.dim).expect("level below maximum") {
            let b = child.to_box(ctx.dim);
            let surviving: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&i| (ctx.cb)(&ctx.queries[i], ctx.tree, &b, false))
                .collect();
            if !surviving.is_empty() {
                recurse(
                    ctx,
                    child,
                    surviving,
                    rank_of,
                    per_rank,
                    assigned,
                    keys_visited,
                );
            }
        }
    }

    for (tree_idx, tree) in trees.iter().enumerate() {
        let root = MortonKey::root();
        let root_box = root.to_box(dim);
        keys_visited += 1;
        let active: Vec<usize> = (0..queries.len())
            .filter(|&i| cb(&queries[i], tree, &root_box, false))
            .collect();
        if active.is_empty() {
            continue;
        }
        let first = GlobalPos {
            tree: tree_idx,
            code: 0,
        };
        let last = GlobalPos {
            tree: tree_idx,
            code: root.last_descendant_code(dim),
        };
        let ctx = Ctx {
            dim,
            tree,
            tree_idx,
            queries,
            cb: &cb,
            prune,
        };
        if prune && rank_of(first) == rank_of(last) {
            // Whole tree owned by one rank (R = 1 shortcut included).
            let r = rank_of(first);
            for idx in active {
                per_rank[r].push(idx);
                assigned[idx] = true;
            }
        } else {
            for child in root.children(dim).expect("root is refinable") {
                let b = child.to_box(dim);
                let surviving: Vec<usize> = active
                    .iter()
                    .copied()
                    .filter(|&i| cb(&queries[i], tree, &b, false))
                    .collect();
                if !surviving.is_empty() {
                    recurse(
                        &ctx,
                        child,
                        surviving,
                        &rank_of,
                        &mut per_rank,
                        &mut assigned,
                        &mut keys_visited,
                    );
                }
            }
        }
    }

    let unmatched = (0..queries.len()).filter(|&i| !assigned[i]).collect();
    RankAssignment {
        per_rank,
        unmatched,
        keys_visited,
    }
}

/// Rank-local top-down leaf search. `on_leaf` fires exactly once per
/// (query, owning leaf) pair; with the default point callback that is at most
/// once per query.
pub fn search_local<Q, F, G>(
    dim: usize,
    trees: &[Tree],
    local_leaves: &[Patch],
    queries: &[Q],
    cb: F,
    mut on_leaf: G,
) -> LocalSearchStats
where
    F: Fn(&Q, &Tree, &RefBox, bool) -> bool,
    G: FnMut(usize, &Patch),
{
    let mut stats = LocalSearchStats::default();
    if local_leaves.is_empty() || queries.is_empty() {
        return stats;
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse<Q, F, G>(
        dim: usize,
        tree: &Tree,
        key: MortonKey,
        leaves: &[Patch],
        queries: &[Q],
        active: &[usize],
        cb: &F,
        on_leaf: &mut G,
        stats: &mut LocalSearchStats,
    ) where
        F: Fn(&Q, &Tree, &RefBox, bool) -> bool,
        G: FnMut(usize, &Patch),
    {
        stats.keys_visited += 1;
        if leaves.len() == 1 && leaves[0].key == key {
            let b = key.to_box(dim);
            for &idx in active {
                if cb(&queries[idx], tree, &b, true) {
                    on_leaf(idx, &leaves[0]);
                    stats.matches += 1;
                }
            }
            return;
        }
        for child in key.children(dim).expect("leaf keys end recursion first") {
            let lo = child.code(dim);
            let hi = child.last_descendant_code(dim);
            let start = leaves.partition_point(|l| l.key.code(dim) < lo);
            let end = leaves.partition_point(|l| l.key.code(dim) <= hi);
            if start == end {
                continue;
            }
            let b = child.to_box(dim);
            let surviving: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&i| cb(&queries[i], tree, &b, false))
                .collect();
            if !surviving.is_empty() {
                recurse(
                    dim,
                    tree,
                    child,
                    &leaves[start..end],
                    queries,
                    &surviving,
                    cb,
                    on_leaf,
                    stats,
                );
            }
        }
    }

    // Leaves are sorted by (tree, key); process one contiguous tree group at
    // a time.
    let mut start = 0;
    while start < local_leaves.len() {
        let tree_id = local_leaves[start].tree_id;
        let end = start
            + local_leaves[start..]
                .iter()
                .take_while(|l| l.tree_id == tree_id)
                .count();
        let tree = &trees[tree_id];
        let root = MortonKey::root();
        let root_box = root.to_box(dim);
        let active: Vec<usize> = (0..queries.len())
            .filter(|&i| cb(&queries[i], tree, &root_box, false))
            .collect();
        if !active.is_empty() {
            recurse(
                dim,
                tree,
                root,
                &local_leaves[start..end],
                queries,
                &active,
                &cb,
                &mut on_leaf,
                &mut stats,
            );
        }
        start = end;
    }
    stats
}

/// The default point intersection test: convert the query's producer-frame
/// physical coordinates into the tree's reference frame, then test half-open
/// box membership (upper face closed at the tree boundary).
pub fn point_intersect(dim: usize, coords: &[f64], tree: &Tree, key_box: &RefBox) -> bool {
    let reference = physical_to_reference(coords, tree, dim);
    key_box.contains(dim, &reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::Forest;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Point = [f64; 3];

    fn point_cb(dim: usize) -> impl Fn(&Point, &Tree, &RefBox, bool) -> bool {
        move |q: &Point, tree: &Tree, b: &RefBox, _| point_intersect(dim, q, tree, b)
    }

    fn unit_forest(level: u8, ranks: usize) -> Forest {
        let tree = Tree::new(0, 2, &[0.0; 3], &[1.0; 3]).unwrap();
        Forest::build_uniform(2, vec![tree], level, &[2, 2], ranks).unwrap()
    }

    /// Brute-force owner scan over all leaves.
    fn brute_force_owner(forest: &Forest, q: &Point) -> Option<(usize, usize)> {
        for (idx, leaf) in forest.leaves.iter().enumerate() {
            let tree = &forest.trees[leaf.tree_id];
            let reference = physical_to_reference(q, tree, forest.dim);
            if leaf.key.to_box(forest.dim).contains(forest.dim, &reference) {
                return Some((forest.owner_of_leaf(idx), idx));
            }
        }
        None
    }

    #[test]
    fn single_rank_shortcut() {
        let f = unit_forest(3, 1);
        let queries = vec![[0.3, 0.7, 0.0], [0.9, 0.1, 0.0]];
        let a = search_partition(&f.markers(), &f.trees, &queries, point_cb(2));
        assert_eq!(a.per_rank[0], vec![0, 1]);
        assert!(a.unmatched.is_empty());
        // One root visit per tree, no recursion below it.
        assert_eq!(a.keys_visited, 1);
    }

    #[test]
    fn query_outside_all_trees_is_unmatched() {
        let f = unit_forest(2, 2);
        let queries = vec![[1.5, 0.5, 0.0]];
        let a = search_partition(&f.markers(), &f.trees, &queries, point_cb(2));
        assert_eq!(a.unmatched, vec![0]);
        assert!(a.per_rank.iter().all(Vec::is_empty));
    }

    #[test]
    fn first_quadrant_query_routed_to_first_rank() {
        let f = unit_forest(3, 4);
        let queries = vec![[0.1, 0.1, 0.0]];
        let a = search_partition(&f.markers(), &f.trees, &queries, point_cb(2));
        let expected = brute_force_owner(&f, &queries[0]).unwrap().0;
        assert_eq!(a.per_rank[expected], vec![0]);
    }

    #[test]
    fn local_search_finds_exactly_one_leaf_at_box_center() {
        let f = unit_forest(2, 1);
        let leaf_box = f.leaves[5].key.to_box(2);
        let q = [
            0.5 * (leaf_box.lo[0] + leaf_box.hi[0]),
            0.5 * (leaf_box.lo[1] + leaf_box.hi[1]),
            0.0,
        ];
        let mut hits = Vec::new();
        let stats = search_local(
            2,
            &f.trees,
            f.local_leaves(0),
            &[q],
            point_cb(2),
            |i, leaf| {
                hits.push((i, leaf.key));
            },
        );
        assert_eq!(stats.matches, 1);
        assert_eq!(hits, vec![(0, f.leaves[5].key)]);
    }

    #[test]
    fn empty_local_partition_gives_zero_matches() {
        let f = unit_forest(2, 1);
        let stats = search_local(2, &f.trees, &[], &[[0.5, 0.5, 0.0]], point_cb(2), |_, _| {
            panic!("no leaves to match")
        });
        assert_eq!(stats.matches, 0);
    }

    #[test]
    fn point_on_shared_face_owned_by_exactly_one_sibling() {
        // Siblings at level 1 share the face x = 0.5; the half-open rule puts
        // the point in the upper sibling only. Enumerate both.
        let tree = Tree::new(0, 2, &[0.0; 3], &[1.0; 3]).unwrap();
        let left = MortonKey::encode(2, 1, &[0, 0]).unwrap().to_box(2);
        let right = MortonKey::encode(2, 1, &[1, 0]).unwrap().to_box(2);
        let q = [0.5, 0.25, 0.0];
        let inside = [&left, &right]
            .iter()
            .filter(|b| point_intersect(2, &q, &tree, b))
            .count();
        assert_eq!(inside, 1);
        assert!(point_intersect(2, &q, &tree, &right));
    }

    #[test]
    fn lower_corner_belongs_to_box() {
        let tree = Tree::new(0, 2, &[0.0; 3], &[1.0; 3]).unwrap();
        let b = MortonKey::encode(2, 1, &[1, 1]).unwrap().to_box(2);
        assert!(point_intersect(2, &[0.5, 0.5, 0.0], &tree, &b));
    }

    #[test]
    fn tree_upper_boundary_belongs_to_last_box() {
        let tree = Tree::new(0, 2, &[0.0; 3], &[1.0; 3]).unwrap();
        let last = MortonKey::encode(2, 1, &[1, 1]).unwrap().to_box(2);
        assert!(point_intersect(2, &[1.0, 1.0, 0.0], &tree, &last));
        let inner = MortonKey::encode(2, 1, &[0, 0]).unwrap().to_box(2);
        assert!(!point_intersect(2, &[1.0, 1.0, 0.0], &tree, &inner));
    }

    #[test]
    fn local_search_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f = unit_forest(4, 1);
        let queries: Vec<Point> = (0..10_000)
            .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 0.0])
            .collect();
        let mut found = vec![None; queries.len()];
        search_local(
            2,
            &f.trees,
            f.local_leaves(0),
            &queries,
            point_cb(2),
            |i, leaf| {
                assert!(found[i].is_none(), "query {i} matched twice");
                found[i] = Some(leaf.key);
            },
        );
        for (i, q) in queries.iter().enumerate() {
            let (_, leaf_idx) = brute_force_owner(&f, q).unwrap();
            assert_eq!(found[i], Some(f.leaves[leaf_idx].key));
        }
    }

    #[test]
    fn partition_search_is_pure_function_of_markers() {
        // Permuting/hiding leaf data cannot change routing: run once against
        // the real forest and once against markers alone with fields wiped.
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let f = unit_forest(3, 5);
        let queries: Vec<Point> = (0..500)
            .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 0.0])
            .collect();
        let a = search_partition(&f.markers(), &f.trees, &queries, point_cb(2));
        let mut stripped = f.clone();
        for leaf in &mut stripped.leaves {
            leaf.fields.clear();
            leaf.cells = [1, 1, 1];
        }
        let b = search_partition(&stripped.markers(), &stripped.trees, &queries, point_cb(2));
        for r in 0..5 {
            assert_eq!(a.per_rank[r], b.per_rank[r]);
        }
    }

    #[test]
    fn pruning_does_not_change_assignments() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let f = unit_forest(3, 7);
        let queries: Vec<Point> = (0..200)
            .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 0.0])
            .collect();
        let pruned = search_partition(&f.markers(), &f.trees, &queries, point_cb(2));
        let full = search_partition_unpruned(&f.markers(), &f.trees, &queries, point_cb(2));
        for r in 0..7 {
            let mut a = pruned.per_rank[r].clone();
            let mut b = full.per_rank[r].clone();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
        assert!(pruned.keys_visited <= full.keys_visited);
    }

    #[test]
    fn visit_count_bounded_for_single_point() {
        let f = unit_forest(5, 8);
        let q = [[0.37, 0.81, 0.0]];
        let a = search_partition(&f.markers(), &f.trees, &q, point_cb(2));
        let bound = 4 * 4 * usize::from(max_level(2));
        assert!(a.keys_visited <= bound, "{} > {bound}", a.keys_visited);
    }
}
