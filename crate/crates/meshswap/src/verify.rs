//! Self-contained verification suites: randomized search oracle, interpolation
//! exactness, coordinate round trips, rank-count equivalence and a pinned
//! golden run. The CLI `verify` subcommand runs all of them; the acceptance
//! tests reuse the individual checks.

use crate::config::{Mode, RunConfig};
use crate::coords::{
    dipole_to_spherical, ecef_to_enu, ecef_to_spherical, enu_to_ecef, physical_to_reference,
    spherical_to_dipole, spherical_to_ecef, CartesianEcef, EnuOrigin, SphericalEcef,
};
use crate::exchange::{exchange_one_way, Query};
use crate::forest::{Forest, PartitionMarkers, Tree};
use crate::harness::{multilinear_interp_cb, point_cb, run_coupled};
use crate::interp::{cell_centers, interpolate_multilinear, locate_in_patch};
use crate::morton::MortonKey;
use crate::search::{search_local, search_partition};
use crate::transport::Transport;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn pass(name: &'static str, detail: String) -> CheckResult {
        CheckResult {
            name,
            passed: true,
            detail,
        }
    }

    fn fail(name: &'static str, detail: String) -> CheckResult {
        CheckResult {
            name,
            passed: false,
            detail,
        }
    }
}

/// Run every verification check with seeds derived from `seed`.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![
        check_search_oracle(seed, 50, 2_000),
        check_marker_mutation(seed.wrapping_add(1)),
        check_interpolation(seed.wrapping_add(2)),
        check_coordinate_roundtrips(seed.wrapping_add(3)),
        check_serial_equivalence(seed.wrapping_add(4)),
        check_golden_run(),
    ]
}

/// A random adapted, weighted-partition forest for oracle testing.
pub fn random_forest(rng: &mut ChaCha8Rng, dim: usize) -> Forest {
    let tree_count = rng.gen_range(1..=2);
    let mut trees = Vec::new();
    let mut x0 = 0.0;
    for i in 0..tree_count {
        // Abutting trees along x so multi-tree ownership gets exercised.
        let mut origin = [0.0; 3];
        let mut extent = [1.0; 3];
        origin[0] = x0;
        for (j, e) in extent.iter_mut().enumerate().take(dim) {
            *e = rng.gen_range(0.5..2.0);
            if j > 0 {
                origin[j] = rng.gen_range(-1.0..1.0);
            }
        }
        x0 += extent[0];
        trees.push(Tree::new(i, dim, &origin[..dim], &extent[..dim]).unwrap());
    }
    let level = rng.gen_range(1..=if dim == 2 { 3 } else { 2 });
    let cells = [
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
    ];
    let forest = Forest::build_uniform(dim, trees, level, &cells[..dim], 1).unwrap();
    // Refine a pseudorandom but predicate-stable subset of leaves.
    let salt: u64 = rng.gen();
    let (forest, _) = forest.refine(
        |p| (p.key.code(dim) ^ salt) % 3 == 0 && p.key.level() < level + 1,
        |_, _, _| BTreeMap::new(),
    );
    let ranks = rng.gen_range(1..=64).min(forest.leaves.len());
    let mut forest = forest;
    forest.rank_count = ranks;
    let wsalt: u64 = rng.gen();
    forest
        .partition_weighted(|p| ((p.key.code(dim) ^ wsalt) % 7 + 1) as f64)
        .unwrap()
}

/// Brute-force owner: scan every leaf of the forest.
pub fn brute_force_owner(forest: &Forest, q: &[f64; 3]) -> Option<(usize, usize)> {
    for (idx, leaf) in forest.leaves.iter().enumerate() {
        let tree = &forest.trees[leaf.tree_id];
        let reference = physical_to_reference(q, tree, forest.dim);
        if leaf.key.to_box(forest.dim).contains(forest.dim, &reference) {
            return Some((forest.owner_of_leaf(idx), idx));
        }
    }
    None
}

/// Run the two-stage search for one point against given markers and return
/// (rank, leaf key) if anything matched.
fn two_stage_owner(
    forest: &Forest,
    markers: &PartitionMarkers,
    q: &[f64; 3],
) -> Option<(usize, MortonKey)> {
    let dim = forest.dim;
    let assignment = search_partition(
        markers,
        &forest.trees,
        std::slice::from_ref(q),
        point_cb(dim),
    );
    for (rank, idxs) in assignment.per_rank.iter().enumerate() {
        if idxs.is_empty() {
            continue;
        }
        let mut hit = None;
        search_local(
            dim,
            &forest.trees,
            forest.local_leaves(rank),
            std::slice::from_ref(q),
            point_cb(dim),
            |_, leaf| hit = Some(leaf.key),
        );
        return hit.map(|k| (rank, k));
    }
    None
}

/// Compare two-stage search against the brute-force oracle on random forests.
pub fn check_search_oracle(seed: u64, forests: usize, points_per_forest: usize) -> CheckResult {
    const NAME: &str = "search-oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0usize;
    for i in 0..forests {
        let dim = if i % 2 == 0 { 2 } else { 3 };
        let forest = random_forest(&mut rng, dim);
        let markers = forest.markers();
        for p in 0..points_per_forest {
            // In-domain points: uniform inside a random tree's box, with an
            // occasional outside point to exercise the unmatched path.
            let q = if p % 50 == 49 {
                [
                    rng.gen_range(-2.0..-1.0),
                    rng.gen_range(-2.0..-1.0),
                    if dim == 3 {
                        rng.gen_range(-2.0..-1.0)
                    } else {
                        0.0
                    },
                ]
            } else {
                let tree = &forest.trees[rng.gen_range(0..forest.trees.len())];
                let mut q = [0.0; 3];
                for a in 0..dim {
                    q[a] = tree.origin[a] + rng.gen_range(0.0..1.0) * tree.extent[a];
                }
                q
            };
            let expected = brute_force_owner(&forest, &q);
            let got = two_stage_owner(&forest, &markers, &q);
            let ok = match (&expected, &got) {
                (None, None) => true,
                (Some((rank, leaf_idx)), Some((r, key))) => {
                    r == rank && forest.leaves[*leaf_idx].key == *key
                }
                _ => false,
            };
            if !ok {
                return CheckResult::fail(
                    NAME,
                    format!(
                        "forest {i} (dim {dim}) point {q:?}: oracle {expected:?} vs search {got:?}"
                    ),
                );
            }
            checked += 1;
        }
    }
    CheckResult::pass(
        NAME,
        format!("{checked} points across {forests} random forests agree with brute force"),
    )
}

/// Mutation check: perturbing an interior partition marker must produce
/// routings that disagree with the unperturbed forest's oracle. Guards
/// against an oracle that cannot fail.
pub fn check_marker_mutation(seed: u64) -> CheckResult {
    const NAME: &str = "marker-mutation";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mutants_caught = 0usize;
    let mut attempts = 0usize;
    for i in 0..20 {
        let dim = if i % 2 == 0 { 2 } else { 3 };
        let forest = random_forest(&mut rng, dim);
        if forest.rank_count < 2 {
            continue;
        }
        let indices = forest.marker_indices().to_vec();
        // Move one interior marker to a different leaf boundary.
        let m = rng.gen_range(1..forest.rank_count);
        let shifted = if indices[m] + 1 < indices[m + 1] {
            indices[m] + 1
        } else if indices[m] > indices[m - 1] + 1 {
            indices[m] - 1
        } else {
            continue;
        };
        let mut markers = forest.markers();
        markers.bounds[m] = forest.global_pos(&forest.leaves[shifted]);
        attempts += 1;
        // Exactly one leaf changed owner; query its center.
        let changed = indices[m].min(shifted);
        let leaf = &forest.leaves[changed];
        let tree = &forest.trees[leaf.tree_id];
        let b = leaf.key.to_box(dim);
        let mut q = [0.0; 3];
        for a in 0..dim {
            let mid = 0.5 * (b.lo[a] + b.hi[a]);
            q[a] = tree.origin[a] + mid * tree.extent[a];
        }
        let caught = match (
            brute_force_owner(&forest, &q),
            two_stage_owner(&forest, &markers, &q),
        ) {
            (Some((rank, _)), Some((r, _))) => r != rank,
            (Some(_), None) | (None, Some(_)) => true,
            (None, None) => false,
        };
        if caught {
            mutants_caught += 1;
        }
    }
    if attempts == 0 {
        return CheckResult::fail(NAME, "no mutable forests generated".into());
    }
    if mutants_caught == attempts {
        CheckResult::pass(
            NAME,
            format!("{mutants_caught}/{attempts} marker perturbations detected by the oracle"),
        )
    } else {
        CheckResult::fail(
            NAME,
            format!("only {mutants_caught}/{attempts} marker perturbations detected"),
        )
    }
}

/// Interpolation must reproduce multilinear fields to round-off and stay
/// within the sampled field's range everywhere.
pub fn check_interpolation(seed: u64) -> CheckResult {
    const NAME: &str = "interpolation";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for dim in [2usize, 3] {
        let tree = Tree::new(0, dim, &vec![0.0; dim], &vec![1.0; dim]).unwrap();
        let cells = [
            rng.gen_range(2..=6),
            rng.gen_range(2..=6),
            rng.gen_range(2..=6),
        ];
        let mut forest = Forest::build_uniform(dim, vec![tree], 1, &cells[..dim], 1).unwrap();
        let coef: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lin = |x: &[f64]| coef[0] + (0..dim).map(|i| coef[i + 1] * x[i]).sum::<f64>();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..forest.leaves.len() {
            let t = forest.trees[forest.leaves[i].tree_id].clone();
            let values: Vec<f64> = cell_centers(&forest.leaves[i], &t, dim)
                .iter()
                .map(|c| {
                    let v = lin(c);
                    lo = lo.min(v);
                    hi = hi.max(v);
                    v
                })
                .collect();
            forest.leaves[i].fields.insert("v".to_string(), values);
        }
        let names = ["v".to_string()];
        for _ in 0..5_000 {
            let q = [
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                if dim == 3 {
                    rng.gen_range(0.0..1.0)
                } else {
                    0.0
                },
            ];
            let (_, leaf_idx) = brute_force_owner(&forest, &q).unwrap();
            let patch = &forest.leaves[leaf_idx];
            let tree = &forest.trees[patch.tree_id];
            let reference = physical_to_reference(&q, tree, dim);
            let local = locate_in_patch(&reference, patch, dim).unwrap();
            let v = interpolate_multilinear(patch, &local, &names, dim).unwrap()[0];
            if v < lo - 1e-12 || v > hi + 1e-12 {
                return CheckResult::fail(
                    NAME,
                    format!("value {v} outside sampled range [{lo}, {hi}] at {q:?}"),
                );
            }
            // The stencil is clamped at patch faces, so exactness is only
            // guaranteed where the full stencil fits; restrict to cell
            // centers' convex hull per axis.
            let interior = (0..dim).all(|a| {
                let cells_a = patch.cells[a] as f64;
                let b = patch.key.to_box(dim);
                let w = (b.hi[a] - b.lo[a]) / cells_a;
                reference[a] >= b.lo[a] + 0.5 * w && reference[a] <= b.hi[a] - 0.5 * w
            });
            if interior {
                let err = (v - lin(&q)).abs();
                worst = worst.max(err);
                if err > 1e-12 {
                    return CheckResult::fail(
                        NAME,
                        format!("linear field error {err:.3e} > 1e-12 at {q:?} (dim {dim})"),
                    );
                }
            }
        }

        // Constant fields must come back bit-exact anywhere.
        let constant = rng.gen_range(-5.0..5.0);
        for leaf in &mut forest.leaves {
            let n = leaf.fields["v"].len();
            leaf.fields.insert("v".to_string(), vec![constant; n]);
        }
        for _ in 0..500 {
            let q = [
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                if dim == 3 {
                    rng.gen_range(0.0..1.0)
                } else {
                    0.0
                },
            ];
            let (_, leaf_idx) = brute_force_owner(&forest, &q).unwrap();
            let patch = &forest.leaves[leaf_idx];
            let tree = &forest.trees[patch.tree_id];
            let reference = physical_to_reference(&q, tree, dim);
            let local = locate_in_patch(&reference, patch, dim).unwrap();
            let v = interpolate_multilinear(patch, &local, &names, dim).unwrap()[0];
            if v != constant {
                return CheckResult::fail(
                    NAME,
                    format!("constant {constant} came back as {v} at {q:?}"),
                );
            }
        }
    }
    CheckResult::pass(
        NAME,
        format!("linear fields exact to {worst:.3e} <= 1e-12, all values inside field range"),
    )
}

/// Round trips along the coordinate chain: spherical <-> Cartesian ECEF,
/// ECEF <-> ENU, and the dipole inversion.
pub fn check_coordinate_roundtrips(seed: u64) -> CheckResult {
    const NAME: &str = "coordinate-roundtrips";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_cart = 0.0f64;
    let mut worst_dip = 0.0f64;
    for _ in 0..10_000 {
        // Ionosphere-like shell: just above the surface, away from the poles.
        let s = SphericalEcef {
            r: crate::coords::EARTH_RADIUS_KM * rng.gen_range(1.0..1.2),
            theta: rng.gen_range(0.2..std::f64::consts::PI - 0.2),
            lambda: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        };
        let c = spherical_to_ecef(&s);
        let s2 = ecef_to_spherical(&c).unwrap();
        let err =
            (s.r - s2.r).abs() / s.r + (s.theta - s2.theta).abs() + angle_diff(s.lambda, s2.lambda);
        worst_cart = worst_cart.max(err);

        let o = EnuOrigin {
            lat0: rng.gen_range(-1.2..1.2),
            lon0: rng.gen_range(-3.0..3.0),
            r0: 1.0,
        };
        let p = CartesianEcef {
            x: c.x,
            y: c.y,
            z: c.z,
        };
        let enu = ecef_to_enu(&p, &o);
        let back = enu_to_ecef(&enu, &o);
        let cart_err =
            ((back.x - p.x).powi(2) + (back.y - p.y).powi(2) + (back.z - p.z).powi(2)).sqrt() / s.r;
        worst_cart = worst_cart.max(cart_err);
        if worst_cart > 1e-12 {
            return CheckResult::fail(
                NAME,
                format!("Cartesian round-trip error {worst_cart:.3e} > 1e-12"),
            );
        }

        let d = match spherical_to_dipole(&s) {
            Ok(d) => d,
            Err(_) => continue,
        };
        // Near the axis |q| blows up and the inversion's radius floor can
        // reject the point; that is outside the invertible domain, skip it.
        let s3 = match dipole_to_spherical(&d) {
            Ok(s3) => s3,
            Err(_) => continue,
        };
        let dip_err =
            (s.r - s3.r).abs() / s.r + (s.theta - s3.theta).abs() + angle_diff(s.lambda, s3.lambda);
        worst_dip = worst_dip.max(dip_err);
        if dip_err > 1e-9 {
            return CheckResult::fail(
                NAME,
                format!("dipole round-trip error {dip_err:.3e} > 1e-9 at {s:?}"),
            );
        }

        // Composed chain must equal the stage-by-stage composition exactly.
        let composed = crate::coords::dipole_to_enu(&d, &o).unwrap();
        let staged = ecef_to_enu(&spherical_to_ecef(&dipole_to_spherical(&d).unwrap()), &o);
        if composed != staged {
            return CheckResult::fail(
                NAME,
                format!("composed dipole->ENU differs from staged chain at {d:?}"),
            );
        }
    }
    CheckResult::pass(
        NAME,
        format!(
            "10000 points: cartesian {worst_cart:.3e} <= 1e-12, dipole {worst_dip:.3e} <= 1e-9"
        ),
    )
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * std::f64::consts::PI);
    d.min(2.0 * std::f64::consts::PI - d)
}

/// Exchange results must be bit-identical for 1, 2, 7 and 16 ranks.
pub fn check_serial_equivalence(seed: u64) -> CheckResult {
    const NAME: &str = "serial-equivalence";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<[f64; 3]> = (0..5_000)
        .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 0.0])
        .collect();
    let salt: u64 = rng.gen();
    let mut baseline: Option<Vec<Option<Vec<f64>>>> = None;
    for ranks in [1usize, 2, 7, 16] {
        let tree = Tree::new(0, 2, &[0.0; 3], &[1.0; 3]).unwrap();
        let forest = Forest::build_uniform(2, vec![tree], 3, &[4, 4], 1).unwrap();
        let (mut forest, _) = forest.refine(
            |p| (p.key.code(2) ^ salt) % 4 == 0,
            |_, _, _| BTreeMap::new(),
        );
        for i in 0..forest.leaves.len() {
            let t = forest.trees[forest.leaves[i].tree_id].clone();
            let values: Vec<f64> = cell_centers(&forest.leaves[i], &t, 2)
                .iter()
                .map(|c| (9.0 * c[0]).sin() * (5.0 * c[1]).cos() + c[0])
                .collect();
            forest.leaves[i].fields.insert("v".to_string(), values);
        }
        forest.rank_count = ranks;
        let forest = forest
            .partition_weighted(|p| p.cell_count() as f64)
            .unwrap();
        let mut queries: Vec<Vec<Query>> = vec![Vec::new(); ranks];
        for (i, p) in points.iter().enumerate() {
            queries[i % ranks].push(Query::new(i as u64, i % ranks, *p, Vec::new()));
        }
        let mut transport = Transport::new(ranks);
        if let Err(e) = exchange_one_way(
            &forest,
            &mut queries,
            &point_cb(2),
            &multilinear_interp_cb(2, vec!["v".to_string()]),
            &mut transport,
        ) {
            return CheckResult::fail(NAME, format!("exchange failed at {ranks} ranks: {e}"));
        }
        let mut by_id: Vec<Option<Vec<f64>>> = vec![None; points.len()];
        for qs in &queries {
            for q in qs {
                by_id[q.id as usize] = q.result.clone();
            }
        }
        match &baseline {
            None => baseline = Some(by_id),
            Some(b) => {
                if &by_id != b {
                    let first = by_id
                        .iter()
                        .zip(b.iter())
                        .position(|(x, y)| x != y)
                        .unwrap();
                    return CheckResult::fail(
                        NAME,
                        format!("{ranks} ranks differ from 1 rank first at query {first}"),
                    );
                }
            }
        }
    }
    CheckResult::pass(
        NAME,
        "results bit-identical for 1, 2, 7 and 16 ranks".into(),
    )
}

/// Deterministic summary of a coupled run: every report column except the
/// wall-clock timings.
pub fn run_summary(config: &RunConfig) -> crate::error::Result<String> {
    let report = run_coupled(config)?;
    let mut out = String::from(
        "sync_index,t_sync,steps_p,steps_c,producer_patches,consumer_patches,queries,found\n",
    );
    for r in &report.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.sync_index,
            r.t_sync,
            r.steps_producer,
            r.steps_consumer,
            r.producer_patches,
            r.consumer_patches,
            r.queries,
            r.found,
        )
        .expect("string write");
    }
    Ok(out)
}

/// The configuration pinned by the golden summary.
pub fn golden_config() -> RunConfig {
    let mut config = RunConfig::default_for_mode(Mode::TwoD);
    config.seed = 42;
    config.t_sync = 100.0;
    config.t_end = 400.0;
    config
}

pub const GOLDEN_SUMMARY: &str = include_str!("../golden/run_summary_2d.csv");

/// A pinned coupled run must reproduce its recorded summary exactly.
pub fn check_golden_run() -> CheckResult {
    const NAME: &str = "golden-run";
    let config = golden_config();
    match run_summary(&config) {
        Ok(summary) if summary == GOLDEN_SUMMARY => CheckResult::pass(
            NAME,
            format!("{} pinned rows reproduced", summary.lines().count() - 1),
        ),
        Ok(summary) => CheckResult::fail(
            NAME,
            format!("summary drifted from pinned copy:\n{summary}"),
        ),
        Err(e) => CheckResult::fail(NAME, format!("run failed: {e}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_all(7) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn random_forest_invariants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..30 {
            let forest = random_forest(&mut rng, if i % 2 == 0 { 2 } else { 3 });
            forest.check_invariants().unwrap();
        }
    }

    #[test]
    fn angle_diff_wraps() {
        let pi = std::f64::consts::PI;
        assert!(angle_diff(-pi + 1e-3, pi - 1e-3) < 3e-3);
        assert!((angle_diff(0.0, 1.0) - 1.0).abs() < 1e-15);
    }
}
