//! One-way and two-way interpolation exchange between a producer forest and
//! consumer query sets over the simulated rank transport.
//!
//! Per rank the one-way round runs: partition search on the local queries,
//! query batches out, local leaf search plus interpolation on arrival, reply
//! batches back, results written into the origin queries. Every query ends
//! either found with values or unmatched.

use crate::coords::{dipole_to_enu, DipolePoint, EnuOrigin, EnuPoint};
use crate::error::{Error, Result};
use crate::forest::{Forest, Patch, Tree};
use crate::interp::cell_centers;
use crate::morton::RefBox;
use crate::search::{search_local, search_partition};
use crate::transport::{Message, QueryBatch, ReplyBatch, Transport};
use std::collections::HashMap;
use std::time::Instant;

/// Opaque consumer-side point record. Coordinates are already in the producer
/// physical frame; the payload is consumer bookkeeping that travels with the
/// query and comes back untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub id: u64,
    pub origin_rank: usize,
    pub coords: [f64; 3],
    pub payload: Vec<u8>,
    pub result: Option<Vec<f64>>,
    pub found: bool,
}

impl Query {
    pub fn new(id: u64, origin_rank: usize, coords: [f64; 3], payload: Vec<u8>) -> Self {
        Query {
            id,
            origin_rank,
            coords,
            payload,
            result: None,
            found: false,
        }
    }
}

/// Per-exchange accounting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExchangeReport {
    pub queries_sent: usize,
    pub queries_found: usize,
    pub queries_unmatched: usize,
    pub batches_posted: usize,
    pub wall_time_seconds: f64,
    pub per_rank_sent: Vec<usize>,
    pub per_rank_found: Vec<usize>,
}

/// Intersection test in producer physical coordinates.
pub trait IntersectCallback {
    fn intersects(&self, coords: &[f64; 3], tree: &Tree, key_box: &RefBox, is_leaf: bool) -> bool;
}

impl<F> IntersectCallback for F
where
    F: Fn(&[f64; 3], &Tree, &RefBox, bool) -> bool,
{
    fn intersects(&self, coords: &[f64; 3], tree: &Tree, key_box: &RefBox, is_leaf: bool) -> bool {
        self(coords, tree, key_box, is_leaf)
    }
}

/// Leaf-level interpolation, deterministic per (query, patch).
pub trait InterpolateCallback {
    fn interpolate(&self, coords: &[f64; 3], patch: &Patch, tree: &Tree) -> Result<Vec<f64>>;
}

impl<F> InterpolateCallback for F
where
    F: Fn(&[f64; 3], &Patch, &Tree) -> Result<Vec<f64>>,
{
    fn interpolate(&self, coords: &[f64; 3], patch: &Patch, tree: &Tree) -> Result<Vec<f64>> {
        self(coords, patch, tree)
    }
}

/// Run one producer-to-consumer exchange round. `queries[r]` are the queries
/// created by consumer rank r; results and found flags are written in place.
pub fn exchange_one_way(
    producer: &Forest,
    queries: &mut [Vec<Query>],
    cb: &dyn IntersectCallback,
    interp: &dyn InterpolateCallback,
    transport: &mut Transport,
) -> Result<ExchangeReport> {
    let ranks = producer.rank_count;
    if queries.len() != ranks || transport.rank_count() != ranks {
        return Err(Error::Transport(format!(
            "rank mismatch: producer {ranks}, queries {}, transport {}",
            queries.len(),
            transport.rank_count()
        )));
    }
    let start = Instant::now();
    let batches_before = transport.posted();
    let markers = producer.markers();

    let mut report = ExchangeReport {
        per_rank_sent: vec![0; ranks],
        per_rank_found: vec![0; ranks],
        ..ExchangeReport::default()
    };

    // Stage 1+2: route local queries with the partition search and post one
    // batch per (origin, destination) pair.
    for origin in 0..ranks {
        let qs = &mut queries[origin];
        report.queries_sent += qs.len();
        report.per_rank_sent[origin] = qs.len();
        let assignment =
            search_partition(&markers, &producer.trees, qs, |q: &Query, tree, b, leaf| {
                cb.intersects(&q.coords, tree, b, leaf)
            });
        for &idx in &assignment.unmatched {
            qs[idx].found = false;
            qs[idx].result = None;
        }
        report.queries_unmatched += assignment.unmatched.len();
        for (dest, idxs) in assignment.per_rank.iter().enumerate() {
            if idxs.is_empty() {
                continue;
            }
            let items = idxs
                .iter()
                .map(|&i| (qs[i].id, qs[i].coords, qs[i].payload.clone()))
                .collect();
            transport.post(
                dest,
                Message::Queries(QueryBatch {
                    origin,
                    dest,
                    items,
                }),
            )?;
        }
    }

    // Stage 3+4: each producer rank searches arriving queries in its local
    // partition, interpolates on the owning leaf and posts the replies back.
    // Ranks run sequentially here, so replies posted by earlier ranks can
    // already sit in a later rank's mailbox; stash them for stage 5.
    let mut early_replies: Vec<Vec<ReplyBatch>> = vec![Vec::new(); ranks];
    for rank in 0..ranks {
        let local = producer.local_leaves(rank);
        for msg in transport.drain(rank) {
            let batch = match msg {
                Message::Queries(b) => b,
                Message::Replies(b) => {
                    early_replies[rank].push(b);
                    continue;
                }
            };
            let mut found: Vec<Option<Vec<f64>>> = vec![None; batch.items.len()];
            let mut interp_err = None;
            search_local(
                producer.dim,
                &producer.trees,
                local,
                &batch.items,
                |item: &(u64, [f64; 3], Vec<u8>), tree, b, leaf| {
                    cb.intersects(&item.1, tree, b, leaf)
                },
                |idx, patch| {
                    if found[idx].is_some() {
                        interp_err.get_or_insert(Error::AmbiguousOwnership(batch.items[idx].0));
                        return;
                    }
                    match interp.interpolate(
                        &batch.items[idx].1,
                        patch,
                        &producer.trees[patch.tree_id],
                    ) {
                        Ok(values) => found[idx] = Some(values),
                        Err(e) => {
                            interp_err.get_or_insert(e);
                        }
                    }
                },
            );
            if let Some(e) = interp_err {
                return Err(e);
            }
            let items = batch
                .items
                .iter()
                .zip(found)
                .map(|((id, _, _), values)| match values {
                    Some(v) => (*id, true, v),
                    None => (*id, false, Vec::new()),
                })
                .collect();
            transport.post(
                batch.origin,
                Message::Replies(ReplyBatch {
                    origin: batch.origin,
                    items,
                }),
            )?;
        }
    }

    // Stage 5: write replies into the origin queries.
    let mut missed = 0usize;
    for rank in 0..ranks {
        let index_of: HashMap<u64, usize> = queries[rank]
            .iter()
            .enumerate()
            .map(|(i, q)| (q.id, i))
            .collect();
        let drained: Vec<ReplyBatch> = transport
            .drain(rank)
            .into_iter()
            .map(|msg| match msg {
                Message::Replies(b) => Ok(b),
                Message::Queries(_) => {
                    Err(Error::Transport("query received during reply phase".into()))
                }
            })
            .collect::<Result<_>>()?;
        for batch in early_replies[rank].drain(..).chain(drained) {
            for (id, was_found, values) in batch.items {
                let &idx = index_of
                    .get(&id)
                    .ok_or_else(|| Error::Transport(format!("reply for unknown query {id}")))?;
                let q = &mut queries[rank][idx];
                if was_found {
                    if q.found {
                        return Err(Error::AmbiguousOwnership(id));
                    }
                    q.found = true;
                    q.result = Some(values);
                    report.queries_found += 1;
                    report.per_rank_found[rank] += 1;
                } else {
                    // Routed to a rank but not found there: forbidden for a
                    // static forest with the half-open point callback.
                    missed += 1;
                }
            }
        }
    }
    transport.check_drained()?;
    if missed > 0 {
        return Err(Error::Transport(format!(
            "{missed} routed queries missed their local search"
        )));
    }
    debug_assert_eq!(
        report.queries_sent,
        report.queries_found + report.queries_unmatched
    );
    report.batches_posted = transport.posted() - batches_before;
    report.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Two one-way exchanges with swapped roles. The directions are independent;
/// each carries its own callbacks and field set.
#[allow(clippy::too_many_arguments)]
pub fn exchange_two_way(
    forest_a: &Forest,
    queries_into_a: &mut [Vec<Query>],
    cb_a: &dyn IntersectCallback,
    interp_a: &dyn InterpolateCallback,
    forest_b: &Forest,
    queries_into_b: &mut [Vec<Query>],
    cb_b: &dyn IntersectCallback,
    interp_b: &dyn InterpolateCallback,
    transport: &mut Transport,
) -> Result<(ExchangeReport, ExchangeReport)> {
    let a_to_b = exchange_one_way(forest_a, queries_into_a, cb_a, interp_a, transport)?;
    let b_to_a = exchange_one_way(forest_b, queries_into_b, cb_b, interp_b, transport)?;
    Ok((a_to_b, b_to_a))
}

/// Pack consumer bookkeeping into a query payload: local patch index and cell
/// index, little endian.
pub fn encode_payload(patch_idx: u32, cell_idx: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(8);
    out.extend_from_slice(&patch_idx.to_le_bytes());
    out.extend_from_slice(&cell_idx.to_le_bytes());
    out
}

pub fn decode_payload(payload: &[u8]) -> Result<(u32, u32)> {
    if payload.len() != 8 {
        return Err(Error::Transport(format!(
            "payload length {} != 8",
            payload.len()
        )));
    }
    let patch = u32::from_le_bytes(payload[0..4].try_into().unwrap());
    let cell = u32::from_le_bytes(payload[4..8].try_into().unwrap());
    Ok((patch, cell))
}

/// Statistics from consumer query creation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueryCreation {
    pub created: usize,
    /// Cell centers whose dipole inversion failed; dropped, not fatal.
    pub inversion_failures: usize,
}

/// Iterate over the consumer's memory-local patches, query the center of
/// every cell, and convert dipole cell centers straight into producer
/// physical coordinates.
///
/// The consumer forest's trees map reference coordinates to dipole (q, p)
/// boxes in 2D or (q, p, lambda) in 3D; a 2D consumer uses the ENU origin's
/// longitude. `project` maps the resulting ENU point into the producer frame
/// (identity for a 3D producer, an axis projection for 2D ones). Query ids
/// encode (global patch index, cell index) and are independent of the rank
/// count.
pub fn make_consumer_queries(
    consumer: &Forest,
    origin: &EnuOrigin,
    project: &dyn Fn(&EnuPoint) -> [f64; 3],
) -> (Vec<Vec<Query>>, QueryCreation) {
    let mut per_rank = vec![Vec::new(); consumer.rank_count];
    let mut stats = QueryCreation::default();
    for rank in 0..consumer.rank_count {
        let range = consumer.rank_range(rank);
        for (offset, patch) in consumer.leaves[range.clone()].iter().enumerate() {
            let global_idx = range.start + offset;
            let tree = &consumer.trees[patch.tree_id];
            for (cell_idx, center) in cell_centers(patch, tree, consumer.dim).iter().enumerate() {
                let d = DipolePoint {
                    q: center[0],
                    p: center[1],
                    lambda: if consumer.dim == 3 {
                        center[2]
                    } else {
                        origin.lon0
                    },
                };
                let enu = match dipole_to_enu(&d, origin) {
                    Ok(p) => p,
                    Err(_) => {
                        stats.inversion_failures += 1;
                        continue;
                    }
                };
                let id = (global_idx as u64) << 32 | cell_idx as u64;
                per_rank[rank].push(Query::new(
                    id,
                    rank,
                    project(&enu),
                    encode_payload(global_idx as u32, cell_idx as u32),
                ));
                stats.created += 1;
            }
        }
    }
    (per_rank, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{interpolate_multilinear, locate_in_patch};
    use crate::search::point_intersect;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point_cb(dim: usize) -> impl Fn(&[f64; 3], &Tree, &RefBox, bool) -> bool {
        move |c: &[f64; 3], tree: &Tree, b: &RefBox, _| point_intersect(dim, c, tree, b)
    }

    fn field_interp(
        dim: usize,
        names: Vec<String>,
    ) -> impl Fn(&[f64; 3], &Patch, &Tree) -> Result<Vec<f64>> {
        move |coords: &[f64; 3], patch: &Patch, tree: &Tree| {
            let reference = crate::coords::physical_to_reference(coords, tree, dim);
            let local = locate_in_patch(&reference, patch, dim)?;
            interpolate_multilinear(patch, &local, &names, dim)
        }
    }

    fn sampled_forest(level: u8, ranks: usize, f: impl Fn(f64, f64) -> f64) -> Forest {
        let tree = Tree::new(0, 2, &[0.0; 3], &[1.0; 3]).unwrap();
        let mut forest = Forest::build_uniform(2, vec![tree], level, &[4, 4], ranks).unwrap();
        for i in 0..forest.leaves.len() {
            let patch = &forest.leaves[i];
            let tree = &forest.trees[patch.tree_id];
            let values: Vec<f64> = cell_centers(patch, tree, 2)
                .iter()
                .map(|c| f(c[0], c[1]))
                .collect();
            forest.leaves[i].fields.insert("v".to_string(), values);
        }
        forest
    }

    #[test]
    fn single_rank_single_query() {
        let forest = sampled_forest(0, 1, |_, _| 2.5);
        let mut queries = vec![vec![Query::new(1, 0, [0.3, 0.4, 0.0], vec![])]];
        let mut t = Transport::new(1);
        let report = exchange_one_way(
            &forest,
            &mut queries,
            &point_cb(2),
            &field_interp(2, vec!["v".to_string()]),
            &mut t,
        )
        .unwrap();
        assert_eq!(report.queries_found, 1);
        assert!(queries[0][0].found);
        assert_eq!(queries[0][0].result, Some(vec![2.5]));
    }

    #[test]
    fn query_outside_domain_unmatched() {
        let forest = sampled_forest(1, 1, |x, y| x + y);
        let mut queries = vec![vec![Query::new(1, 0, [2.0, 2.0, 0.0], vec![])]];
        let mut t = Transport::new(1);
        let report = exchange_one_way(
            &forest,
            &mut queries,
            &point_cb(2),
            &field_interp(2, vec!["v".to_string()]),
            &mut t,
        )
        .unwrap();
        assert_eq!(report.queries_unmatched, 1);
        assert!(!queries[0][0].found);
        assert!(queries[0][0].result.is_none());
    }

    /// Serial reference: brute-force locate plus the same interpolation.
    fn serial_reference(forest: &Forest, coords: &[f64; 3]) -> Option<Vec<f64>> {
        for leaf in &forest.leaves {
            let tree = &forest.trees[leaf.tree_id];
            let reference = crate::coords::physical_to_reference(coords, tree, 2);
            if leaf.key.to_box(2).contains(2, &reference) {
                let local = locate_in_patch(&reference, leaf, 2).unwrap();
                return Some(interpolate_multilinear(leaf, &local, &["v".to_string()], 2).unwrap());
            }
        }
        None
    }

    #[test]
    fn results_match_serial_reference_across_ranks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<[f64; 3]> = (0..10_000)
            .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 0.0])
            .collect();
        let mut baseline: Option<Vec<Option<Vec<f64>>>> = None;
        for ranks in [1usize, 16] {
            let forest = sampled_forest(3, ranks, |x, y| (7.0 * x).sin() + y * y);
            let mut queries: Vec<Vec<Query>> = vec![Vec::new(); ranks];
            for (i, p) in points.iter().enumerate() {
                queries[i % ranks].push(Query::new(i as u64, i % ranks, *p, vec![]));
            }
            let mut t = Transport::new(ranks);
            exchange_one_way(
                &forest,
                &mut queries,
                &point_cb(2),
                &field_interp(2, vec!["v".to_string()]),
                &mut t,
            )
            .unwrap();
            let mut by_id: Vec<Option<Vec<f64>>> = vec![None; points.len()];
            for qs in &queries {
                for q in qs {
                    by_id[q.id as usize] = q.result.clone();
                }
            }
            for (i, p) in points.iter().enumerate() {
                assert_eq!(by_id[i], serial_reference(&forest, p), "query {i}");
            }
            match &baseline {
                None => baseline = Some(by_id),
                Some(b) => assert_eq!(&by_id, b),
            }
        }
    }

    #[test]
    fn transport_order_independence() {
        let forest = sampled_forest(3, 4, |x, y| x * y + 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let points: Vec<[f64; 3]> = (0..500)
            .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 0.0])
            .collect();
        let run = |shuffle: Option<u64>| {
            let mut queries: Vec<Vec<Query>> = vec![Vec::new(); 4];
            for (i, p) in points.iter().enumerate() {
                queries[i % 4].push(Query::new(i as u64, i % 4, *p, vec![]));
            }
            let mut t = match shuffle {
                Some(seed) => Transport::with_shuffle(4, seed),
                None => Transport::new(4),
            };
            exchange_one_way(
                &forest,
                &mut queries,
                &point_cb(2),
                &field_interp(2, vec!["v".to_string()]),
                &mut t,
            )
            .unwrap();
            let mut by_id: Vec<Option<Vec<f64>>> = vec![None; points.len()];
            for qs in &queries {
                for q in qs {
                    by_id[q.id as usize] = q.result.clone();
                }
            }
            by_id
        };
        let plain = run(None);
        for seed in [1u64, 2, 3] {
            assert_eq!(run(Some(seed)), plain);
        }
    }

    #[test]
    fn batch_count_bounded() {
        let forest = sampled_forest(3, 8, |x, _| x);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut queries: Vec<Vec<Query>> = vec![Vec::new(); 8];
        for i in 0..2000 {
            let p = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 0.0];
            queries[i % 8].push(Query::new(i as u64, i % 8, p, vec![]));
        }
        let mut t = Transport::new(8);
        let report = exchange_one_way(
            &forest,
            &mut queries,
            &point_cb(2),
            &field_interp(2, vec!["v".to_string()]),
            &mut t,
        )
        .unwrap();
        assert!(report.batches_posted <= 2 * 8 * 8);
        assert_eq!(report.queries_sent, 2000);
        assert_eq!(report.queries_found, 2000);
    }

    #[test]
    fn payload_roundtrip() {
        let (p, c) = decode_payload(&encode_payload(1234, 98)).unwrap();
        assert_eq!((p, c), (1234, 98));
        assert!(decode_payload(&[1, 2, 3]).is_err());
    }
}
