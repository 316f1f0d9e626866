//! Acceptance suite: one test per release criterion, each printing a single
//! pass/fail line (visible with `cargo test -- --nocapture`).

#![allow(clippy::needless_range_loop)]

use meshswap::config::{Mode, RunConfig};
use meshswap::exchange::{exchange_one_way, exchange_two_way, Query};
use meshswap::forest::{Forest, Tree};
use meshswap::harness::{
    multilinear_interp_cb, point_cb, run_coupled, sweep_exchange, ProducerState,
};
use meshswap::interp::cell_centers;
use meshswap::report::{exchange_report_csv, linear_fit, run_report_csv};
use meshswap::transport::Transport;
use meshswap::verify;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(name: &str, passed: bool, detail: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    println!("[{status}] {name}: {detail}");
    assert!(passed, "{name}: {detail}");
}

#[test]
fn search_oracle_equivalence() {
    let start = std::time::Instant::now();
    let c = verify::check_search_oracle(2024, 200, 10_000);
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "search oracle equivalence",
        c.passed && elapsed < 120.0,
        &format!("{} in {elapsed:.1}s (< 120s)", c.detail),
    );
}

#[test]
fn serial_equivalence_of_exchange() {
    let c = verify::check_serial_equivalence(2025);
    report("serial equivalence of exchange", c.passed, &c.detail);
}

#[test]
fn interpolation_exactness() {
    let c = verify::check_interpolation(2026);
    report("interpolation exactness", c.passed, &c.detail);
}

#[test]
fn coordinate_round_trips() {
    let c = verify::check_coordinate_roundtrips(2027);
    report("coordinate round trips", c.passed, &c.detail);
}

#[test]
fn scaling_trend() {
    let start = std::time::Instant::now();
    let mut config = RunConfig::default_for_mode(Mode::TwoD);
    // Start from 64 patches so per-point wall times are well above timer
    // noise; multipliers span the required 8x.
    config.consumer_level = 3;
    config.consumer_max_level = 6;
    let points = sweep_exchange(&config, &[1, 2, 4, 8]).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let span = points.last().unwrap().consumer_patches as f64
        / points.first().unwrap().consumer_patches as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.consumer_patches as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.avg_exchange_wall_s).collect();
    let fit = linear_fit(&xs, &ys);
    report(
        "scaling trend",
        span >= 8.0 && fit.r_squared >= 0.9 && elapsed < 300.0,
        &format!(
            "patch span {span:.0}x, wall-time fit r^2 {:.4} (>= 0.9), {elapsed:.1}s (< 300s)",
            fit.r_squared
        ),
    );
}

#[test]
fn sync_cadence() {
    let mut config = RunConfig::default_for_mode(Mode::TwoD);
    config.t_sync = 20.0;
    config.dt_producer = config.t_sync / 19.0;
    config.dt_consumer = config.t_sync / 27.0;
    config.t_end = 100.0;
    let run = run_coupled(&config).unwrap();
    let ok = run.records.len() == 5
        && run
            .records
            .iter()
            .all(|r| r.steps_producer == 19 && r.steps_consumer == 27);
    report(
        "sync cadence",
        ok,
        &format!(
            "{} syncs, producer/consumer steps {:?}",
            run.records.len(),
            run.records
                .iter()
                .map(|r| (r.steps_producer, r.steps_consumer))
                .collect::<Vec<_>>()
        ),
    );
}

/// A 2D forest with a smooth sampled field, partitioned over `ranks`.
fn self_coupling_forest(ranks: usize) -> Forest {
    let tree = Tree::new(0, 2, &[0.0; 3], &[1.0; 3]).unwrap();
    let mut forest = Forest::build_uniform(2, vec![tree], 3, &[4, 4], ranks).unwrap();
    for i in 0..forest.leaves.len() {
        let t = forest.trees[forest.leaves[i].tree_id].clone();
        let values: Vec<f64> = cell_centers(&forest.leaves[i], &t, 2)
            .iter()
            .map(|c| (6.0 * c[0]).sin() + (4.0 * c[1]).cos() * c[0])
            .collect();
        forest.leaves[i].fields.insert("v".to_string(), values);
    }
    forest
}

/// One query per cell center of `forest`, id = (global leaf, cell).
fn cell_center_queries(forest: &Forest) -> Vec<Vec<Query>> {
    let mut per_rank = vec![Vec::new(); forest.rank_count];
    for rank in 0..forest.rank_count {
        let range = forest.rank_range(rank);
        for (offset, patch) in forest.leaves[range.clone()].iter().enumerate() {
            let global = range.start + offset;
            let tree = &forest.trees[patch.tree_id];
            for (cell, center) in cell_centers(patch, tree, 2).iter().enumerate() {
                let id = (global as u64) << 32 | cell as u64;
                per_rank[rank].push(Query::new(id, rank, *center, Vec::new()));
            }
        }
    }
    per_rank
}

fn extract(queries: &[Vec<Query>]) -> Vec<(u64, Option<Vec<f64>>)> {
    let mut out: Vec<(u64, Option<Vec<f64>>)> = queries
        .iter()
        .flatten()
        .map(|q| (q.id, q.result.clone()))
        .collect();
    out.sort_by_key(|(id, _)| *id);
    out
}

#[test]
fn two_way_self_coupling() {
    let ranks = 4;
    let a = self_coupling_forest(ranks);
    let b = a.clone();
    let names = vec!["v".to_string()];

    let run = |first: &Forest, second: &Forest| {
        let mut into_first = cell_center_queries(second);
        let mut into_second = cell_center_queries(first);
        let mut transport = Transport::new(ranks);
        exchange_two_way(
            first,
            &mut into_first,
            &point_cb(2),
            &multilinear_interp_cb(2, names.clone()),
            second,
            &mut into_second,
            &point_cb(2),
            &multilinear_interp_cb(2, names.clone()),
            &mut transport,
        )
        .unwrap();
        (extract(&into_first), extract(&into_second))
    };

    let (ab_first, ab_second) = run(&a, &b);
    // Every cell must get its own value back; the query points are exact cell
    // centers of an identical mesh, so the interpolation error bound is zero.
    let mut worst = 0.0f64;
    for (queries, forest) in [(&ab_first, &a), (&ab_second, &b)] {
        for (id, result) in queries {
            let leaf = (id >> 32) as usize;
            let cell = (id & 0xffff_ffff) as usize;
            let expected = forest.leaves[leaf].fields["v"][cell];
            let got = result.as_ref().expect("cell center must be found")[0];
            worst = worst.max((got - expected).abs());
        }
    }
    // Order swap: running the directions the other way round must not change
    // any result.
    let (ba_first, ba_second) = run(&b, &a);
    let order_ok = ab_first == ba_second && ab_second == ba_first;
    report(
        "two-way self-coupling",
        worst == 0.0 && order_ok,
        &format!("own-value error {worst:.3e} (exact), direction order irrelevant: {order_ok}"),
    );
}

#[test]
fn convergence_order() {
    // Static snapshot: uniform producers at increasing level, consumer query
    // points fixed, error measured against the analytic pulse.
    let mut config = RunConfig::default_for_mode(Mode::TwoD);
    config.ranks = 4;
    let levels = [3u8, 4, 5];
    let extent = 400.0;
    let cells = 8.0;

    // Query points away from every tested level's patch-boundary band, where
    // the clamped interpolation stencil is only first order.
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut points = Vec::new();
    while points.len() < 300 {
        let p = [rng.gen_range(20.0..380.0), rng.gen_range(20.0..380.0), 0.0];
        let clear = levels.iter().all(|&level| {
            let patch = extent / f64::from(1u32 << level);
            let cell = patch / cells;
            p.iter().take(2).all(|&x| {
                let d = (x / patch).fract().min(1.0 - (x / patch).fract()) * patch;
                d >= cell
            })
        });
        if clear {
            points.push(p);
        }
    }

    let mut errors = Vec::new();
    for &level in &levels {
        config.producer_level = level;
        config.producer_max_level = level;
        let mut producer = ProducerState::new(&config).unwrap();
        producer.t = 150.0 / config.pulse_speed; // shell mid-domain
        producer.resample();
        let mut queries: Vec<Vec<Query>> = vec![Vec::new(); config.ranks];
        for (i, p) in points.iter().enumerate() {
            queries[i % config.ranks].push(Query::new(i as u64, i % config.ranks, *p, Vec::new()));
        }
        let mut transport = Transport::new(config.ranks);
        exchange_one_way(
            &producer.forest,
            &mut queries,
            &point_cb(2),
            &multilinear_interp_cb(2, vec!["rho_pert".to_string()]),
            &mut transport,
        )
        .unwrap();
        let mut err = 0.0f64;
        for qs in &queries {
            for q in qs {
                let got = q.result.as_ref().expect("in-domain point")[0];
                let want = producer.pulse.envelope(&q.coords, producer.t, 2);
                err = err.max((got - want).abs());
            }
        }
        errors.push(err);
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let ok = ratios.iter().all(|r| (3.0..=5.0).contains(r));
    report(
        "convergence order",
        ok,
        &format!(
            "errors {:?}, per-level ratios {ratios:.2?} (each in [3, 5])",
            errors
                .iter()
                .map(|e| format!("{e:.3e}"))
                .collect::<Vec<_>>()
        ),
    );
}

#[test]
fn end_to_end_determinism() {
    // Byte-identical reports from two identical seeded runs. Wall-clock
    // columns are measurements, not simulation outputs; they are masked
    // before comparison.
    let mut config = RunConfig::default_for_mode(Mode::TwoD);
    config.t_end = 30.0;
    let render = || {
        let run = run_coupled(&config).unwrap();
        let csvs = [
            run_report_csv(&run.records),
            exchange_report_csv(&run.forward_reports),
            exchange_report_csv(&run.reverse_reports),
        ];
        csvs.map(|csv| mask_wall_columns(&csv))
    };
    let first = render();
    let second = render();
    let ok = first == second;
    report(
        "end-to-end determinism",
        ok,
        &format!(
            "two seeded runs, {} report bytes identical (wall-clock columns masked)",
            first.iter().map(String::len).sum::<usize>()
        ),
    );
}

/// Blank every CSV column whose header ends in `_s` or is `wall_seconds`.
fn mask_wall_columns(csv: &str) -> String {
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    let timed: Vec<bool> = header
        .split(',')
        .map(|h| h.ends_with("_s") || h == "wall_seconds")
        .collect();
    let mut out = String::from(header);
    out.push('\n');
    for line in lines {
        let row: Vec<&str> = line
            .split(',')
            .zip(&timed)
            .map(|(v, &t)| if t { "-" } else { v })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
