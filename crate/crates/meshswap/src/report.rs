//! CSV emission for run reports, per-exchange accounting and scaling sweeps,
//! plus the least-squares fit used by the sweep.

use crate::exchange::ExchangeReport;
use crate::harness::SyncRecord;
use std::fmt::Write as _;

pub const RUN_REPORT_HEADER: &str = "sync_index,t_sync,steps_p,steps_c,producer_patches,consumer_patches,queries,found,exchange_wall_s,step_wall_p_s,step_wall_c_s";
pub const EXCHANGE_REPORT_HEADER: &str = "round,queries_sent,found,unmatched,batches,wall_seconds";
pub const SWEEP_HEADER: &str = "consumer_patches,queries_sent,avg_exchange_wall_s";

pub fn run_report_csv(records: &[SyncRecord]) -> String {
    let mut out = String::from(RUN_REPORT_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6}",
            r.sync_index,
            r.t_sync,
            r.steps_producer,
            r.steps_consumer,
            r.producer_patches,
            r.consumer_patches,
            r.queries,
            r.found,
            r.exchange_wall_s,
            r.step_wall_producer_s,
            r.step_wall_consumer_s,
        )
        .expect("string write");
    }
    out
}

/// One CSV row per exchange, in round order.
pub fn exchange_report_csv(reports: &[ExchangeReport]) -> String {
    let mut out = String::from(EXCHANGE_REPORT_HEADER);
    out.push('\n');
    for (round, r) in reports.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{:.6}",
            round,
            r.queries_sent,
            r.queries_found,
            r.queries_unmatched,
            r.batches_posted,
            r.wall_time_seconds,
        )
        .expect("string write");
    }
    out
}

/// One sweep measurement point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub consumer_patches: usize,
    pub queries_sent: usize,
    pub avg_exchange_wall_s: f64,
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for p in points {
        writeln!(
            out,
            "{},{},{:.6}",
            p.consumer_patches, p.queries_sent, p.avg_exchange_wall_s
        )
        .expect("string write");
    }
    out
}

/// Ordinary least-squares line fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "fit needs at least two points");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}
