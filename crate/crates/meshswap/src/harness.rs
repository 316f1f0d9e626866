//! Desk-scale stand-ins for the two coupled solvers plus the time-threshold
//! synchronization loop.
//!
//! The producer evolves an analytic Gaussian-shell pulse over an ENU
//! tangent-plane domain and refines around the shell; the consumer lives on a
//! dipole-coordinate box overlapping the producer's upper region, receives
//! interpolated perturbations, and sends back analytic rate fields.

use crate::config::{Mode, RunConfig};
use crate::coords::{enu_to_dipole, EnuOrigin, EnuPoint};
use crate::error::{Error, Result};
use crate::exchange::{
    encode_payload, exchange_one_way, make_consumer_queries, ExchangeReport, Query, QueryCreation,
};
use crate::forest::{Forest, Patch, Tree};
use crate::interp::{cell_centers, interpolate_multilinear, locate_in_patch};
use crate::morton::{MortonKey, RefBox};
use crate::search::point_intersect;
use crate::transport::Transport;
use std::collections::BTreeMap;
use std::time::Instant;

/// Fields the producer supplies to the consumer.
pub const PRODUCER_FIELDS: [&str; 5] = ["rho_pert", "mom_e", "mom_n", "mom_u", "energy_pert"];
/// Rate fields the consumer supplies back to the producer.
pub const CONSUMER_FIELDS: [&str; 4] = ["energy_rate", "mom_rate_e", "mom_rate_n", "mom_rate_u"];
/// Producer-side names for the received rates.
pub const PRODUCER_RECV_FIELDS: [&str; 4] = [
    "energy_rate_recv",
    "mom_rate_e_recv",
    "mom_rate_n_recv",
    "mom_rate_u_recv",
];

/// Axisymmetric expanding Gaussian shell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PulseParams {
    /// Shell center in producer physical coordinates (km).
    pub origin: [f64; 3],
    /// Propagation speed c (km/s).
    pub speed: f64,
    /// Shell width sigma (km).
    pub sigma: f64,
    pub amplitude: f64,
}

impl PulseParams {
    /// Envelope amplitude * exp(-(|x - origin| - c t)^2 / (2 sigma^2)).
    pub fn envelope(&self, x: &[f64], t: f64, dim: usize) -> f64 {
        let d = self.distance(x, dim);
        let s = d - self.speed * t;
        self.amplitude * (-s * s / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// Magnitude of the envelope's spatial gradient (analytic).
    pub fn gradient_magnitude(&self, x: &[f64], t: f64, dim: usize) -> f64 {
        let d = self.distance(x, dim);
        let s = d - self.speed * t;
        self.amplitude * s.abs() / (self.sigma * self.sigma)
            * (-s * s / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// Field values at a point: density and energy perturbations carry the
    /// envelope, momentum components point radially scaled by it.
    pub fn field_values(&self, x: &[f64], t: f64, dim: usize) -> [f64; 5] {
        let env = self.envelope(x, t, dim);
        let d = self.distance(x, dim);
        let mut mom = [0.0; 3];
        if d > 0.0 {
            for i in 0..dim {
                mom[i] = env * (x[i] - self.origin[i]) / d;
            }
        }
        [env, mom[0], mom[1], mom[2], env]
    }

    fn distance(&self, x: &[f64], dim: usize) -> f64 {
        (0..dim)
            .map(|i| (x[i] - self.origin[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Producer solver stand-in over the ENU tangent-plane domain.
pub struct ProducerState {
    pub forest: Forest,
    pub t: f64,
    pub dt: f64,
    pub pulse: PulseParams,
    pub max_level: u8,
    pub refine_tol: f64,
}

impl ProducerState {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let dim = config.mode.producer_dim();
        let tree = Tree::new(0, dim, &config.producer_origin, &config.producer_extent)?;
        let forest = Forest::build_uniform(
            dim,
            vec![tree],
            config.producer_level,
            &config.producer_cells,
            config.ranks,
        )?;
        let mut state = ProducerState {
            forest,
            t: 0.0,
            dt: config.dt_producer,
            pulse: PulseParams {
                origin: config.pulse_origin,
                speed: config.pulse_speed,
                sigma: config.pulse_sigma,
                amplitude: config.pulse_amplitude,
            },
            max_level: config.producer_max_level,
            refine_tol: config.producer_refine_tol,
        };
        state.resample();
        Ok(state)
    }

    /// Refill the analytic pulse fields at every cell center for time `self.t`.
    pub fn resample(&mut self) {
        let dim = self.forest.dim;
        let t = self.t;
        let pulse = self.pulse;
        for i in 0..self.forest.leaves.len() {
            let tree = self.forest.trees[self.forest.leaves[i].tree_id].clone();
            let centers = cell_centers(&self.forest.leaves[i], &tree, dim);
            let mut values: Vec<Vec<f64>> =
                std::iter::repeat_with(|| Vec::with_capacity(centers.len()))
                    .take(5)
                    .collect();
            for c in &centers {
                let v = pulse.field_values(c, t, dim);
                for (k, arr) in values.iter_mut().enumerate() {
                    arr.push(v[k]);
                }
            }
            let fields = &mut self.forest.leaves[i].fields;
            for (k, name) in PRODUCER_FIELDS.iter().enumerate() {
                fields.insert((*name).to_string(), std::mem::take(&mut values[k]));
            }
            for name in PRODUCER_RECV_FIELDS {
                fields
                    .entry(name.to_string())
                    .or_insert_with(|| vec![0.0; centers.len()]);
            }
        }
    }

    /// Advance `n >= 1` steps of size dt and resample the analytic fields.
    pub fn step(&mut self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::Config {
                field: "step count".into(),
                message: "must be at least 1".into(),
            });
        }
        self.t += n as f64 * self.dt;
        self.resample();
        Ok(())
    }

    /// Refine leaves whose maximum cell-center envelope gradient exceeds the
    /// tolerance, resample, and repartition weighted by cell count.
    pub fn adapt(&mut self) -> Result<()> {
        let dim = self.forest.dim;
        let t = self.t;
        let pulse = self.pulse;
        let max_level = self.max_level;
        let trees = self.forest.trees.clone();
        let (refined, _) = self.forest.refine(
            |patch| {
                patch.key.level() < max_level && {
                    let tree = &trees[patch.tree_id];
                    cell_centers(patch, tree, dim)
                        .iter()
                        .any(|c| pulse.gradient_magnitude(c, t, dim) > self.refine_tol)
                }
            },
            |_, _, _| BTreeMap::new(),
        );
        self.forest = refined.partition_weighted(|p| p.cell_count() as f64)?;
        self.resample();
        Ok(())
    }
}

/// Consumer solver stand-in over a dipole-coordinate box.
pub struct ConsumerState {
    pub forest: Forest,
    pub t: f64,
    pub dt: f64,
    pub max_level: u8,
    pub refine_threshold: f64,
}

impl ConsumerState {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let dim = config.mode.consumer_dim();
        let origin = [
            config.consumer_q_range[0],
            config.consumer_p_range[0],
            config.consumer_lambda_range[0],
        ];
        let extent = [
            config.consumer_q_range[1] - config.consumer_q_range[0],
            config.consumer_p_range[1] - config.consumer_p_range[0],
            config.consumer_lambda_range[1] - config.consumer_lambda_range[0],
        ];
        let tree = Tree::new(0, dim, &origin, &extent)?;
        let forest = Forest::build_uniform(
            dim,
            vec![tree],
            config.consumer_level,
            &config.consumer_cells,
            config.ranks,
        )?;
        let mut state = ConsumerState {
            forest,
            t: 0.0,
            dt: config.dt_consumer,
            max_level: config.consumer_max_level,
            refine_threshold: config.consumer_refine_threshold,
        };
        state.init_fields();
        Ok(state)
    }

    /// Zero the receive slots and sample the analytic rate fields the
    /// consumer sends back. Rates are a smooth function of dipole position.
    fn init_fields(&mut self) {
        let dim = self.forest.dim;
        for i in 0..self.forest.leaves.len() {
            let tree = self.forest.trees[self.forest.leaves[i].tree_id].clone();
            let centers = cell_centers(&self.forest.leaves[i], &tree, dim);
            let patch = &mut self.forest.leaves[i];
            for name in PRODUCER_FIELDS {
                patch
                    .fields
                    .entry(name.to_string())
                    .or_insert_with(|| vec![0.0; centers.len()]);
            }
            for (k, name) in CONSUMER_FIELDS.iter().enumerate() {
                let values = centers.iter().map(|c| rate_field(c, k)).collect();
                patch.fields.insert((*name).to_string(), values);
            }
        }
    }

    pub fn step(&mut self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::Config {
                field: "step count".into(),
                message: "must be at least 1".into(),
            });
        }
        self.t += n as f64 * self.dt;
        Ok(())
    }

    /// Refine where the received density perturbation is significant; child
    /// fields interpolate the parent patch so received data survives
    /// refinement.
    pub fn adapt(&mut self) -> Result<()> {
        let dim = self.forest.dim;
        let max_level = self.max_level;
        let threshold = self.refine_threshold;
        let (refined, _) = self.forest.refine(
            |patch| {
                patch.key.level() < max_level
                    && patch
                        .field("rho_pert")
                        .map(|v| v.iter().any(|x| x.abs() > threshold))
                        .unwrap_or(false)
            },
            |_, parent, child| subdivide_fields(parent, child, dim),
        );
        // Re-sample the analytic rate fields at the new cell centers; the
        // interpolated values are only placeholders for them.
        self.forest = refined;
        for i in 0..self.forest.leaves.len() {
            let tree = self.forest.trees[self.forest.leaves[i].tree_id].clone();
            let centers = cell_centers(&self.forest.leaves[i], &tree, dim);
            let patch = &mut self.forest.leaves[i];
            for (k, name) in CONSUMER_FIELDS.iter().enumerate() {
                let values = centers.iter().map(|c| rate_field(c, k)).collect();
                patch.fields.insert((*name).to_string(), values);
            }
        }
        Ok(())
    }
}

/// Analytic consumer rate fields in dipole coordinates.
fn rate_field(c: &[f64], component: usize) -> f64 {
    let base = (4.0 * c[0]).sin() + (3.0 * c[1]).cos();
    match component {
        0 => 10.0 * base,
        k => base * k as f64,
    }
}

/// Interpolate every field of `parent` at the cell centers of `child`.
pub fn subdivide_fields(
    parent: &Patch,
    child: &MortonKey,
    dim: usize,
) -> BTreeMap<String, Vec<f64>> {
    let names: Vec<String> = parent.fields.keys().cloned().collect();
    let child_patch = Patch {
        tree_id: parent.tree_id,
        key: *child,
        cells: parent.cells,
        fields: BTreeMap::new(),
    };
    // Cell centers in reference coordinates of the tree: use a unit tree so
    // reference == physical here.
    let unit = Tree {
        tree_id: parent.tree_id,
        origin: [0.0; 3],
        extent: [1.0; 3],
    };
    let centers = cell_centers(&child_patch, &unit, dim);
    let mut out: BTreeMap<String, Vec<f64>> =
        names.iter().map(|n| (n.clone(), Vec::new())).collect();
    for c in &centers {
        let local = locate_in_patch(c, parent, dim).expect("child centers lie inside parent");
        let values = interpolate_multilinear(parent, &local, &names, dim)
            .expect("parent carries all fields");
        for (name, v) in names.iter().zip(values) {
            out.get_mut(name).unwrap().push(v);
        }
    }
    out
}

/// Scatter found query results into the named fields of the target forest.
/// Unmatched queries leave the previous cell values untouched.
pub fn scatter_results(
    forest: &mut Forest,
    queries: &[Vec<Query>],
    field_names: &[&str],
) -> Result<()> {
    for qs in queries {
        for q in qs {
            let Some(values) = &q.result else { continue };
            let (patch_idx, cell_idx) = crate::exchange::decode_payload(&q.payload)?;
            let patch = forest.leaves.get_mut(patch_idx as usize).ok_or_else(|| {
                Error::Transport(format!("payload patch {patch_idx} out of range"))
            })?;
            for (name, value) in field_names.iter().zip(values) {
                let field = patch
                    .fields
                    .get_mut(*name)
                    .ok_or_else(|| Error::MissingField((*name).to_string()))?;
                *field.get_mut(cell_idx as usize).ok_or_else(|| {
                    Error::Transport(format!("payload cell {cell_idx} out of range"))
                })? = *value;
            }
        }
    }
    Ok(())
}

/// Producer-frame projection of an ENU point for the configured mode.
pub fn project_enu(mode: Mode, p: &EnuPoint) -> [f64; 3] {
    match mode {
        // Axisymmetric 2D producer: horizontal radius and altitude.
        Mode::TwoD => [p.e.hypot(p.n), p.u, 0.0],
        Mode::ThreeD => [p.e, p.n, p.u],
        // 2D producer extruded along north: drop the n axis.
        Mode::ThreeDExtruded => [p.e, p.u, 0.0],
    }
}

/// Inverse embedding for producer cell centers: producer physical coordinates
/// back into the ENU frame.
pub fn embed_producer_point(mode: Mode, x: &[f64]) -> EnuPoint {
    match mode {
        Mode::TwoD => EnuPoint {
            e: 0.0,
            n: x[0],
            u: x[1],
        },
        Mode::ThreeD => EnuPoint {
            e: x[0],
            n: x[1],
            u: x[2],
        },
        Mode::ThreeDExtruded => EnuPoint {
            e: x[0],
            n: 0.0,
            u: x[1],
        },
    }
}

/// Multilinear interpolation callback over the named fields.
pub fn multilinear_interp_cb(
    dim: usize,
    names: Vec<String>,
) -> impl Fn(&[f64; 3], &Patch, &Tree) -> Result<Vec<f64>> {
    move |coords: &[f64; 3], patch: &Patch, tree: &Tree| {
        let reference = crate::coords::physical_to_reference(coords, tree, dim);
        let local = locate_in_patch(&reference, patch, dim)?;
        interpolate_multilinear(patch, &local, &names, dim)
    }
}

/// The default point intersection callback for a forest of dimension `dim`.
pub fn point_cb(dim: usize) -> impl Fn(&[f64; 3], &Tree, &RefBox, bool) -> bool {
    move |coords: &[f64; 3], tree: &Tree, b: &RefBox, _| point_intersect(dim, coords, tree, b)
}

/// Create reverse-direction queries: one per producer cell center, converted
/// into the consumer's dipole frame.
pub fn make_producer_queries(
    producer: &Forest,
    mode: Mode,
    origin: &EnuOrigin,
) -> (Vec<Vec<Query>>, QueryCreation) {
    let mut per_rank = vec![Vec::new(); producer.rank_count];
    let mut stats = QueryCreation::default();
    let consumer_dim = mode.consumer_dim();
    for rank in 0..producer.rank_count {
        let range = producer.rank_range(rank);
        for (offset, patch) in producer.leaves[range.clone()].iter().enumerate() {
            let global_idx = range.start + offset;
            let tree = &producer.trees[patch.tree_id];
            for (cell_idx, center) in cell_centers(patch, tree, producer.dim).iter().enumerate() {
                let enu = embed_producer_point(mode, center);
                let d = match enu_to_dipole(&enu, origin) {
                    Ok(d) => d,
                    Err(_) => {
                        stats.inversion_failures += 1;
                        continue;
                    }
                };
                let coords = if consumer_dim == 3 {
                    [d.q, d.p, d.lambda]
                } else {
                    [d.q, d.p, 0.0]
                };
                let id = (global_idx as u64) << 32 | cell_idx as u64;
                per_rank[rank].push(Query::new(
                    id,
                    rank,
                    coords,
                    encode_payload(global_idx as u32, cell_idx as u32),
                ));
                stats.created += 1;
            }
        }
    }
    (per_rank, stats)
}

/// One row of the coupled-run report.
#[derive(Clone, Debug, PartialEq)]
pub struct SyncRecord {
    pub sync_index: usize,
    pub t_sync: f64,
    pub steps_producer: usize,
    pub steps_consumer: usize,
    pub producer_patches: usize,
    pub consumer_patches: usize,
    pub queries: usize,
    pub found: usize,
    pub exchange_wall_s: f64,
    pub step_wall_producer_s: f64,
    pub step_wall_consumer_s: f64,
}

#[derive(Debug, Default)]
pub struct RunReport {
    pub records: Vec<SyncRecord>,
    pub forward_reports: Vec<ExchangeReport>,
    pub reverse_reports: Vec<ExchangeReport>,
}

/// Run one two-way exchange at the current solver states.
pub fn exchange_once(
    producer: &mut ProducerState,
    consumer: &mut ConsumerState,
    config: &RunConfig,
) -> Result<(ExchangeReport, ExchangeReport)> {
    let origin = config.enu_origin();
    let mode = config.mode;
    let producer_dim = producer.forest.dim;
    let consumer_dim = consumer.forest.dim;

    let project = |p: &EnuPoint| project_enu(mode, p);
    let (mut fwd_queries, _) = make_consumer_queries(&consumer.forest, &origin, &project);
    let fwd_fields: Vec<String> = PRODUCER_FIELDS.iter().map(|s| s.to_string()).collect();
    let mut transport = Transport::new(config.ranks);
    let fwd = exchange_one_way(
        &producer.forest,
        &mut fwd_queries,
        &point_cb(producer_dim),
        &multilinear_interp_cb(producer_dim, fwd_fields),
        &mut transport,
    )?;
    scatter_results(&mut consumer.forest, &fwd_queries, &PRODUCER_FIELDS)?;

    let (mut rev_queries, _) = make_producer_queries(&producer.forest, mode, &origin);
    let rev_fields: Vec<String> = CONSUMER_FIELDS.iter().map(|s| s.to_string()).collect();
    let rev = exchange_one_way(
        &consumer.forest,
        &mut rev_queries,
        &point_cb(consumer_dim),
        &multilinear_interp_cb(consumer_dim, rev_fields),
        &mut transport,
    )?;
    scatter_results(&mut producer.forest, &rev_queries, &PRODUCER_RECV_FIELDS)?;
    Ok((fwd, rev))
}

/// Static-snapshot scaling sweep: hold the producer fixed and measure one
/// forward exchange per target patch-count multiplier. The consumer is
/// scaled towards `m * base_patches` by refining its leading leaves in curve
/// order. At least 3 increasing multipliers are required for a fit.
pub fn sweep_exchange(
    config: &RunConfig,
    multipliers: &[usize],
) -> Result<Vec<crate::report::SweepPoint>> {
    config.validate()?;
    if multipliers.len() < 3 {
        return Err(Error::Config {
            field: "multipliers".into(),
            message: format!(
                "need at least 3 patch-count multipliers for a fit, got {}",
                multipliers.len()
            ),
        });
    }
    if multipliers[0] == 0 || multipliers.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config {
            field: "multipliers".into(),
            message: "must be positive and strictly increasing".into(),
        });
    }
    let mut producer = ProducerState::new(config)?;
    // Put the pulse shell inside the domain so exchanges do real work.
    producer.t = 0.25
        * (0..producer.forest.dim)
            .map(|i| config.producer_extent[i])
            .fold(f64::INFINITY, f64::min)
        / config.pulse_speed;
    producer.resample();

    let mut consumer = ConsumerState::new(config)?;
    let origin = config.enu_origin();
    let mode = config.mode;
    let producer_dim = producer.forest.dim;
    let consumer_dim = consumer.forest.dim;
    let fields: Vec<String> = PRODUCER_FIELDS.iter().map(|s| s.to_string()).collect();

    let base_patches = consumer.forest.leaves.len();
    let children_added = (1usize << consumer_dim) - 1;
    let mut points = Vec::new();
    for &m in multipliers {
        let target = m * base_patches;
        // Refine the leading leaves (curve order) until the patch count
        // reaches the target or the maximum level blocks further growth.
        while consumer.forest.leaves.len() < target {
            let deficit = target - consumer.forest.leaves.len();
            let k = deficit.div_ceil(children_added);
            let max_level = consumer.max_level;
            let picked: std::collections::HashSet<(usize, u64, u8)> = consumer
                .forest
                .leaves
                .iter()
                .filter(|l| l.key.level() < max_level)
                .take(k)
                .map(|l| (l.tree_id, l.key.code(consumer_dim), l.key.level()))
                .collect();
            if picked.is_empty() {
                log::warn!(
                    "consumer_max_level reached at {} patches, target {target} unreachable",
                    consumer.forest.leaves.len()
                );
                break;
            }
            let (refined, _) = consumer.forest.refine(
                |p| picked.contains(&(p.tree_id, p.key.code(consumer_dim), p.key.level())),
                |_, parent, child| subdivide_fields(parent, child, consumer_dim),
            );
            consumer.forest = refined.partition_weighted(|p| p.cell_count() as f64)?;
        }

        let project = |p: &EnuPoint| project_enu(mode, p);
        let (queries, _) = make_consumer_queries(&consumer.forest, &origin, &project);
        let sent: usize = queries.iter().map(Vec::len).sum();
        let repeats = 3;
        let mut wall = 0.0;
        for _ in 0..repeats {
            let mut qs = queries.clone();
            let mut transport = Transport::new(config.ranks);
            let report = exchange_one_way(
                &producer.forest,
                &mut qs,
                &point_cb(producer_dim),
                &multilinear_interp_cb(producer_dim, fields.clone()),
                &mut transport,
            )?;
            wall += report.wall_time_seconds;
        }
        points.push(crate::report::SweepPoint {
            consumer_patches: consumer.forest.leaves.len(),
            queries_sent: sent,
            avg_exchange_wall_s: wall / repeats as f64,
        });
    }
    Ok(points)
}

/// Number of fixed-size steps needed to reach `target` from `t`.
pub fn steps_to_reach(t: f64, target: f64, dt: f64) -> usize {
    let raw = (target - t) / dt;
    (raw - 1e-9).ceil().max(0.0) as usize
}

/// The synchronization loop: both solvers step until they pass the next time
/// threshold, then a single two-way exchange runs and both meshes adapt.
pub fn run_coupled(config: &RunConfig) -> Result<RunReport> {
    run_coupled_states(config).map(|(report, _, _)| report)
}

/// [`run_coupled`] returning the final solver states alongside the report.
pub fn run_coupled_states(config: &RunConfig) -> Result<(RunReport, ProducerState, ConsumerState)> {
    config.validate()?;
    let mut producer = ProducerState::new(config)?;
    let mut consumer = ConsumerState::new(config)?;
    let mut report = RunReport::default();
    let mut next_sync = config.t_sync;
    let mut sync_index = 0usize;
    while next_sync <= config.t_end + 1e-9 {
        let start_p = Instant::now();
        let steps_p = steps_to_reach(producer.t, next_sync, producer.dt);
        if steps_p > 0 {
            producer.step(steps_p)?;
        }
        let step_wall_p = start_p.elapsed().as_secs_f64();

        let start_c = Instant::now();
        let steps_c = steps_to_reach(consumer.t, next_sync, consumer.dt);
        if steps_c > 0 {
            consumer.step(steps_c)?;
        }
        let step_wall_c = start_c.elapsed().as_secs_f64();

        let exchange_start = Instant::now();
        let (fwd, rev) = exchange_once(&mut producer, &mut consumer, config)?;
        let exchange_wall = exchange_start.elapsed().as_secs_f64();

        producer.adapt()?;
        consumer.adapt()?;

        report.records.push(SyncRecord {
            sync_index,
            t_sync: next_sync,
            steps_producer: steps_p,
            steps_consumer: steps_c,
            producer_patches: producer.forest.leaves.len(),
            consumer_patches: consumer.forest.leaves.len(),
            queries: fwd.queries_sent + rev.queries_sent,
            found: fwd.queries_found + rev.queries_found,
            exchange_wall_s: exchange_wall,
            step_wall_producer_s: step_wall_p,
            step_wall_consumer_s: step_wall_c,
        });
        report.forward_reports.push(fwd);
        report.reverse_reports.push(rev);
        sync_index += 1;
        next_sync += config.t_sync;
    }
    Ok((report, producer, consumer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    #[test]
    fn pulse_at_origin_time_zero() {
        let p = PulseParams {
            origin: [0.0; 3],
            speed: 0.3,
            sigma: 10.0,
            amplitude: 2.0,
        };
        assert_eq!(p.envelope(&[0.0, 0.0], 0.0, 2), 2.0);
    }

    #[test]
    fn pulse_peak_on_shell() {
        let p = PulseParams {
            origin: [0.0; 3],
            speed: 0.3,
            sigma: 10.0,
            amplitude: 1.5,
        };
        // |x| = c t exactly.
        let t = 100.0;
        let r = p.speed * t;
        assert_eq!(p.envelope(&[r, 0.0], t, 2), 1.5);
        assert!(p.envelope(&[r + 30.0, 0.0], t, 2) < 0.02);
    }

    #[test]
    fn pulse_shell_integral_matches_quadrature() {
        // 2D integral of the envelope over a fine grid vs closed form
        // 2 pi A [ sigma^2 e^{-R^2/2s^2} + R s sqrt(2 pi)/2 (1 + erf(R/(s sqrt 2))) ]
        // approximated here with R >> sigma so the shell is far from the
        // origin: integral ~ 2 pi R A sigma sqrt(2 pi).
        let p = PulseParams {
            origin: [0.0; 3],
            speed: 1.0,
            sigma: 4.0,
            amplitude: 1.0,
        };
        let t = 120.0;
        let shell_r = 120.0;
        let h = 0.5;
        let n = 600;
        let mut sum = 0.0;
        for i in -n..n {
            for j in -n..n {
                let x = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
                sum += p.envelope(&x, t, 2) * h * h;
            }
        }
        let closed = 2.0
            * std::f64::consts::PI
            * shell_r
            * p.amplitude
            * p.sigma
            * (2.0 * std::f64::consts::PI).sqrt();
        assert!(
            (sum - closed).abs() / closed < 0.01,
            "quadrature {sum} vs closed form {closed}"
        );
    }

    #[test]
    fn step_accumulates_time() {
        let config = RunConfig::default_for_mode(Mode::TwoD);
        let mut p = ProducerState::new(&config).unwrap();
        assert!(p.step(0).is_err());
        let dt = p.dt;
        for _ in 0..10 {
            p.step(1).unwrap();
        }
        assert!((p.t - 10.0 * dt).abs() < 1e-12);
        // Two steps of 1 equal one step of 2 for analytic fields.
        let mut a = ProducerState::new(&config).unwrap();
        let mut b = ProducerState::new(&config).unwrap();
        a.step(1).unwrap();
        a.step(1).unwrap();
        b.step(2).unwrap();
        assert_eq!(a.t, b.t);
        for (la, lb) in a.forest.leaves.iter().zip(&b.forest.leaves) {
            assert_eq!(la.fields, lb.fields);
        }
    }

    #[test]
    fn flat_field_no_refinement() {
        let mut config = RunConfig::default_for_mode(Mode::TwoD);
        config.t_end = config.t_sync;
        let mut p = ProducerState::new(&config).unwrap();
        // Long after the shell left the domain the gradient is ~0 everywhere.
        p.t = 1e6;
        p.resample();
        let before = p.forest.leaves.len();
        p.adapt().unwrap();
        assert_eq!(p.forest.leaves.len(), before);
    }

    #[test]
    fn shell_crossing_leaf_triggers_refinement() {
        let config = RunConfig::default_for_mode(Mode::TwoD);
        let mut p = ProducerState::new(&config).unwrap();
        // Put the shell mid-domain.
        p.t = 150.0 / p.pulse.speed;
        p.resample();
        let before = p.forest.leaves.len();
        p.adapt().unwrap();
        assert!(p.forest.leaves.len() > before);
    }

    #[test]
    fn consumer_zero_field_no_refinement() {
        let config = RunConfig::default_for_mode(Mode::TwoD);
        let mut c = ConsumerState::new(&config).unwrap();
        let before = c.forest.leaves.len();
        c.adapt().unwrap();
        assert_eq!(c.forest.leaves.len(), before);
    }

    #[test]
    fn steps_between_syncs_follow_ceil_rule() {
        assert_eq!(steps_to_reach(0.0, 10.0, 10.0), 1);
        assert_eq!(steps_to_reach(0.0, 10.0, 10.0 / 19.0), 19);
        assert_eq!(steps_to_reach(0.0, 10.0, 10.0 / 27.0), 27);
        assert_eq!(steps_to_reach(0.0, 10.0, 3.0), 4);
    }

    #[test]
    fn coupled_run_cadence_and_sync_count() {
        let mut config = RunConfig::default_for_mode(Mode::TwoD);
        config.t_sync = 20.0;
        config.dt_producer = config.t_sync / 19.0;
        config.dt_consumer = config.t_sync / 27.0;
        config.t_end = 100.0;
        let report = run_coupled(&config).unwrap();
        assert_eq!(report.records.len(), 5);
        for r in &report.records {
            assert_eq!(r.steps_producer, 19);
            assert_eq!(r.steps_consumer, 27);
        }
    }

    #[test]
    fn exchange_reaches_overlap() {
        let mut config = RunConfig::default_for_mode(Mode::TwoD);
        config.t_sync = 300.0;
        config.t_end = 300.0;
        let report = run_coupled(&config).unwrap();
        assert_eq!(report.records.len(), 1);
        let r = &report.records[0];
        assert!(r.found > 0, "no query found anything: {r:?}");
    }

    #[test]
    fn subdivide_preserves_constant_fields() {
        let mut fields = BTreeMap::new();
        fields.insert("v".to_string(), vec![4.5; 16]);
        let parent = Patch {
            tree_id: 0,
            key: MortonKey::root(),
            cells: [4, 4, 1],
            fields,
        };
        let child = MortonKey::root().child(2, 3).unwrap();
        let out = subdivide_fields(&parent, &child, 2);
        assert_eq!(out["v"], vec![4.5; 16]);
    }
}
