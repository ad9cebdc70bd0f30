//! RAIL arrays: `N` homogeneous libraries serving one shared request stream,
//! with each codeword's fragments spread over distinct libraries.
//!
//! Libraries are simulated independently. They all see the same arrival
//! stream (seeded without a library index) and each owns its service-noise
//! stream, so running them one after another, or on separate threads, gives
//! bit-identical traces. A fragment that fails in one library is not
//! re-dispatched to another; under the Failure protocol the extra load such
//! re-dispatches would cause is injected instead as a stationary stream of
//! synthetic requests at the inflated rate `λ'_j − λ_j`.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::index::sample;
use serde::Serialize;
use statrs::distribution::{Binomial, Discrete};

use crate::config::{derive_arrival_rate, Protocol, SimConfig};
use crate::engine::{simulate, EngineMode, Job, LibrarySim, RunOutput};
use crate::error::SimError;
use crate::kpi::{compute_kpis, KpiReport, LatencyStats};
use crate::redundancy::{kth_smallest, Codeword, MessageId};
use crate::seed;
use crate::trace::QueueId;
use crate::workload::{build_request_stream, generate_arrivals};

/// Block ids at or above this value belong to synthetic load.
pub const SYNTHETIC_ID_BASE: u64 = 1_000_000_000_000;

/// `P(m = x)` for `m ~ Binomial(users, s/N)`: the number of the `users`
/// concurrent requests that reach one library.
pub fn binomial_pmf(users: u64, s: u32, libraries: u32, x: u64) -> f64 {
    let p = (f64::from(s) / f64::from(libraries)).min(1.0);
    Binomial::new(p, users).expect("probability in [0, 1]").pmf(x)
}

/// Per-library request-count model and arrival rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LibraryLoadModel {
    pub libraries: u32,
    /// Fragment requests dispatched per object.
    pub fanout: u32,
    pub users: u32,
    /// Object arrival rate of the whole array, per step.
    pub object_rate: f64,
    /// `s λ / N`, per step.
    pub library_rate: f64,
    /// `λ'_j`, per step (equal to `library_rate` unless the Failure protocol
    /// must absorb read failures).
    pub inflated_rate: f64,
    /// Extra requests expected per read failure, `(n−k)(N−1)/N`.
    pub failure_multiplier: f64,
    /// The touch-rate form `(n−k)(N−1)/(p_d N)`, reported for comparison
    /// only: it grows without bound as `p_d → 0`.
    pub phi_literal: Option<f64>,
}

impl LibraryLoadModel {
    pub fn new(cfg: &SimConfig) -> Self {
        let libraries = cfg.num_libraries.max(1);
        let fanout = match cfg.protocol {
            Protocol::Redundant => cfg.dispatch_count(),
            Protocol::Failure => cfg.code_k,
        };
        let object_rate = derive_arrival_rate(cfg);
        let library_rate = f64::from(fanout) * object_rate / f64::from(libraries);
        let failure_multiplier = failure_multiplier(cfg.code_n, cfg.code_k, libraries);
        let (inflated, phi_literal) = match cfg.protocol {
            Protocol::Failure => (
                inflated_rate(library_rate, cfg.drive_fail_prob, cfg.code_n, cfg.code_k, libraries),
                (cfg.drive_fail_prob > 0.0).then(|| failure_multiplier / cfg.drive_fail_prob),
            ),
            Protocol::Redundant => (library_rate, None),
        };
        LibraryLoadModel {
            libraries,
            fanout,
            users: cfg.num_users,
            object_rate,
            library_rate,
            inflated_rate: inflated,
            failure_multiplier,
            phi_literal,
        }
    }

    /// Distribution of the per-library concurrent request count.
    pub fn pmf(&self) -> Vec<f64> {
        (0..=u64::from(self.users))
            .map(|x| binomial_pmf(u64::from(self.users), self.fanout, self.libraries, x))
            .collect()
    }
}

/// `(n−k)(N−1)/N`.
pub fn failure_multiplier(n: u32, k: u32, libraries: u32) -> f64 {
    f64::from(n - k) * f64::from(libraries - 1) / f64::from(libraries)
}

/// `λ'_j = λ_j (1 + p_d (n−k)(N−1)/N)`: each read fails with probability
/// `p_d` and every failure triggers `(n−k)(N−1)/N` extra requests per library
/// on average.
pub fn inflated_rate(library_rate: f64, p_d: f64, n: u32, k: u32, libraries: u32) -> f64 {
    library_rate * (1.0 + p_d * failure_multiplier(n, k, libraries))
}

/// Library receiving each dispatched fragment, as `(fragment, library)`.
pub fn dispatch_across_libraries<R: rand::Rng + ?Sized>(
    cw: &mut Codeword,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Vec<(u32, u32)>, SimError> {
    let libraries = cfg.num_libraries.max(1);
    let requests = match cfg.protocol {
        Protocol::Redundant => cw.dispatch_redundant(cfg.dispatch_count())?,
        Protocol::Failure => cw.dispatch_failure(rng),
    };
    let count = requests.len();
    if count > libraries as usize && !cfg.allow_colocated_fragments {
        return Err(SimError::Config(crate::config::ConfigError::Invalid {
            field: "num_libraries",
            reason: format!("{count} fragments cannot go to distinct libraries out of {libraries}"),
        }));
    }
    let order: Vec<u32> = sample(rng, libraries as usize, count.min(libraries as usize))
        .into_iter()
        .map(|i| i as u32)
        .collect();
    Ok(requests
        .iter()
        .enumerate()
        .map(|(i, r)| (r.mid.fragment, order[i % order.len()]))
        .collect())
}

/// One object as seen across the array.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RailObject {
    pub block_id: u64,
    pub data_in: u64,
    /// `(fragment, library, latency in seconds if the read succeeded in time)`.
    pub fragments: Vec<(u32, u32, Option<f64>)>,
    /// `k`-th smallest fragment latency, seconds.
    pub latency: Option<f64>,
    /// Every fragment finished without `k` successes.
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RailReport {
    pub load: LibraryLoadModel,
    pub objects_arrived: usize,
    pub objects_completed: usize,
    pub objects_failed: usize,
    pub objects_in_flight: usize,
    pub latency: Option<LatencyStats>,
    /// `Σ_i kth-min_j d_ij / min_i m_i`, with `m_i` the number of fragment
    /// requests library `i` received. Diagnostic only.
    pub approx_latency: Option<f64>,
    /// Real (non-synthetic) fragment requests per library per step.
    pub empirical_library_rates: Vec<f64>,
    pub synthetic_requests: Vec<u64>,
    pub libraries: Vec<KpiReport>,
}

#[derive(Debug, Clone)]
pub struct RailOutput {
    pub libraries: Vec<RunOutput>,
    pub objects: Vec<RailObject>,
    pub report: RailReport,
}

/// Builds every library's job list for the array.
pub fn rail_jobs(cfg: &SimConfig) -> Result<Vec<Vec<Job>>, SimError> {
    let libraries = cfg.num_libraries.max(1);
    let horizon = cfg.horizon_steps();
    let load = LibraryLoadModel::new(cfg);
    let mut arrivals = seed::stream(cfg.rng_seed, &[], seed::ARRIVALS);
    let requests = build_request_stream(cfg, load.object_rate, horizon, &mut arrivals);
    let mut dispatch = seed::stream(cfg.rng_seed, &[], seed::DISPATCH);
    let mut jobs: Vec<Vec<Job>> = vec![Vec::new(); libraries as usize];
    for req in requests {
        let mut cw = Codeword::new(
            req.request_id,
            cfg.code_n,
            cfg.code_k,
            cfg.systematic,
            req.home_cartridges.clone(),
            req.object_size,
            req.arrival_step,
        )?;
        let mut per_lib: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for (fragment, lib) in dispatch_across_libraries(&mut cw, cfg, &mut dispatch)? {
            per_lib.entry(lib).or_default().push(fragment);
        }
        for (lib, fragments) in per_lib {
            jobs[lib as usize].push(Job {
                request: req.clone(),
                fragments: Some(fragments),
                synthetic: false,
            });
        }
    }
    let extra = load.inflated_rate - load.library_rate;
    if extra > 0.0 {
        for (lib, list) in jobs.iter_mut().enumerate() {
            let mut rng = seed::stream(cfg.rng_seed, &[lib as u64], seed::EXTRA_LOAD);
            let synthetic = generate_arrivals(cfg, extra, horizon, &mut rng);
            list.extend(synthetic.into_iter().map(|mut r| {
                r.request_id += SYNTHETIC_ID_BASE;
                Job {
                    request: r,
                    fragments: Some(vec![1]),
                    synthetic: true,
                }
            }));
            // Stable: real arrivals stay ahead of synthetic ones on the same step.
            list.sort_by_key(|j| j.request.arrival_step);
        }
    }
    Ok(jobs)
}

fn run_member(cfg: &SimConfig, lib: usize, jobs: Vec<Job>) -> Result<RunOutput, SimError> {
    let service = seed::derive_seed(cfg.rng_seed, &[lib as u64], seed::SERVICE);
    Ok(LibrarySim::new(cfg, jobs, EngineMode::RailMember, service)?.run())
}

/// Simulates the array. `parallel` runs the libraries on separate threads;
/// the output is identical either way.
pub fn run_rail(cfg: &SimConfig, parallel: bool) -> Result<RailOutput, SimError> {
    cfg.validate()?;
    let outputs = if cfg.num_libraries <= 1 {
        vec![simulate(cfg)?]
    } else {
        let jobs = rail_jobs(cfg)?;
        if parallel {
            std::thread::scope(|scope| {
                let handles: Vec<_> = jobs
                    .into_iter()
                    .enumerate()
                    .map(|(lib, j)| scope.spawn(move || run_member(cfg, lib, j)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("library thread panicked"))
                    .collect::<Result<Vec<_>, _>>()
            })?
        } else {
            jobs.into_iter()
                .enumerate()
                .map(|(lib, j)| run_member(cfg, lib, j))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    let objects = aggregate_latency(&outputs, cfg.code_k)?;
    let report = rail_report(cfg, &outputs, &objects);
    Ok(RailOutput {
        libraries: outputs,
        objects,
        report,
    })
}

/// Joins the per-library traces by message id. Each object's latency is the
/// `k`-th smallest successful fragment latency (`Data-access − Data-in`);
/// fragments discarded after a timeout do not count. Data-in is the earliest
/// `Q_in` of the block across all libraries.
pub fn aggregate_latency(outputs: &[RunOutput], k: u32) -> Result<Vec<RailObject>, SimError> {
    let mut owner: HashMap<MessageId, usize> = HashMap::new();
    let mut settled: HashSet<MessageId> = HashSet::new();
    let mut blocks: BTreeMap<u64, RailObject> = BTreeMap::new();
    for (lib, out) in outputs.iter().enumerate() {
        let step = out.config.step_seconds;
        let discarded: HashSet<MessageId> = out.timed_out.iter().copied().collect();
        let mut dispatched: HashSet<u64> = HashSet::new();
        for o in &out.objects {
            if !o.synthetic {
                dispatched.insert(o.block_id);
            }
        }
        for row in out.trace.iter().filter(|r| r.queue == QueueId::DR) {
            let mid = row.mid;
            if mid.block_id >= SYNTHETIC_ID_BASE {
                continue;
            }
            if !dispatched.contains(&mid.block_id) {
                return Err(SimError::Integrity(format!("orphan message id {mid} in library {lib}")));
            }
            if let Some(prev) = owner.insert(mid, lib) {
                return Err(SimError::Integrity(format!(
                    "message id {mid} appears in libraries {prev} and {lib}"
                )));
            }
            let obj = blocks.entry(mid.block_id).or_insert_with(|| RailObject {
                block_id: mid.block_id,
                data_in: row.q_in,
                fragments: Vec::new(),
                latency: None,
                failed: false,
            });
            obj.data_in = obj.data_in.min(row.q_in);
            if row.d_out.is_some() || discarded.contains(&mid) {
                settled.insert(mid);
            }
            let latency = row
                .data_out
                .filter(|_| !discarded.contains(&mid))
                .map(|t| t as f64 * step);
            obj.fragments.push((mid.fragment, lib as u32, latency));
        }
        for o in out.objects.iter().filter(|o| !o.synthetic) {
            if !blocks.contains_key(&o.block_id) {
                return Err(SimError::Integrity(format!(
                    "block {} dispatched to library {lib} has no trace rows",
                    o.block_id
                )));
            }
        }
    }
    let step = outputs.first().map_or(1.0, |o| o.config.step_seconds);
    let horizon = outputs.first().map_or(0, |o| o.horizon_steps);
    let mut objects: Vec<RailObject> = blocks.into_values().collect();
    for obj in &mut objects {
        let data_in = obj.data_in as f64 * step;
        for f in &mut obj.fragments {
            f.2 = f.2.map(|t| t - data_in);
        }
        obj.fragments.sort_by_key(|f| f.0);
        let done: Vec<f64> = obj
            .fragments
            .iter()
            .filter_map(|f| f.2)
            .filter(|&l| data_in + l < horizon as f64 * step)
            .collect();
        obj.latency = kth_smallest(&done, k as usize);
        // Failed: every fragment has finished (or timed out) without k successes.
        obj.failed = obj.latency.is_none()
            && obj
                .fragments
                .iter()
                .all(|&(fragment, _, _)| settled.contains(&MessageId::new(obj.block_id, fragment)));
    }
    Ok(objects)
}

/// `Σ_i kth-min_j d_ij / min_i m_i` over completed objects `i`, with `m_i`
/// the per-library fragment-request counts.
pub fn approximate_latency(objects: &[RailObject], requests_per_library: &[u64]) -> Option<f64> {
    let min_m = *requests_per_library.iter().min()?;
    if min_m == 0 {
        return None;
    }
    let total: f64 = objects.iter().filter_map(|o| o.latency).sum();
    Some(total / min_m as f64)
}

fn rail_report(cfg: &SimConfig, outputs: &[RunOutput], objects: &[RailObject]) -> RailReport {
    let latencies: Vec<f64> = objects.iter().filter_map(|o| o.latency).collect();
    let horizon = outputs[0].horizon_steps.max(1) as f64;
    let real_requests: Vec<u64> = outputs
        .iter()
        .map(|o| {
            o.trace
                .iter()
                .filter(|r| r.queue == QueueId::DR && r.mid.block_id < SYNTHETIC_ID_BASE)
                .count() as u64
        })
        .collect();
    let synthetic_requests = outputs
        .iter()
        .map(|o| o.objects.iter().filter(|x| x.synthetic).count() as u64)
        .collect();
    let failed = objects.iter().filter(|o| o.failed).count();
    RailReport {
        load: LibraryLoadModel::new(cfg),
        objects_arrived: objects.len(),
        objects_completed: latencies.len(),
        objects_failed: failed,
        objects_in_flight: objects.len() - latencies.len() - failed,
        latency: LatencyStats::from_values(&latencies),
        approx_latency: approximate_latency(objects, &real_requests),
        empirical_library_rates: real_requests.iter().map(|&m| m as f64 / horizon).collect(),
        synthetic_requests,
        libraries: outputs.iter().map(compute_kpis).collect(),
    }
}
