//! Run summaries: latency statistics, exchange rates, busy times, error
//! counts and hourly series.
//!
//! Latencies are in seconds: first byte is `DR-in − Data-in`, last byte is
//! `Data-access − Data-in` (plus any decode penalty). Objects still in flight
//! at the horizon are counted in `objects_in_flight`, never folded into the
//! latency statistics.

use serde::Serialize;

use crate::engine::{ObjectStatus, RunOutput, MOTION_LABELS};
use crate::trace::QueueId;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (0 for a single value).
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LatencyStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(LatencyStats {
            count: values.len(),
            mean,
            stddev: var.sqrt(),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            p50: percentile(&sorted, 0.50),
            p95: percentile(&sorted, 0.95),
            p99: percentile(&sorted, 0.99),
        })
    }
}

/// Exchanges per hour over a window.
pub fn hourly_exchange_rate(exchanges: u64, hours: f64) -> f64 {
    if hours > 0.0 {
        exchanges as f64 / hours
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HourlyPoint {
    pub hour: usize,
    pub arrivals: u64,
    pub exchanges: u64,
    /// Exchanges per robot per hour of the bucket.
    pub xph_per_robot: f64,
    pub read_errors: u64,
    pub completions: u64,
    pub mean_latency: Option<f64>,
    pub mean_dr_len: f64,
    pub mean_d_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotionSummary {
    pub kind: String,
    pub count: u64,
    pub mean_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KpiReport {
    pub horizon_hours: f64,
    pub objects_arrived: usize,
    pub objects_completed: usize,
    pub objects_failed: usize,
    pub objects_in_flight: usize,
    pub first_byte: Option<LatencyStats>,
    pub last_byte: Option<LatencyStats>,
    /// Cartridge-to-drive deliveries (NoT).
    pub objects_touched: u64,
    pub exchanges_per_robot: Vec<u64>,
    pub xph_per_robot: Vec<f64>,
    pub read_errors: u64,
    pub read_errors_per_hour: f64,
    pub exhausted_reads: u64,
    pub timeouts: u64,
    pub replacements: u64,
    pub unrecoverable: u64,
    pub deferred_hits: u64,
    /// Σ (DR-out − Q-in) over served fragment requests.
    pub data_busy_seconds: f64,
    pub robot_busy_seconds: Vec<f64>,
    /// Σ (DR-out − Q-out) per drive; overlaps robot time by definition.
    pub drive_busy_seconds: Vec<f64>,
    pub robot_utilization: f64,
    pub drive_utilization: f64,
    pub fragments_enqueued: u64,
    pub fragments_dequeued: u64,
    pub final_dr_len: usize,
    pub final_d_len: usize,
    pub mean_dr_len: f64,
    pub mean_d_len: f64,
    pub max_dr_len: usize,
    /// Mean DR-queue wait `Q-out − Q-in` of dequeued fragment requests.
    pub mean_dr_wait_seconds: Option<f64>,
    /// Mean drive occupation `DR-out − Q-out` of completed fragment requests.
    pub mean_drive_occupation_seconds: Option<f64>,
    /// DR rows without a DR-out at the horizon.
    pub incomplete_rows: usize,
    pub motions: Vec<MotionSummary>,
    pub hourly: Vec<HourlyPoint>,
}

fn hist_mean(hist: &[u64]) -> f64 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    hist.iter()
        .enumerate()
        .map(|(len, &n)| len as f64 * n as f64)
        .sum::<f64>()
        / total as f64
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn compute_kpis(out: &RunOutput) -> KpiReport {
    let step = out.config.step_seconds;
    let horizon_seconds = out.horizon_steps as f64 * step;
    let horizon_hours = horizon_seconds / 3600.0;
    let real: Vec<_> = out.objects.iter().filter(|o| !o.synthetic).collect();
    let last: Vec<f64> = real
        .iter()
        .filter_map(|o| o.last_byte_steps())
        .map(|s| s as f64 * step)
        .collect();
    let first: Vec<f64> = real
        .iter()
        .filter_map(|o| o.first_byte_steps())
        .map(|s| s as f64 * step)
        .collect();
    let failed = real
        .iter()
        .filter(|o| matches!(o.status, ObjectStatus::Failed { .. }))
        .count();
    let in_flight = real
        .iter()
        .filter(|o| matches!(o.status, ObjectStatus::InFlight))
        .count();

    let robots = out.robots.len().max(1) as f64;
    let drives = out.drives.len().max(1) as f64;
    let robot_busy: Vec<f64> = out.robots.iter().map(|r| r.busy_steps as f64 * step).collect();
    let drive_busy: Vec<f64> = out.drives.iter().map(|d| d.occupation_steps as f64 * step).collect();

    let dr_rows = || out.trace.iter().filter(|r| r.queue == QueueId::DR);
    let incomplete_rows = dr_rows().filter(|r| r.d_out.is_none()).count();
    let mean_dr_wait = mean(dr_rows().filter_map(|r| r.q_out.map(|q| (q - r.q_in) as f64 * step)));
    let mean_occupation = mean(dr_rows().filter_map(|r| match (r.q_out, r.d_out) {
        (Some(q), Some(d)) => Some((d - q) as f64 * step),
        _ => None,
    }));

    let hourly = out
        .stats
        .hourly
        .iter()
        .enumerate()
        .map(|(hour, b)| {
            let bucket_hours = (b.steps as f64 * step / 3600.0).max(f64::MIN_POSITIVE);
            let steps = b.steps.max(1) as f64;
            HourlyPoint {
                hour,
                arrivals: b.object_arrivals,
                exchanges: b.exchanges,
                xph_per_robot: hourly_exchange_rate(b.exchanges, bucket_hours) / robots,
                read_errors: b.read_errors,
                completions: b.completions,
                mean_latency: (b.completions > 0).then(|| b.latency_sum_steps as f64 * step / b.completions as f64),
                mean_dr_len: b.dr_len_step_sum as f64 / steps,
                mean_d_len: b.d_len_step_sum as f64 / steps,
            }
        })
        .collect();

    let motions = out
        .stats
        .motions
        .iter()
        .zip(MOTION_LABELS)
        .map(|(m, kind)| MotionSummary {
            kind: kind.to_string(),
            count: m.count,
            mean_seconds: m.mean(),
        })
        .collect();

    KpiReport {
        horizon_hours,
        objects_arrived: real.len(),
        objects_completed: last.len(),
        objects_failed: failed,
        objects_in_flight: in_flight,
        first_byte: LatencyStats::from_values(&first),
        last_byte: LatencyStats::from_values(&last),
        objects_touched: out.stats.objects_touched,
        exchanges_per_robot: out.robots.iter().map(|r| r.exchange_count).collect(),
        xph_per_robot: out
            .robots
            .iter()
            .map(|r| hourly_exchange_rate(r.exchange_count, horizon_hours))
            .collect(),
        read_errors: out.stats.read_errors,
        read_errors_per_hour: hourly_exchange_rate(out.stats.read_errors, horizon_hours),
        exhausted_reads: out.stats.exhausted_reads,
        timeouts: out.stats.timeouts,
        replacements: out.stats.replacements,
        unrecoverable: out.stats.unrecoverable,
        deferred_hits: out.stats.deferred_hits,
        data_busy_seconds: out.stats.data_busy_steps as f64 * step,
        robot_utilization: robot_busy.iter().sum::<f64>() / (robots * horizon_seconds.max(f64::MIN_POSITIVE)),
        drive_utilization: drive_busy.iter().sum::<f64>() / (drives * horizon_seconds.max(f64::MIN_POSITIVE)),
        robot_busy_seconds: robot_busy,
        drive_busy_seconds: drive_busy,
        fragments_enqueued: out.stats.fragments_enqueued,
        fragments_dequeued: out.stats.fragments_dequeued,
        final_dr_len: out.final_dr_len,
        final_d_len: out.final_d_len,
        mean_dr_len: hist_mean(&out.stats.dr_len_hist),
        mean_d_len: hist_mean(&out.stats.d_len_hist),
        max_dr_len: out.stats.dr_len_hist.len().saturating_sub(1),
        mean_dr_wait_seconds: mean_dr_wait,
        mean_drive_occupation_seconds: mean_occupation,
        incomplete_rows,
        motions,
        hourly,
    }
}
