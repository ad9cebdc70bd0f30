//! Trace files, run reports and plot-data CSVs.
//!
//! Every file is UTF-8 with LF line endings and no trailing delimiter, so a
//! deterministic run always produces identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::SimConfig;
use crate::engine::{ObjectStatus, RunOutput, MOTION_LABELS};
use crate::error::SimError;
use crate::kpi::{KpiReport, LatencyStats};
use crate::rail::RailOutput;
use crate::redundancy::MessageId;
use crate::trace::{QueueId, TraceRecord};

pub const TRACE_HEADER: &str = "QID,MID,Q_in,D_in,Q_out,D_out,Q_len,Data_out";

/// Marker written in place of a statistic that has no samples.
pub const NO_DATA: &str = "no data";

/// `simQ.csv` for a single library, `simQ{i}.csv` for RAIL member `i`.
pub fn trace_file_name(library: Option<usize>) -> String {
    match library {
        Some(i) => format!("simQ{i}.csv"),
        None => "simQ.csv".to_string(),
    }
}

fn opt(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_trace(records: &[TraceRecord]) -> String {
    let mut s = String::with_capacity(32 * (records.len() + 1));
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.queue,
            r.mid,
            r.q_in,
            opt(r.d_in),
            opt(r.q_out),
            opt(r.d_out),
            r.q_len,
            opt(r.data_out)
        );
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<(), SimError> {
    fs::write(path, contents).map_err(|e| SimError::io(path, e))
}

pub fn write_trace(records: &[TraceRecord], path: &Path) -> Result<(), SimError> {
    write_file(path, &format_trace(records))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, SimError> {
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    parse_trace(&text)
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, SimError> {
    let mut lines = text.split_terminator('\n');
    let err = |line: usize, reason: String| SimError::TraceParse { line, reason };
    match lines.next() {
        Some(TRACE_HEADER) => {}
        other => return Err(err(1, format!("expected header `{TRACE_HEADER}`, got {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let n = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(err(n, format!("expected 8 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|e| err(n, format!("`{s}`: {e}")));
            let maybe = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            Ok(TraceRecord {
                queue: f[0].parse::<QueueId>().map_err(|e| err(n, e))?,
                mid: f[1].parse::<MessageId>().map_err(|e| err(n, e.to_string()))?,
                q_in: num(f[2])?,
                d_in: maybe(f[3])?,
                q_out: maybe(f[4])?,
                d_out: maybe(f[5])?,
                q_len: f[6].parse::<u32>().map_err(|e| err(n, format!("`{}`: {e}", f[6])))?,
                data_out: maybe(f[7])?,
            })
        })
        .collect()
}

/// Latency summary in minutes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinutesSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub stddev: f64,
}

impl MinutesSummary {
    fn from_stats(s: &Option<LatencyStats>) -> Option<Self> {
        s.as_ref().map(|s| MinutesSummary {
            min: s.min / 60.0,
            mean: s.mean / 60.0,
            max: s.max / 60.0,
            stddev: s.stddev / 60.0,
        })
    }
}

/// Machine-readable headline numbers of a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    /// `num_cartridges × cartridge_capacity`, in the configured unit (MB).
    pub total_capacity: f64,
    pub total_capacity_pb: f64,
    pub horizon_hours: f64,
    pub object_request_rate_per_day: f64,
    pub objects_touched: u64,
    pub actual_xph_per_robot: Vec<f64>,
    pub first_byte_minutes: Option<MinutesSummary>,
    pub last_byte_minutes: Option<MinutesSummary>,
    pub kpis: KpiReport,
}

impl RunSummary {
    pub fn new(cfg: &SimConfig, kpis: &KpiReport) -> Self {
        let total = f64::from(cfg.num_cartridges) * cfg.cartridge_capacity;
        RunSummary {
            total_capacity: total,
            total_capacity_pb: total / 1e9,
            horizon_hours: kpis.horizon_hours,
            object_request_rate_per_day: if kpis.horizon_hours > 0.0 {
                kpis.objects_arrived as f64 * 24.0 / kpis.horizon_hours
            } else {
                0.0
            },
            objects_touched: kpis.objects_touched,
            actual_xph_per_robot: kpis.xph_per_robot.clone(),
            first_byte_minutes: MinutesSummary::from_stats(&kpis.first_byte),
            last_byte_minutes: MinutesSummary::from_stats(&kpis.last_byte),
            kpis: kpis.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let lat = |m: &Option<MinutesSummary>| match m {
            Some(m) => format!(
                "min {:.3} / mean {:.3} / max {:.3} min (sd {:.3})",
                m.min, m.mean, m.max, m.stddev
            ),
            None => NO_DATA.to_string(),
        };
        let k = &self.kpis;
        let _ = writeln!(
            s,
            "total capacity        {} MB ({:.2} PB)",
            self.total_capacity, self.total_capacity_pb
        );
        let _ = writeln!(s, "simulated time        {} h", self.horizon_hours);
        let _ = writeln!(
            s,
            "request rate          {:.2} objects/day",
            self.object_request_rate_per_day
        );
        let _ = writeln!(
            s,
            "objects               {} arrived, {} completed, {} failed, {} in flight",
            k.objects_arrived, k.objects_completed, k.objects_failed, k.objects_in_flight
        );
        let _ = writeln!(s, "first-byte latency    {}", lat(&self.first_byte_minutes));
        let _ = writeln!(s, "last-byte latency     {}", lat(&self.last_byte_minutes));
        let _ = writeln!(s, "objects touched (NoT) {}", self.objects_touched);
        let xph: Vec<String> = self.actual_xph_per_robot.iter().map(|x| format!("{x:.2}")).collect();
        let _ = writeln!(s, "robot exchange rate   [{}] xph", xph.join(", "));
        let _ = writeln!(
            s,
            "read errors           {} ({:.3}/h), {} timeouts, {} replacements, {} unrecoverable",
            k.read_errors, k.read_errors_per_hour, k.timeouts, k.replacements, k.unrecoverable
        );
        let _ = writeln!(
            s,
            "utilisation           robots {:.4}, drives {:.4}",
            k.robot_utilization, k.drive_utilization
        );
        let _ = writeln!(
            s,
            "queue length          DR mean {:.4} (max {}, final {}), D mean {:.4} (final {})",
            k.mean_dr_len, k.max_dr_len, k.final_dr_len, k.mean_d_len, k.final_d_len
        );
        for m in &k.motions {
            let mean = m.mean_seconds.map_or(NO_DATA.to_string(), |v| format!("{v:.4} s"));
            let _ = writeln!(s, "motion {:<14} {} moves, mean {}", m.kind, m.count, mean);
        }
        s
    }
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Per-object outcomes (`objects.csv`).
pub fn format_objects(out: &RunOutput) -> String {
    let step = out.config.step_seconds;
    let mut s = String::from("block_id,user_id,data_in_s,size_mb,fragments,status,first_byte_s,last_byte_s\n");
    for o in out.objects.iter().filter(|o| !o.synthetic) {
        let status = match o.status {
            ObjectStatus::InFlight => "in_flight",
            ObjectStatus::Completed { .. } => "completed",
            ObjectStatus::Failed { .. } => "failed",
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            o.block_id,
            o.user_id,
            o.data_in as f64 * step,
            o.size,
            o.fragments_dispatched,
            status,
            csv_opt(o.first_byte_steps().map(|v| v as f64 * step)),
            csv_opt(o.last_byte_steps().map(|v| v as f64 * step)),
        );
    }
    s
}

fn format_hourly(kpis: &KpiReport) -> [(String, String); 4] {
    let mut latency = String::from("hour,completions,mean_last_byte_s\n");
    let mut exchanges = String::from("hour,exchanges,xph_per_robot\n");
    let mut errors = String::from("hour,read_errors\n");
    let mut queues = String::from("hour,mean_dr_len,mean_d_len\n");
    for h in &kpis.hourly {
        let _ = writeln!(latency, "{},{},{}", h.hour, h.completions, csv_opt(h.mean_latency));
        let _ = writeln!(exchanges, "{},{},{}", h.hour, h.exchanges, h.xph_per_robot);
        let _ = writeln!(errors, "{},{}", h.hour, h.read_errors);
        let _ = writeln!(queues, "{},{},{}", h.hour, h.mean_dr_len, h.mean_d_len);
    }
    [
        ("latency_vs_time.csv".into(), latency),
        ("exchanges_vs_time.csv".into(), exchanges),
        ("read_errors_per_hour.csv".into(), errors),
        ("queue_lengths_vs_time.csv".into(), queues),
    ]
}

fn format_queue_distribution(out: &RunOutput) -> String {
    let (dr, d) = (&out.stats.dr_len_hist, &out.stats.d_len_hist);
    let mut s = String::from("length,dr_steps,d_steps\n");
    for len in 0..dr.len().max(d.len()) {
        let _ = writeln!(
            s,
            "{len},{},{}",
            dr.get(len).copied().unwrap_or(0),
            d.get(len).copied().unwrap_or(0)
        );
    }
    s
}

fn format_motion_histogram(out: &RunOutput) -> String {
    let mut s = String::from("motion,bin_start_s,count\n");
    for (m, kind) in out.stats.motions.iter().zip(MOTION_LABELS) {
        for (bin, &count) in m.histogram.iter().enumerate() {
            if count > 0 {
                let _ = writeln!(s, "{kind},{bin},{count}");
            }
        }
    }
    s
}

fn create_dir(dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))
}

/// Writes `summary.txt`, `summary.json` and the plot-data CSVs into `dir`.
/// Returns the paths written.
pub fn write_report(out: &RunOutput, kpis: &KpiReport, dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    create_dir(dir)?;
    let summary = RunSummary::new(&out.config, kpis);
    let json = serde_json::to_string_pretty(&summary).expect("report serialises") + "\n";
    let mut files: Vec<(String, String)> = vec![
        ("summary.txt".into(), summary.to_text()),
        ("summary.json".into(), json),
        ("objects.csv".into(), format_objects(out)),
        ("queue_length_distribution.csv".into(), format_queue_distribution(out)),
        ("motion_histogram.csv".into(), format_motion_histogram(out)),
    ];
    files.extend(format_hourly(kpis));
    let mut written = Vec::new();
    for (name, contents) in files {
        let path = dir.join(name);
        write_file(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes trace and report of a single-library run.
pub fn write_run(out: &RunOutput, kpis: &KpiReport, dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    create_dir(dir)?;
    let trace = dir.join(trace_file_name(None));
    write_trace(&out.trace, &trace)?;
    let mut written = vec![trace];
    written.extend(write_report(out, kpis, dir)?);
    Ok(written)
}

/// Writes `simQ0.csv … simQ{N−1}.csv`, the aggregated report
/// (`rail_summary.json`, `rail_objects.csv`) and one report sub-directory per
/// library.
pub fn write_rail(out: &RailOutput, dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    create_dir(dir)?;
    let mut written = Vec::new();
    for (i, lib) in out.libraries.iter().enumerate() {
        let path = dir.join(trace_file_name(Some(i)));
        write_trace(&lib.trace, &path)?;
        written.push(path);
        written.extend(write_report(
            lib,
            &out.report.libraries[i],
            &dir.join(format!("library{i}")),
        )?);
    }
    let json = serde_json::to_string_pretty(&out.report).expect("report serialises") + "\n";
    let path = dir.join("rail_summary.json");
    write_file(&path, &json)?;
    written.push(path);
    let mut objects = String::from("block_id,data_in_s,fragments,latency_s,failed\n");
    for o in &out.objects {
        let frags: Vec<String> = o
            .fragments
            .iter()
            .map(|(f, lib, lat)| format!("{f}@{lib}:{}", csv_opt(*lat)))
            .collect();
        let step = out.libraries[0].config.step_seconds;
        let _ = writeln!(
            objects,
            "{},{},{},{},{}",
            o.block_id,
            o.data_in as f64 * step,
            frags.join(" "),
            csv_opt(o.latency),
            o.failed
        );
    }
    let path = dir.join("rail_objects.csv");
    write_file(&path, &objects)?;
    written.push(path);
    Ok(written)
}
