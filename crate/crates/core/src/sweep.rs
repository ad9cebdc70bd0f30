//! Parameter sweeps: vary one config key over a list of values, repeat each
//! point with independent seeds and summarise one selected output.
//!
//! Point `i`, repetition `j` runs with seed `derive_seed(base, [i, j], "sweep")`,
//! so every point is reproducible on its own and independent of the others.

use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::config::{with_override, ConfigError, SimConfig, CONFIG_KEYS};
use crate::engine::simulate;
use crate::error::SimError;
use crate::kpi::compute_kpis;
use crate::rail::run_rail;
use crate::seed::{derive_seed, SWEEP};

/// Output summarised by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    MeanLastByte,
    StddevLastByte,
    MeanFirstByte,
    MeanDrLen,
    FinalDrLen,
    ObjectsTouched,
    ReadErrors,
}

impl Selector {
    pub const ALL: [Selector; 7] = [
        Selector::MeanLastByte,
        Selector::StddevLastByte,
        Selector::MeanFirstByte,
        Selector::MeanDrLen,
        Selector::FinalDrLen,
        Selector::ObjectsTouched,
        Selector::ReadErrors,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Selector::MeanLastByte => "mean_last_byte",
            Selector::StddevLastByte => "stddev_last_byte",
            Selector::MeanFirstByte => "mean_first_byte",
            Selector::MeanDrLen => "mean_dr_len",
            Selector::FinalDrLen => "final_dr_len",
            Selector::ObjectsTouched => "objects_touched",
            Selector::ReadErrors => "read_errors",
        }
    }

    pub fn pick(self, m: &RunMetrics) -> Option<f64> {
        match self {
            Selector::MeanLastByte => m.mean_last_byte,
            Selector::StddevLastByte => m.stddev_last_byte,
            Selector::MeanFirstByte => m.mean_first_byte,
            Selector::MeanDrLen => Some(m.mean_dr_len),
            Selector::FinalDrLen => Some(m.final_dr_len),
            Selector::ObjectsTouched => Some(m.objects_touched),
            Selector::ReadErrors => Some(m.read_errors),
        }
    }
}

impl FromStr for Selector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Selector::ALL.into_iter().find(|sel| sel.name() == s).ok_or_else(|| {
            let names: Vec<_> = Selector::ALL.iter().map(|s| s.name()).collect();
            format!("unknown selector `{s}` (expected one of {})", names.join(", "))
        })
    }
}

/// Headline numbers of one run, single library or RAIL array. Queue and
/// counter metrics of an array are summed over its libraries (queue lengths
/// averaged).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub mean_last_byte: Option<f64>,
    pub stddev_last_byte: Option<f64>,
    pub mean_first_byte: Option<f64>,
    pub mean_dr_len: f64,
    pub final_dr_len: f64,
    pub objects_touched: f64,
    pub read_errors: f64,
    pub completed: usize,
}

/// Runs `cfg` (as an array when `num_libraries > 1`) and extracts its metrics.
pub fn run_metrics(cfg: &SimConfig) -> Result<RunMetrics, SimError> {
    if cfg.num_libraries > 1 {
        let out = run_rail(cfg, false)?;
        let libs = &out.report.libraries;
        let n = libs.len() as f64;
        Ok(RunMetrics {
            mean_last_byte: out.report.latency.as_ref().map(|l| l.mean),
            stddev_last_byte: out.report.latency.as_ref().map(|l| l.stddev),
            mean_first_byte: None,
            mean_dr_len: libs.iter().map(|k| k.mean_dr_len).sum::<f64>() / n,
            final_dr_len: libs.iter().map(|k| k.final_dr_len as f64).sum::<f64>() / n,
            objects_touched: libs.iter().map(|k| k.objects_touched as f64).sum(),
            read_errors: libs.iter().map(|k| k.read_errors as f64).sum(),
            completed: out.report.objects_completed,
        })
    } else {
        let k = compute_kpis(&simulate(cfg)?);
        Ok(RunMetrics {
            mean_last_byte: k.last_byte.as_ref().map(|l| l.mean),
            stddev_last_byte: k.last_byte.as_ref().map(|l| l.stddev),
            mean_first_byte: k.first_byte.as_ref().map(|l| l.mean),
            mean_dr_len: k.mean_dr_len,
            final_dr_len: k.final_dr_len as f64,
            objects_touched: k.objects_touched as f64,
            read_errors: k.read_errors as f64,
            completed: k.objects_completed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<String>,
    pub runs: u32,
    pub selector: Selector,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !CONFIG_KEYS.contains(&self.parameter.as_str()) {
            return Err(ConfigError::UnknownKey(self.parameter.clone()));
        }
        if self.values.is_empty() {
            return Err(ConfigError::Invalid {
                field: "values",
                reason: "a sweep needs at least one value".into(),
            });
        }
        if self.runs == 0 {
            return Err(ConfigError::Invalid {
                field: "runs",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub mean: Option<f64>,
    /// Sample standard deviation across repetitions.
    pub stddev: Option<f64>,
    pub samples: Vec<f64>,
    pub errors: Vec<String>,
}

/// Seed of repetition `rep` at sweep point `index`.
pub fn sweep_seed(base: u64, index: usize, rep: u32) -> u64 {
    derive_seed(base, &[index as u64, u64::from(rep)], SWEEP)
}

/// Config of one sweep run.
pub fn point_config(base: &SimConfig, spec: &SweepSpec, index: usize, rep: u32) -> Result<SimConfig, ConfigError> {
    let mut cfg = with_override(base, &spec.parameter, &spec.values[index])?;
    cfg.rng_seed = sweep_seed(base.rng_seed, index, rep);
    cfg.validate()?;
    Ok(cfg)
}

/// Selected output of one run, or why the run failed.
type RunResult = Result<Option<f64>, String>;

fn summarise(value: String, results: Vec<RunResult>) -> SweepRow {
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(Some(v)) => samples.push(v),
            Ok(None) => errors.push("selected output has no data".into()),
            Err(e) => errors.push(e),
        }
    }
    let n = samples.len() as f64;
    let mean = (!samples.is_empty()).then(|| samples.iter().sum::<f64>() / n);
    let stddev = mean.map(|m| {
        if samples.len() > 1 {
            (samples.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        }
    });
    SweepRow {
        value,
        mean,
        stddev,
        samples,
        errors,
    }
}

/// Runs every point. A failing run is recorded on its row and the sweep
/// carries on. With `threads > 1` runs execute concurrently; rows are always
/// returned in sweep order.
pub fn run_sweep(base: &SimConfig, spec: &SweepSpec, threads: usize) -> Result<Vec<SweepRow>, ConfigError> {
    spec.validate()?;
    let tasks: Vec<(usize, u32)> = (0..spec.values.len())
        .flat_map(|i| (0..spec.runs).map(move |r| (i, r)))
        .collect();
    let run = |&(i, r): &(usize, u32)| -> RunResult {
        let cfg = point_config(base, spec, i, r).map_err(|e| e.to_string())?;
        run_metrics(&cfg)
            .map(|m| spec.selector.pick(&m))
            .map_err(|e| e.to_string())
    };
    let results: Vec<RunResult> = if threads <= 1 {
        tasks.iter().map(run).collect()
    } else {
        let slots: Vec<Mutex<Option<RunResult>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..threads.min(tasks.len()) {
                scope.spawn(|| loop {
                    let t = next.fetch_add(1, Ordering::Relaxed);
                    if t >= tasks.len() {
                        break;
                    }
                    let r = run(&tasks[t]);
                    *slots[t].lock().expect("unpoisoned slot") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("unpoisoned slot").expect("every task ran"))
            .collect()
    };
    let mut rows = Vec::with_capacity(spec.values.len());
    let mut it = results.into_iter();
    for value in &spec.values {
        let chunk: Vec<_> = it.by_ref().take(spec.runs as usize).collect();
        rows.push(summarise(value.clone(), chunk));
    }
    Ok(rows)
}

/// `value,mean,stddev,runs,errors` CSV.
pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut s = String::from("value,mean,stddev,runs,errors\n");
    for r in rows {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.value,
            f(r.mean),
            f(r.stddev),
            r.samples.len(),
            r.errors.join("; ").replace(',', ";")
        ));
    }
    s
}
