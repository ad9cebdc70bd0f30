//! Run configuration: parsing, validation, CLI overrides and the request-rate
//! formula tying library contents to the Poisson arrival rate.
//!
//! The on-disk format is a flat TOML table (`key = value` per line). Only the
//! hardware keys are mandatory; everything else has a default listed on the
//! field. Units: sizes in MB, rates in MB/s, times in seconds unless the key
//! says otherwise.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const SECONDS_PER_YEAR: f64 = 365.0 * SECONDS_PER_DAY;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("malformed override `{0}` (expected key=value)")]
    MalformedOverride(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    #[default]
    Redundant,
    Failure,
}

/// Where the Failure-protocol timeout clock starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeoutOrigin {
    /// Clock starts once the drive begins re-positioning for its first retry.
    #[default]
    Retry,
    /// Clock starts when the fragment request enters the DR queue.
    QueueIn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ObjectSizeModel {
    #[default]
    Weibull,
    /// Every object has exactly `object_size_scale` MB.
    Fixed,
}

/// Full parameter set of one library run (and, with `num_libraries > 1`, of
/// every homogeneous member of a RAIL array).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub num_cartridges: u32,
    /// Rack rows; columns are `num_cartridges / vertical_dim`.
    pub vertical_dim: u32,
    /// MB per cartridge.
    pub cartridge_capacity: f64,
    #[serde(default = "defaults::fill_ratio")]
    pub fill_ratio: f64,
    pub num_robots: u32,
    pub num_drives: u32,
    /// Rated exchanges per hour per robot.
    pub robot_xph: f64,
    /// Drive streaming rate, MB/s.
    pub drive_rate: f64,
    #[serde(default)]
    pub mean_load_time: f64,
    #[serde(default)]
    pub mean_position_time: f64,
    #[serde(default)]
    pub object_size_model: ObjectSizeModel,
    #[serde(default = "defaults::one")]
    pub object_size_shape: f64,
    #[serde(default = "defaults::object_size_scale")]
    pub object_size_scale: f64,
    /// Annual object touch rate.
    #[serde(default = "defaults::one")]
    pub aotr: f64,
    /// Manual request rate; wins over the AOTR-derived rate when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objects_touched_per_day: Option<f64>,
    #[serde(default = "defaults::one_u32")]
    pub num_users: u32,
    /// Relative per-user request weights (length `num_users`); uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_weights: Option<Vec<f64>>,
    #[serde(default = "defaults::one_u32")]
    pub code_n: u32,
    #[serde(default = "defaults::one_u32")]
    pub code_k: u32,
    /// Fragments dispatched up front by the Redundant protocol; defaults to `code_n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dispatch_count: Option<u32>,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default = "defaults::failure_threshold_steps")]
    pub failure_threshold_steps: u64,
    #[serde(default)]
    pub timeout_origin: TimeoutOrigin,
    #[serde(default)]
    pub drive_fail_prob: f64,
    #[serde(default = "defaults::max_retries")]
    pub max_retries: u32,
    /// MB; 0 disables collocation.
    #[serde(default)]
    pub collocation_threshold: f64,
    #[serde(default = "defaults::one_u32")]
    pub num_libraries: u32,
    /// RAIL only: allow more than one fragment of a codeword per library.
    #[serde(default)]
    pub allow_colocated_fragments: bool,
    #[serde(default = "defaults::one")]
    pub step_seconds: f64,
    /// Hours.
    #[serde(default = "defaults::sim_duration")]
    pub sim_duration: f64,
    #[serde(default = "defaults::rng_seed")]
    pub rng_seed: u64,
    #[serde(default = "defaults::yes")]
    pub balanced_robots: bool,
    /// `[row, col]` per drive; empty means "centred block" (see geometry).
    #[serde(default)]
    pub drive_positions: Vec<[u32; 2]>,
    #[serde(default = "defaults::yes")]
    pub deferred_dismount: bool,
    /// When a robot could serve either queue, serve the DR queue first.
    #[serde(default = "defaults::yes")]
    pub dr_priority: bool,
    #[serde(default = "defaults::yes")]
    pub systematic: bool,
    /// Decoder run time charged when decoding is needed.
    #[serde(default)]
    pub decode_seconds: f64,
    /// Fraction of requests that are writes (serviced through the same path).
    #[serde(default)]
    pub write_fraction: f64,
}

mod defaults {
    pub fn fill_ratio() -> f64 {
        0.8
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn one_u32() -> u32 {
        1
    }
    pub fn object_size_scale() -> f64 {
        5000.0
    }
    pub fn failure_threshold_steps() -> u64 {
        100
    }
    pub fn max_retries() -> u32 {
        10
    }
    pub fn sim_duration() -> f64 {
        24.0
    }
    pub fn rng_seed() -> u64 {
        1
    }
    pub fn yes() -> bool {
        true
    }
}

/// Every key accepted in a config document or as an override.
pub const CONFIG_KEYS: &[&str] = &[
    "num_cartridges",
    "vertical_dim",
    "cartridge_capacity",
    "fill_ratio",
    "num_robots",
    "num_drives",
    "robot_xph",
    "drive_rate",
    "mean_load_time",
    "mean_position_time",
    "object_size_model",
    "object_size_shape",
    "object_size_scale",
    "aotr",
    "objects_touched_per_day",
    "num_users",
    "user_weights",
    "code_n",
    "code_k",
    "dispatch_count",
    "protocol",
    "failure_threshold_steps",
    "timeout_origin",
    "drive_fail_prob",
    "max_retries",
    "collocation_threshold",
    "num_libraries",
    "allow_colocated_fragments",
    "step_seconds",
    "sim_duration",
    "rng_seed",
    "balanced_robots",
    "drive_positions",
    "deferred_dismount",
    "dr_priority",
    "systematic",
    "decode_seconds",
    "write_fraction",
];

impl SimConfig {
    /// Minimal valid configuration with the given hardware; everything else
    /// takes its documented default.
    pub fn with_hardware(
        num_cartridges: u32,
        vertical_dim: u32,
        num_robots: u32,
        num_drives: u32,
        robot_xph: f64,
        drive_rate: f64,
    ) -> Self {
        SimConfig {
            num_cartridges,
            vertical_dim,
            cartridge_capacity: 12e6,
            fill_ratio: defaults::fill_ratio(),
            num_robots,
            num_drives,
            robot_xph,
            drive_rate,
            mean_load_time: 0.0,
            mean_position_time: 0.0,
            object_size_model: ObjectSizeModel::Weibull,
            object_size_shape: 1.0,
            object_size_scale: defaults::object_size_scale(),
            aotr: 1.0,
            objects_touched_per_day: None,
            num_users: 1,
            user_weights: None,
            code_n: 1,
            code_k: 1,
            dispatch_count: None,
            protocol: Protocol::Redundant,
            failure_threshold_steps: defaults::failure_threshold_steps(),
            timeout_origin: TimeoutOrigin::Retry,
            drive_fail_prob: 0.0,
            max_retries: defaults::max_retries(),
            collocation_threshold: 0.0,
            num_libraries: 1,
            allow_colocated_fragments: false,
            step_seconds: 1.0,
            sim_duration: defaults::sim_duration(),
            rng_seed: defaults::rng_seed(),
            balanced_robots: true,
            drive_positions: Vec::new(),
            deferred_dismount: true,
            dr_priority: true,
            systematic: true,
            decode_seconds: 0.0,
            write_fraction: 0.0,
        }
    }

    pub fn horizontal_dim(&self) -> u32 {
        self.num_cartridges / self.vertical_dim.max(1)
    }

    pub fn dispatch_count(&self) -> u32 {
        self.dispatch_count.unwrap_or(self.code_n)
    }

    /// Mean object size μ_o in MB.
    pub fn mean_object_size(&self) -> f64 {
        match self.object_size_model {
            ObjectSizeModel::Fixed => self.object_size_scale,
            ObjectSizeModel::Weibull => self.object_size_scale * gamma(1.0 + 1.0 / self.object_size_shape),
        }
    }

    pub fn steps_per_hour(&self) -> f64 {
        3600.0 / self.step_seconds
    }

    /// Number of simulation steps in the run.
    pub fn horizon_steps(&self) -> u64 {
        (self.sim_duration * self.steps_per_hour()).round() as u64
    }

    /// Mean duration of one robot motion: a full exchange is four motions.
    pub fn mean_motion_seconds(&self) -> f64 {
        3600.0 / (4.0 * self.robot_xph)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be a positive number, got {v}")))
            }
        }
        fn nonnegative(field: &'static str, v: f64) -> Result<(), ConfigError> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be nonnegative, got {v}")))
            }
        }
        fn at_least_one(field: &'static str, v: u32) -> Result<(), ConfigError> {
            if v >= 1 {
                Ok(())
            } else {
                Err(invalid(field, "must be at least 1"))
            }
        }

        at_least_one("num_cartridges", self.num_cartridges)?;
        at_least_one("vertical_dim", self.vertical_dim)?;
        if !self.num_cartridges.is_multiple_of(self.vertical_dim) {
            return Err(invalid(
                "vertical_dim",
                format!(
                    "{} cartridges cannot fill a rectangle with {} rows",
                    self.num_cartridges, self.vertical_dim
                ),
            ));
        }
        positive("cartridge_capacity", self.cartridge_capacity)?;
        if !(self.fill_ratio > 0.0 && self.fill_ratio <= 1.0) {
            return Err(invalid("fill_ratio", "must lie in (0, 1]"));
        }
        at_least_one("num_robots", self.num_robots)?;
        at_least_one("num_drives", self.num_drives)?;
        if self.num_drives > self.num_cartridges {
            return Err(invalid("num_drives", "more drives than rack cells"));
        }
        positive("robot_xph", self.robot_xph)?;
        positive("drive_rate", self.drive_rate)?;
        nonnegative("mean_load_time", self.mean_load_time)?;
        nonnegative("mean_position_time", self.mean_position_time)?;
        positive("object_size_shape", self.object_size_shape)?;
        positive("object_size_scale", self.object_size_scale)?;
        positive("aotr", self.aotr)?;
        if let Some(v) = self.objects_touched_per_day {
            nonnegative("objects_touched_per_day", v)?;
        }
        at_least_one("num_users", self.num_users)?;
        if let Some(w) = &self.user_weights {
            if w.len() != self.num_users as usize {
                return Err(invalid(
                    "user_weights",
                    format!("expected {} weights, got {}", self.num_users, w.len()),
                ));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(invalid(
                    "user_weights",
                    "weights must be nonnegative with a positive sum",
                ));
            }
        }
        at_least_one("code_k", self.code_k)?;
        if self.code_n < self.code_k {
            return Err(invalid(
                "code_n",
                format!("n = {} must be at least k = {}", self.code_n, self.code_k),
            ));
        }
        let s = self.dispatch_count();
        if s < self.code_k || s > self.code_n {
            return Err(invalid(
                "dispatch_count",
                format!("s = {s} must satisfy k = {} ≤ s ≤ n = {}", self.code_k, self.code_n),
            ));
        }
        if self.failure_threshold_steps == 0 {
            return Err(invalid("failure_threshold_steps", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.drive_fail_prob) {
            return Err(invalid("drive_fail_prob", "must lie in [0, 1)"));
        }
        at_least_one("max_retries", self.max_retries)?;
        nonnegative("collocation_threshold", self.collocation_threshold)?;
        at_least_one("num_libraries", self.num_libraries)?;
        positive("step_seconds", self.step_seconds)?;
        positive("sim_duration", self.sim_duration)?;
        nonnegative("decode_seconds", self.decode_seconds)?;
        if !(0.0..=1.0).contains(&self.write_fraction) {
            return Err(invalid("write_fraction", "must lie in [0, 1]"));
        }
        // One robot motion must span at least one step.
        if self.mean_motion_seconds() < self.step_seconds {
            return Err(invalid(
                "step_seconds",
                format!(
                    "step of {} s exceeds the mean motion time {:.4} s",
                    self.step_seconds,
                    self.mean_motion_seconds()
                ),
            ));
        }
        if !self.drive_positions.is_empty() {
            if self.drive_positions.len() != self.num_drives as usize {
                return Err(invalid(
                    "drive_positions",
                    format!(
                        "{} positions for {} drives",
                        self.drive_positions.len(),
                        self.num_drives
                    ),
                ));
            }
            let cols = self.horizontal_dim();
            for (i, p) in self.drive_positions.iter().enumerate() {
                if p[0] >= self.vertical_dim || p[1] >= cols {
                    return Err(invalid(
                        "drive_positions",
                        format!("drive {i} at {p:?} lies outside the {}x{cols} grid", self.vertical_dim),
                    ));
                }
                if self.drive_positions[..i].contains(p) {
                    return Err(invalid("drive_positions", format!("duplicate drive position {p:?}")));
                }
            }
        }
        // Fragments of one codeword live on distinct cartridges (or libraries).
        if self.num_libraries == 1 && self.code_n > self.num_cartridges {
            return Err(invalid("code_n", "codeword longer than the number of cartridges"));
        }
        if self.num_libraries > 1 && !self.allow_colocated_fragments {
            let fanout = match self.protocol {
                Protocol::Redundant => s,
                Protocol::Failure => self.code_k,
            };
            if fanout > self.num_libraries {
                return Err(invalid(
                    "num_libraries",
                    format!(
                        "{fanout} fragments cannot go to distinct libraries out of {}",
                        self.num_libraries
                    ),
                ));
            }
        }
        let raw = self.fill_ratio * f64::from(self.num_cartridges) * self.cartridge_capacity;
        let codeword_volume = self.mean_object_size() * f64::from(self.code_n) / f64::from(self.code_k);
        if codeword_volume > raw {
            return Err(invalid(
                "fill_ratio",
                format!("stored volume {raw} MB cannot hold one encoded object of {codeword_volume} MB"),
            ));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("SimConfig always serializes")
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<SimConfig, ConfigError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    config_from_table(table)
}

fn config_from_table(table: toml::Table) -> Result<SimConfig, ConfigError> {
    if let Some(key) = table.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
        return Err(ConfigError::UnknownKey(key.clone()));
    }
    let cfg: SimConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `key=value` overrides on top of a document. Values use TOML
/// syntax; bare words are taken as strings (`protocol=failure`).
pub fn parse_config_with_overrides(text: &str, overrides: &[String]) -> Result<SimConfig, ConfigError> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| ConfigError::MalformedOverride(o.clone()))?;
        let key = key.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        table.insert(key.to_string(), parse_override_value(value.trim()));
    }
    config_from_table(table)
}

/// Returns a copy of `cfg` with one key replaced.
pub fn with_override(cfg: &SimConfig, key: &str, value: &str) -> Result<SimConfig, ConfigError> {
    parse_config_with_overrides(&cfg.to_toml_string(), &[format!("{key}={value}")])
}

/// Factors of the request-rate formula
/// `λ = NoC · C_t · Φ_f · AOTR · k / (n · μ_o · T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateInputs {
    pub num_cartridges: f64,
    pub cartridge_capacity: f64,
    pub fill_ratio: f64,
    pub aotr: f64,
    pub code_k: f64,
    pub code_n: f64,
    pub mean_object_size: f64,
}

impl RateInputs {
    pub fn from_config(cfg: &SimConfig) -> Self {
        RateInputs {
            num_cartridges: f64::from(cfg.num_cartridges),
            cartridge_capacity: cfg.cartridge_capacity,
            fill_ratio: cfg.fill_ratio,
            aotr: cfg.aotr,
            code_k: f64::from(cfg.code_k),
            code_n: f64::from(cfg.code_n),
            mean_object_size: cfg.mean_object_size(),
        }
    }

    /// Poisson object-request rate over a period of length `period`
    /// (in whatever unit the caller counts periods in).
    pub fn rate(&self, period: f64) -> f64 {
        let stored = self.num_cartridges * self.cartridge_capacity * self.fill_ratio * self.aotr * self.code_k;
        stored / (self.code_n * self.mean_object_size * period)
    }
}

/// Object-request arrival rate in requests per simulation step.
///
/// `objects_touched_per_day` wins when set; otherwise AOTR is annual, so the
/// formula is evaluated with `T` = steps per year.
pub fn derive_arrival_rate(cfg: &SimConfig) -> f64 {
    match cfg.objects_touched_per_day {
        Some(per_day) => per_day * cfg.step_seconds / SECONDS_PER_DAY,
        None => RateInputs::from_config(cfg).rate(SECONDS_PER_YEAR / cfg.step_seconds),
    }
}
