//! Closed-form queueing approximations for sizing and for validating the
//! simulator on degenerate configurations.
//!
//! A library is approximated by two fictitious queues in series: queue A
//! (robots, M/G/r) followed by queue B (drives, G/G/d). Each is evaluated
//! with M/M/c formulas and then corrected for non-exponential variability.
//!
//! `L_q` defaults to the standard Erlang-C form
//! `P_0 (cρ)^c ρ / (c! (1−ρ)²)`. [`LqForm::PowerOfRho`] evaluates the
//! alternative `P_0 ρ^{c+1} / (c! (1−ρ)²)` instead; the two agree at `c = 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{derive_arrival_rate, Protocol, SimConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("queue {queue} is unstable: utilisation {rho:.4} >= 1")]
    Unstable { queue: String, rho: f64 },
    #[error("invalid queue parameter {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LqForm {
    #[default]
    ErlangC,
    PowerOfRho,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueModelParams {
    /// Arrival rate.
    pub lambda: f64,
    /// Per-server service rate.
    pub mu: f64,
    /// Server count.
    pub c: u32,
    /// Squared coefficient of variation of inter-arrival times.
    pub ca2: f64,
    /// Squared coefficient of variation of service times.
    pub cs2: f64,
}

impl QueueModelParams {
    /// Exponential inter-arrival and service times.
    pub fn markovian(lambda: f64, mu: f64, c: u32) -> Self {
        QueueModelParams {
            lambda,
            mu,
            c,
            ca2: 1.0,
            cs2: 1.0,
        }
    }

    pub fn rho(&self) -> f64 {
        self.lambda / (f64::from(self.c) * self.mu)
    }

    pub fn mean_service(&self) -> f64 {
        1.0 / self.mu
    }

    fn check(&self, queue: &str) -> Result<f64, AnalyticsError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(AnalyticsError::InvalidParameter(format!("mu = {}", self.mu)));
        }
        if self.c == 0 {
            return Err(AnalyticsError::InvalidParameter("c = 0".into()));
        }
        if !ok(self.lambda) || !ok(self.ca2) || !ok(self.cs2) {
            return Err(AnalyticsError::InvalidParameter(format!(
                "lambda = {}, ca2 = {}, cs2 = {}",
                self.lambda, self.ca2, self.cs2
            )));
        }
        let rho = self.rho();
        if rho >= 1.0 {
            return Err(AnalyticsError::Unstable {
                queue: queue.to_string(),
                rho,
            });
        }
        Ok(rho)
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Probability of an empty system in M/M/c.
pub fn p_zero(p: &QueueModelParams) -> Result<f64, AnalyticsError> {
    let rho = p.check("queue")?;
    let c = p.c;
    let a = f64::from(c) * rho;
    let head: f64 = (0..c).map(|m| a.powi(m as i32) / factorial(m)).sum();
    let tail = a.powi(c as i32) / (factorial(c) * (1.0 - rho));
    Ok(1.0 / (head + tail))
}

/// Mean number waiting.
pub fn mean_queue_length(p: &QueueModelParams, form: LqForm) -> Result<f64, AnalyticsError> {
    let rho = p.check("queue")?;
    let p0 = p_zero(p)?;
    let c = p.c as i32;
    let numerator = match form {
        LqForm::ErlangC => (f64::from(p.c) * rho).powi(c) * rho,
        LqForm::PowerOfRho => rho.powi(c + 1),
    };
    Ok(p0 * numerator / (factorial(p.c) * (1.0 - rho).powi(2)))
}

/// Mean wait in queue via Little's law; zero for an idle queue.
pub fn wait_time(p: &QueueModelParams, form: LqForm) -> Result<f64, AnalyticsError> {
    let lq = mean_queue_length(p, form)?;
    Ok(if p.lambda > 0.0 { lq / p.lambda } else { 0.0 })
}

/// Variability-corrected wait `W_q (C_a² + C_s²) / 2`.
pub fn g_g_correction(p: &QueueModelParams, form: LqForm) -> Result<f64, AnalyticsError> {
    Ok(wait_time(p, form)? * (p.ca2 + p.cs2) / 2.0)
}

/// Breakdown of the two-queue estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndToEnd {
    pub robot_wait: f64,
    pub drive_wait: f64,
    pub robot_service: f64,
    pub drive_service: f64,
    pub total: f64,
}

/// Access-time estimate: corrected waits of the robot and drive queues plus
/// both mean service times. It idealises the coupling between the queues, so
/// treat it as a bound rather than a prediction.
pub fn end_to_end_estimate(
    robots: &QueueModelParams,
    drives: &QueueModelParams,
    form: LqForm,
) -> Result<EndToEnd, AnalyticsError> {
    robots.check("A (robots)")?;
    drives.check("B (drives)")?;
    let robot_wait = g_g_correction(robots, form)?;
    let drive_wait = g_g_correction(drives, form)?;
    let (robot_service, drive_service) = (robots.mean_service(), drives.mean_service());
    Ok(EndToEnd {
        robot_wait,
        drive_wait,
        robot_service,
        drive_service,
        total: robot_wait + drive_wait + robot_service + drive_service,
    })
}

/// Sample squared coefficient of variation, `s² / x̄²`.
pub fn squared_cov(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return None;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(var / (mean * mean))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizingRow {
    pub lambda: f64,
    pub rho_robots: f64,
    pub rho_drives: f64,
    pub robot_wait: Option<f64>,
    pub drive_wait: Option<f64>,
    pub end_to_end: Option<f64>,
    /// Name of the unstable queue, if any.
    pub unstable: Option<String>,
}

/// Evaluates the two-queue estimate over a list of arrival rates; unstable
/// points are reported, not dropped.
pub fn sizing_table(
    robots: QueueModelParams,
    drives: QueueModelParams,
    lambdas: &[f64],
    form: LqForm,
) -> Vec<SizingRow> {
    lambdas
        .iter()
        .map(|&lambda| {
            let r = QueueModelParams { lambda, ..robots };
            let d = QueueModelParams { lambda, ..drives };
            let est = end_to_end_estimate(&r, &d, form);
            let (robot_wait, drive_wait, end_to_end, unstable) = match est {
                Ok(e) => (Some(e.robot_wait), Some(e.drive_wait), Some(e.total), None),
                Err(AnalyticsError::Unstable { queue, .. }) => (None, None, None, Some(queue)),
                Err(e) => (None, None, None, Some(e.to_string())),
            };
            SizingRow {
                lambda,
                rho_robots: r.rho(),
                rho_drives: d.rho(),
                robot_wait,
                drive_wait,
                end_to_end,
                unstable,
            }
        })
        .collect()
}

/// Fragment requests per second a configuration sends to its library.
pub fn fragment_rate_per_second(cfg: &SimConfig) -> f64 {
    let fanout = match cfg.protocol {
        Protocol::Redundant => cfg.dispatch_count(),
        Protocol::Failure => cfg.code_k,
    };
    derive_arrival_rate(cfg) / cfg.step_seconds * f64::from(fanout)
}

/// Robot and drive queues of a configuration, in seconds, assuming Poisson
/// arrivals and exponential service.
///
/// A robot spends four motions on the exchange and one on the return. A
/// drive is held from the exchange until its cartridge is back home: five
/// motions plus load, positioning, expected retries and transfer.
pub fn library_queue_params(cfg: &SimConfig) -> (QueueModelParams, QueueModelParams) {
    let lambda = fragment_rate_per_second(cfg);
    let motion = cfg.mean_motion_seconds();
    let robot_service = 5.0 * motion;
    let fragment = cfg.mean_object_size() / f64::from(cfg.code_k);
    let retries = f64::from(cfg.max_retries) * cfg.drive_fail_prob;
    let drive_service =
        5.0 * motion + cfg.mean_load_time + cfg.mean_position_time * (1.0 + retries) + fragment / cfg.drive_rate;
    (
        QueueModelParams::markovian(lambda, 1.0 / robot_service, cfg.num_robots),
        QueueModelParams::markovian(lambda, 1.0 / drive_service, cfg.num_drives),
    )
}
