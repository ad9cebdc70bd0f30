//! Request stream generation: Poisson arrivals, Weibull object sizes, uniform
//! placement of codeword fragments on distinct cartridges, and per-user
//! collocation buffering.

use rand::distr::weighted::WeightedIndex;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp, Weibull};
use serde::Serialize;

use crate::config::{ObjectSizeModel, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Read,
    Write,
}

/// One user object request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataRequest {
    pub request_id: u64,
    pub user_id: u32,
    pub arrival_step: u64,
    /// MB.
    pub object_size: f64,
    /// Home cartridge of fragment `i + 1`; all distinct.
    pub home_cartridges: Vec<u32>,
    pub kind: RequestKind,
}

enum SizeSampler {
    Fixed(f64),
    Weibull(Weibull<f64>),
}

impl SizeSampler {
    fn new(cfg: &SimConfig) -> Self {
        match cfg.object_size_model {
            ObjectSizeModel::Fixed => SizeSampler::Fixed(cfg.object_size_scale),
            ObjectSizeModel::Weibull => SizeSampler::Weibull(
                Weibull::new(cfg.object_size_scale, cfg.object_size_shape).expect("validated Weibull parameters"),
            ),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            SizeSampler::Fixed(v) => *v,
            // Weibull can return exactly 0 in floating point; sizes must be positive.
            SizeSampler::Weibull(w) => w.sample(rng).max(f64::MIN_POSITIVE),
        }
    }
}

/// Generates every request arriving in `[0, horizon)` at `rate` requests per
/// step. Inter-arrival gaps are exponential in continuous step time and each
/// arrival lands on the step containing it, so per-step counts are Poisson.
pub fn generate_arrivals<R: Rng + ?Sized>(cfg: &SimConfig, rate: f64, horizon: u64, rng: &mut R) -> Vec<DataRequest> {
    let mut out = Vec::new();
    if rate <= 0.0 || horizon == 0 {
        return out;
    }
    let gap = Exp::new(rate).expect("positive rate");
    let sizes = SizeSampler::new(cfg);
    let users = cfg
        .user_weights
        .as_ref()
        .map(|w| WeightedIndex::new(w).expect("validated weights"));
    let placements = cfg.code_n as usize;
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        let step = t.floor();
        if step >= horizon as f64 {
            break;
        }
        let user_id = match &users {
            Some(w) => w.sample(rng) as u32,
            None => rng.random_range(0..cfg.num_users),
        };
        let object_size = sizes.sample(rng);
        let home_cartridges = sample(rng, cfg.num_cartridges as usize, placements)
            .into_iter()
            .map(|c| c as u32)
            .collect();
        let kind = if cfg.write_fraction > 0.0 && rng.random_bool(cfg.write_fraction) {
            RequestKind::Write
        } else {
            RequestKind::Read
        };
        out.push(DataRequest {
            request_id: out.len() as u64,
            user_id,
            arrival_step: step as u64,
            object_size,
            home_cartridges,
            kind,
        });
    }
    out
}

#[derive(Debug, Clone, Default)]
struct UserBuffer {
    pending: Vec<DataRequest>,
    bytes: f64,
}

/// Per-user collocation buffers. A user's requests accumulate until their
/// total size reaches the threshold, then leave as one merged request.
#[derive(Debug, Clone)]
pub struct CollocationBuffer {
    threshold: f64,
    users: Vec<UserBuffer>,
    next_id: u64,
    bytes_in: f64,
    bytes_out: f64,
}

impl CollocationBuffer {
    pub fn new(threshold: f64, num_users: u32, first_id: u64) -> Self {
        CollocationBuffer {
            threshold,
            users: vec![UserBuffer::default(); num_users as usize],
            next_id: first_id,
            bytes_in: 0.0,
            bytes_out: 0.0,
        }
    }

    fn merge(&mut self, user: usize, step: u64) -> Option<DataRequest> {
        let buf = std::mem::take(&mut self.users[user]);
        let first = buf.pending.first()?;
        let merged = DataRequest {
            request_id: self.next_id,
            user_id: first.user_id,
            arrival_step: step,
            object_size: buf.bytes,
            home_cartridges: first.home_cartridges.clone(),
            kind: first.kind,
        };
        self.next_id += 1;
        self.bytes_out += merged.object_size;
        Some(merged)
    }

    /// Buffers `incoming`; returns the merged request when the user's buffer
    /// reaches the threshold. A zero threshold passes everything through.
    pub fn collocate(&mut self, incoming: DataRequest) -> Option<DataRequest> {
        self.bytes_in += incoming.object_size;
        if self.threshold <= 0.0 {
            self.bytes_out += incoming.object_size;
            return Some(incoming);
        }
        let user = incoming.user_id as usize;
        let step = incoming.arrival_step;
        let buf = &mut self.users[user];
        buf.bytes += incoming.object_size;
        buf.pending.push(incoming);
        if buf.bytes >= self.threshold {
            self.merge(user, step)
        } else {
            None
        }
    }

    /// Empties every partial buffer, stamping the merged requests with `step`.
    pub fn flush_all(&mut self, step: u64) -> Vec<DataRequest> {
        (0..self.users.len()).filter_map(|u| self.merge(u, step)).collect()
    }

    pub fn bytes_in(&self) -> f64 {
        self.bytes_in
    }

    pub fn bytes_out(&self) -> f64 {
        self.bytes_out
    }

    pub fn buffered_bytes(&self) -> f64 {
        self.users.iter().map(|u| u.bytes).sum()
    }
}

/// Arrivals after collocation, with request ids renumbered in stream order.
pub fn build_request_stream<R: Rng + ?Sized>(
    cfg: &SimConfig,
    rate: f64,
    horizon: u64,
    rng: &mut R,
) -> Vec<DataRequest> {
    let raw = generate_arrivals(cfg, rate, horizon, rng);
    let mut out = if cfg.collocation_threshold > 0.0 {
        let mut buffer = CollocationBuffer::new(cfg.collocation_threshold, cfg.num_users, 0);
        let mut merged: Vec<DataRequest> = raw.into_iter().filter_map(|r| buffer.collocate(r)).collect();
        merged.extend(buffer.flush_all(horizon.saturating_sub(1)));
        merged
    } else {
        raw
    };
    for (i, r) in out.iter_mut().enumerate() {
        r.request_id = i as u64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    fn cfg() -> SimConfig {
        let mut c = SimConfig::with_hardware(100, 10, 1, 2, 100.0, 300.0);
        c.num_users = 4;
        c.code_n = 3;
        c
    }

    #[test]
    fn zero_rate_is_empty() {
        let mut rng = stream(1, &[], "a");
        assert!(generate_arrivals(&cfg(), 0.0, 1000, &mut rng).is_empty());
    }

    #[test]
    fn six_hundred_per_day_over_three_days() {
        let c = cfg();
        let rate = 600.0 / 86_400.0;
        let mut rng = stream(11, &[], "a");
        let reqs = generate_arrivals(&c, rate, 3 * 86_400, &mut rng);
        let n = reqs.len() as f64;
        assert!((n - 1800.0).abs() <= 3.0 * 1800f64.sqrt(), "{n}");
        for w in reqs.windows(2) {
            assert!(w[0].arrival_step <= w[1].arrival_step);
        }
        for r in &reqs {
            assert!(r.arrival_step < 3 * 86_400);
            assert!(r.user_id < 4);
            let mut h = r.home_cartridges.clone();
            h.sort_unstable();
            h.dedup();
            assert_eq!(h.len(), 3);
        }
    }

    #[test]
    fn collocation_merges_every_tenth_request() {
        let mut buf = CollocationBuffer::new(100.0, 1, 0);
        let mut emitted = 0;
        for i in 0..1000u64 {
            let r = DataRequest {
                request_id: i,
                user_id: 0,
                arrival_step: i,
                object_size: 10.0,
                home_cartridges: vec![0],
                kind: RequestKind::Read,
            };
            if let Some(m) = buf.collocate(r) {
                assert!((m.object_size - 100.0).abs() < 1e-9);
                assert_eq!(m.arrival_step % 10, 9);
                emitted += 1;
            }
        }
        assert_eq!(emitted, 100);
    }

    #[test]
    fn disabled_collocation_passes_through_and_oversized_flushes_alone() {
        let r = DataRequest {
            request_id: 5,
            user_id: 0,
            arrival_step: 3,
            object_size: 7.0,
            home_cartridges: vec![1],
            kind: RequestKind::Read,
        };
        let mut off = CollocationBuffer::new(0.0, 1, 0);
        assert_eq!(off.collocate(r.clone()), Some(r.clone()));
        let mut on = CollocationBuffer::new(5.0, 1, 0);
        let m = on.collocate(r).unwrap();
        assert_eq!(m.object_size, 7.0);
        assert_eq!(on.buffered_bytes(), 0.0);
    }
}
