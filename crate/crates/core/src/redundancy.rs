//! Replication / MDS erasure-code bookkeeping and the two retrieval protocols.
//!
//! Only fragment counts and timing matter here; no coding arithmetic is done.
//! Fragment indices run `1..=n`; for systematic codes `1..=k` are the data
//! fragments.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Protocol;

/// `block.fragment`, e.g. `312.2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MessageId {
    pub block_id: u64,
    pub fragment: u32,
}

impl MessageId {
    pub fn new(block_id: u64, fragment: u32) -> Self {
        MessageId { block_id, fragment }
    }
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.block_id, self.fragment)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed message id `{0}`")]
pub struct MessageIdParseError(pub String);

impl FromStr for MessageId {
    type Err = MessageIdParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || MessageIdParseError(s.to_string());
        let (b, f) = s.split_once('.').ok_or_else(err)?;
        Ok(MessageId {
            block_id: b.parse().map_err(|_| err())?,
            fragment: f.parse().map_err(|_| err())?,
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RedundancyError {
    #[error("unable to retrieve the data object {block_id}")]
    Unrecoverable { block_id: u64 },
    #[error("invalid code parameters n={n}, k={k}, s={s}")]
    InvalidParameters { n: u32, k: u32, s: u32 },
    #[error("codeword needs {expected} distinct fragment homes, got {given}")]
    FragmentHomes { expected: usize, given: usize },
}

/// One fragment request bound for a DR queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FragmentRequest {
    pub mid: MessageId,
    /// Step the owning object first met the system (Data-in).
    pub data_in: u64,
    pub cartridge: u32,
    /// MB.
    pub size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CodewordStatus {
    Pending,
    Complete { step: u64 },
    Unrecoverable { step: u64 },
}

/// Bookkeeping for one object request.
#[derive(Debug, Clone)]
pub struct Codeword {
    pub block_id: u64,
    pub n: u32,
    pub k: u32,
    pub systematic: bool,
    /// Home of fragment `i + 1` (cartridge or library id).
    pub fragment_homes: Vec<u32>,
    pub fragment_size: f64,
    pub timestamp: u64,
    dispatched: Vec<u32>,
    unused: Vec<u32>,
    outstanding: Vec<u32>,
    completed: Vec<(u32, u64)>,
    failures: u32,
    status: CodewordStatus,
}

impl Codeword {
    pub fn new(
        block_id: u64,
        n: u32,
        k: u32,
        systematic: bool,
        fragment_homes: Vec<u32>,
        object_size: f64,
        timestamp: u64,
    ) -> Result<Self, RedundancyError> {
        if k == 0 || n < k {
            return Err(RedundancyError::InvalidParameters { n, k, s: 0 });
        }
        let mut sorted = fragment_homes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if fragment_homes.len() != n as usize || sorted.len() != n as usize {
            return Err(RedundancyError::FragmentHomes {
                expected: n as usize,
                given: sorted.len(),
            });
        }
        Ok(Codeword {
            block_id,
            n,
            k,
            systematic,
            fragment_homes,
            fragment_size: object_size / f64::from(k),
            timestamp,
            dispatched: Vec::new(),
            unused: (1..=n).collect(),
            outstanding: Vec::new(),
            completed: Vec::new(),
            failures: 0,
            status: CodewordStatus::Pending,
        })
    }

    fn request(&mut self, fragment: u32) -> FragmentRequest {
        self.unused.retain(|&i| i != fragment);
        self.dispatched.push(fragment);
        self.outstanding.push(fragment);
        FragmentRequest {
            mid: MessageId::new(self.block_id, fragment),
            data_in: self.timestamp,
            cartridge: self.fragment_homes[fragment as usize - 1],
            size: self.fragment_size,
        }
    }

    /// Redundant protocol: fragments `1..=s` in index order, all at once.
    pub fn dispatch_redundant(&mut self, s: u32) -> Result<Vec<FragmentRequest>, RedundancyError> {
        if s < self.k || s > self.n {
            return Err(RedundancyError::InvalidParameters {
                n: self.n,
                k: self.k,
                s,
            });
        }
        Ok((1..=s).map(|i| self.request(i)).collect())
    }

    /// Failure protocol: a uniformly random `k`-subset, in index order.
    pub fn dispatch_failure<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<FragmentRequest> {
        let mut pick: Vec<u32> = self.unused.choose_multiple(rng, self.k as usize).copied().collect();
        pick.sort_unstable();
        pick.into_iter().map(|i| self.request(i)).collect()
    }

    /// Dispatches exactly the given fragments (used by RAIL members).
    pub fn dispatch_exact(&mut self, fragments: &[u32]) -> Vec<FragmentRequest> {
        fragments.iter().map(|&i| self.request(i)).collect()
    }

    pub fn status(&self) -> CodewordStatus {
        self.status
    }

    pub fn dispatched(&self) -> &[u32] {
        &self.dispatched
    }

    pub fn completed(&self) -> &[(u32, u64)] {
        &self.completed
    }

    pub fn failures(&self) -> u32 {
        self.failures
    }

    pub fn is_outstanding(&self, fragment: u32) -> bool {
        self.outstanding.contains(&fragment)
    }

    /// Records a successful fragment service. Returns the completion step when
    /// this success is the `k`-th. Late or discarded fragments are ignored.
    pub fn record_success(&mut self, fragment: u32, step: u64) -> Option<u64> {
        if !self.is_outstanding(fragment) {
            return None;
        }
        self.outstanding.retain(|&i| i != fragment);
        if self.status != CodewordStatus::Pending {
            return None;
        }
        self.completed.push((fragment, step));
        if self.completed.len() as u32 == self.k {
            self.status = CodewordStatus::Complete { step };
            Some(step)
        } else {
            None
        }
    }

    /// Records a timed-out or failed fragment. Under the Failure protocol this
    /// yields a replacement drawn from the unused indices; once cumulative
    /// failures exceed `n − k` the object is unrecoverable. Under the
    /// Redundant protocol nothing is re-dispatched and the object fails once
    /// fewer than `k` fragments can still arrive.
    pub fn record_failure<R: Rng + ?Sized>(
        &mut self,
        protocol: Protocol,
        fragment: u32,
        step: u64,
        rng: &mut R,
    ) -> Result<Option<FragmentRequest>, RedundancyError> {
        if !self.is_outstanding(fragment) {
            return Ok(None);
        }
        self.outstanding.retain(|&i| i != fragment);
        if self.status != CodewordStatus::Pending {
            return Ok(None);
        }
        self.failures += 1;
        let unrecoverable = RedundancyError::Unrecoverable {
            block_id: self.block_id,
        };
        match protocol {
            Protocol::Failure => {
                if self.failures > self.n - self.k || self.unused.is_empty() {
                    self.status = CodewordStatus::Unrecoverable { step };
                    return Err(unrecoverable);
                }
                let pick = self.unused[rng.random_range(0..self.unused.len())];
                Ok(Some(self.request(pick)))
            }
            Protocol::Redundant => {
                if self.completed.len() + self.outstanding.len() < self.k as usize {
                    self.status = CodewordStatus::Unrecoverable { step };
                    Err(unrecoverable)
                } else {
                    Ok(None)
                }
            }
        }
    }

    /// Decoder time owed on completion: always for non-systematic codes, and
    /// for systematic codes only when a parity fragment was used.
    pub fn decode_latency_penalty(&self, decode_seconds: f64) -> f64 {
        let used_parity = self.completed.iter().any(|&(i, _)| i > self.k);
        if !self.systematic || used_parity {
            decode_seconds
        } else {
            0.0
        }
    }
}

/// `k`-th smallest value (1-based) or `None` when fewer than `k` exist.
pub fn kth_smallest<T: PartialOrd + Copy>(values: &[T], k: usize) -> Option<T> {
    if k == 0 || values.len() < k {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("comparable values"));
    Some(v[k - 1])
}
