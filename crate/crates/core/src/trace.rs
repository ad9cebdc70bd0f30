//! Checkpoint rows of the event log.
//!
//! Column mapping (`simQ.csv`):
//!
//! | column     | DR row         | R row                    |
//! |------------|----------------|--------------------------|
//! | `Q_in`     | Q-in           | drive joins the D queue  |
//! | `D_in`     | DR-in          | robot starts the return  |
//! | `Q_out`    | Q-out          | robot assigned           |
//! | `D_out`    | DR-out         | drive back in the pool   |
//! | `Q_len`    | DR length after insertion | D length after insertion |
//! | `Data_out` | Data-access    | empty                    |
//!
//! Data-in is not a column: it is the smallest `Q_in` among the DR rows of
//! the same block, since every initial fragment of an object is queued at
//! its arrival step.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::redundancy::MessageId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum QueueId {
    DR,
    R,
}

impl fmt::Display for QueueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueueId::DR => "DR",
            QueueId::R => "R",
        })
    }
}

impl FromStr for QueueId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DR" => Ok(QueueId::DR),
            "R" => Ok(QueueId::R),
            other => Err(format!("unknown queue id `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub queue: QueueId,
    pub mid: MessageId,
    pub q_in: u64,
    pub d_in: Option<u64>,
    pub q_out: Option<u64>,
    pub d_out: Option<u64>,
    pub q_len: u32,
    pub data_out: Option<u64>,
}

impl TraceRecord {
    pub fn new(queue: QueueId, mid: MessageId, q_in: u64, q_len: u32) -> Self {
        TraceRecord {
            queue,
            mid,
            q_in,
            d_in: None,
            q_out: None,
            d_out: None,
            q_len,
            data_out: None,
        }
    }

    /// `Q_in ≤ Q_out ≤ D_in ≤ Data_out ≤ D_out` over the populated fields.
    /// A later checkpoint may only be set once the earlier ones are, except
    /// `Data_out`, which stays empty on a failed read and on R rows.
    pub fn is_monotone(&self) -> bool {
        if self.q_out.is_none() && (self.d_in.is_some() || self.d_out.is_some() || self.data_out.is_some()) {
            return false;
        }
        if self.d_in.is_none() && (self.d_out.is_some() || self.data_out.is_some()) {
            return false;
        }
        if self.queue == QueueId::R && self.data_out.is_some() {
            return false;
        }
        let mut last = self.q_in;
        for t in [self.q_out, self.d_in, self.data_out, self.d_out].into_iter().flatten() {
            if t < last {
                return false;
            }
            last = t;
        }
        true
    }

    pub fn is_complete(&self) -> bool {
        self.q_out.is_some() && self.d_in.is_some() && self.d_out.is_some()
    }
}
