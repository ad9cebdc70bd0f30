//! Discrete-event simulator of tape-library cloud storage.
//!
//! A library is a rack of cartridge cells served by robots and drives. User
//! object requests are split into codeword fragments that queue for a free
//! drive and robot (DR queue); drives that finish a read queue for a robot to
//! return their cartridge (D queue). [`engine`] advances both queues in fixed
//! steps, [`rail`] runs arrays of libraries over one request stream, and
//! [`analytics`] gives closed-form queueing estimates to compare against.
//!
//! ```
//! use tapesim::{simulate, SimConfig};
//!
//! let mut cfg = SimConfig::with_hardware(400, 10, 1, 4, 200.0, 300.0);
//! cfg.objects_touched_per_day = Some(200.0);
//! cfg.sim_duration = 2.0;
//! let out = simulate(&cfg).unwrap();
//! let kpis = tapesim::kpi::compute_kpis(&out);
//! assert_eq!(kpis.fragments_enqueued, kpis.fragments_dequeued + kpis.final_dr_len as u64);
//! ```

pub mod analytics;
pub mod config;
pub mod engine;
pub mod error;
pub mod export;
pub mod geometry;
pub mod kpi;
pub mod rail;
pub mod redundancy;
pub mod seed;
pub mod sweep;
pub mod trace;
pub mod workload;

pub use config::{parse_config, parse_config_with_overrides, Protocol, SimConfig};
pub use engine::{simulate, LibrarySim, RunOutput};
pub use error::SimError;
pub use kpi::{compute_kpis, KpiReport};
pub use rail::{run_rail, RailOutput};
