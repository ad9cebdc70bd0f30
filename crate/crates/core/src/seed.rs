//! Stream seeding.
//!
//! Every random stream in a run is keyed by the run's base seed plus a path of
//! indices and a label. Libraries of a RAIL array share the `arrivals` stream
//! and own their `service` streams, which is what lets them run one after
//! another while still seeing the same request pattern.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream type used everywhere in the simulator.
pub type SimRng = ChaCha8Rng;

pub const ARRIVALS: &str = "arrivals";
pub const SERVICE: &str = "service";
pub const DISPATCH: &str = "dispatch";
pub const EXTRA_LOAD: &str = "extra-load";
pub const SWEEP: &str = "sweep";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// 64-bit seed for the stream `(base, indices…, label)`.
pub fn derive_seed(base: u64, indices: &[u64], label: &str) -> u64 {
    let mut h = splitmix64(base);
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    splitmix64(h ^ fnv1a(label))
}

pub fn stream(base: u64, indices: &[u64], label: &str) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, indices, label))
}
