//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`Stream`], a ChaCha8 generator
//! identified by a 64-bit seed and a 64-bit stream index. Assignment rule:
//!
//! * a Monte Carlo run `r` under master seed `S` uses seed `derive_seed(S, r)`;
//! * inside a run, sequence generation uses `stream(run_seed, 0)`;
//! * a filter labelled `name` uses the seed `derive_seed(run_seed, label_lane(name))`;
//!   particle slot `i` of that filter draws from `stream(filter_seed, i)` and the
//!   resampler draws from `stream(filter_seed, RESAMPLE_LANE)`.
//!
//! Streams belong to particle slots, not to lineages, so results do not depend
//! on the order in which particles are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random generator used throughout the crate.
pub type Stream = ChaCha8Rng;

/// Stream index reserved for the resampler of a particle set.
pub const RESAMPLE_LANE: u64 = u64::MAX;

/// Stream index used for synthetic sequence generation inside a run.
pub const SEQUENCE_LANE: u64 = 0;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `lane` under `parent`. Distinct lanes give unrelated seeds.
pub fn derive_seed(parent: u64, lane: u64) -> u64 {
    splitmix64(parent ^ splitmix64(lane))
}

/// Stable lane number for a textual label (64-bit FNV-1a).
pub fn label_lane(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Stream `index` of generator `seed`.
pub fn stream(seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
