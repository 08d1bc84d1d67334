//! Seed plumbing.
//!
//! Every stochastic component takes an explicit `u64` seed. A master seed is
//! expanded into named sub-seeds with a SplitMix64-style mixer, so that, for
//! example, the sampling seed of an experiment does not change when the
//! number of training steps does.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for a concrete seed.
pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed derived from `master` and a label. Stable across platforms and
/// releases.
pub fn derive(master: u64, label: &str) -> u64 {
    // FNV-1a over the label, then mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(master ^ splitmix(h))
}

/// Sub-seed derived from `master` and an index (batch number, seed number).
pub fn derive_index(master: u64, index: u64) -> u64 {
    splitmix(master.wrapping_add(splitmix(index.wrapping_add(0x5851_f42d_4c95_7f2d))))
}

/// The named sub-seeds an experiment run is expanded into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SeedPlan {
    pub master: u64,
    pub sampling: u64,
    pub tasks: u64,
    pub init: u64,
    pub training: u64,
    pub latents: u64,
}

impl SeedPlan {
    pub fn new(master: u64) -> Self {
        SeedPlan {
            master,
            sampling: derive(master, "sampling"),
            tasks: derive(master, "tasks"),
            init: derive(master, "init"),
            training: derive(master, "training"),
            latents: derive(master, "latents"),
        }
    }
}
