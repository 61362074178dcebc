//! Deterministic random substreams.
//!
//! Every random quantity is drawn from a ChaCha8 stream whose key is derived
//! from `(master seed, trial index, purpose)`. Noise streams additionally select
//! the ChaCha stream id by iteration, so draw `k` of trial `t` is fixed no matter
//! how trials are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifier recorded in manifests so replays know which generator produced a stream.
pub const RNG_ALGORITHM: &str = "chacha8/splitmix64-keyed";

/// What a substream is used for. Distinct purposes never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Topology,
    Problem,
    Adjacent,
    InitialState,
    Noise,
    Tuner,
    Jitter,
    Other(u64),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Topology => 0x746f_706f,
            Purpose::Problem => 0x7072_6f62,
            Purpose::Adjacent => 0x6164_6a63,
            Purpose::InitialState => 0x696e_6974,
            Purpose::Noise => 0x6e6f_6973,
            Purpose::Tuner => 0x7475_6e65,
            Purpose::Jitter => 0x6a69_7474,
            Purpose::Other(x) => 0xff00_0000_0000_0000 ^ x,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 256-bit ChaCha key from the master seed, a trial index and a purpose.
pub fn derive_key(master: u64, trial: u64, purpose: Purpose) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = splitmix64(master) ^ splitmix64(trial.wrapping_add(0x5851_f42d_4c95_7f2d));
    state ^= splitmix64(purpose.tag());
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

/// A generator for `(master, trial, purpose)`.
pub fn substream(master: u64, trial: u64, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_key(master, trial, purpose))
}

/// The noise generator for iteration `k` of a trial.
pub fn noise_stream(master: u64, trial: u64, k: u64) -> ChaCha8Rng {
    let mut rng = substream(master, trial, Purpose::Noise);
    rng.set_stream(k);
    rng
}

/// Deterministic child seed, e.g. for topology retries.
pub fn child_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(0xd134_2543_de82_ef95))
}
