//! Counter-based seeding: every random stream is keyed by the root seed, a
//! stream tag and the indices it belongs to, so no stream depends on how many
//! others were drawn before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    PilotSymbols = 1,
    Channel = 2,
    PilotNoise = 3,
    DataBits = 4,
    DataNoise = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds the words into one 64-bit key.
pub fn mix(words: &[u64]) -> u64 {
    words.iter().fold(0x6a09_e667_f3bc_c908, |acc, w| splitmix64(acc ^ splitmix64(*w)))
}

pub fn stream_rng(root: u64, stream: Stream, indices: &[u64]) -> ChaCha8Rng {
    let mut words = vec![root, stream as u64];
    words.extend_from_slice(indices);
    ChaCha8Rng::seed_from_u64(mix(&words))
}

/// Streams tied to an SNR point are keyed by its value, not its position in the sweep.
pub fn snr_key(snr_db: f64) -> u64 {
    snr_db.to_bits()
}
