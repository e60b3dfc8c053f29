//! Seeded, splittable randomness.
//!
//! Every generator in the crate is a pure function of `(seed, stream id)`.
//! Streams are realized as ChaCha counter streams, so pilots, activities,
//! channels and noise are independently reproducible, and parallel Monte
//! Carlo trials derive order-independent sub-seeds with [`mix`].

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Well-known stream ids for the model generators.
pub mod stream {
    pub const PILOTS: u64 = 1;
    pub const ACTIVITY: u64 = 2;
    pub const CHANNELS: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const FADING: u64 = 5;
    pub const MONTE_CARLO: u64 = 6;
}

/// RNG for `(seed, stream id)`; distinct stream ids give independent streams.
pub fn substream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for a work item, e.g. `mix(seed, &[sweep_idx, trial])`.
/// Stable across platforms and scheduler orderings.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut s = splitmix64(seed);
    for &p in parts {
        s = splitmix64(s ^ splitmix64(p));
    }
    s
}

/// One draw from CN(0, var): real and imaginary parts each N(0, var/2).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var * 0.5).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}
