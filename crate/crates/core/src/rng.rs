//! Deterministic, counter-addressed random streams.
//!
//! Every random draw in the artifact comes from a ChaCha stream derived from
//! one master seed plus a purpose tag and up to two counters. Streams are
//! stateless functions of `(seed, purpose, a, b)`, so training can resume at
//! any step and reproduce the exact draw sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

/// Purpose tag keeping independent uses of randomness on disjoint streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    /// Per-(step, slot) training draws: posterior noise and the timestep.
    TrainDraw = 1,
    /// Per-epoch batch permutation.
    Permutation = 2,
    /// Per-index training pair generation.
    DataTrain = 3,
    /// Per-index test pair generation.
    DataTest = 4,
    /// Parameter initialization, one counter per parameter store role.
    Init = 5,
    /// Per-sample reverse-process sampling.
    Sampler = 6,
    /// Monte-Carlo estimators in diagnostics.
    MonteCarlo = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed for stream `(master, kind, a, b)`.
pub fn stream_seed(master: u64, kind: StreamKind, a: u64, b: u64) -> u64 {
    let mut z = splitmix64(master ^ 0x5275_6e53_7472_6d31);
    z = splitmix64(z ^ (kind as u64));
    z = splitmix64(z ^ a);
    splitmix64(z ^ b)
}

/// Opens the ChaCha stream for `(master, kind, a, b)`.
pub fn stream(master: u64, kind: StreamKind, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, kind, a, b))
}

/// Draws `n` standard normals. Sampling happens in f64 so that f32 and f64
/// runs of the same seed see the same underlying draws.
pub fn normal_vec<S: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<S> {
    (0..n)
        .map(|_| {
            let u: f64 = StandardNormal.sample(rng);
            S::of(u)
        })
        .collect()
}
