//! Seed derivation.
//!
//! Every random stream in the crate is keyed by a master seed plus a path of
//! integer labels (stream tag, replicate index, subject index, ...). Streams
//! never depend on the order in which work is scheduled, so results are
//! identical for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep unrelated consumers of the same master seed apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    CovariateCoefficient = 1,
    CovariateNoise = 2,
    Wiener = 3,
    Bootstrap = 4,
    AbcPrior = 5,
    AbcNoise = 6,
    Gibbs = 7,
    Init = 8,
    Experiment = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a label path.
pub fn derive(master: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(master), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn derive_stream(master: u64, stream: Stream, labels: &[u64]) -> u64 {
    let mut path = Vec::with_capacity(labels.len() + 1);
    path.push(stream as u64);
    path.extend_from_slice(labels);
    derive(master, &path)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
