//! Reproducible random substreams and order-stable parallel reduction.
//!
//! Every Monte Carlo trial (or protocol round) draws from its own generator,
//! keyed by `(master seed, tag, index)`:
//!
//! ```text
//! mix(z)  = splitmix64 finalizer of z + 0x9E3779B97F4A7C15
//! tag64   = FNV-1a 64 of the UTF-8 tag
//! seed    = mix(mix(master ^ tag64) ^ index)
//! stream  = ChaCha8Rng::seed_from_u64(seed)
//! ```
//!
//! Trials are folded in fixed chunks of [`CHUNK`] consecutive indices and the
//! chunk results are merged strictly in index order, so results are bitwise
//! identical for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type StreamRng = ChaCha8Rng;

/// Number of consecutive trials folded sequentially before merging.
pub const CHUNK: u64 = 1024;

pub fn mix(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn substream_seed(master: u64, tag: &str, index: u64) -> u64 {
    mix(mix(master ^ tag_hash(tag)) ^ index)
}

pub fn substream(master: u64, tag: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(substream_seed(master, tag, index))
}

/// Folds `step` over `0..trials` and merges the per-chunk accumulators in
/// chunk order.
pub fn fold_trials<A, Init, Step, Merge>(trials: u64, init: Init, step: Step, merge: Merge) -> A
where
    A: Send,
    Init: Fn() -> A + Sync + Send,
    Step: Fn(&mut A, u64) + Sync + Send,
    Merge: Fn(&mut A, A),
{
    let chunks = trials.div_ceil(CHUNK);
    let partials: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            let end = ((c + 1) * CHUNK).min(trials);
            for i in c * CHUNK..end {
                step(&mut acc, i);
            }
            acc
        })
        .collect();
    let mut total = init();
    for part in partials {
        merge(&mut total, part);
    }
    total
}
