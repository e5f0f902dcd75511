//! Counter-based random streams and deterministic chunked parallelism.
//!
//! Every chunk of work draws from its own ChaCha8 stream keyed by
//! `(seed, stream)`, so results do not depend on how chunks are scheduled
//! across threads. Chunk results are always returned in chunk order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default number of samples handled by one chunk.
pub const CHUNK: usize = 2048;

/// A reproducible generator for one `(seed, stream)` pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a base stream id with a sub-index into a fresh stream id.
pub fn derive_stream(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splits `n` items into fixed-size chunks and runs `f(rng, offset, len)`
/// on each, in parallel on the current rayon pool.
pub fn par_chunks<T, F>(seed: u64, stream: u64, n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize, usize) -> T + Sync,
{
    let chunk = chunk.max(1);
    let count = n.div_ceil(chunk);
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, derive_stream(stream, i as u64));
            let offset = i * chunk;
            f(&mut rng, offset, chunk.min(n - offset))
        })
        .collect()
}

/// Runs `f` on a dedicated pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}
