use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seed for one epoch's shuffle: the run seed xor a mix of the epoch index.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// The seeded permutation of `0..n` used for `epoch`.
pub fn epoch_permutation(n: usize, epoch: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch)));
    order
}

/// Mini-batches of one epoch: the epoch permutation chunked into `ceil(n / b)`
/// batches, the last one possibly shorter.
pub fn batch_iter(n: usize, batch_size: usize, epoch: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    Ok(epoch_permutation(n, epoch, seed)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}
