use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Two interleaving half-circles.
///
/// `ceil(n/2)` points labeled 0 lie on the upper unit half-circle
/// `(cos t, sin t)`, `floor(n/2)` points labeled 1 on the mirrored half-circle
/// `(1 - cos t, 0.5 - sin t)`, with `t` evenly spaced over `[0, pi]`. Each
/// coordinate then receives independent Gaussian noise. Rows are ordered
/// class 0 first.
pub fn two_moons(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("two_moons needs n >= 2, got {n}")));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "noise_std must be a finite non-negative number, got {noise_std}"
        )));
    }
    let upper = n.div_ceil(2);
    let lower = n / 2;
    let angle = |i: usize, count: usize| {
        if count == 1 {
            0.0
        } else {
            PI * i as f64 / (count - 1) as f64
        }
    };
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..upper {
        let t = angle(i, upper);
        data.extend([t.cos(), t.sin()]);
        labels.push(0);
    }
    for i in 0..lower {
        let t = angle(i, lower);
        data.extend([1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(1);
    }
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_std).expect("valid noise std");
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }
    Dataset::new(Tensor::new(vec![n, 2], data)?, labels, 2)
}
