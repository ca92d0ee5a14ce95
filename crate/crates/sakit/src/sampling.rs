//! Index sampling shared by the mini-batch oracles.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::{Error, Result};

/// Whether a mini-batch is drawn with or without replacement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Replacement {
    With,
    Without,
}

/// Draws `b` indices from `0..n`.
///
/// Without replacement the indices come from a partial Fisher–Yates shuffle, so every
/// subset of size `b` is equally likely.
pub fn sample_indices<R: Rng + ?Sized>(
    n: usize,
    b: usize,
    replacement: Replacement,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::EmptyProblem);
    }
    if b == 0 || (replacement == Replacement::Without && b > n) {
        return Err(Error::BatchTooLarge { batch: b, n });
    }
    Ok(match replacement {
        Replacement::With => (0..b).map(|_| rng.random_range(0..n)).collect(),
        Replacement::Without => {
            let mut pool: Vec<usize> = (0..n).collect();
            let (chosen, _) = pool.partial_shuffle(rng, b);
            chosen.to_vec()
        }
    })
}

/// Draws a label from a probability vector by inverting the cumulative sum.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding can leave the total a hair below one; fall back to the last positive label.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
