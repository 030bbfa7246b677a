#![allow(dead_code)]

pub mod decode;
pub mod exact;
pub mod scaling;

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use setseg_core::{ActionSet, ForwardCache, HmmParams, HmmVariant};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Scores uniform in `[-scale, scale]`, hidden features in `[0, 1]` with
/// roughly a fifth of them zeroed.
pub fn random_cache(
    rng: &mut impl Rng,
    classes: usize,
    frames: usize,
    hidden: usize,
    scale: f64,
) -> ForwardCache {
    let f = Array2::from_shape_simple_fn((classes, frames), || rng.random_range(-scale..=scale));
    let mut cache = ForwardCache::from_scores(f);
    cache.h = Array2::from_shape_simple_fn((hidden, frames), || {
        if rng.random_bool(0.2) {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        }
    });
    cache
}

/// Random stochastic transitions, priors and mean lengths in `[1, max_len]`.
pub fn random_hmm(rng: &mut impl Rng, classes: usize, max_len: f64) -> HmmParams {
    let mut log_transitions = Array2::from_elem((classes, classes), f64::NEG_INFINITY);
    for i in 0..classes {
        let w: Vec<f64> = (0..classes)
            .map(|j| {
                if i == j {
                    0.0
                } else {
                    rng.random_range(0.05..1.0)
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        for j in (0..classes).filter(|&j| j != i) {
            log_transitions[[i, j]] = (w[j] / total).ln();
        }
    }
    let p: Vec<f64> = (0..classes).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = p.iter().sum();
    HmmParams {
        log_transitions,
        lengths: (0..classes)
            .map(|_| rng.random_range(1.0..=max_len))
            .collect(),
        log_priors: p.iter().map(|v| (v / total).ln()).collect(),
        min_length: 1,
        variant: HmmVariant::Dynamic,
    }
}

/// `size` distinct classes out of `0..classes`.
pub fn random_set(rng: &mut impl Rng, classes: usize, size: usize) -> ActionSet {
    let all: Vec<usize> = (0..classes).collect();
    ActionSet::new(all.choose_multiple(rng, size).copied())
}

pub fn random_labels(rng: &mut impl Rng, set: &ActionSet, frames: usize) -> Vec<usize> {
    (0..frames)
        .map(|_| *set.as_slice().choose(rng).unwrap())
        .collect()
}

/// Relative error with a floor on the denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
