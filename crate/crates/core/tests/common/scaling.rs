//! Growth of measured DP cell updates when the video length doubles.

use super::{random_cache, random_hmm, random_set, rng};
use setseg_core::infer::{mc_segment, GrammarPool, InferenceOptions};
use setseg_core::scv::scv_decode_traced;
use setseg_core::ActionSet;

const SEEDS: u64 = 5;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Training decode at fixed vocabulary, T = 100 to 200.
pub fn training_growth() -> f64 {
    let ratios: Vec<f64> = (0..SEEDS)
        .map(|seed| {
            let mut r = rng(seed);
            let hmm = random_hmm(&mut r, 4, 30.0);
            let set = ActionSet::new([0, 1, 2, 3]);
            let mut count = |frames: usize| {
                let cache = random_cache(&mut r, 4, frames, 3, 2.0);
                scv_decode_traced(&cache, &hmm, &set, false)
                    .unwrap()
                    .cell_updates as f64
            };
            let small = count(100);
            count(200) / small
        })
        .collect();
    mean(&ratios)
}

/// Monte Carlo inference at fixed vocabulary and candidate count.
///
/// Mean lengths scale with the video so sequences keep their length; the
/// triangular alignment DP then grows like ((2T - n) / (T - n))^2 for n
/// actions, which is within the quadratic bound only once T is well above n.
pub fn inference_growth() -> f64 {
    let classes = 5;
    let opts = InferenceOptions {
        candidates: 50,
        ..Default::default()
    };
    let ratios: Vec<f64> = (0..SEEDS)
        .map(|seed| {
            let mut r = rng(seed);
            let hmm = random_hmm(&mut r, classes, 20.0);
            let sets: Vec<ActionSet> = (0..4).map(|_| random_set(&mut r, classes, 3)).collect();
            let pool = GrammarPool::new(sets.iter()).unwrap();
            let mut run = |frames: usize, scale: f64| {
                let cache = random_cache(&mut r, classes, frames, 0, 2.0);
                let mut h = hmm.clone();
                h.lengths.iter_mut().for_each(|l| *l *= scale);
                mc_segment(&cache, &h, &pool, &opts, &mut rng(seed))
                    .unwrap()
                    .cell_updates as f64
            };
            let small = run(400, 4.0);
            run(800, 8.0) / small
        })
        .collect();
    mean(&ratios)
}
