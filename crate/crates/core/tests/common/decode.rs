//! Random decoding instances and re-enumeration of coverage flips.

use rand::Rng;

use super::{random_cache, random_hmm, random_set, rng};
use setseg_core::scv::{flip_keeps_coverage, log_posterior, ScvTrace};
use setseg_core::{ActionSet, ForwardCache, HmmParams, Segmentation};

pub struct Instance {
    pub cache: ForwardCache,
    pub hmm: HmmParams,
    pub set: ActionSet,
}

/// Up to four vocabulary classes, a set of at most three, and
/// `min_frames..=max_frames` frames (never fewer than the set size).
pub fn instance(seed: u64, max_frames: usize, min_frames: usize) -> Instance {
    let mut r = rng(seed);
    let classes = r.random_range(1..=4);
    let size = r.random_range(1..=classes.min(3));
    let frames = r.random_range(min_frames.max(size)..=max_frames.max(size));
    Instance {
        cache: random_cache(&mut r, classes, frames, 3, 2.0),
        hmm: random_hmm(&mut r, classes, frames as f64),
        set: random_set(&mut r, classes, size),
    }
}

/// Largest gap between each accepted flip's posterior and the best
/// admissible (oversegment, missing class) candidate at that step;
/// infinite if a flip targets a class that was not missing.
pub fn flip_argmax_error(trace: &ScvTrace, inst: &Instance) -> f64 {
    let mut err: f64 = 0.0;
    for step in &trace.flips {
        let present = Segmentation::from_labels(&step.labels_before).classes();
        let missing = inst.set.difference(&present);
        if !missing.contains(step.new_class) {
            return f64::INFINITY;
        }
        let mut best = f64::NEG_INFINITY;
        for c in missing.iter() {
            for over in step
                .available
                .iter()
                .filter(|o| flip_keeps_coverage(&step.labels_before, o))
            {
                let mut labels = step.labels_before.clone();
                labels[over.start..=over.end].fill(c);
                best = best.max(
                    log_posterior(&Segmentation::from_labels(&labels), &inst.cache, &inst.hmm)
                        .unwrap(),
                );
            }
        }
        err = err.max((best - step.log_posterior).abs());
    }
    err
}
