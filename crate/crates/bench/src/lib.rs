//! Random decoding fixtures shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use setseg_core::nnet::forward;
use setseg_core::{ActionSet, ForwardCache, HmmParams, NetworkParams};

pub struct Fixture {
    pub cache: ForwardCache,
    pub hmm: HmmParams,
    pub set: ActionSet,
}

/// A random network applied to uniform noise features, with a uniform HMM
/// whose mean lengths split `frames` evenly across the first `set_size`
/// classes.
pub fn fixture(frames: usize, num_classes: usize, set_size: usize, seed: u64) -> Fixture {
    assert!(set_size <= num_classes && set_size > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 16;
    let net = NetworkParams::random(dim, 32, num_classes, &mut rng);
    let x = Array2::from_shape_simple_fn((dim, frames), || rng.random_range(-1.0..1.0));
    let cache = forward(&net, x.view()).expect("fixture dimensions agree");
    let hmm = HmmParams::uniform(num_classes, frames as f64 / set_size as f64, 1);
    Fixture {
        cache,
        hmm,
        set: ActionSet::new(0..set_size),
    }
}
