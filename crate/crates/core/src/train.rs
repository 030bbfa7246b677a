//! Paired training with set-constrained pseudo-labels.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hmm::{
    estimate_static, DynamicCounts, HmmParams, HmmVariant, VideoSummary, DEFAULT_MIN_LENGTH,
};
use crate::nnet::{
    backward, ce_loss_and_grad, forward, npair_loss_and_grad, sgd_step, FeatureMode, Gradients,
    NetworkParams, PairSide, Regularizer, DEFAULT_HIDDEN, DEFAULT_LOSS_WEIGHT,
};
use crate::scv::scv_decode_traced;
use crate::segmentation::Segmentation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// Iteration from which `lr_final` applies.
    pub lr_step: usize,
    /// Weight of the cross-entropy term; the regularizer gets `1 - weight`.
    pub loss_weight: f64,
    pub hmm: HmmVariant,
    pub feature_mode: FeatureMode,
    pub regularizer: Regularizer,
    pub seed: u64,
    pub prune: bool,
    pub min_length: usize,
    pub hidden: usize,
    /// Dynamic counts are rebuilt from the whole bank at this period.
    pub full_recompute_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 50_000,
            lr_initial: 0.01,
            lr_final: 0.001,
            lr_step: 10_000,
            loss_weight: DEFAULT_LOSS_WEIGHT,
            hmm: HmmVariant::Dynamic,
            feature_mode: FeatureMode::Hard,
            regularizer: Regularizer::Npair,
            seed: 0,
            prune: false,
            min_length: DEFAULT_MIN_LENGTH,
            hidden: DEFAULT_HIDDEN,
            full_recompute_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr_initial > 0.0
            && self.lr_initial.is_finite()
            && self.lr_final > 0.0
            && self.lr_final.is_finite())
        {
            return bad(format!(
                "learning rates must be positive, got {} and {}",
                self.lr_initial, self.lr_final
            ));
        }
        if !(0.0..=1.0).contains(&self.loss_weight) {
            return bad(format!("loss weight {} outside [0, 1]", self.loss_weight));
        }
        if self.min_length == 0 || self.hidden == 0 || self.full_recompute_every == 0 {
            return bad("min_length, hidden and full_recompute_every must be positive".into());
        }
        Ok(())
    }

    /// Learning rate for the 0-based iteration `i`.
    pub fn learning_rate(&self, i: usize) -> f64 {
        if i + 1 >= self.lr_step {
            self.lr_final
        } else {
            self.lr_initial
        }
    }
}

/// Uniform draws over unordered pairs of distinct videos sharing a class.
#[derive(Debug, Clone)]
pub struct PairSampler {
    pairs: Vec<(usize, usize)>,
}

impl PairSampler {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        let videos = &dataset.videos;
        let mut pairs = Vec::new();
        for i in 0..videos.len() {
            for j in i + 1..videos.len() {
                if !videos[i].set.intersection(&videos[j].set).is_empty() {
                    pairs.push((i, j));
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::InvalidArgument(
                "no two training videos share an action".into(),
            ));
        }
        Ok(PairSampler { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// The order within the pair is random as well.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let (a, b) = self.pairs[rng.random_range(0..self.pairs.len())];
        if rng.random::<bool>() {
            (b, a)
        } else {
            (a, b)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub net: NetworkParams,
    pub hmm: HmmParams,
    pub static_hmm: HmmParams,
    /// Latest decoded segmentation per training video.
    pub bank: Vec<Segmentation>,
    pub counts: DynamicCounts,
    pub iteration: usize,
    pub rng: ChaCha8Rng,
    sampler: PairSampler,
}

impl TrainState {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            net: self.net.clone(),
            hmm: self.hmm.clone(),
        }
    }

    pub fn sampler(&self) -> &PairSampler {
        &self.sampler
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub videos: (usize, usize),
    /// Cross-entropy summed over both videos.
    pub ce: f64,
    pub npair: f64,
    pub loss: f64,
    pub lr: f64,
    /// Coverage flips applied by the set-constrained decode, both videos.
    pub flips: usize,
}

fn check_training_data(dataset: &Dataset) -> Result<()> {
    dataset.validate()?;
    if dataset.videos.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    for v in &dataset.videos {
        if v.num_frames() < v.set.len() {
            return Err(Error::CoverageInfeasible(format!(
                "video {} has {} frames for {} classes",
                v.id,
                v.num_frames(),
                v.set.len()
            )));
        }
    }
    Ok(())
}

/// Static HMM from the sets, seeded network, and a bank decoded under the
/// static HMM with the initial network.
pub fn initialize(dataset: &Dataset, config: &TrainConfig) -> Result<TrainState> {
    config.validate()?;
    check_training_data(dataset)?;
    let sampler = PairSampler::new(dataset)?;
    let k = dataset.num_classes();
    let summaries: Vec<VideoSummary<'_>> = dataset
        .videos
        .iter()
        .map(|v| VideoSummary {
            set: &v.set,
            num_frames: v.num_frames(),
        })
        .collect();
    let static_hmm = estimate_static(&summaries, k, config.min_length)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = dataset.feature_dim().unwrap_or(0);
    let net = NetworkParams::random(d, config.hidden, k, &mut rng);
    let mut bank = Vec::with_capacity(dataset.videos.len());
    for v in &dataset.videos {
        let cache = forward(&net, v.features.view())?;
        bank.push(scv_decode_traced(&cache, &static_hmm, &v.set, config.prune)?.segmentation);
    }
    let counts = DynamicCounts::from_bank(&bank, k);
    let hmm = match config.hmm {
        HmmVariant::Static => static_hmm.clone(),
        HmmVariant::Dynamic => counts.to_params(&static_hmm),
    };
    Ok(TrainState {
        net,
        hmm,
        static_hmm,
        bank,
        counts,
        iteration: 0,
        rng,
        sampler,
    })
}

/// One paired update. Both videos are decoded under their sets with the
/// current HMM, contribute cross-entropy against their decodes, and share
/// the regularizer; parameter gradients are summed over the pair.
pub fn train_iteration(
    state: &mut TrainState,
    dataset: &Dataset,
    pair: (usize, usize),
    config: &TrainConfig,
) -> Result<IterationReport> {
    let (iv, iw) = pair;
    let lr = config.learning_rate(state.iteration);
    let ids = [iv, iw];
    let mut caches = Vec::with_capacity(2);
    let mut decodes = Vec::with_capacity(2);
    let mut flips = 0;
    for &i in &ids {
        let video = &dataset.videos[i];
        let cache = forward(&state.net, video.features.view())?;
        let trace = scv_decode_traced(&cache, &state.hmm, &video.set, config.prune)?;
        flips += trace.flips.len();
        decodes.push(trace.segmentation);
        caches.push(cache);
    }
    let labels: Vec<Vec<usize>> = decodes.iter().map(Segmentation::to_labels).collect();

    let mut ce = 0.0;
    let mut ce_grads: Vec<Array2<f64>> = Vec::with_capacity(2);
    for (cache, l) in caches.iter().zip(&labels) {
        let (loss, grad) = ce_loss_and_grad(cache, l)?;
        ce += loss;
        ce_grads.push(grad);
    }
    let side = |k: usize| PairSide {
        cache: &caches[k],
        set: &dataset.videos[ids[k]].set,
        labels: &labels[k],
    };
    let (npair, np) =
        npair_loss_and_grad(side(0), side(1), config.feature_mode, config.regularizer)?;
    let weight = config.loss_weight;
    let loss = weight * ce + (1.0 - weight) * npair;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss at iteration {}: videos {} and {}, ce={ce}, npair={npair}, lr={lr}",
            state.iteration, dataset.videos[iv].id, dataset.videos[iw].id
        )));
    }

    let mut grads = Gradients::zeros_like(&state.net);
    for k in 0..2 {
        let grad_f = &ce_grads[k] * weight + &np.f[k] * (1.0 - weight);
        let grad_h = &np.h[k] * (1.0 - weight);
        let x = dataset.videos[ids[k]].features.view();
        grads.accumulate(&backward(
            &state.net,
            x,
            &caches[k],
            &grad_f,
            Some(&grad_h),
        )?);
    }
    sgd_step(&mut state.net, &grads, lr)?;

    for (k, seg) in decodes.into_iter().enumerate() {
        let i = ids[k];
        state.counts.remove(&state.bank[i]);
        state.counts.add(&seg);
        state.bank[i] = seg;
    }
    state.iteration += 1;
    if state.iteration.is_multiple_of(config.full_recompute_every) {
        state.counts = DynamicCounts::from_bank(&state.bank, state.counts.segments.len());
    }
    if config.hmm == HmmVariant::Dynamic {
        state.hmm = state.counts.to_params(&state.static_hmm);
    }
    Ok(IterationReport {
        iteration: state.iteration - 1,
        videos: pair,
        ce,
        npair,
        loss,
        lr,
        flips,
    })
}

/// Runs `config.iterations` paired updates. `observer` sees every report and
/// the state after that update; an error from it stops training.
pub fn fit<F>(dataset: &Dataset, config: &TrainConfig, mut observer: F) -> Result<TrainState>
where
    F: FnMut(&IterationReport, &TrainState) -> Result<()>,
{
    let mut state = initialize(dataset, config)?;
    while state.iteration < config.iterations {
        let pair = state.sampler.sample(&mut state.rng);
        let report = train_iteration(&mut state, dataset, pair, config)?;
        observer(&report, &state)?;
    }
    Ok(state)
}
