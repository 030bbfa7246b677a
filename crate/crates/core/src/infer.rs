//! Test-time inference with a Monte Carlo grammar.
//!
//! Action sets seen in training are sampled, legal action sequences are
//! generated from each set, every candidate is aligned to the frames by
//! dynamic programming, and the highest-posterior alignment wins. Alignment
//! mode samples sequences from a given set only.

use std::collections::{HashMap, HashSet};

use rand::Rng;

use crate::error::{Error, Result};
use crate::hmm::HmmParams;
use crate::labels::{ActionSet, ClassId};
use crate::nnet::ForwardCache;
use crate::scv::Scorer;
use crate::segmentation::{Segment, Segmentation};

pub const DEFAULT_CANDIDATES: usize = 1000;
pub const DEFAULT_ATTEMPT_CAP: u64 = 1_000_000;

/// Distinct training action sets with their multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct GrammarPool {
    sets: Vec<(ActionSet, usize)>,
}

impl GrammarPool {
    pub fn new<'a, I: IntoIterator<Item = &'a ActionSet>>(sets: I) -> Result<Self> {
        let mut index: HashMap<ActionSet, usize> = HashMap::new();
        let mut out: Vec<(ActionSet, usize)> = Vec::new();
        for set in sets {
            if set.is_empty() {
                return Err(Error::InvalidArgument(
                    "empty action set in grammar pool".into(),
                ));
            }
            match index.get(set) {
                Some(&i) => out[i].1 += 1,
                None => {
                    index.insert(set.clone(), out.len());
                    out.push((set.clone(), 1));
                }
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("grammar pool is empty".into()));
        }
        Ok(GrammarPool { sets: out })
    }

    pub fn sets(&self) -> &[(ActionSet, usize)] {
        &self.sets
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolSampling {
    /// Every distinct set equally likely.
    #[default]
    Uniform,
    /// Sets weighted by how many training videos carry them.
    Multiplicity,
}

/// Ordered action sequence drawn from `source`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSequence {
    pub classes: Vec<ClassId>,
    pub source: ActionSet,
}

impl CandidateSequence {
    /// Covers the source set, has no adjacent repeats, fits the length budget.
    pub fn is_legal(&self, hmm: &HmmParams, num_frames: usize) -> bool {
        let covers = self.source.iter().all(|c| self.classes.contains(&c));
        let no_repeats = self.classes.windows(2).all(|w| w[0] != w[1]);
        let budget = hmm.total_mean_length(self.classes.iter().copied()) <= num_frames as f64;
        covers && no_repeats && budget
    }
}

/// Draws actions uniformly from `set` (never repeating the previous one)
/// until the next draw would push the summed mean lengths past `num_frames`;
/// that draw is discarded. Returns `None` if the result misses a class.
pub fn sample_legal_sequence<R: Rng + ?Sized>(
    set: &ActionSet,
    num_frames: usize,
    hmm: &HmmParams,
    rng: &mut R,
) -> Option<CandidateSequence> {
    if set.is_empty() {
        return None;
    }
    let budget = num_frames as f64;
    if hmm.total_mean_length(set.iter()) > budget {
        return None;
    }
    let choices = set.as_slice();
    let mut classes: Vec<ClassId> = Vec::new();
    let mut used = 0.0;
    loop {
        let next = match classes.last() {
            None => choices[rng.random_range(0..choices.len())],
            Some(_) if choices.len() == 1 => break,
            Some(&last) => {
                // Uniform over the set minus the previous action.
                let pick = rng.random_range(0..choices.len() - 1);
                let pos = choices
                    .binary_search(&last)
                    .expect("last action comes from the set");
                choices[if pick >= pos { pick + 1 } else { pick }]
            }
        };
        let lambda = hmm.mean_length(next);
        if used + lambda > budget {
            break;
        }
        used += lambda;
        classes.push(next);
    }
    let cand = CandidateSequence {
        classes,
        source: set.clone(),
    };
    let covered = cand.source.iter().all(|c| cand.classes.contains(&c));
    covered.then_some(cand)
}

/// Length-alignment DP over one video, reusable across candidates.
pub struct Aligner<'a> {
    scorer: Scorer<'a>,
    max_duration: Option<usize>,
}

impl<'a> Aligner<'a> {
    pub fn new(cache: &ForwardCache, hmm: &'a HmmParams) -> Result<Self> {
        Ok(Aligner {
            scorer: Scorer::new(cache, hmm)?,
            max_duration: None,
        })
    }

    /// Caps segment lengths (off by default, which keeps the DP exact).
    pub fn with_max_duration(mut self, max: Option<usize>) -> Self {
        self.max_duration = max;
        self
    }

    pub fn num_frames(&self) -> usize {
        self.scorer.num_frames()
    }

    /// Best boundary placement for `sequence`, each segment at least one
    /// frame. Returns the segmentation, its full log posterior (transition
    /// terms included) and the number of DP cell updates.
    pub fn align(&self, sequence: &[ClassId]) -> Result<(Segmentation, f64, u64)> {
        let t_len = self.num_frames();
        let n = sequence.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty action sequence".into()));
        }
        if n > t_len {
            return Err(Error::Infeasible(format!(
                "{n} actions do not fit in {t_len} frames"
            )));
        }
        if let Some(&c) = sequence
            .iter()
            .find(|&&c| c >= self.scorer.hmm().num_classes())
        {
            return Err(Error::UnknownClass(c));
        }
        let max_dur = self.max_duration.unwrap_or(t_len).max(1);
        let neg = f64::NEG_INFINITY;
        // best[j][t]: first j+1 actions cover frames [0, t).
        let mut best = vec![vec![neg; t_len + 1]; n];
        let mut back = vec![vec![0usize; t_len + 1]; n];
        let mut updates = 0u64;
        let c0 = sequence[0];
        for t in 1..=(t_len - (n - 1)).min(max_dur) {
            updates += 1;
            best[0][t] = self.scorer.duration(c0, t) + self.scorer.frames(c0, 0, t);
        }
        for j in 1..n {
            let c = sequence[j];
            let remaining = n - 1 - j;
            for t in (j + 1)..=(t_len - remaining) {
                let lo = j.max(t.saturating_sub(max_dur));
                let mut b = neg;
                let mut arg = lo;
                for tp in lo..t {
                    updates += 1;
                    let prev = best[j - 1][tp];
                    if prev == neg {
                        continue;
                    }
                    let cand =
                        prev + self.scorer.duration(c, t - tp) + self.scorer.frames(c, tp, t);
                    if cand > b {
                        b = cand;
                        arg = tp;
                    }
                }
                best[j][t] = b;
                back[j][t] = arg;
            }
        }
        let score = best[n - 1][t_len];
        if score == neg {
            return Err(Error::Infeasible(
                "no boundary placement within the duration cap".into(),
            ));
        }
        let mut ends = vec![t_len; n];
        for j in (1..n).rev() {
            ends[j - 1] = back[j][ends[j]];
        }
        let mut start = 0;
        let segments: Vec<Segment> = sequence
            .iter()
            .zip(&ends)
            .map(|(&c, &end)| {
                let s = Segment::new(c, end - start);
                start = end;
                s
            })
            .collect();
        let seg = Segmentation::merged(segments.iter().map(|s| (s.class, s.len)));
        Ok((seg, score + self.scorer.transitions(sequence), updates))
    }
}

/// Exact length alignment of one ordered action sequence.
pub fn align_lengths(
    sequence: &[ClassId],
    cache: &ForwardCache,
    hmm: &HmmParams,
) -> Result<(Segmentation, f64)> {
    let (seg, score, _) = Aligner::new(cache, hmm)?.align(sequence)?;
    Ok((seg, score))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceOptions {
    /// Number of accepted legal sequences.
    pub candidates: usize,
    pub attempt_cap: u64,
    pub sampling: PoolSampling,
    pub max_duration: Option<usize>,
    /// Align repeated sequences once.
    pub dedup: bool,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            candidates: DEFAULT_CANDIDATES,
            attempt_cap: DEFAULT_ATTEMPT_CAP,
            sampling: PoolSampling::Uniform,
            max_duration: None,
            dedup: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub segmentation: Segmentation,
    pub sequence: Vec<ClassId>,
    pub source: ActionSet,
    pub log_posterior: f64,
    pub accepted: usize,
    pub attempts: u64,
    pub distinct: usize,
    pub cell_updates: u64,
}

fn run_monte_carlo<R: Rng + ?Sized>(
    cache: &ForwardCache,
    hmm: &HmmParams,
    sets: &[(ActionSet, usize)],
    opts: &InferenceOptions,
    rng: &mut R,
) -> Result<Inference> {
    if opts.candidates == 0 {
        return Err(Error::InvalidArgument("need at least one candidate".into()));
    }
    let t_len = cache.num_frames();
    let feasible: Vec<&(ActionSet, usize)> = sets
        .iter()
        .filter(|(s, _)| hmm.total_mean_length(s.iter()) <= t_len as f64 && s.len() <= t_len)
        .collect();
    if feasible.is_empty() {
        return Err(Error::Infeasible(format!(
            "no action set fits the mean-length budget of {t_len} frames"
        )));
    }
    let aligner = Aligner::new(cache, hmm)?.with_max_duration(opts.max_duration);
    // Infeasible sets are still drawn; they reject every time.
    let total_weight: usize = sets.iter().map(|(_, m)| *m).sum();

    let mut seen: HashSet<Vec<ClassId>> = HashSet::new();
    let mut best: Option<Inference> = None;
    let mut accepted = 0usize;
    let mut attempts = 0u64;
    let mut updates = 0u64;
    while accepted < opts.candidates {
        if attempts >= opts.attempt_cap {
            return Err(Error::Infeasible(format!(
                "only {accepted} legal sequences after {attempts} attempts"
            )));
        }
        attempts += 1;
        let set = match opts.sampling {
            PoolSampling::Uniform => &sets[rng.random_range(0..sets.len())].0,
            PoolSampling::Multiplicity => {
                let mut pick = rng.random_range(0..total_weight);
                let mut chosen = &sets[0].0;
                for (s, m) in sets {
                    if pick < *m {
                        chosen = s;
                        break;
                    }
                    pick -= m;
                }
                chosen
            }
        };
        let Some(cand) = sample_legal_sequence(set, t_len, hmm, rng) else {
            continue;
        };
        accepted += 1;
        if opts.dedup && seen.contains(&cand.classes) {
            continue;
        }
        let (seg, score, cells) = aligner.align(&cand.classes)?;
        updates += cells;
        seen.insert(cand.classes.clone());
        if best.as_ref().is_none_or(|b| score > b.log_posterior) {
            best = Some(Inference {
                segmentation: seg,
                sequence: cand.classes,
                source: cand.source,
                log_posterior: score,
                accepted: 0,
                attempts: 0,
                distinct: 0,
                cell_updates: 0,
            });
        }
    }
    let mut out = best.expect("at least one candidate accepted");
    out.accepted = accepted;
    out.attempts = attempts;
    out.distinct = seen.len();
    out.cell_updates = updates;
    Ok(out)
}

/// Segmentation with sets sampled from the training pool.
pub fn mc_segment<R: Rng + ?Sized>(
    cache: &ForwardCache,
    hmm: &HmmParams,
    pool: &GrammarPool,
    opts: &InferenceOptions,
    rng: &mut R,
) -> Result<Inference> {
    run_monte_carlo(cache, hmm, pool.sets(), opts, rng)
}

/// Alignment to a known action set: sequences come from `set` only.
pub fn mc_align<R: Rng + ?Sized>(
    cache: &ForwardCache,
    hmm: &HmmParams,
    set: &ActionSet,
    opts: &InferenceOptions,
    rng: &mut R,
) -> Result<Inference> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty action set".into()));
    }
    set.check_within(hmm.num_classes())?;
    run_monte_carlo(cache, hmm, &[(set.clone(), 1)], opts, rng)
}
