//! Set-constrained Viterbi.
//!
//! Step one is an exact segment-level Viterbi pass whose classes are
//! restricted to the video's action set. If that MAP misses classes of the
//! set, each predicted segment is split in two at its weakest hidden-feature
//! link and oversegments are flipped, one at a time, to the missing class
//! whose flip keeps the posterior highest, until the set is covered.

use ndarray::ArrayView1;

use crate::error::{Error, Result};
use crate::hmm::HmmParams;
use crate::labels::{ActionSet, ClassId};
use crate::nnet::ForwardCache;
use crate::segmentation::Segmentation;

/// Re-oversegmentation passes allowed before coverage is declared infeasible.
pub const MAX_FLIP_PASSES: usize = 4;

/// Precomputed per-video scoring tables for one HMM.
///
/// Frame terms are `log softmax(f)[c,t] - log p(c)`, kept as prefix sums so a
/// segment's frame score is O(1). Duration log-likelihoods are tabulated for
/// every length up to `T`.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    hmm: &'a HmmParams,
    num_frames: usize,
    /// `[class][t]`, length `T + 1`.
    cumulative: Vec<Vec<f64>>,
    /// `[class][len]`, index 0 unused.
    durations: Vec<Vec<f64>>,
}

impl<'a> Scorer<'a> {
    pub fn new(cache: &ForwardCache, hmm: &'a HmmParams) -> Result<Self> {
        if cache.num_classes() != hmm.num_classes() {
            return Err(Error::Dimension(format!(
                "network scores {} classes, HMM has {}",
                cache.num_classes(),
                hmm.num_classes()
            )));
        }
        let t_len = cache.num_frames();
        let k = hmm.num_classes();
        let cumulative = (0..k)
            .map(|c| {
                let prior = hmm.log_prior(c);
                let mut acc = Vec::with_capacity(t_len + 1);
                acc.push(0.0);
                let mut s = 0.0;
                for t in 0..t_len {
                    s += cache.log_softmax[[c, t]] - prior;
                    acc.push(s);
                }
                acc
            })
            .collect();
        let log_fact: Vec<f64> = (0..=t_len).map(|l| libm::lgamma(l as f64 + 1.0)).collect();
        let durations = (0..k)
            .map(|c| {
                let lambda = hmm.mean_length(c);
                let ln_lambda = lambda.ln();
                (0..=t_len)
                    .map(|l| {
                        if l == 0 {
                            f64::NEG_INFINITY
                        } else {
                            l as f64 * ln_lambda - lambda - log_fact[l]
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Scorer {
            hmm,
            num_frames: t_len,
            cumulative,
            durations,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn hmm(&self) -> &HmmParams {
        self.hmm
    }

    /// Frame score of `class` over `[start, end)`.
    #[inline]
    pub fn frames(&self, class: ClassId, start: usize, end: usize) -> f64 {
        let row = &self.cumulative[class];
        row[end] - row[start]
    }

    #[inline]
    pub fn duration(&self, class: ClassId, len: usize) -> f64 {
        self.durations[class][len]
    }

    pub fn transitions(&self, classes: &[ClassId]) -> f64 {
        classes
            .windows(2)
            .map(|w| self.hmm.log_transition(w[0], w[1]))
            .sum()
    }

    pub fn score(&self, seg: &Segmentation) -> Result<f64> {
        if seg.total_len() != self.num_frames {
            return Err(Error::Dimension(format!(
                "segmentation covers {} frames, video has {}",
                seg.total_len(),
                self.num_frames
            )));
        }
        let mut total = 0.0;
        let mut prev: Option<ClassId> = None;
        for (class, start, end) in seg.intervals() {
            if class >= self.hmm.num_classes() {
                return Err(Error::UnknownClass(class));
            }
            if let Some(p) = prev {
                total += self.hmm.log_transition(p, class);
            }
            total += self.duration(class, end - start) + self.frames(class, start, end);
            prev = Some(class);
        }
        Ok(total)
    }
}

/// Log posterior (up to a constant) of a segmentation: transitions between
/// consecutive segments, Poisson durations, and per-frame
/// `log softmax - log prior`.
pub fn log_posterior(seg: &Segmentation, cache: &ForwardCache, hmm: &HmmParams) -> Result<f64> {
    Scorer::new(cache, hmm)?.score(seg)
}

/// Filled Viterbi lattice for one video and action set.
#[derive(Debug, Clone)]
pub struct ViterbiTable {
    /// The classes indexing the rows, ascending.
    pub classes: Vec<ClassId>,
    /// `scores[i][t]`: best log posterior of a labelling of frames `[0, t)`
    /// whose last segment has class `classes[i]`. Column 0 is unused.
    pub scores: Vec<Vec<f64>>,
    /// `(t', i')` of the previous segment end; `t' == 0` marks the first.
    pub backpointers: Vec<Vec<(usize, usize)>>,
    /// Accumulated mean length along each cell's best path.
    pub accumulated_length: Vec<Vec<f64>>,
    pub cell_updates: u64,
}

impl ViterbiTable {
    pub fn num_frames(&self) -> usize {
        self.scores.first().map_or(0, |r| r.len() - 1)
    }

    /// Best final cell, lowest class id on ties.
    pub fn best_final(&self) -> Option<(usize, f64)> {
        let t = self.num_frames();
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in self.scores.iter().enumerate() {
            let s = row[t];
            if s > f64::NEG_INFINITY && best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best
    }

    pub fn backtrace(&self) -> Result<Segmentation> {
        let (mut i, _) = self
            .best_final()
            .ok_or_else(|| Error::Infeasible("every final Viterbi cell is infeasible".into()))?;
        let mut t = self.num_frames();
        let mut rev = Vec::new();
        while t > 0 {
            let (tp, ip) = self.backpointers[i][t];
            rev.push((self.classes[i], t - tp));
            t = tp;
            i = ip;
        }
        rev.reverse();
        Segmentation::new(
            rev.into_iter()
                .map(|(c, l)| crate::Segment::new(c, l))
                .collect(),
        )
    }
}

pub fn viterbi_table(scorer: &Scorer<'_>, set: &ActionSet, prune: bool) -> Result<ViterbiTable> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty action set".into()));
    }
    set.check_within(scorer.hmm().num_classes())?;
    let t_len = scorer.num_frames();
    if t_len == 0 {
        return Err(Error::InvalidArgument("video has no frames".into()));
    }
    let classes: Vec<ClassId> = set.iter().collect();
    let m = classes.len();
    let hmm = scorer.hmm();
    let budget = t_len as f64;
    let mut scores = vec![vec![f64::NEG_INFINITY; t_len + 1]; m];
    let mut back = vec![vec![(0usize, 0usize); t_len + 1]; m];
    let mut acc = vec![vec![0.0f64; t_len + 1]; m];
    let mut updates = 0u64;

    for t in 1..=t_len {
        for (i, &c) in classes.iter().enumerate() {
            let lambda = hmm.mean_length(c);
            let mut best = f64::NEG_INFINITY;
            let mut best_bp = (0, 0);
            let mut best_acc = 0.0;
            // First segment: no transition term.
            updates += 1;
            if !prune || lambda <= budget {
                let cand = scorer.duration(c, t) + scorer.frames(c, 0, t);
                if cand > best {
                    best = cand;
                    best_bp = (0, i);
                    best_acc = lambda;
                }
            }
            for (ip, &cp) in classes.iter().enumerate() {
                if ip == i {
                    continue;
                }
                let trans = hmm.log_transition(cp, c);
                for tp in 1..t {
                    updates += 1;
                    let prev = scores[ip][tp];
                    if prev == f64::NEG_INFINITY {
                        continue;
                    }
                    if prune && acc[ip][tp] + lambda > budget {
                        continue;
                    }
                    let cand = prev + trans + scorer.duration(c, t - tp) + scorer.frames(c, tp, t);
                    if cand > best {
                        best = cand;
                        best_bp = (tp, ip);
                        best_acc = acc[ip][tp] + lambda;
                    }
                }
            }
            scores[i][t] = best;
            back[i][t] = best_bp;
            acc[i][t] = best_acc;
        }
    }
    Ok(ViterbiTable {
        classes,
        scores,
        backpointers: back,
        accumulated_length: acc,
        cell_updates: updates,
    })
}

/// MAP segmentation whose classes all lie in `set`, ignoring coverage.
///
/// With `prune` off this is exact. With it on, a segment extension is dropped
/// when the accumulated mean length of the predecessor's best path plus the
/// new class's mean length exceeds the video length.
pub fn viterbi_map(
    cache: &ForwardCache,
    hmm: &HmmParams,
    set: &ActionSet,
    prune: bool,
) -> Result<Segmentation> {
    let scorer = Scorer::new(cache, hmm)?;
    viterbi_table(&scorer, set, prune)?.backtrace()
}

/// Half of a predicted segment, frames `[start, end]` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Oversegment {
    pub parent: usize,
    pub start: usize,
    pub end: usize,
    pub class: ClassId,
}

impl Oversegment {
    // Inclusive bounds, so never empty.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }
}

fn cosine_similarity(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Splits every segment of length >= 2 after the frame whose cosine
/// similarity to its successor (on hidden features) is smallest, earliest on
/// ties. Length-1 segments pass through whole.
pub fn oversegment(seg: &Segmentation, cache: &ForwardCache) -> Vec<Oversegment> {
    let mut out = Vec::with_capacity(seg.len() * 2);
    for (parent, (class, start, end)) in seg.intervals().enumerate() {
        if end - start < 2 {
            out.push(Oversegment {
                parent,
                start,
                end: end - 1,
                class,
            });
            continue;
        }
        let mut split = start;
        let mut lowest = f64::INFINITY;
        for t in start..end - 1 {
            let sim = if cache.h.nrows() == 0 {
                0.0
            } else {
                cosine_similarity(cache.h.column(t), cache.h.column(t + 1))
            };
            if sim < lowest {
                lowest = sim;
                split = t;
            }
        }
        out.push(Oversegment {
            parent,
            start,
            end: split,
            class,
        });
        out.push(Oversegment {
            parent,
            start: split + 1,
            end: end - 1,
            class,
        });
    }
    out
}

/// One accepted flip during coverage repair.
#[derive(Debug, Clone)]
pub struct FlipStep {
    pub pass: usize,
    pub labels_before: Vec<ClassId>,
    /// Oversegments still eligible when the flip was chosen.
    pub available: Vec<Oversegment>,
    pub flipped: Oversegment,
    pub new_class: ClassId,
    pub log_posterior: f64,
}

/// Result of [`scv_decode_traced`].
#[derive(Debug, Clone)]
pub struct ScvTrace {
    pub first_step: Segmentation,
    pub first_step_log_posterior: f64,
    pub segmentation: Segmentation,
    pub log_posterior: f64,
    pub flips: Vec<FlipStep>,
    pub cell_updates: u64,
}

/// A flip is admissible if the flipped oversegment's class still occurs
/// elsewhere, so classes already covered stay covered.
pub fn flip_keeps_coverage(labels: &[ClassId], over: &Oversegment) -> bool {
    labels[..over.start]
        .iter()
        .chain(&labels[over.end + 1..])
        .any(|&c| c == over.class)
}

/// Flips oversegments to missing classes of `set` until it is covered.
///
/// Each step scores every (eligible oversegment, missing class) candidate by
/// the full log posterior of the relabelled video and applies the best one;
/// ties go to the lowest class id, then the earliest oversegment. An
/// oversegment flips at most once per pass. When a pass runs out of
/// candidates the current segmentation is oversegmented again, up to
/// [`MAX_FLIP_PASSES`] passes.
pub fn flip_to_cover(
    seg: &Segmentation,
    oversegments: &[Oversegment],
    scorer: &Scorer<'_>,
    cache: &ForwardCache,
    set: &ActionSet,
) -> Result<(Segmentation, Vec<FlipStep>)> {
    if seg.total_len() < set.len() {
        return Err(Error::CoverageInfeasible(format!(
            "{} frames cannot hold {} classes",
            seg.total_len(),
            set.len()
        )));
    }
    let mut labels = seg.to_labels();
    let mut current = seg.clone();
    let mut steps = Vec::new();
    let mut overs: Vec<Oversegment> = oversegments.to_vec();

    for pass in 0..MAX_FLIP_PASSES {
        if pass > 0 {
            overs = oversegment(&current, cache);
        }
        let mut flipped = vec![false; overs.len()];
        loop {
            let missing = set.difference(&current.classes());
            if missing.is_empty() {
                return Ok((current, steps));
            }
            let mut best: Option<(usize, ClassId, f64, Segmentation)> = None;
            for c in missing.iter() {
                for (j, over) in overs.iter().enumerate() {
                    if flipped[j] || !flip_keeps_coverage(&labels, over) {
                        continue;
                    }
                    let mut cand = labels.clone();
                    cand[over.start..=over.end].fill(c);
                    let cand_seg = Segmentation::from_labels(&cand);
                    let score = scorer.score(&cand_seg)?;
                    if best.as_ref().is_none_or(|b| score > b.2) {
                        best = Some((j, c, score, cand_seg));
                    }
                }
            }
            let Some((j, c, score, cand_seg)) = best else {
                break;
            };
            let available = overs
                .iter()
                .zip(&flipped)
                .filter(|(_, &f)| !f)
                .map(|(o, _)| *o)
                .collect();
            steps.push(FlipStep {
                pass,
                labels_before: labels.clone(),
                available,
                flipped: overs[j],
                new_class: c,
                log_posterior: score,
            });
            labels[overs[j].start..=overs[j].end].fill(c);
            overs[j].class = c;
            flipped[j] = true;
            current = cand_seg;
        }
    }
    if current.covers(set) {
        return Ok((current, steps));
    }
    Err(Error::CoverageInfeasible(format!(
        "classes {} still missing after {MAX_FLIP_PASSES} passes",
        set.difference(&current.classes())
    )))
}

/// Full set-constrained decode, keeping the intermediate steps.
pub fn scv_decode_traced(
    cache: &ForwardCache,
    hmm: &HmmParams,
    set: &ActionSet,
    prune: bool,
) -> Result<ScvTrace> {
    if cache.num_frames() < set.len() {
        return Err(Error::CoverageInfeasible(format!(
            "{} frames cannot hold {} classes",
            cache.num_frames(),
            set.len()
        )));
    }
    let scorer = Scorer::new(cache, hmm)?;
    let table = viterbi_table(&scorer, set, prune)?;
    let first_step = table.backtrace()?;
    let first_score = scorer.score(&first_step)?;
    let (segmentation, flips) = if first_step.covers(set) {
        (first_step.clone(), Vec::new())
    } else {
        let overs = oversegment(&first_step, cache);
        flip_to_cover(&first_step, &overs, &scorer, cache, set)?
    };
    let log_posterior = flips.last().map_or(first_score, |f| f.log_posterior);
    Ok(ScvTrace {
        first_step,
        first_step_log_posterior: first_score,
        segmentation,
        log_posterior,
        flips,
        cell_updates: table.cell_updates,
    })
}

/// Set-constrained decode: a segmentation using only classes of `set` and
/// containing every one of them.
pub fn scv_decode(
    cache: &ForwardCache,
    hmm: &HmmParams,
    set: &ActionSet,
    prune: bool,
) -> Result<Segmentation> {
    Ok(scv_decode_traced(cache, hmm, set, prune)?.segmentation)
}
