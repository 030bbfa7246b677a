//! HMM parameters: action transitions, Poisson action lengths and per-frame
//! class priors, estimated either once from the training sets (static) or
//! from the latest decoded segmentations (dynamic).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{ActionSet, ClassId};
use crate::segmentation::Segmentation;

pub const DEFAULT_MIN_LENGTH: usize = 25;
/// Additive smoothing on dynamic transition counts.
pub const DYNAMIC_SMOOTHING: f64 = 1e-6;
/// Prior given to classes that never occur in any training set.
pub const UNSEEN_PRIOR: f64 = 1e-9;
const RIDGE: f64 = 1e-8;
const REFINEMENT_STEPS: usize = 8;
/// Solutions this close below the bound are round-off, not violations.
const CLAMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HmmVariant {
    Static,
    #[default]
    Dynamic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmParams {
    /// `log p(to | from)` indexed `[from, to]`; the diagonal is `-inf`.
    pub log_transitions: Array2<f64>,
    /// Poisson mean length per class, in frames.
    pub lengths: Vec<f64>,
    pub log_priors: Vec<f64>,
    pub min_length: usize,
    pub variant: HmmVariant,
}

impl HmmParams {
    pub fn num_classes(&self) -> usize {
        self.lengths.len()
    }

    pub fn log_transition(&self, from: ClassId, to: ClassId) -> f64 {
        self.log_transitions[[from, to]]
    }

    pub fn mean_length(&self, class: ClassId) -> f64 {
        self.lengths[class]
    }

    pub fn log_prior(&self, class: ClassId) -> f64 {
        self.log_priors[class]
    }

    /// Sum of mean lengths over `classes` (with repetition).
    pub fn total_mean_length<I: IntoIterator<Item = ClassId>>(&self, classes: I) -> f64 {
        classes.into_iter().map(|c| self.lengths[c]).sum()
    }

    /// Uniform transitions, constant lengths and priors.
    pub fn uniform(num_classes: usize, length: f64, min_length: usize) -> Self {
        let row = if num_classes > 1 {
            -((num_classes - 1) as f64).ln()
        } else {
            0.0
        };
        let log_transitions = Array2::from_shape_fn((num_classes, num_classes), |(i, j)| {
            if i == j {
                f64::NEG_INFINITY
            } else {
                row
            }
        });
        HmmParams {
            log_transitions,
            lengths: vec![length; num_classes],
            log_priors: vec![-(num_classes as f64).ln(); num_classes],
            min_length,
            variant: HmmVariant::Static,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        if self.log_transitions.dim() != (k, k) || self.log_priors.len() != k {
            return Err(Error::Dimension("HMM parameter shapes disagree".into()));
        }
        if self.min_length == 0 {
            return Err(Error::InvalidArgument(
                "minimum length must be positive".into(),
            ));
        }
        if let Some(c) = self
            .lengths
            .iter()
            .position(|&l| !(l > 0.0 && l.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "class {c} has invalid mean length"
            )));
        }
        if self.log_priors.iter().any(|p| p.is_nan() || *p > 1e-12) {
            return Err(Error::InvalidArgument("log priors must be <= 0".into()));
        }
        Ok(())
    }
}

/// `log Poisson(l; lambda)` via log-gamma.
pub fn poisson_log_pmf(l: usize, lambda: f64) -> Result<f64> {
    if l == 0 {
        return Err(Error::InvalidArgument("length must be at least 1".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "Poisson mean {lambda} must be positive"
        )));
    }
    Ok(poisson_log_pmf_unchecked(l, lambda))
}

pub(crate) fn poisson_log_pmf_unchecked(l: usize, lambda: f64) -> f64 {
    let l = l as f64;
    l * lambda.ln() - lambda - libm::lgamma(l + 1.0)
}

/// Training-time summary of one video: its action set and length in frames.
#[derive(Debug, Clone, Copy)]
pub struct VideoSummary<'a> {
    pub set: &'a ActionSet,
    pub num_frames: usize,
}

/// Static estimates from set-level annotations only.
///
/// The pair count for `(c', c)` is the number of videos whose set holds
/// both. Mean lengths solve `min sum_v (sum_{c in C_v} lambda_c - T_v)^2`
/// subject to `lambda_c >= min_length`. The prior of `c` is the fraction of
/// all training frames that belong to videos containing `c`.
pub fn estimate_static(
    videos: &[VideoSummary<'_>],
    num_classes: usize,
    min_length: usize,
) -> Result<HmmParams> {
    if min_length == 0 {
        return Err(Error::InvalidArgument(
            "minimum length must be positive".into(),
        ));
    }
    if videos.is_empty() {
        return Err(Error::InvalidArgument("no training videos".into()));
    }
    for (i, v) in videos.iter().enumerate() {
        if v.set.is_empty() || v.num_frames == 0 {
            return Err(Error::InvalidArgument(format!(
                "video {i} has an empty set or no frames"
            )));
        }
        v.set.check_within(num_classes)?;
    }

    let mut pair = Array2::<f64>::zeros((num_classes, num_classes));
    for v in videos {
        for a in v.set.iter() {
            for b in v.set.iter() {
                if a != b {
                    pair[[a, b]] += 1.0;
                }
            }
        }
    }
    let log_transitions = normalize_rows(&pair);

    let observed: Vec<bool> = (0..num_classes)
        .map(|c| videos.iter().any(|v| v.set.contains(c)))
        .collect();
    let lengths = solve_static_lengths(videos, num_classes, min_length, &observed);

    let total: f64 = videos.iter().map(|v| v.num_frames as f64).sum();
    let log_priors = (0..num_classes)
        .map(|c| {
            if !observed[c] {
                return UNSEEN_PRIOR.ln();
            }
            let covered: f64 = videos
                .iter()
                .filter(|v| v.set.contains(c))
                .map(|v| v.num_frames as f64)
                .sum();
            (covered / total).ln()
        })
        .collect();

    Ok(HmmParams {
        log_transitions,
        lengths,
        log_priors,
        min_length,
        variant: HmmVariant::Static,
    })
}

/// Row-normalizes counts over off-diagonal entries into log probabilities.
/// Rows with zero mass become uniform.
fn normalize_rows(counts: &Array2<f64>) -> Array2<f64> {
    let k = counts.nrows();
    let mut out = Array2::from_elem((k, k), f64::NEG_INFINITY);
    for i in 0..k {
        let mass: f64 = (0..k).filter(|&j| j != i).map(|j| counts[[i, j]]).sum();
        if mass > 0.0 {
            for j in (0..k).filter(|&j| j != i) {
                out[[i, j]] = (counts[[i, j]] / mass).ln();
            }
        } else if k > 1 {
            let u = -((k - 1) as f64).ln();
            for j in (0..k).filter(|&j| j != i) {
                out[[i, j]] = u;
            }
        }
    }
    out
}

/// Least-squares mean lengths with the lower bound, over observed classes.
fn solve_static_lengths(
    videos: &[VideoSummary<'_>],
    num_classes: usize,
    min_length: usize,
    observed: &[bool],
) -> Vec<f64> {
    let floor = min_length as f64;
    let mut lengths = vec![floor; num_classes];
    let mut free: Vec<ClassId> = (0..num_classes).filter(|&c| observed[c]).collect();
    if free.is_empty() {
        return lengths;
    }
    // Solve, clamp whatever falls below the bound, re-solve the rest once.
    for round in 0..2 {
        let solution = least_squares(videos, &free, &lengths);
        for (&c, &val) in free.iter().zip(&solution) {
            lengths[c] = val;
        }
        let (low, high): (Vec<ClassId>, Vec<ClassId>) = free
            .iter()
            .partition(|&&c| lengths[c] < floor * (1.0 - CLAMP_TOLERANCE));
        if low.is_empty() {
            break;
        }
        for &c in &low {
            lengths[c] = floor;
        }
        free = high;
        if free.is_empty() || round == 1 {
            break;
        }
    }
    for l in lengths.iter_mut() {
        *l = l.max(floor);
    }
    lengths
}

/// Minimizes `sum_v (sum_{c in C_v, c free} x_c + fixed_v - T_v)^2` over the
/// free classes, returning the minimum-norm minimizer.
///
/// Classes appearing in exactly the same videos are indistinguishable and
/// share one variable (the minimum-norm solution gives them equal values).
/// The reduced normal equations get a small ridge, weighted by group size,
/// and are refined until the ridge bias vanishes.
fn least_squares(videos: &[VideoSummary<'_>], free: &[ClassId], current: &[f64]) -> Vec<f64> {
    let mut is_free = vec![false; current.len()];
    for &c in free {
        is_free[c] = true;
    }
    let mut group_of = vec![usize::MAX; current.len()];
    let mut signatures: Vec<Vec<bool>> = Vec::new();
    let mut sizes: Vec<f64> = Vec::new();
    for &c in free {
        let sig: Vec<bool> = videos.iter().map(|v| v.set.contains(c)).collect();
        let g = match signatures.iter().position(|s| *s == sig) {
            Some(g) => g,
            None => {
                signatures.push(sig);
                sizes.push(0.0);
                signatures.len() - 1
            }
        };
        group_of[c] = g;
        sizes[g] += 1.0;
    }
    let n = sizes.len();
    let mut gram = vec![vec![0.0; n]; n];
    let mut rows: Vec<(Vec<usize>, f64)> = Vec::with_capacity(videos.len());
    for (vi, v) in videos.iter().enumerate() {
        let groups: Vec<usize> = (0..n).filter(|&g| signatures[g][vi]).collect();
        let fixed: f64 = v
            .set
            .iter()
            .filter(|&c| !is_free[c])
            .map(|c| current[c])
            .sum();
        for &i in &groups {
            for &j in &groups {
                gram[i][j] += sizes[i] * sizes[j];
            }
        }
        rows.push((groups, v.num_frames as f64 - fixed));
    }
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += RIDGE * sizes[i];
    }
    let mut z = vec![0.0; n];
    for _ in 0..REFINEMENT_STEPS {
        let mut rhs = vec![0.0; n];
        for (groups, target) in &rows {
            let pred: f64 = groups.iter().map(|&g| sizes[g] * z[g]).sum();
            for &g in groups {
                rhs[g] += sizes[g] * (target - pred);
            }
        }
        let Some(delta) = solve_dense(gram.clone(), rhs) else {
            break;
        };
        let mut moved = 0.0f64;
        for (zi, di) in z.iter_mut().zip(&delta) {
            *zi += di;
            moved = moved.max(di.abs());
        }
        if moved <= 1e-15 * z.iter().fold(1.0f64, |m, v| m.max(v.abs())) {
            break;
        }
    }
    free.iter().map(|&c| z[group_of[c]]).collect()
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let factor = a[r][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[r][k] -= factor * a[col][k];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Sufficient statistics of a bank of decoded segmentations.
///
/// Kept incrementally during training: removing a video's old segmentation
/// and adding its new one gives the same totals as recounting the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicCounts {
    pub pairs: Array2<f64>,
    pub segments: Vec<f64>,
    pub frames: Vec<f64>,
    pub total_frames: f64,
}

impl DynamicCounts {
    pub fn new(num_classes: usize) -> Self {
        DynamicCounts {
            pairs: Array2::zeros((num_classes, num_classes)),
            segments: vec![0.0; num_classes],
            frames: vec![0.0; num_classes],
            total_frames: 0.0,
        }
    }

    pub fn from_bank(bank: &[Segmentation], num_classes: usize) -> Self {
        let mut counts = DynamicCounts::new(num_classes);
        for seg in bank {
            counts.add(seg);
        }
        counts
    }

    pub fn add(&mut self, seg: &Segmentation) {
        self.apply(seg, 1.0);
    }

    pub fn remove(&mut self, seg: &Segmentation) {
        self.apply(seg, -1.0);
    }

    fn apply(&mut self, seg: &Segmentation, sign: f64) {
        let segs = seg.segments();
        for s in segs {
            self.segments[s.class] += sign;
            self.frames[s.class] += sign * s.len as f64;
        }
        for w in segs.windows(2) {
            self.pairs[[w[0].class, w[1].class]] += sign;
        }
        self.total_frames += sign * seg.total_len() as f64;
    }

    /// Dynamic parameters. Classes never decoded keep `fallback`'s values.
    pub fn to_params(&self, fallback: &HmmParams) -> HmmParams {
        let k = self.segments.len();
        // Counts are integral; rounding drops drift from incremental updates.
        let seen: Vec<bool> = self.segments.iter().map(|&n| n.round() > 0.0).collect();
        let smoothed = self.pairs.mapv(|n| n.round().max(0.0) + DYNAMIC_SMOOTHING);
        let mut log_transitions = normalize_rows(&smoothed);
        for i in (0..k).filter(|&i| !seen[i]) {
            log_transitions
                .row_mut(i)
                .assign(&fallback.log_transitions.row(i));
        }
        let lengths = (0..k)
            .map(|c| {
                if seen[c] {
                    self.frames[c].round() / self.segments[c].round()
                } else {
                    fallback.lengths[c]
                }
            })
            .collect();
        let total = self.total_frames.round();
        let log_priors = (0..k)
            .map(|c| {
                if seen[c] && total > 0.0 {
                    (self.frames[c].round() / total).ln()
                } else {
                    fallback.log_priors[c]
                }
            })
            .collect();
        HmmParams {
            log_transitions,
            lengths,
            log_priors,
            min_length: fallback.min_length,
            variant: HmmVariant::Dynamic,
        }
    }
}

/// Dynamic parameters recomputed from scratch over the whole bank.
pub fn update_dynamic(bank: &[Segmentation], fallback: &HmmParams) -> HmmParams {
    DynamicCounts::from_bank(bank, fallback.num_classes()).to_params(fallback)
}
