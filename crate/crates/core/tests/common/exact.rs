//! Exact reference solutions: rational normal equations for static mean
//! lengths, and brute-force enumerations for alignment and sampling.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use super::{random_set, rng};
use setseg_core::hmm::VideoSummary;
use setseg_core::scv::log_posterior;
use setseg_core::{ActionSet, ForwardCache, HmmParams, Segmentation};

pub type SetVideos = Vec<(ActionSet, usize)>;

fn rational(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Gauss-Jordan over the rationals; `None` when singular.
fn solve_exact(mut a: Vec<Vec<BigRational>>, mut b: Vec<BigRational>) -> Option<Vec<BigRational>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = BigRational::one() / a[col][col].clone();
        for j in col..n {
            a[col][j] = &a[col][j] * &inv;
        }
        b[col] = &b[col] * &inv;
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let factor = a[r][col].clone();
                for j in col..n {
                    let delta = &factor * &a[col][j];
                    a[r][j] -= delta;
                }
                let delta = &factor * &b[col];
                b[r] -= delta;
            }
        }
    }
    Some(b)
}

/// Least squares over `free` with every other class held at `fixed`.
fn exact_least_squares(
    videos: &[(ActionSet, usize)],
    free: &[usize],
    fixed: i64,
) -> Option<Vec<BigRational>> {
    let n = free.len();
    let mut ata = vec![vec![BigRational::zero(); n]; n];
    let mut atb = vec![BigRational::zero(); n];
    for (set, t) in videos {
        let cols: Vec<usize> = (0..n).filter(|&i| set.contains(free[i])).collect();
        let held = set.iter().filter(|c| !free.contains(c)).count() as i64;
        let rhs = rational(*t as i64 - held * fixed);
        for &i in &cols {
            for &j in &cols {
                ata[i][j] += BigRational::one();
            }
            atb[i] += rhs.clone();
        }
    }
    solve_exact(ata, atb)
}

/// Static mean lengths: solve, clamp below-floor classes, re-solve the rest
/// once, clamp. `None` when the design is rank deficient.
pub fn static_lengths(
    videos: &[(ActionSet, usize)],
    classes: usize,
    floor: usize,
) -> Option<Vec<f64>> {
    let observed: Vec<usize> = (0..classes)
        .filter(|&c| videos.iter().any(|(s, _)| s.contains(c)))
        .collect();
    let fixed = floor as i64;
    let first = exact_least_squares(videos, &observed, fixed)?;
    let lower = rational(fixed);
    let free: Vec<usize> = observed
        .iter()
        .zip(&first)
        .filter(|(_, x)| **x >= lower)
        .map(|(&c, _)| c)
        .collect();
    let mut out = vec![floor as f64; classes];
    if free.len() == observed.len() {
        for (&c, x) in observed.iter().zip(&first) {
            out[c] = x.to_f64().unwrap();
        }
        return Some(out);
    }
    if !free.is_empty() {
        let second = exact_least_squares(videos, &free, fixed)?;
        for (&c, x) in free.iter().zip(&second) {
            out[c] = x.to_f64().unwrap().max(floor as f64);
        }
    }
    Some(out)
}

/// Random set annotations: `(videos, classes, floor)`.
pub fn random_set_videos(seed: u64) -> (SetVideos, usize, usize) {
    let mut r = rng(seed);
    let classes = r.random_range(2..=6);
    let n = r.random_range(classes..=classes + 8);
    let videos = (0..n)
        .map(|_| {
            let size = r.random_range(1..=classes);
            (random_set(&mut r, classes, size), r.random_range(10..=200))
        })
        .collect();
    (videos, classes, r.random_range(1..=30))
}

pub fn summaries(videos: &[(ActionSet, usize)]) -> Vec<VideoSummary<'_>> {
    videos
        .iter()
        .map(|(set, t)| VideoSummary {
            set,
            num_frames: *t,
        })
        .collect()
}

/// Best log posterior of `seq` over every placement of its boundaries.
pub fn enumerate_boundaries(seq: &[usize], cache: &ForwardCache, hmm: &HmmParams) -> f64 {
    fn go(
        seq: &[usize],
        start: usize,
        frames: usize,
        lens: &mut Vec<usize>,
        eval: &mut dyn FnMut(&[usize]),
    ) {
        if lens.len() + 1 == seq.len() {
            if start < frames {
                lens.push(frames - start);
                eval(lens);
                lens.pop();
            }
            return;
        }
        let remaining = seq.len() - lens.len() - 1;
        for len in 1..=(frames - start).saturating_sub(remaining) {
            lens.push(len);
            go(seq, start + len, frames, lens, eval);
            lens.pop();
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(seq, 0, cache.num_frames(), &mut Vec::new(), &mut |lens| {
        let seg = Segmentation::merged(seq.iter().copied().zip(lens.iter().copied()));
        best = best.max(log_posterior(&seg, cache, hmm).unwrap());
    });
    best
}

/// Every sequence the stop-on-overflow sampler can emit for `set`.
pub fn sampler_support(set: &ActionSet, frames: usize, hmm: &HmmParams) -> Vec<Vec<usize>> {
    fn go(
        set: &ActionSet,
        budget: f64,
        hmm: &HmmParams,
        prefix: &mut Vec<usize>,
        used: f64,
        out: &mut Vec<Vec<usize>>,
    ) {
        if set.len() == 1 && !prefix.is_empty() {
            out.push(prefix.clone());
            return;
        }
        let mut stops = false;
        let last = prefix.last().copied();
        for c in set.iter().filter(|&c| last != Some(c)) {
            let l = hmm.mean_length(c);
            if used + l > budget {
                stops = true;
            } else {
                prefix.push(c);
                go(set, budget, hmm, prefix, used + l, out);
                prefix.pop();
            }
        }
        if stops && set.iter().all(|c| prefix.contains(&c)) {
            out.push(prefix.clone());
        }
    }
    let mut out = Vec::new();
    if hmm.total_mean_length(set.iter()) <= frames as f64 {
        go(set, frames as f64, hmm, &mut Vec::new(), 0.0, &mut out);
    }
    out.sort();
    out.dedup();
    out
}

/// Random sequence of `len` classes without adjacent repeats.
pub fn random_sequence(r: &mut impl Rng, classes: usize, len: usize) -> Vec<usize> {
    let mut seq: Vec<usize> = Vec::with_capacity(len);
    while seq.len() < len {
        let c = r.random_range(0..classes);
        if seq.last() != Some(&c) {
            seq.push(c);
        }
    }
    seq
}
