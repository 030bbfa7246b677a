use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{Dataset, Video};
use crate::error::{Error, Result};
use crate::labels::{ActionSet, ClassId, Vocabulary};
use crate::segmentation::{Segment, Segmentation};

const MAX_MEAN_DRAWS: usize = 1000;
const MAX_VIDEO_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthRange {
    pub min: usize,
    pub max: usize,
}

/// Recipe for a synthetic dataset. Each video gets a random subset of the
/// vocabulary, a ground-truth segmentation visiting every class of the subset
/// (in random order, with Poisson segment lengths), and features equal to the
/// class mean plus isotropic Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// Explicit class means (`num_classes` vectors of length `dim`); drawn from
    /// `N(0, mean_scale^2)` per coordinate when absent.
    pub means: Option<Vec<Vec<f64>>>,
    pub mean_scale: f64,
    /// Drawn means are redrawn until every pair is at least
    /// `min_separation * noise` apart.
    pub min_separation: f64,
    pub noise: f64,
    /// Poisson mean segment length per class.
    pub length_means: Vec<f64>,
    /// Inclusive bounds on the number of classes per video.
    pub set_size: (usize, usize),
    pub num_videos: usize,
    /// Inclusive bounds on segments added after the first pass over the set.
    /// Each repeats a class of the set other than the previous one.
    pub extra_segments: (usize, usize),
    /// Videos whose length falls outside the range are redrawn.
    pub length_range: Option<LengthRange>,
    pub seed: u64,
}

impl SynthSpec {
    /// Six classes in 16 dimensions, 2 to 4 classes per video, 60 to 120
    /// frames per video.
    pub fn benchmark(num_videos: usize, seed: u64) -> Self {
        SynthSpec {
            num_classes: 6,
            dim: 16,
            means: None,
            mean_scale: 1.5,
            min_separation: 4.0,
            noise: 1.0,
            length_means: vec![11.0, 12.0, 13.0, 14.0, 15.0, 16.0],
            set_size: (2, 4),
            num_videos,
            extra_segments: (2, 4),
            length_range: Some(LengthRange { min: 60, max: 120 }),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_classes == 0 || self.dim == 0 {
            return bad("synthetic spec needs at least one class and one dimension".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!(
                "noise scale must be finite and >= 0, got {}",
                self.noise
            ));
        }
        if self.length_means.len() != self.num_classes {
            return bad(format!(
                "{} length means for {} classes",
                self.length_means.len(),
                self.num_classes
            ));
        }
        if let Some(&m) = self
            .length_means
            .iter()
            .find(|&&m| !(m > 0.0 && m.is_finite()))
        {
            return bad(format!("length means must be positive, got {m}"));
        }
        let (lo, hi) = self.set_size;
        if lo == 0 || lo > hi || hi > self.num_classes {
            return bad(format!(
                "set size range {lo}..={hi} invalid for {} classes",
                self.num_classes
            ));
        }
        if let Some(r) = self.length_range {
            if r.min > r.max {
                return bad(format!("length range {}..={} is empty", r.min, r.max));
            }
            if r.max < hi {
                return Err(Error::Infeasible(format!(
                    "videos of at most {} frames cannot hold {hi} classes",
                    r.max
                )));
            }
        }
        if self.extra_segments.0 > self.extra_segments.1 {
            return bad("extra segment range is empty".into());
        }
        if let Some(means) = &self.means {
            if means.len() != self.num_classes || means.iter().any(|m| m.len() != self.dim) {
                return bad("explicit means must be num_classes vectors of length dim".into());
            }
            for i in 0..means.len() {
                for j in 0..i {
                    if means[i] == means[j] {
                        return bad(format!("classes {j} and {i} share a mean"));
                    }
                }
            }
        } else if self.mean_scale.is_nan() || self.mean_scale <= 0.0 {
            return bad("mean_scale must be positive when means are drawn".into());
        }
        Ok(())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn draw_means(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    if let Some(m) = &spec.means {
        return Ok(m.clone());
    }
    let normal =
        Normal::new(0.0, spec.mean_scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let needed = spec.min_separation * spec.noise;
    for _ in 0..MAX_MEAN_DRAWS {
        let means: Vec<Vec<f64>> = (0..spec.num_classes)
            .map(|_| (0..spec.dim).map(|_| normal.sample(rng)).collect())
            .collect();
        let separated = (0..means.len()).all(|i| {
            (0..i).all(|j| distance(&means[i], &means[j]) >= needed && means[i] != means[j])
        });
        if separated {
            return Ok(means);
        }
    }
    Err(Error::Infeasible(format!(
        "could not draw means {needed} apart in {MAX_MEAN_DRAWS} attempts"
    )))
}

fn draw_length(poisson: &Poisson<f64>, rng: &mut ChaCha8Rng) -> usize {
    (poisson.sample(rng) as usize).max(1)
}

fn draw_segmentation(
    spec: &SynthSpec,
    set: &[ClassId],
    lengths: &[Poisson<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<Segmentation> {
    for _ in 0..MAX_VIDEO_DRAWS {
        let mut order = set.to_vec();
        order.shuffle(rng);
        let extra = if set.len() > 1 {
            rng.random_range(spec.extra_segments.0..=spec.extra_segments.1)
        } else {
            0
        };
        for _ in 0..extra {
            let last = *order.last().unwrap();
            let options: Vec<ClassId> = set.iter().copied().filter(|&c| c != last).collect();
            order.push(*options.choose(rng).unwrap());
        }
        let segments: Vec<Segment> = order
            .iter()
            .map(|&c| Segment::new(c, draw_length(&lengths[c], rng)))
            .collect();
        let total: usize = segments.iter().map(|s| s.len).sum();
        if spec
            .length_range
            .is_some_and(|r| total < r.min || total > r.max)
        {
            continue;
        }
        return Segmentation::new(segments);
    }
    Err(Error::Infeasible(format!(
        "no video length within bounds after {MAX_VIDEO_DRAWS} draws"
    )))
}

/// Deterministic given `spec.seed`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = draw_means(spec, &mut rng)?;
    let lengths: Vec<Poisson<f64>> = spec
        .length_means
        .iter()
        .map(|&m| Poisson::new(m).map_err(|e| Error::InvalidArgument(e.to_string())))
        .collect::<Result<_>>()?;
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let all: Vec<ClassId> = (0..spec.num_classes).collect();
    let mut videos = Vec::with_capacity(spec.num_videos);
    for i in 0..spec.num_videos {
        let size = rng.random_range(spec.set_size.0..=spec.set_size.1);
        let members: Vec<ClassId> = all.choose_multiple(&mut rng, size).copied().collect();
        let set = ActionSet::new(members);
        let seg = draw_segmentation(spec, set.as_slice(), &lengths, &mut rng)?;
        let labels = seg.to_labels();
        let mut features = Array2::<f64>::zeros((spec.dim, labels.len()));
        for (t, &c) in labels.iter().enumerate() {
            for k in 0..spec.dim {
                let eps = if spec.noise > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                features[[k, t]] = means[c][k] + eps;
            }
        }
        videos.push(Video {
            id: format!("vid{i:04}"),
            features,
            set,
            labels: Some(labels),
        });
    }
    Ok(Dataset {
        vocabulary: Vocabulary::numbered(spec.num_classes),
        background: None,
        videos,
    })
}
