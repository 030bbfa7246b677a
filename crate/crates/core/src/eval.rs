//! Frame accuracy, intersection over detection and midpoint hit.

use std::fmt;

use crate::error::{Error, Result};
use crate::labels::ClassId;
use crate::segmentation::Segmentation;

/// How per-video values combine into the aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Weighted by frame count (MoF) or segment count (IoD, midpoint hit).
    Pooled,
    /// Plain mean over videos.
    PerVideoMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoScore {
    pub id: String,
    pub value: f64,
    /// Numerator and denominator behind `value`; pooled aggregates sum these.
    pub hits: f64,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: String,
    pub aggregation: Aggregation,
    pub per_video: Vec<VideoScore>,
    pub aggregate: f64,
}

impl EvalReport {
    fn build(metric: &str, aggregation: Aggregation, per_video: Vec<VideoScore>) -> Self {
        let aggregate = match aggregation {
            Aggregation::Pooled => {
                let total: usize = per_video.iter().map(|v| v.total).sum();
                if total == 0 {
                    0.0
                } else {
                    per_video.iter().map(|v| v.hits).sum::<f64>() / total as f64
                }
            }
            Aggregation::PerVideoMean => {
                if per_video.is_empty() {
                    0.0
                } else {
                    per_video.iter().map(|v| v.value).sum::<f64>() / per_video.len() as f64
                }
            }
        };
        EvalReport {
            metric: metric.to_string(),
            aggregation,
            per_video,
            aggregate,
        }
    }

    pub fn video_count(&self) -> usize {
        self.per_video.len()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let agg = match self.aggregation {
            Aggregation::Pooled => "pooled",
            Aggregation::PerVideoMean => "per_video_mean",
        };
        writeln!(f, "metric={}", self.metric)?;
        writeln!(f, "aggregation={agg}")?;
        writeln!(f, "videos={}", self.video_count())?;
        writeln!(f, "aggregate={:.6}", self.aggregate)?;
        for v in &self.per_video {
            writeln!(f, "video.{}={:.6}", v.id, v.value)?;
        }
        Ok(())
    }
}

fn ratio(hits: f64, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits / total as f64
    }
}

/// Correct frames of one video.
pub fn frame_hits(predicted: &[ClassId], truth: &[ClassId]) -> Result<usize> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predicted frames vs {} ground-truth frames",
            predicted.len(),
            truth.len()
        )));
    }
    Ok(predicted.iter().zip(truth).filter(|(p, t)| p == t).count())
}

/// MoF pairs are `(video_id, predicted labels, ground-truth labels)`.
pub fn mof<'a, I>(videos: I, aggregation: Aggregation) -> Result<EvalReport>
where
    I: IntoIterator<Item = (&'a str, &'a [ClassId], &'a [ClassId])>,
{
    let mut per_video = Vec::new();
    for (id, p, t) in videos {
        let hits = frame_hits(p, t)? as f64;
        per_video.push(VideoScore {
            id: id.to_string(),
            value: ratio(hits, t.len()),
            hits,
            total: t.len(),
        });
    }
    Ok(EvalReport::build("mof", aggregation, per_video))
}

fn overlap(a: (usize, usize), b: (usize, usize)) -> usize {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    hi.saturating_sub(lo)
}

/// Per ground-truth segment, `|GT ∩ D| / |D|` of the same-class detection
/// overlapping it most (0 when none overlaps). Returns the sum and count.
pub fn iod_hits(predicted: &Segmentation, truth: &Segmentation) -> Result<(f64, usize)> {
    check_lengths(predicted, truth)?;
    let detections: Vec<_> = predicted.intervals().collect();
    let mut sum = 0.0;
    let mut count = 0;
    for (gc, gs, ge) in truth.intervals() {
        let mut best: Option<(usize, usize)> = None;
        for &(dc, ds, de) in &detections {
            if dc != gc {
                continue;
            }
            let ov = overlap((gs, ge), (ds, de));
            if ov > 0 && best.is_none_or(|(b, _)| ov > b) {
                best = Some((ov, de - ds));
            }
        }
        if let Some((ov, dlen)) = best {
            sum += ov as f64 / dlen as f64;
        }
        count += 1;
    }
    Ok((sum, count))
}

/// A detection is correct when its midpoint frame `start + (len - 1) / 2`
/// lies in a same-class ground-truth segment not already claimed by an
/// earlier detection. Returns correct detections and the detection count.
pub fn midpoint_hits(predicted: &Segmentation, truth: &Segmentation) -> Result<(f64, usize)> {
    check_lengths(predicted, truth)?;
    let gt: Vec<_> = truth.intervals().collect();
    let mut claimed = vec![false; gt.len()];
    let mut correct = 0usize;
    let mut total = 0usize;
    for (dc, ds, de) in predicted.intervals() {
        total += 1;
        let mid = ds + (de - ds - 1) / 2;
        if let Some(i) = gt
            .iter()
            .position(|&(gc, gs, ge)| gc == dc && gs <= mid && mid < ge)
        {
            if !claimed[i] {
                claimed[i] = true;
                correct += 1;
            }
        }
    }
    Ok((correct as f64, total))
}

fn check_lengths(predicted: &Segmentation, truth: &Segmentation) -> Result<()> {
    if predicted.total_len() != truth.total_len() {
        return Err(Error::Dimension(format!(
            "prediction covers {} frames, ground truth {}",
            predicted.total_len(),
            truth.total_len()
        )));
    }
    Ok(())
}

type SegmentPairs<'a> = (&'a str, &'a Segmentation, &'a Segmentation);

fn segment_report<'a, I, F>(
    metric: &str,
    videos: I,
    aggregation: Aggregation,
    score: F,
) -> Result<EvalReport>
where
    I: IntoIterator<Item = SegmentPairs<'a>>,
    F: Fn(&Segmentation, &Segmentation) -> Result<(f64, usize)>,
{
    let mut per_video = Vec::new();
    for (id, p, t) in videos {
        let (hits, total) = score(p, t)?;
        per_video.push(VideoScore {
            id: id.to_string(),
            value: ratio(hits, total),
            hits,
            total,
        });
    }
    Ok(EvalReport::build(metric, aggregation, per_video))
}

/// Pooled aggregation averages over all ground-truth segments.
pub fn iod<'a, I>(videos: I, aggregation: Aggregation) -> Result<EvalReport>
where
    I: IntoIterator<Item = SegmentPairs<'a>>,
{
    segment_report("iod", videos, aggregation, iod_hits)
}

/// Pooled aggregation divides all correct detections by all detections.
pub fn midpoint_hit<'a, I>(videos: I, aggregation: Aggregation) -> Result<EvalReport>
where
    I: IntoIterator<Item = SegmentPairs<'a>>,
{
    segment_report("midpoint_hit", videos, aggregation, midpoint_hits)
}
