use crate::error::{Error, Result};
use crate::labels::{ActionSet, ClassId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Segment {
    pub class: ClassId,
    pub len: usize,
}

impl Segment {
    pub fn new(class: ClassId, len: usize) -> Self {
        Segment { class, len }
    }
}

/// Ordered action segments covering a video.
///
/// Always canonical: every length is at least one and adjacent segments carry
/// different classes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Segmentation {
    segments: Vec<Segment>,
}

impl Segmentation {
    /// Validates canonical form. Adjacent equal classes are an error rather
    /// than silently merged.
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        for (i, s) in segments.iter().enumerate() {
            if s.len == 0 {
                return Err(Error::InvalidArgument(format!(
                    "segment {i} has zero length"
                )));
            }
            if i > 0 && segments[i - 1].class == s.class {
                return Err(Error::InvalidArgument(format!(
                    "segments {} and {i} share class {}",
                    i - 1,
                    s.class
                )));
            }
        }
        Ok(Segmentation { segments })
    }

    /// Builds from `(class, len)` pairs, merging adjacent equal classes and
    /// dropping empty segments.
    pub fn merged<I: IntoIterator<Item = (ClassId, usize)>>(pairs: I) -> Self {
        let mut segments: Vec<Segment> = Vec::new();
        for (class, len) in pairs {
            if len == 0 {
                continue;
            }
            match segments.last_mut() {
                Some(last) if last.class == class => last.len += len,
                _ => segments.push(Segment { class, len }),
            }
        }
        Segmentation { segments }
    }

    pub fn from_labels(labels: &[ClassId]) -> Self {
        Self::merged(labels.iter().map(|&c| (c, 1)))
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    pub fn class_sequence(&self) -> Vec<ClassId> {
        self.segments.iter().map(|s| s.class).collect()
    }

    pub fn classes(&self) -> ActionSet {
        self.segments.iter().map(|s| s.class).collect()
    }

    pub fn covers(&self, set: &ActionSet) -> bool {
        let present = self.classes();
        set.is_subset(&present)
    }

    pub fn to_labels(&self) -> Vec<ClassId> {
        let mut labels = Vec::with_capacity(self.total_len());
        for s in &self.segments {
            labels.extend(std::iter::repeat_n(s.class, s.len));
        }
        labels
    }

    /// `(class, start, end)` with `end` exclusive.
    pub fn intervals(&self) -> impl Iterator<Item = (ClassId, usize, usize)> + '_ {
        self.segments.iter().scan(0usize, |start, s| {
            let begin = *start;
            *start += s.len;
            Some((s.class, begin, *start))
        })
    }
}
