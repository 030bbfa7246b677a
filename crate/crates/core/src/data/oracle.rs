use crate::error::{Error, Result};
use crate::hmm::HmmParams;
use crate::labels::{ActionSet, ClassId};
use crate::nnet::ForwardCache;
use crate::scv::Scorer;
use crate::segmentation::Segmentation;

pub const ORACLE_MAX_FRAMES: usize = 14;
pub const ORACLE_MAX_CLASSES: usize = 3;

/// Exhaustive MAP over every framewise labeling drawn from `set`.
///
/// Labelings are enumerated depth-first, scoring each run as it closes, so a
/// leaf costs O(1). With `cover_required`, only labelings using every class of
/// the set are eligible. Refuses instances beyond the size guard.
pub fn oracle_exhaustive_map(
    cache: &ForwardCache,
    hmm: &HmmParams,
    set: &ActionSet,
    cover_required: bool,
) -> Result<(Segmentation, f64)> {
    let t_len = cache.num_frames();
    if t_len > ORACLE_MAX_FRAMES || set.len() > ORACLE_MAX_CLASSES {
        return Err(Error::TooLarge(format!(
            "T={t_len}, |C|={} exceeds T<={ORACLE_MAX_FRAMES}, |C|<={ORACLE_MAX_CLASSES}",
            set.len()
        )));
    }
    if set.is_empty() || t_len == 0 {
        return Err(Error::InvalidArgument(
            "oracle needs a nonempty set and video".into(),
        ));
    }
    set.check_within(hmm.num_classes())?;
    if cover_required && t_len < set.len() {
        return Err(Error::CoverageInfeasible(format!(
            "T={t_len} < |C|={}",
            set.len()
        )));
    }
    let scorer = Scorer::new(cache, hmm)?;
    let mut search = Search {
        scorer: &scorer,
        classes: set.as_slice(),
        cover_required,
        labels: vec![0; t_len],
        best: None,
    };
    for &c in set.as_slice() {
        search.labels[0] = c;
        search.extend(1, 0, 0.0);
    }
    let (labels, score) = search.best.expect("nonempty search space");
    Ok((Segmentation::from_labels(&labels), score))
}

struct Search<'a, 's> {
    scorer: &'a Scorer<'s>,
    classes: &'a [ClassId],
    cover_required: bool,
    labels: Vec<ClassId>,
    best: Option<(Vec<ClassId>, f64)>,
}

impl Search<'_, '_> {
    /// `labels[..t]` is fixed; the open run starts at `run_start`; `closed` is
    /// the score of every run before it, transitions into the open run included.
    fn extend(&mut self, t: usize, run_start: usize, closed: f64) {
        let t_len = self.labels.len();
        let cur = self.labels[t - 1];
        let run_score =
            self.scorer.duration(cur, t - run_start) + self.scorer.frames(cur, run_start, t);
        if t == t_len {
            if self.cover_required && !self.classes.iter().all(|c| self.labels.contains(c)) {
                return;
            }
            let total = closed + run_score;
            if self.best.as_ref().is_none_or(|(_, b)| total > *b) {
                self.best = Some((self.labels.clone(), total));
            }
            return;
        }
        for i in 0..self.classes.len() {
            let c = self.classes[i];
            self.labels[t] = c;
            if c == cur {
                self.extend(t + 1, run_start, closed);
            } else {
                let next = closed + run_score + self.scorer.hmm().log_transition(cur, c);
                self.extend(t + 1, t, next);
            }
        }
    }
}
