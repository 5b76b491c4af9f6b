use serde::Serialize;

use super::{EventKey, EventList};
use crate::{Error, Result, Segment};

/// Absorbs rounding in boundary differences such as `1.08 − 1.00`.
const TOLERANCE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventMetricConfig {
    pub t_collar: f64,
    /// Offset tolerance as a fraction of the reference duration.
    pub duration_tolerance: f64,
}

impl Default for EventMetricConfig {
    fn default() -> Self {
        Self { t_collar: 0.1, duration_tolerance: 0.2 }
    }
}

impl EventMetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_collar > 0.0) || !(0.0..1.0).contains(&self.duration_tolerance) {
            return Err(Error::InvalidArgument(format!("invalid event metric config {self:?}")));
        }
        Ok(())
    }

    /// Whether `hyp` may match `reference`.
    pub fn matches(&self, reference: &Segment, hyp: &Segment) -> bool {
        let offset_tol = self.t_collar.max(self.duration_tolerance * reference.duration());
        (hyp.onset - reference.onset).abs() <= self.t_collar + TOLERANCE_EPS
            && (hyp.offset - reference.offset).abs() <= offset_tol + TOLERANCE_EPS
    }
}

/// Percentages in `[0, 100]` and raw counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl EventScores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Self { precision: 100.0 * p, recall: 100.0 * r, f1: 100.0 * f, tp, fp, fn_ }
    }
}

/// Greedy assignment for one key: `pairs[h] = Some(r)` when hypothesis `h`
/// (in onset order) took reference `r` (in onset order).
#[derive(Debug, Clone, PartialEq)]
pub struct MatchTrace {
    pub pairs: Vec<Option<usize>>,
}

impl MatchTrace {
    pub fn tp(&self) -> usize {
        self.pairs.iter().flatten().count()
    }
}

/// Hypotheses in onset order each take the first unmatched eligible
/// reference in onset order. Both lists must already be sorted by onset.
pub fn match_events(refs: &[Segment], hyps: &[Segment], cfg: &EventMetricConfig) -> MatchTrace {
    let mut used = vec![false; refs.len()];
    let pairs = hyps
        .iter()
        .map(|h| {
            let r = (0..refs.len()).find(|&r| !used[r] && cfg.matches(&refs[r], h))?;
            used[r] = true;
            Some(r)
        })
        .collect();
    MatchTrace { pairs }
}

/// Micro-averaged event-based scores over every (clip, phrase) key present
/// in either list.
pub fn event_f1(reference: &EventList, hypothesis: &EventList, cfg: &EventMetricConfig) -> Result<EventScores> {
    cfg.validate()?;
    let mut keys: Vec<&EventKey> = reference.keys().chain(hypothesis.keys()).collect();
    keys.sort();
    keys.dedup();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (clip, phrase) in keys {
        let refs = reference.get(clip, phrase);
        let hyps = hypothesis.get(clip, phrase);
        let matched = match_events(refs, hyps, cfg).tp();
        tp += matched;
        fp += hyps.len() - matched;
        fn_ += refs.len() - matched;
    }
    Ok(EventScores::from_counts(tp, fp, fn_))
}
