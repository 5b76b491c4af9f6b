use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::{EventKey, EventList};
use crate::model::{decode_segments, FrameScores, GroundingConfig};
use crate::{Error, Result, Segment};

/// Ratio comparisons are made with this much slack so that exact grid
/// coverage (a ratio of exactly ρ) is not lost to rounding.
const RATIO_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PsdsConfig {
    pub dtc: f64,
    pub gtc: f64,
    pub cttc: f64,
    pub alpha_ct: f64,
    pub alpha_st: f64,
    /// Upper end of the false-positive-rate axis, per hour.
    pub e_max: f64,
    /// Decoding thresholds, one operating point each.
    pub thresholds: Vec<f64>,
}

impl Default for PsdsConfig {
    fn default() -> Self {
        Self {
            dtc: 0.5,
            gtc: 0.5,
            cttc: 0.3,
            alpha_ct: 0.0,
            alpha_st: 0.0,
            e_max: 100.0,
            thresholds: default_thresholds(),
        }
    }
}

/// 50 evenly spaced thresholds from 0.02 to 0.98.
pub fn default_thresholds() -> Vec<f64> {
    (0..50).map(|i| 0.02 + 0.96 * i as f64 / 49.0).collect()
}

impl PsdsConfig {
    /// Sorted, de-duplicated thresholds after range checks.
    fn checked_thresholds(&self) -> Result<Vec<f64>> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if ![self.dtc, self.gtc, self.cttc].into_iter().all(in_unit) {
            return Err(Error::InvalidArgument("PSDS ratios must lie in [0, 1]".into()));
        }
        if !(self.e_max > 0.0) || self.alpha_ct < 0.0 || self.alpha_st < 0.0 {
            return Err(Error::InvalidArgument("PSDS needs e_max > 0 and non-negative alphas".into()));
        }
        let mut t = self.thresholds.clone();
        if t.is_empty() || t.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::InvalidArgument("PSDS thresholds must be non-empty and inside (0, 1)".into()));
        }
        t.sort_by(f64::total_cmp);
        t.dedup();
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub efpr: f64,
    pub etpr: f64,
}

/// Operating points sorted by eFPR (ties by descending eTPR).
#[derive(Debug, Clone, PartialEq)]
pub struct PsdRoc {
    pub points: Vec<RocPoint>,
    pub e_max: f64,
}

impl PsdRoc {
    pub fn new(mut points: Vec<RocPoint>, e_max: f64) -> Self {
        points.sort_by(|a, b| a.efpr.total_cmp(&b.efpr).then(b.etpr.total_cmp(&a.etpr)));
        Self { points, e_max }
    }

    /// Best eTPR among points with eFPR ≤ `e` (0 when there are none).
    pub fn envelope(&self, e: f64) -> f64 {
        self.points.iter().take_while(|p| p.efpr <= e).fold(0.0, |m, p| m.max(p.etpr))
    }

    /// Whether point `i` lies on the upper envelope.
    pub fn on_envelope(&self, i: usize) -> bool {
        let p = &self.points[i];
        p.etpr >= self.envelope(p.efpr)
    }

    /// Normalised area under the envelope over `[0, e_max]`.
    pub fn area(&self) -> f64 {
        let mut area = 0.0;
        let mut level = 0.0f64;
        let mut at = 0.0;
        for p in self.points.iter().take_while(|p| p.efpr < self.e_max) {
            let e = p.efpr.max(0.0);
            area += level * (e - at);
            at = e;
            level = level.max(p.etpr);
        }
        area += level * (self.e_max - at);
        (area / self.e_max).clamp(0.0, 1.0)
    }
}

/// CSV with one row per operating point: `efpr,etpr,on_envelope`.
pub fn export_roc(roc: &PsdRoc) -> String {
    let mut s = String::from("efpr,etpr,on_envelope\n");
    for (i, p) in roc.points.iter().enumerate() {
        writeln!(s, "{:?},{:?},{}", p.efpr, p.etpr, roc.on_envelope(i)).unwrap();
    }
    s
}

fn overlap(d: &Segment, refs: &[Segment]) -> f64 {
    refs.iter().map(|r| d.intersection(r)).sum()
}

/// Counts at one threshold.
struct Counts {
    tp: BTreeMap<String, usize>,
    fp: BTreeMap<String, usize>,
    /// Cross-triggers of class `c` on references of class `c'`.
    ct: BTreeMap<(String, String), usize>,
}

fn count_at(reference: &EventList, scores: &BTreeMap<EventKey, FrameScores>, theta: f64, cfg: &PsdsConfig) -> Counts {
    let mut counts = Counts { tp: BTreeMap::new(), fp: BTreeMap::new(), ct: BTreeMap::new() };
    let decode = GroundingConfig::with_threshold(theta);
    for ((clip, class), s) in scores {
        let refs = reference.get(clip, class);
        let dets = decode_segments(s, &decode);
        let valid: Vec<bool> = dets.iter().map(|d| overlap(d, refs) / d.duration() >= cfg.dtc - RATIO_EPS).collect();
        let valid_dets: Vec<Segment> = dets.iter().zip(&valid).filter(|(_, &v)| v).map(|(d, _)| *d).collect();
        let tp = refs.iter().filter(|r| overlap(r, &valid_dets) / r.duration() >= cfg.gtc - RATIO_EPS).count();
        *counts.tp.entry(class.clone()).or_default() += tp;
        let invalid: Vec<&Segment> = dets.iter().zip(&valid).filter(|(_, &v)| !v).map(|(d, _)| d).collect();
        *counts.fp.entry(class.clone()).or_default() += invalid.len();
        if cfg.alpha_ct > 0.0 {
            for ((other_clip, other), other_refs) in reference.iter() {
                if other_clip != clip || other == class || other_refs.is_empty() {
                    continue;
                }
                let n = invalid.iter().filter(|d| overlap(d, other_refs) / d.duration() >= cfg.cttc - RATIO_EPS).count();
                *counts.ct.entry((class.clone(), other.clone())).or_default() += n;
            }
        }
    }
    counts
}

/// PSDS over a threshold sweep. Every reference key needs scores; scored
/// keys without references only contribute false positives.
///
/// At each threshold, eTPR is the mean per-class TPR (minus `alpha_st`
/// times its population standard deviation) over classes with references,
/// and eFPR is the sum over classes of false positives per hour plus
/// `alpha_ct` times the mean cross-trigger rate (per hour of audio) against
/// the other classes.
pub fn psds(
    reference: &EventList,
    scores: &BTreeMap<EventKey, FrameScores>,
    total_audio_s: f64,
    cfg: &PsdsConfig,
) -> Result<(f64, PsdRoc)> {
    if !(total_audio_s > 0.0) {
        return Err(Error::InvalidArgument(format!("total audio duration must be positive, got {total_audio_s}")));
    }
    let thresholds = cfg.checked_thresholds()?;
    if let Some((clip, phrase)) = reference.keys().find(|k| !scores.contains_key(*k)) {
        return Err(Error::InvalidArgument(format!("no scores for phrase '{phrase}' of clip '{clip}'")));
    }
    let mut n_ref: BTreeMap<&str, usize> = BTreeMap::new();
    for ((_, class), refs) in reference.iter() {
        *n_ref.entry(class.as_str()).or_default() += refs.len();
    }
    n_ref.retain(|_, n| *n > 0);
    let classes: BTreeSet<&str> = scores.keys().map(|(_, c)| c.as_str()).chain(n_ref.keys().copied()).collect();
    let hours = total_audio_s / 3600.0;

    let mut points = Vec::with_capacity(thresholds.len());
    for &theta in &thresholds {
        let counts = count_at(reference, scores, theta, cfg);
        let tprs: Vec<f64> = n_ref.iter().map(|(c, &n)| counts.tp.get(*c).copied().unwrap_or(0) as f64 / n as f64).collect();
        let etpr = if tprs.is_empty() {
            0.0
        } else {
            let mean = tprs.iter().sum::<f64>() / tprs.len() as f64;
            let var = tprs.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / tprs.len() as f64;
            (mean - cfg.alpha_st * var.sqrt()).max(0.0)
        };
        let mut efpr = 0.0;
        for c in &classes {
            efpr += counts.fp.get(*c).copied().unwrap_or(0) as f64 / hours;
            if cfg.alpha_ct > 0.0 {
                let others: Vec<&&str> = n_ref.keys().filter(|o| *o != c).collect();
                if !others.is_empty() {
                    let ct: usize = others
                        .iter()
                        .map(|o| counts.ct.get(&(c.to_string(), o.to_string())).copied().unwrap_or(0))
                        .sum();
                    efpr += cfg.alpha_ct * ct as f64 / hours / others.len() as f64;
                }
            }
        }
        points.push(RocPoint { threshold: theta, efpr, etpr });
    }
    let roc = PsdRoc::new(points, cfg.e_max);
    Ok((roc.area(), roc))
}
