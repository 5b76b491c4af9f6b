//! End-to-end helpers: score a dataset with a trained model, turn scores
//! into hypotheses, and evaluate them.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::{shuffle_phrase_probe, DatasetSplit, ScoredPhrase};
use crate::dsp::MelSpectrogram;
use crate::metrics::{event_f1, psds, EventKey, EventList, EventMetricConfig, EventScores, PsdRoc, PsdsConfig};
use crate::model::{decode_segments, FrameScores, GroundingConfig, GroundingModel, PhraseQuery};
use crate::{Error, Result};

/// Clips scored per forward pass at inference time.
pub const INFERENCE_BATCH: usize = 8;

/// Model scores for every phrase of every clip.
pub fn score_split(model: &GroundingModel, split: &DatasetSplit, features: &[MelSpectrogram]) -> Result<Vec<ScoredPhrase>> {
    if features.len() != split.clips.len() {
        return Err(Error::InvalidArgument(format!("{} feature matrices for {} clips", features.len(), split.clips.len())));
    }
    let queries: Vec<Vec<PhraseQuery>> = split
        .clips
        .iter()
        .map(|c| c.phrases.iter().map(|p| model.vocab().encode(&p.text)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let inputs: Vec<(&MelSpectrogram, &[PhraseQuery])> = features.iter().zip(&queries).map(|(m, q)| (m, q.as_slice())).collect();
    let scores = model.score_clips(&inputs, INFERENCE_BATCH)?;
    let mut out = Vec::with_capacity(split.n_phrases());
    for (clip, per_clip) in split.clips.iter().zip(scores) {
        for (phrase, s) in clip.phrases.iter().zip(per_clip) {
            out.push(ScoredPhrase { audio_id: clip.audio_id.clone(), phrase: phrase.text.clone(), scores: s });
        }
    }
    Ok(out)
}

/// Keyed score map; a repeated key keeps the frame-wise maximum.
pub fn score_map(scored: &[ScoredPhrase]) -> BTreeMap<EventKey, FrameScores> {
    let mut map: BTreeMap<EventKey, FrameScores> = BTreeMap::new();
    for s in scored {
        map.entry((s.audio_id.clone(), s.phrase.clone()))
            .and_modify(|cur| {
                for (a, b) in cur.scores.iter_mut().zip(&s.scores.scores) {
                    *a = a.max(*b);
                }
            })
            .or_insert_with(|| s.scores.clone());
    }
    map
}

/// Decoded segments of every scored phrase.
pub fn decode_all(scored: &[ScoredPhrase], cfg: &GroundingConfig) -> Result<EventList> {
    let mut list = EventList::new();
    for (key, s) in score_map(scored) {
        list.insert(key.0, key.1, &decode_segments(&s, cfg))?;
    }
    Ok(list)
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub event: EventScores,
    pub psds: f64,
    #[serde(skip)]
    pub roc: PsdRoc,
}

/// Event-F1 at the decoding threshold of `grounding` and PSDS over the
/// threshold sweep of `psds_cfg`.
pub fn evaluate_scores(
    split: &DatasetSplit,
    scored: &[ScoredPhrase],
    grounding: &GroundingConfig,
    event_cfg: &EventMetricConfig,
    psds_cfg: &PsdsConfig,
) -> Result<Evaluation> {
    let reference = EventList::from_split(split)?;
    let hyp = decode_all(scored, grounding)?;
    let event = event_f1(&reference, &hyp, event_cfg)?;
    let (value, roc) = psds(&reference, &score_map(scored), split.total_duration_s()?, psds_cfg)?;
    Ok(Evaluation { event, psds: value, roc })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeResult {
    pub original_f1: f64,
    pub shuffled_f1: f64,
}

impl ProbeResult {
    pub fn difference(&self) -> f64 {
        self.original_f1 - self.shuffled_f1
    }
}

/// Event-F1 with the true phrase queries and with shuffled ones, the
/// reference segments staying attached to their original positions.
pub fn run_probe(
    model: &GroundingModel,
    split: &DatasetSplit,
    features: &[MelSpectrogram],
    seed: u64,
    grounding: &GroundingConfig,
    event_cfg: &EventMetricConfig,
) -> Result<ProbeResult> {
    let f1 = |s: &DatasetSplit| -> Result<f64> {
        let scored = score_split(model, s, features)?;
        Ok(event_f1(&EventList::from_split(s)?, &decode_all(&scored, grounding)?, event_cfg)?.f1)
    };
    let shuffled = shuffle_phrase_probe(split, seed)?;
    Ok(ProbeResult { original_f1: f1(split)?, shuffled_f1: f1(&shuffled)? })
}
