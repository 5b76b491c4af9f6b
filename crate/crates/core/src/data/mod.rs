//! Dataset schema, loading and validation, the synthetic corpus, the random
//! baseline and the shuffled-query probe.

mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{log_mel, num_frames, MelSpectrogram, HOP_S, SAMPLE_RATE_HZ, WINDOW_S};
use crate::model::FrameScores;
use crate::wav::{read_wav, wav_duration_s};
use crate::{Error, Result, Segment};

pub use synth::{
    event_bank, generate_synthetic, synthesize, synthesize_clip, EventKind, SynthesisParams, SyntheticEvent, ADJECTIVES,
    CLIP_DURATION_S,
};

/// Slack allowed when comparing segment bounds against a clip's duration.
const DURATION_SLACK_S: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        })
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::InvalidArgument(format!("split must be train, val or test, got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phrase {
    pub text: String,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingClip {
    pub audio_id: String,
    /// Relative paths resolve against the dataset file's directory.
    pub audio_path: String,
    pub caption: String,
    pub phrases: Vec<Phrase>,
    /// Filled in from the WAV header by [`load_dataset`].
    #[serde(skip)]
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSplit {
    #[serde(rename = "split")]
    pub name: SplitName,
    pub clips: Vec<GroundingClip>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetSplit {
    /// Parses and validates a dataset document. Audio is not touched;
    /// `root` is where relative audio paths resolve.
    pub fn from_json_str(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut split: DatasetSplit = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Dataset { path: e.path().to_string(), reason: e.inner().to_string() })?;
        split.root = root.into();
        split.validate()?;
        Ok(split)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes") + "\n"
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn audio_path(&self, clip: &GroundingClip) -> PathBuf {
        self.root.join(&clip.audio_path)
    }

    pub fn clip(&self, audio_id: &str) -> Option<&GroundingClip> {
        self.clips.iter().find(|c| c.audio_id == audio_id)
    }

    pub fn n_phrases(&self) -> usize {
        self.clips.iter().map(|c| c.phrases.len()).sum()
    }

    /// Sum of clip durations; every clip must have a known duration.
    pub fn total_duration_s(&self) -> Result<f64> {
        self.clips
            .iter()
            .map(|c| {
                c.duration_s.ok_or_else(|| Error::Dataset {
                    path: c.audio_id.clone(),
                    reason: "clip duration unknown (audio not inspected)".into(),
                })
            })
            .sum()
    }

    /// Schema-level checks. Segments within a phrase are sorted, and
    /// overlapping or duplicated ones are merged with a warning.
    pub fn validate(&mut self) -> Result<()> {
        let mut seen = HashSet::new();
        for (ci, clip) in self.clips.iter_mut().enumerate() {
            let at = |rest: &str| format!("clips[{ci}]{rest}");
            if clip.audio_id.trim().is_empty() {
                return Err(Error::dataset(at(".audio_id"), "empty audio_id"));
            }
            if !seen.insert(clip.audio_id.clone()) {
                return Err(Error::dataset(at(".audio_id"), format!("duplicate audio_id '{}'", clip.audio_id)));
            }
            for (pi, phrase) in clip.phrases.iter_mut().enumerate() {
                if phrase.text.trim().is_empty() {
                    return Err(Error::dataset(at(&format!(".phrases[{pi}].text")), "empty phrase text"));
                }
                for (si, seg) in phrase.segments.iter().enumerate() {
                    seg.validate().map_err(|e| {
                        Error::dataset(at(&format!(".phrases[{pi}].segments[{si}]")), format!("{e} (audio_id '{}')", clip.audio_id))
                    })?;
                }
                let merged = merge_segments(&phrase.segments);
                if merged.len() != phrase.segments.len() {
                    log::warn!(
                        "{}: overlapping segments of phrase '{}' in '{}' merged",
                        at(&format!(".phrases[{pi}]")),
                        phrase.text,
                        clip.audio_id
                    );
                }
                phrase.segments = merged;
            }
            if let Some(d) = clip.duration_s {
                check_within(clip, d, ci)?;
            }
        }
        Ok(())
    }
}

fn check_within(clip: &GroundingClip, duration_s: f64, ci: usize) -> Result<()> {
    for (pi, phrase) in clip.phrases.iter().enumerate() {
        if let Some(seg) = phrase.segments.iter().find(|s| s.offset > duration_s + DURATION_SLACK_S) {
            return Err(Error::dataset(
                format!("clips[{ci}].phrases[{pi}].segments"),
                format!(
                    "segment [{}, {}] of '{}' ends after the audio ({duration_s} s) of audio_id '{}'",
                    seg.onset, seg.offset, phrase.text, clip.audio_id
                ),
            ));
        }
    }
    Ok(())
}

/// Sorts by onset and merges overlapping or identical segments. Touching
/// segments stay separate.
pub fn merge_segments(segments: &[Segment]) -> Vec<Segment> {
    let mut sorted = segments.to_vec();
    sorted.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.offset.total_cmp(&b.offset)));
    let mut out: Vec<Segment> = Vec::with_capacity(sorted.len());
    for s in sorted {
        match out.last_mut() {
            Some(last) if s.onset < last.offset || (s.onset == last.onset && s.offset == last.offset) => {
                last.offset = last.offset.max(s.offset);
            }
            _ => out.push(s),
        }
    }
    out
}

/// Reads a dataset file, checks that every referenced WAV exists, records
/// clip durations from the WAV headers and rejects segments past the end.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::dataset(path.display().to_string(), e.to_string()))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut split = DatasetSplit::from_json_str(&text, root)?;
    for ci in 0..split.clips.len() {
        let wav = split.audio_path(&split.clips[ci]);
        let d = wav_duration_s(&wav).map_err(|e| {
            Error::dataset(format!("clips[{ci}].audio_path"), format!("audio_id '{}': {e}", split.clips[ci].audio_id))
        })?;
        split.clips[ci].duration_s = Some(d);
        check_within(&split.clips[ci], d, ci)?;
    }
    Ok(split)
}

/// Log-mel features of every clip, in clip order.
pub fn load_features(split: &DatasetSplit) -> Result<Vec<MelSpectrogram>> {
    split
        .clips
        .iter()
        .map(|clip| {
            let w = read_wav(split.audio_path(clip))?;
            log_mel(&w).map_err(|e| Error::dataset(clip.audio_id.clone(), e.to_string()))
        })
        .collect()
}

/// Number of feature frames for a clip of `duration_s` seconds.
pub fn frames_for_duration(duration_s: f64) -> usize {
    let sr = SAMPLE_RATE_HZ as f64;
    let n = (duration_s * sr).round() as usize;
    num_frames(n, (WINDOW_S * sr).round() as usize, (HOP_S * sr).round() as usize)
}

/// Frame scores for one (clip, phrase) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPhrase {
    pub audio_id: String,
    pub phrase: String,
    pub scores: FrameScores,
}

/// Uniform scores in the open interval (0, 1) for every phrase of every
/// clip; the frame count follows from each clip's duration.
pub fn random_baseline(split: &DatasetSplit, seed: u64) -> Result<Vec<ScoredPhrase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(split.n_phrases());
    for clip in &split.clips {
        let d = clip
            .duration_s
            .ok_or_else(|| Error::dataset(clip.audio_id.clone(), "clip duration unknown (audio not inspected)"))?;
        let t = frames_for_duration(d);
        for phrase in &clip.phrases {
            let scores = (0..t)
                .map(|_| loop {
                    let u: f64 = rng.random();
                    if u > 0.0 {
                        break u;
                    }
                })
                .collect();
            out.push(ScoredPhrase { audio_id: clip.audio_id.clone(), phrase: phrase.text.clone(), scores: FrameScores::new(scores) });
        }
    }
    Ok(out)
}

/// Replaces phrase queries while keeping every segment list in place.
/// Clips with several distinct phrases get a derangement of their own
/// phrases; any phrase left with its own text (single-phrase clips, or
/// repeated texts) takes a different phrase drawn from another clip.
pub fn shuffle_phrase_probe(split: &DatasetSplit, seed: u64) -> Result<DatasetSplit> {
    let pool: Vec<&str> = {
        let mut seen = BTreeMap::new();
        for c in &split.clips {
            for p in &c.phrases {
                seen.entry(p.text.as_str()).or_insert(());
            }
        }
        seen.into_keys().collect()
    };
    if pool.len() < 2 {
        return Err(Error::InvalidArgument("probe needs at least two distinct phrases in the dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = split.clone();
    for clip in &mut out.clips {
        let texts: Vec<String> = clip.phrases.iter().map(|p| p.text.clone()).collect();
        let mut new = texts.clone();
        if texts.len() >= 2 {
            new = derangement(&texts, &mut rng);
        }
        for (i, p) in clip.phrases.iter_mut().enumerate() {
            if new[i] == texts[i] {
                let others: Vec<&str> = pool.iter().copied().filter(|t| !texts.contains(&t.to_string())).collect();
                let candidates = if others.is_empty() { pool.iter().copied().filter(|t| *t != texts[i]).collect() } else { others };
                new[i] = candidates[rng.random_range(0..candidates.len())].to_string();
            }
            p.text = new[i].clone();
        }
    }
    Ok(out)
}

/// A shuffle with no fixed points where the multiset allows (rejection
/// sampling with a bounded number of attempts).
fn derangement<R: Rng>(items: &[String], rng: &mut R) -> Vec<String> {
    let mut best = items.to_vec();
    let mut best_fixed = items.len();
    for _ in 0..64 {
        let mut cand = items.to_vec();
        cand.shuffle(rng);
        let fixed = cand.iter().zip(items).filter(|(a, b)| a == b).count();
        if fixed < best_fixed {
            best_fixed = fixed;
            best = cand;
        }
        if fixed == 0 {
            break;
        }
    }
    best
}
