//! Event-based precision/recall/F1 and the polyphonic sound detection score.

mod event;
mod psds;

use std::collections::BTreeMap;

use crate::{Result, Segment};

pub use event::{event_f1, match_events, EventMetricConfig, EventScores, MatchTrace};
pub use psds::{default_thresholds, export_roc, psds, PsdRoc, PsdsConfig, RocPoint};

/// `(audio_id, phrase)`; the phrase text is the event class.
pub type EventKey = (String, String);

/// Segments per (clip, phrase), each list sorted by onset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventList {
    events: BTreeMap<EventKey, Vec<Segment>>,
}

impl EventList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds segments to a key, keeping the list sorted. Keys may be
    /// registered with no segments.
    pub fn insert(&mut self, audio_id: impl Into<String>, phrase: impl Into<String>, segments: &[Segment]) -> Result<()> {
        for s in segments {
            s.validate()?;
        }
        let list = self.events.entry((audio_id.into(), phrase.into())).or_default();
        list.extend_from_slice(segments);
        list.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.offset.total_cmp(&b.offset)));
        Ok(())
    }

    pub fn get(&self, audio_id: &str, phrase: &str) -> &[Segment] {
        self.events.get(&(audio_id.to_string(), phrase.to_string())).map_or(&[], Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = &EventKey> {
        self.events.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EventKey, &[Segment])> {
        self.events.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn contains_key(&self, key: &EventKey) -> bool {
        self.events.contains_key(key)
    }

    pub fn n_events(&self) -> usize {
        self.events.values().map(Vec::len).sum()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Reference events of a dataset split.
    pub fn from_split(split: &crate::data::DatasetSplit) -> Result<Self> {
        let mut list = Self::new();
        for clip in &split.clips {
            for p in &clip.phrases {
                list.insert(clip.audio_id.clone(), p.text.clone(), &p.segments)?;
            }
        }
        Ok(list)
    }
}
