use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Half-open time interval `[onset, offset)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Segment {
    pub onset: f64,
    pub offset: f64,
}

impl From<[f64; 2]> for Segment {
    fn from([onset, offset]: [f64; 2]) -> Self {
        Self { onset, offset }
    }
}

impl From<Segment> for [f64; 2] {
    fn from(s: Segment) -> Self {
        [s.onset, s.offset]
    }
}

impl Segment {
    pub fn new(onset: f64, offset: f64) -> Result<Self> {
        let s = Self { onset, offset };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let reason = if !self.onset.is_finite() || !self.offset.is_finite() {
            "non-finite bound"
        } else if self.onset < 0.0 {
            "negative onset"
        } else if self.offset <= self.onset {
            "offset not after onset"
        } else {
            return Ok(());
        };
        Err(Error::InvalidSegment { onset: self.onset, offset: self.offset, reason })
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    pub fn intersection(&self, other: &Segment) -> f64 {
        (self.offset.min(other.offset) - self.onset.max(other.onset)).max(0.0)
    }
}

/// Time of frame boundary `index` on a grid of `shift_s`, computed in
/// microseconds so grid times come out as the nearest double to the decimal
/// value (3 × 20 ms is exactly `0.06`).
pub fn frame_time(index: usize, shift_s: f64) -> f64 {
    index as f64 * (shift_s * 1e6).round() / 1e6
}
