//! Text-to-audio grounding toolkit.
//!
//! Given a caption and an audio clip, the toolkit extracts sound-event
//! phrases from the caption ([`chunk`]), encodes the clip's log-mel
//! spectrogram ([`dsp`]) with a CRNN and each phrase with a mean word
//! embedding ([`model`]), and scores every frame with `exp(-‖e_A - e_P‖)`.
//! Thresholding the scores yields onset/offset segments, which are evaluated
//! with event-based F1 and the polyphonic sound detection score
//! ([`metrics`]).
//!
//! The learnable parts run on a small double-precision reverse-mode
//! differentiation engine ([`tensor`]); [`train`] implements the Adam /
//! plateau-schedule training loop, and [`data`] handles the dataset schema,
//! a seeded synthetic corpus and the random baseline.

pub mod chunk;
pub mod cli;
pub mod data;
pub mod dsp;
mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
mod segment;
pub mod tensor;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
pub use segment::{frame_time, Segment};
