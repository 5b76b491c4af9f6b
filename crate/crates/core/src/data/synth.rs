//! Synthetic grounding corpus: 10 s clips with one to three sound events
//! from four acoustic families over a faint pink-noise floor, captioned
//! from per-event templates.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DatasetSplit, GroundingClip, Phrase, SplitName};
use crate::dsp::{Waveform, HOP_S, SAMPLE_RATE_HZ};
use crate::wav::write_wav;
use crate::{frame_time, Error, Result, Segment};

pub const CLIP_DURATION_S: f64 = 10.0;

/// Pitch adjectives, lowest variant first.
pub const ADJECTIVES: [&str; 8] = ["deep", "low", "muffled", "mellow", "clear", "bright", "high", "shrill"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    /// Steady sine tone.
    Beep,
    /// Band-limited noise.
    Hiss,
    /// Repeated upward linear sweeps.
    Chirp,
    /// Amplitude-modulated tone.
    Siren,
}

impl EventKind {
    pub const ALL: [EventKind; 4] = [EventKind::Beep, EventKind::Hiss, EventKind::Chirp, EventKind::Siren];

    pub fn noun(self) -> &'static str {
        match self {
            EventKind::Beep => "alarm",
            EventKind::Hiss => "spray",
            EventKind::Chirp => "bird",
            EventKind::Siren => "siren",
        }
    }

    pub fn verb(self) -> &'static str {
        match self {
            EventKind::Beep => "beeps",
            EventKind::Hiss => "hisses",
            EventKind::Chirp => "chirps",
            EventKind::Siren => "wails",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SyntheticEvent {
    pub kind: EventKind,
    /// Index into [`ADJECTIVES`].
    pub variant: usize,
}

impl SyntheticEvent {
    pub fn phrase(&self) -> String {
        format!("a {} {} {}", ADJECTIVES[self.variant], self.kind.noun(), self.kind.verb())
    }

    pub fn frequency_hz(&self) -> f64 {
        300.0 * 1.4f64.powi(self.variant as i32)
    }
}

/// All 32 event types.
pub fn event_bank() -> Vec<SyntheticEvent> {
    EventKind::ALL
        .iter()
        .flat_map(|&kind| (0..ADJECTIVES.len()).map(move |variant| SyntheticEvent { kind, variant }))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisParams {
    pub max_events: usize,
    pub max_segments: usize,
    pub min_segment_s: f64,
    pub max_segment_s: f64,
    pub min_gap_s: f64,
    /// Chance that a clip's first event spans the whole clip.
    pub full_clip_prob: f64,
    /// Event RMS is drawn uniformly from this range.
    pub event_rms: (f64, f64),
    /// Background level relative to an event RMS of 0.1.
    pub background_db: f64,
    pub fade_s: f64,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        Self {
            max_events: 3,
            max_segments: 4,
            min_segment_s: 0.3,
            max_segment_s: 3.0,
            min_gap_s: 0.5,
            full_clip_prob: 0.05,
            event_rms: (0.05, 0.15),
            background_db: -30.0,
            fade_s: 0.01,
        }
    }
}

/// Segment lists on the 20 ms grid, sorted, at least `min_gap_s` apart and
/// clear of the grid spans in `taken`. May return fewer segments than drawn
/// (possibly none) when the clip is crowded.
fn draw_segments<R: Rng>(rng: &mut R, p: &SynthesisParams, taken: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let grid = |s: f64| (s / HOP_S).round() as usize;
    let (total, lo, hi, gap) = (grid(CLIP_DURATION_S), grid(p.min_segment_s), grid(p.max_segment_s), grid(p.min_gap_s));
    let wanted = rng.random_range(1..=p.max_segments);
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for _ in 0..100 {
        if spans.len() == wanted {
            break;
        }
        let len = rng.random_range(lo..=hi);
        let start = rng.random_range(0..=total - len);
        let end = start + len;
        let clear_own = spans.iter().all(|&(s, e)| end + gap <= s || e + gap <= start);
        let clear_others = taken.iter().all(|&(s, e)| end <= s || e <= start);
        if clear_own && clear_others {
            spans.push((start, end));
        }
    }
    spans.sort_unstable();
    spans
}

fn render_event<R: Rng>(rng: &mut R, event: &SyntheticEvent, segments: &[Segment], p: &SynthesisParams, out: &mut [f64]) {
    let sr = SAMPLE_RATE_HZ as f64;
    let f0 = event.frequency_hz();
    let rms = rng.random_range(p.event_rms.0..=p.event_rms.1);
    let fade = (p.fade_s * sr).round() as usize;
    for seg in segments {
        let start = (seg.onset * sr).round() as usize;
        let end = ((seg.offset * sr).round() as usize).min(out.len());
        let n = end - start;
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        let mut buf: Vec<f64> = match event.kind {
            EventKind::Beep => (0..n).map(|i| (2.0 * PI * f0 * i as f64 / sr + phase).sin()).collect(),
            EventKind::Hiss => bandpass_noise(rng, n, f0, 3.0),
            EventKind::Chirp => {
                let period = 0.15;
                let mut acc = phase;
                (0..n)
                    .map(|i| {
                        let u = (i as f64 / sr % period) / period;
                        acc += 2.0 * PI * f0 * (1.0 + u) / sr;
                        acc.sin()
                    })
                    .collect()
            }
            EventKind::Siren => (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    (0.6 + 0.4 * (2.0 * PI * 5.0 * t).sin()) * (2.0 * PI * f0 * t + phase).sin()
                })
                .collect(),
        };
        let cur = (buf.iter().map(|x| x * x).sum::<f64>() / n.max(1) as f64).sqrt();
        let gain = if cur > 0.0 { rms / cur } else { 0.0 };
        let f = fade.min(n / 2);
        for (i, x) in buf.iter_mut().enumerate() {
            let edge = i.min(n - 1 - i);
            let ramp = if edge < f { (edge as f64 + 0.5) / f as f64 } else { 1.0 };
            *x *= gain * ramp;
        }
        for (o, x) in out[start..end].iter_mut().zip(&buf) {
            *o += x;
        }
    }
}

/// White Gaussian noise through an RBJ constant-peak bandpass.
fn bandpass_noise<R: Rng>(rng: &mut R, n: usize, center_hz: f64, q: f64) -> Vec<f64> {
    let w0 = 2.0 * PI * center_hz / SAMPLE_RATE_HZ as f64;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    (0..n)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            let y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
            (x2, x1, y2, y1) = (x1, x, y1, y);
            y
        })
        .collect()
}

/// Pink noise via Paul Kellet's refined filter, scaled to `rms`.
fn pink_noise<R: Rng>(rng: &mut R, n: usize, rms: f64) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let y = b[..6].iter().sum::<f64>() + b[6] + w * 0.5362;
            b[6] = w * 0.115926;
            y
        })
        .collect();
    let cur = (out.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    out.iter_mut().for_each(|x| *x *= rms / cur);
    out
}

fn caption(events: &[SyntheticEvent]) -> String {
    let mut text = String::new();
    for (i, e) in events.iter().enumerate() {
        match i {
            0 => {}
            1 => text.push_str(" while "),
            _ => text.push_str(" and "),
        }
        text.push_str(&e.phrase());
    }
    let mut chars = text.chars();
    chars.next().map(|c| c.to_uppercase().chain(chars).collect()).unwrap_or_default()
}

/// One clip: its annotation (with `audio_path` set to `audio/<id>.wav`)
/// and its waveform.
pub fn synthesize_clip<R: Rng>(rng: &mut R, audio_id: String, p: &SynthesisParams) -> Result<(GroundingClip, Waveform)> {
    let n = (CLIP_DURATION_S * SAMPLE_RATE_HZ as f64).round() as usize;
    let mut kinds = EventKind::ALL.to_vec();
    kinds.shuffle(rng);
    let n_events = rng.random_range(1..=p.max_events.clamp(1, kinds.len()));
    // Events of different phrases do not overlap in time, apart from an
    // occasional full-clip first event.
    let full_clip = rng.random_bool(p.full_clip_prob);
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut placed: Vec<(SyntheticEvent, Vec<Segment>)> = Vec::new();
    for (i, &kind) in kinds[..n_events].iter().enumerate() {
        let event = SyntheticEvent { kind, variant: rng.random_range(0..ADJECTIVES.len()) };
        if i == 0 && full_clip {
            placed.push((event, vec![Segment { onset: 0.0, offset: CLIP_DURATION_S }]));
            continue;
        }
        let spans = draw_segments(rng, p, &taken);
        if spans.is_empty() {
            continue;
        }
        taken.extend(&spans);
        let segs = spans.iter().map(|&(s, e)| Segment { onset: frame_time(s, HOP_S), offset: frame_time(e, HOP_S) }).collect();
        placed.push((event, segs));
    }
    placed.sort_by(|a, b| a.1[0].onset.total_cmp(&b.1[0].onset));

    let mut audio = pink_noise(rng, n, 0.1 * 10f64.powf(p.background_db / 20.0));
    for (event, segs) in &placed {
        render_event(rng, event, segs, p, &mut audio);
    }
    let peak = audio.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.95 {
        audio.iter_mut().for_each(|x| *x *= 0.95 / peak);
    }
    let events: Vec<SyntheticEvent> = placed.iter().map(|(e, _)| *e).collect();
    let clip = GroundingClip {
        audio_path: format!("audio/{audio_id}.wav"),
        audio_id,
        caption: caption(&events),
        phrases: placed.into_iter().map(|(e, segments)| Phrase { text: e.phrase(), segments }).collect(),
        duration_s: Some(CLIP_DURATION_S),
    };
    Ok((clip, Waveform::new(audio, SAMPLE_RATE_HZ)?))
}

/// In-memory corpus of `n_clips` clips named `<split>_<index>`.
pub fn synthesize(split: SplitName, n_clips: usize, seed: u64, p: &SynthesisParams) -> Result<Vec<(GroundingClip, Waveform)>> {
    if n_clips == 0 {
        return Err(Error::InvalidArgument("number of clips must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_clips).map(|i| synthesize_clip(&mut rng, format!("{split}_{i:04}"), p)).collect()
}

/// Renders a corpus to `out_dir`: WAVs under `audio/` and the dataset file
/// `<split>.json`. Returns the split as written.
pub fn generate_synthetic(out_dir: impl AsRef<Path>, split: SplitName, n_clips: usize, seed: u64) -> Result<DatasetSplit> {
    let out_dir = out_dir.as_ref();
    let clips = synthesize(split, n_clips, seed, &SynthesisParams::default())?;
    fs::create_dir_all(out_dir.join("audio"))?;
    for (clip, wave) in &clips {
        write_wav(out_dir.join(&clip.audio_path), wave)?;
    }
    let ds = DatasetSplit { name: split, clips: clips.into_iter().map(|(c, _)| c).collect(), root: out_dir.to_path_buf() };
    ds.save(out_dir.join(format!("{split}.json")))?;
    Ok(ds)
}
