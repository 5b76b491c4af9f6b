//! Log-mel spectrogram front end.
//!
//! Every clip is analysed with a 40 ms Hann window and a 20 ms hop at
//! 16 kHz, projected onto 64 triangular mel filters and log-compressed with a
//! small floor so silence stays finite.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::{Error, Result};

pub const SAMPLE_RATE_HZ: u32 = 16_000;
pub const WINDOW_S: f64 = 0.040;
pub const HOP_S: f64 = 0.020;
pub const N_MELS: usize = 64;
pub const LOG_FLOOR: f64 = 1e-10;

/// Mono audio with finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidAudio(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Number of analysis frames for a signal of `n_samples`; zero when the
/// window does not fit.
pub fn num_frames(n_samples: usize, win: usize, hop: usize) -> usize {
    if n_samples < win || hop == 0 {
        0
    } else {
        (n_samples - win) / hop + 1
    }
}

/// Row-major `n_frames × n_bins` one-sided power spectrum.
///
/// Interior bins carry twice the two-sided power and everything is divided by
/// the FFT size, so each row sums to the energy of the windowed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub n_frames: usize,
    pub n_bins: usize,
    pub fft_size: usize,
    pub data: Vec<f64>,
}

impl PowerSpectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

pub fn stft_power(w: &Waveform, win_s: f64, hop_s: f64) -> Result<PowerSpectrogram> {
    if w.samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if w.samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidAudio("non-finite sample".into()));
    }
    if !(hop_s > 0.0 && win_s >= hop_s) {
        return Err(Error::InvalidArgument(format!(
            "window {win_s} s and hop {hop_s} s must satisfy win >= hop > 0"
        )));
    }
    let sr = w.sample_rate_hz as f64;
    let win = (win_s * sr).round() as usize;
    let hop = (hop_s * sr).round() as usize;
    if hop == 0 {
        return Err(Error::InvalidArgument("hop shorter than one sample".into()));
    }
    let n_frames = num_frames(w.samples.len(), win, hop);
    if n_frames == 0 {
        return Err(Error::TooShort { samples: w.samples.len(), window: win });
    }
    let fft_size = win.next_power_of_two();
    let n_bins = fft_size / 2 + 1;
    let window = hann_window(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);

    let mut data = Vec::with_capacity(n_frames * n_bins);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    let scale = 1.0 / fft_size as f64;
    for t in 0..n_frames {
        let frame = &w.samples[t * hop..t * hop + win];
        for (slot, (x, h)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *slot = Complex::new(x * h, 0.0);
        }
        for slot in buf[win..].iter_mut() {
            *slot = Complex::new(0.0, 0.0);
        }
        fft.process(&mut buf);
        for (k, c) in buf[..n_bins].iter().enumerate() {
            let p = c.norm_sqr() * scale;
            let interior = k != 0 && k != fft_size / 2;
            data.push(if interior { 2.0 * p } else { p });
        }
    }
    Ok(PowerSpectrogram { n_frames, n_bins, fft_size, data })
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters stored row-major as `n_mels × n_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    pub weights: Vec<f64>,
    /// Center frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }
}

/// Filters equally spaced on the HTK mel scale between 0 Hz and Nyquist,
/// each with unit peak.
pub fn mel_filterbank(sample_rate_hz: u32, fft_size: usize, n_mels: usize) -> Result<MelFilterbank> {
    if n_mels == 0 {
        return Err(Error::InvalidArgument("n_mels must be at least 1".into()));
    }
    if sample_rate_hz == 0 || fft_size < 2 || !fft_size.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "fft size {fft_size} must be a power of two and the sample rate positive"
        )));
    }
    let sr = sample_rate_hz as f64;
    let n_bins = fft_size / 2 + 1;
    let nyquist = sr / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();

    let mut weights = vec![0.0; n_mels * n_bins];
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * sr / fft_size as f64;
            let rise = (f - lo) / (center - lo);
            let fall = (hi - f) / (hi - center);
            *w = rise.min(fall).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::FilterbankUnderresolved(m));
        }
    }
    Ok(MelFilterbank { n_mels, n_bins, weights, centers_hz: edges[1..=n_mels].to_vec() })
}

/// `T × D` log-mel feature matrix, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    n_frames: usize,
    n_mels: usize,
    data: Vec<f64>,
    pub frame_shift_s: f64,
    pub frame_length_s: f64,
}

impl MelSpectrogram {
    pub fn from_raw(n_frames: usize, n_mels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_frames * n_mels {
            return Err(Error::shape(
                "mel",
                format!("{} values for {n_frames}x{n_mels}", data.len()),
            ));
        }
        Ok(Self { n_frames, n_mels, data, frame_shift_s: HOP_S, frame_length_s: WINDOW_S })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// 64-band log-mel spectrogram of a 16 kHz mono waveform.
pub fn log_mel(w: &Waveform) -> Result<MelSpectrogram> {
    if w.sample_rate_hz != SAMPLE_RATE_HZ {
        return Err(Error::UnsupportedSampleRate(w.sample_rate_hz));
    }
    let power = stft_power(w, WINDOW_S, HOP_S)?;
    let bank = mel_filterbank(w.sample_rate_hz, power.fft_size, N_MELS)?;
    let mut data = Vec::with_capacity(power.n_frames * N_MELS);
    for t in 0..power.n_frames {
        let frame = power.frame(t);
        for m in 0..N_MELS {
            let e: f64 = bank.row(m).iter().zip(frame).map(|(a, b)| a * b).sum();
            data.push((e + LOG_FLOOR).ln());
        }
    }
    MelSpectrogram::from_raw(power.n_frames, N_MELS, data)
}
