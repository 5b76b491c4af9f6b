//! The grounding network.
//!
//! A CRNN turns a `T × 64` log-mel spectrogram into one embedding per frame:
//! five blocks of 3×3 convolution, batch norm, LeakyReLU and L4-norm pooling
//! (time reduced 4× overall), a mean over the remaining frequency bins, a
//! bidirectional GRU and a 4× nearest-neighbour upsample back to `T`. A
//! phrase is embedded as the mean of its word embeddings, and each frame is
//! scored with `exp(-‖e_A,t − e_P‖₂)`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chunk::tokenize;
use crate::dsp::{MelSpectrogram, HOP_S, N_MELS};
use crate::tensor::{init, BatchStats, Checkpoint, GruWeights, ParamStore, Tape, Tensor, Var};
use crate::{frame_time, Error, Result, Segment};

pub const UNK: &str = "<unk>";
const LP_POWER: i32 = 4;

/// CRNN audio encoder shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioEncoderConfig {
    pub conv_channels: Vec<usize>,
    pub temporal_pool: Vec<usize>,
    pub freq_pool: Vec<usize>,
    pub gru_hidden: usize,
    pub embed_dim: usize,
    pub n_mels: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for AudioEncoderConfig {
    /// 256-dimensional embeddings from five blocks of 16–128 channels.
    fn default() -> Self {
        Self {
            conv_channels: vec![16, 32, 64, 128, 128],
            temporal_pool: vec![1, 2, 2, 1, 1],
            freq_pool: vec![2, 2, 2, 2, 2],
            gru_hidden: 128,
            embed_dim: 256,
            n_mels: N_MELS,
            leaky_slope: 0.1,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl AudioEncoderConfig {
    /// Same topology with narrower layers (64-dimensional embeddings), for
    /// training on a single CPU core in minutes.
    pub fn compact() -> Self {
        Self { conv_channels: vec![8, 16, 32, 32, 32], gru_hidden: 32, embed_dim: 64, ..Self::default() }
    }

    pub fn time_factor(&self) -> usize {
        self.temporal_pool.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.conv_channels.len();
        let bad = |why: String| Err(Error::InvalidArgument(format!("encoder config: {why}")));
        if n == 0 || self.temporal_pool.len() != n || self.freq_pool.len() != n {
            return bad("channel and pooling lists must have one entry per block".into());
        }
        if self.conv_channels.iter().chain(&self.temporal_pool).chain(&self.freq_pool).any(|&v| v == 0) {
            return bad("zero channel count or pooling factor".into());
        }
        let freq: usize = self.freq_pool.iter().product();
        if self.n_mels % freq != 0 {
            return bad(format!("{} mel bins not divisible by frequency pooling {freq}", self.n_mels));
        }
        if 2 * self.gru_hidden != self.embed_dim {
            return bad(format!("2 x gru_hidden ({}) != embed_dim ({})", self.gru_hidden, self.embed_dim));
        }
        Ok(())
    }

    fn to_record(&self) -> Tensor {
        let mut v: Vec<f64> = vec![self.conv_channels.len() as f64];
        for list in [&self.conv_channels, &self.temporal_pool, &self.freq_pool] {
            v.extend(list.iter().map(|&x| x as f64));
        }
        v.extend([self.gru_hidden as f64, self.embed_dim as f64, self.n_mels as f64]);
        v.extend([self.leaky_slope, self.bn_eps, self.bn_momentum]);
        Tensor::from_vec(v)
    }

    fn from_record(t: &Tensor) -> Result<Self> {
        let v = t.data();
        let err = || Error::Checkpoint("malformed encoder config record".into());
        let n = *v.first().ok_or_else(err)? as usize;
        if v.len() != 1 + 3 * n + 6 {
            return Err(err());
        }
        let list = |k: usize| v[1 + k * n..1 + (k + 1) * n].iter().map(|&x| x as usize).collect();
        let tail = &v[1 + 3 * n..];
        let cfg = Self {
            conv_channels: list(0),
            temporal_pool: list(1),
            freq_pool: list(2),
            gru_hidden: tail[0] as usize,
            embed_dim: tail[1] as usize,
            n_mels: tail[2] as usize,
            leaky_slope: tail[3],
            bn_eps: tail[4],
            bn_momentum: tail[5],
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Decoding settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingConfig {
    pub threshold: f64,
    pub score_clamp: f64,
    /// Odd median-filter width applied to the binarised frames, if any.
    pub median_filter: Option<usize>,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self { threshold: 0.5, score_clamp: 1e-7, median_filter: None }
    }
}

impl GroundingConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        Self { threshold, ..Self::default() }
    }
}

/// Word list with `<unk>` at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

/// A phrase as tokens and vocabulary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseQuery {
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
}

impl Vocab {
    /// Sorted vocabulary of every token in `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<String> = texts.into_iter().flat_map(tokenize).collect();
        Self::from_words(set.into_iter().filter(|w| w != UNK))
    }

    fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let words: Vec<String> = std::iter::once(UNK.to_string()).chain(words).collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    /// Tokenizes a phrase; unknown words map to `<unk>`.
    pub fn encode(&self, phrase: &str) -> Result<PhraseQuery> {
        let tokens = tokenize(phrase);
        if tokens.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let ids = tokens.iter().map(|t| self.id(t)).collect();
        Ok(PhraseQuery { tokens, ids })
    }

    fn to_record(&self) -> Tensor {
        // one word per line; a lone newline stands for an empty vocabulary
        let mut bytes = self.words[1..].join("\n").into_bytes();
        if bytes.is_empty() {
            bytes.push(b'\n');
        }
        Tensor::from_vec(bytes.into_iter().map(f64::from).collect())
    }

    fn from_record(t: &Tensor) -> Result<Self> {
        let bytes: Vec<u8> = t.data().iter().map(|&b| b as u8).collect();
        let text = String::from_utf8(bytes).map_err(|e| Error::Checkpoint(format!("vocabulary: {e}")))?;
        Ok(Self::from_words(text.split('\n').filter(|w| !w.is_empty()).map(str::to_string)))
    }
}

/// Per-frame similarity scores for one (clip, phrase) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScores {
    pub scores: Vec<f64>,
    pub frame_shift_s: f64,
}

impl FrameScores {
    pub fn new(scores: Vec<f64>) -> Self {
        Self { scores, frame_shift_s: HOP_S }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// `T × D` frame embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub n_frames: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Embeddings {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// `s_t = exp(-‖e_A,t − e_P‖₂)`.
pub fn similarity(audio: &Embeddings, phrase: &[f64]) -> Result<FrameScores> {
    if audio.dim != phrase.len() {
        return Err(Error::shape("similarity", format!("audio dim {} vs phrase dim {}", audio.dim, phrase.len())));
    }
    let scores = (0..audio.n_frames)
        .map(|t| {
            let d2: f64 = audio.frame(t).iter().zip(phrase).map(|(a, p)| (a - p).powi(2)).sum();
            (-d2.sqrt()).exp()
        })
        .collect();
    Ok(FrameScores::new(scores))
}

/// Mean binary cross-entropy with scores clamped to `[eps, 1 − eps]`.
pub fn bce_loss(scores: &FrameScores, labels: &[f64], eps: f64) -> Result<f64> {
    if scores.len() != labels.len() || labels.is_empty() {
        return Err(Error::shape("bce", format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    let total: f64 = scores
        .scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let c = s.clamp(eps, 1.0 - eps);
            -(y * c.ln() + (1.0 - y) * (1.0 - c).ln())
        })
        .sum();
    Ok(total / labels.len() as f64)
}

fn median_filter(active: &[bool], width: usize) -> Vec<bool> {
    let half = width / 2;
    (0..active.len())
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(active.len());
            // the window is zero-padded at the clip edges
            let on = active[lo..hi].iter().filter(|&&a| a).count();
            2 * on > width
        })
        .collect()
}

/// Thresholds scores (`s_t > φ`) and turns maximal active runs into
/// segments on the frame grid.
pub fn decode_segments(scores: &FrameScores, cfg: &GroundingConfig) -> Vec<Segment> {
    let mut active: Vec<bool> = scores.scores.iter().map(|&s| s > cfg.threshold).collect();
    if let Some(w) = cfg.median_filter.filter(|&w| w > 1) {
        active = median_filter(&active, w | 1);
    }
    let mut segments = Vec::new();
    let mut start = None;
    for (t, &on) in active.iter().chain(std::iter::once(&false)).enumerate() {
        match (on, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                segments.push(Segment {
                    onset: frame_time(s, scores.frame_shift_s),
                    offset: frame_time(t, scores.frame_shift_s),
                });
                start = None;
            }
            _ => {}
        }
    }
    segments
}

/// `x / (shift/2)`, snapped to the nearest integer when within rounding noise.
fn half_frames(x: f64, shift: f64) -> f64 {
    let q = x / (shift / 2.0);
    if (q - q.round()).abs() < 1e-6 {
        q.round()
    } else {
        q
    }
}

/// Frame labels: `y_t = 1` iff the frame center `t·shift + shift/2` lies in
/// some `[onset, offset)`.
pub fn frames_from_segments(segments: &[Segment], n_frames: usize, frame_shift_s: f64) -> Result<Vec<f64>> {
    let mut labels = vec![0.0; n_frames];
    for seg in segments {
        seg.validate()?;
        let (lo, hi) = (half_frames(seg.onset, frame_shift_s), half_frames(seg.offset, frame_shift_s));
        for (t, y) in labels.iter_mut().enumerate() {
            let center = (2 * t + 1) as f64;
            if center >= lo && center < hi {
                *y = 1.0;
            }
        }
    }
    Ok(labels)
}

/// Train-mode passes use batch statistics and report them; eval-mode passes
/// use the running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Output of a batched forward pass.
pub struct Forward {
    /// `[P, T_max]` frame scores, one row per query.
    pub scores: Var,
    /// Valid frames of each query row.
    pub lengths: Vec<usize>,
    /// Batch statistics per block (train mode only).
    pub batch_stats: Vec<BatchStats>,
}

/// One query of a batch: the index of its clip and its vocabulary ids.
#[derive(Debug, Clone, Copy)]
pub struct QueryRef<'a> {
    pub clip: usize,
    pub ids: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingModel {
    config: AudioEncoderConfig,
    vocab: Vocab,
    params: ParamStore,
    running_mean: Vec<Vec<f64>>,
    running_var: Vec<Vec<f64>>,
}

fn block_name(i: usize, part: &str) -> String {
    format!("audio.block{i}.{part}")
}

fn gru_name(dir: &str, part: &str) -> String {
    format!("audio.gru.{dir}.{part}")
}

const EMBEDDING: &str = "phrase.embedding";

impl GroundingModel {
    /// Freshly initialised model.
    pub fn new(config: AudioEncoderConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut in_ch = 1;
        for (i, &out_ch) in config.conv_channels.iter().enumerate() {
            let w = init::xavier_uniform(&mut rng, vec![out_ch, in_ch, 3, 3], in_ch * 9, out_ch * 9);
            params.insert(block_name(i, "conv.weight"), w)?;
            params.insert(block_name(i, "conv.bias"), Tensor::zeros(vec![out_ch]))?;
            params.insert(block_name(i, "bn.weight"), Tensor::full(vec![out_ch], 1.0))?;
            params.insert(block_name(i, "bn.bias"), Tensor::zeros(vec![out_ch]))?;
            in_ch = out_ch;
        }
        let h = config.gru_hidden;
        for dir in ["fwd", "bwd"] {
            params.insert(gru_name(dir, "w_ih"), init::xavier_uniform(&mut rng, vec![3 * h, in_ch], in_ch, 3 * h))?;
            params.insert(gru_name(dir, "w_hh"), init::stacked_orthogonal(&mut rng, 3, h))?;
            params.insert(gru_name(dir, "b_ih"), Tensor::zeros(vec![3 * h]))?;
            params.insert(gru_name(dir, "b_hh"), Tensor::zeros(vec![3 * h]))?;
        }
        params.insert(EMBEDDING, init::uniform(&mut rng, vec![vocab.len(), config.embed_dim], 0.1))?;
        let running_mean = config.conv_channels.iter().map(|&c| vec![0.0; c]).collect();
        let running_var = config.conv_channels.iter().map(|&c| vec![1.0; c]).collect();
        Ok(Self { config, vocab, params, running_mean, running_var })
    }

    pub fn config(&self) -> &AudioEncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Running batch-norm statistics of block `i` as `(mean, var)`.
    pub fn running_stats(&self, i: usize) -> (&[f64], &[f64]) {
        (&self.running_mean[i], &self.running_var[i])
    }

    /// Exponential moving update of the running statistics (unbiased
    /// variance) from one training pass.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        let m = self.config.bn_momentum;
        for (i, s) in stats.iter().enumerate() {
            let correction = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
            for c in 0..s.mean.len() {
                self.running_mean[i][c] = (1.0 - m) * self.running_mean[i][c] + m * s.mean[c];
                self.running_var[i][c] = (1.0 - m) * self.running_var[i][c] + m * s.var[c] * correction;
            }
        }
    }

    fn var(&self, vars: &[Var], name: &str) -> Var {
        vars[self.params.position(name).expect("parameter registered at construction")]
    }

    /// Encodes a batch of spectrograms to `[C, T_max, D]` plus the valid
    /// length of each clip.
    pub fn encode_audio_batch(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        mels: &[&MelSpectrogram],
        mode: Mode,
    ) -> Result<(Var, Vec<usize>, Vec<BatchStats>)> {
        let cfg = &self.config;
        if mels.is_empty() {
            return Err(Error::EmptyInput);
        }
        for mel in mels {
            if mel.n_mels() != cfg.n_mels {
                return Err(Error::shape("encode_audio", format!("{} mel bins, expected {}", mel.n_mels(), cfg.n_mels)));
            }
            if mel.n_frames() == 0 {
                return Err(Error::EmptyInput);
            }
        }
        let factor = cfg.time_factor();
        let lengths: Vec<usize> = mels.iter().map(|m| m.n_frames()).collect();
        let t_max = *lengths.iter().max().unwrap();
        let t_pad = t_max.div_ceil(factor) * factor;
        let f = cfg.n_mels;

        let mut input = vec![0.0; mels.len() * t_pad * f];
        for (b, mel) in mels.iter().enumerate() {
            input[b * t_pad * f..][..mel.n_frames() * f].copy_from_slice(mel.as_slice());
        }
        let mut x = tape.constant(Tensor::new(vec![mels.len(), 1, t_pad, f], input)?);

        // valid steps per clip at the current time resolution
        let padded: Vec<usize> = lengths.iter().map(|&t| t.div_ceil(factor) * factor).collect();
        let mut scale = 1;
        let mut stats = Vec::new();
        for i in 0..cfg.conv_channels.len() {
            let valid: Vec<usize> = padded.iter().map(|&t| t / scale).collect();
            x = tape.conv2d_3x3_same(x, self.var(vars, &block_name(i, "conv.weight")), self.var(vars, &block_name(i, "conv.bias")))?;
            let (gamma, beta) = (self.var(vars, &block_name(i, "bn.weight")), self.var(vars, &block_name(i, "bn.bias")));
            x = match mode {
                Mode::Train => {
                    let (y, s) = tape.batch_norm_train(x, gamma, beta, Some(&valid), cfg.bn_eps)?;
                    stats.push(s);
                    y
                }
                Mode::Eval => tape.batch_norm_eval(x, gamma, beta, &self.running_mean[i], &self.running_var[i], cfg.bn_eps)?,
            };
            x = tape.leaky_relu(x, cfg.leaky_slope);
            x = tape.lp_pool(x, LP_POWER, cfg.temporal_pool[i], cfg.freq_pool[i])?;
            scale *= cfg.temporal_pool[i];
            let valid: Vec<usize> = padded.iter().map(|&t| t / scale).collect();
            if valid.iter().any(|&v| v < t_pad / scale) {
                x = tape.mask_time(x, 2, &valid)?;
            }
        }
        let x = tape.mean_over_axis(x, 3)?;
        let x = tape.permute(x, &[0, 2, 1])?;
        let gru = |dir: &str| GruWeights {
            w_ih: self.var(vars, &gru_name(dir, "w_ih")),
            w_hh: self.var(vars, &gru_name(dir, "w_hh")),
            b_ih: self.var(vars, &gru_name(dir, "b_ih")),
            b_hh: self.var(vars, &gru_name(dir, "b_hh")),
        };
        let valid: Vec<usize> = padded.iter().map(|&t| t / factor).collect();
        let x = tape.bigru(x, &gru("fwd"), &gru("bwd"), Some(&valid))?;
        let x = tape.nearest_upsample_time(x, factor)?;
        let x = tape.slice_time(x, t_max)?;
        Ok((x, lengths, stats))
    }

    /// Mean word embedding of every query, stacked to `[P, D]`.
    pub fn encode_phrase_batch(&self, tape: &mut Tape, vars: &[Var], queries: &[&[usize]]) -> Result<Var> {
        let table = self.var(vars, EMBEDDING);
        let mut rows = Vec::with_capacity(queries.len());
        for ids in queries {
            if ids.is_empty() {
                return Err(Error::EmptyQuery);
            }
            let words = tape.embedding_lookup(table, ids)?;
            rows.push(tape.mean_over_axis(words, 0)?);
        }
        tape.stack(&rows)
    }

    /// Frame scores for every query against its clip.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        mels: &[&MelSpectrogram],
        queries: &[QueryRef<'_>],
        mode: Mode,
    ) -> Result<Forward> {
        if queries.is_empty() {
            return Err(Error::EmptyQuery);
        }
        if let Some(q) = queries.iter().find(|q| q.clip >= mels.len()) {
            return Err(Error::InvalidArgument(format!("query refers to clip {} of {}", q.clip, mels.len())));
        }
        let (audio, clip_lengths, batch_stats) = self.encode_audio_batch(tape, vars, mels, mode)?;
        let ids: Vec<&[usize]> = queries.iter().map(|q| q.ids).collect();
        let phrases = self.encode_phrase_batch(tape, vars, &ids)?;
        let clip_of: Vec<usize> = queries.iter().map(|q| q.clip).collect();
        let audio = tape.index_select(audio, &clip_of)?;
        let phrases = tape.reshape(phrases, &[queries.len(), 1, self.config.embed_dim])?;
        let diff = tape.sub(audio, phrases)?;
        let dist = tape.l2_norm_over_axis(diff, 2)?;
        let neg = tape.scale(dist, -1.0);
        let scores = tape.exp(neg);
        let lengths = clip_of.iter().map(|&c| clip_lengths[c]).collect();
        Ok(Forward { scores, lengths, batch_stats })
    }

    /// Inference-mode frame embeddings of one clip.
    pub fn encode_audio(&self, mel: &MelSpectrogram) -> Result<Embeddings> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let (x, _, _) = self.encode_audio_batch(&mut tape, &vars, &[mel], Mode::Eval)?;
        let t = tape.value(x);
        Ok(Embeddings { n_frames: t.dim(1), dim: t.dim(2), data: t.data().to_vec() })
    }

    /// Mean word embedding of one phrase.
    pub fn encode_phrase(&self, query: &PhraseQuery) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let e = self.encode_phrase_batch(&mut tape, &vars, &[&query.ids])?;
        Ok(tape.value(e).data().to_vec())
    }

    /// Inference-mode scores of several queries against one clip.
    pub fn score(&self, mel: &MelSpectrogram, queries: &[PhraseQuery]) -> Result<Vec<FrameScores>> {
        let batch = [(mel, queries)];
        Ok(self.score_clips(&batch, 1)?.pop().unwrap_or_default())
    }

    /// Inference-mode scores for many clips, evaluated `batch_size` clips
    /// at a time. Returns one list of scores per clip, in input order.
    pub fn score_clips(
        &self,
        clips: &[(&MelSpectrogram, &[PhraseQuery])],
        batch_size: usize,
    ) -> Result<Vec<Vec<FrameScores>>> {
        let mut out = Vec::with_capacity(clips.len());
        for chunk in clips.chunks(batch_size.max(1)) {
            let mels: Vec<&MelSpectrogram> = chunk.iter().map(|(m, _)| *m).collect();
            let queries: Vec<QueryRef<'_>> = chunk
                .iter()
                .enumerate()
                .flat_map(|(c, (_, qs))| qs.iter().map(move |q| QueryRef { clip: c, ids: &q.ids }))
                .collect();
            if queries.is_empty() {
                out.extend(chunk.iter().map(|_| Vec::new()));
                continue;
            }
            let mut tape = Tape::new();
            let vars = self.params.register(&mut tape, false);
            let fwd = self.forward(&mut tape, &vars, &mels, &queries, Mode::Eval)?;
            let s = tape.value(fwd.scores);
            let t_max = s.dim(1);
            let mut row = 0;
            for (_, qs) in chunk {
                let mut per_clip = Vec::with_capacity(qs.len());
                for _ in qs.iter() {
                    let len = fwd.lengths[row];
                    per_clip.push(FrameScores::new(s.data()[row * t_max..row * t_max + len].to_vec()));
                    row += 1;
                }
                out.push(per_clip);
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.push("__config__", self.config.to_record());
        ck.push("__vocab__", self.vocab.to_record());
        for (name, t) in self.params.iter() {
            ck.push(name, t.clone());
        }
        for i in 0..self.running_mean.len() {
            ck.push(block_name(i, "bn.running_mean"), Tensor::from_vec(self.running_mean[i].clone()));
            ck.push(block_name(i, "bn.running_var"), Tensor::from_vec(self.running_var[i].clone()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let missing = |name: &str| Error::Checkpoint(format!("missing record {name}"));
        let config = AudioEncoderConfig::from_record(ck.get("__config__").ok_or_else(|| missing("__config__"))?)?;
        let vocab = Vocab::from_record(ck.get("__vocab__").ok_or_else(|| missing("__vocab__"))?)?;
        let mut model = Self::new(config, vocab, 0)?;
        let names: Vec<String> = model.params.names().to_vec();
        for name in names {
            let t = ck.get(&name).ok_or_else(|| missing(&name))?;
            let slot = model.params.get_mut(&name).unwrap();
            if slot.shape() != t.shape() {
                return Err(Error::Checkpoint(format!("{name}: shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t.clone();
        }
        for i in 0..model.running_mean.len() {
            for (key, dst) in [("bn.running_mean", &mut model.running_mean[i]), ("bn.running_var", &mut model.running_var[i])] {
                let name = block_name(i, key);
                let t = ck.get(&name).ok_or_else(|| missing(&name))?;
                if t.numel() != dst.len() {
                    return Err(Error::Checkpoint(format!("{name}: {} values, expected {}", t.numel(), dst.len())));
                }
                dst.copy_from_slice(t.data());
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> AudioEncoderConfig {
        AudioEncoderConfig { conv_channels: vec![2, 2, 2, 2, 2], gru_hidden: 2, embed_dim: 4, ..AudioEncoderConfig::default() }
    }

    fn mel(n_frames: usize, seed: u64) -> MelSpectrogram {
        let mut s = seed;
        let data = (0..n_frames * N_MELS)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 8.0
            })
            .collect();
        MelSpectrogram::from_raw(n_frames, N_MELS, data).unwrap()
    }

    fn vocab() -> Vocab {
        Vocab::from_texts(["a dog barks", "birds are chirping"])
    }

    #[test]
    fn configs_validate() {
        AudioEncoderConfig::default().validate().unwrap();
        AudioEncoderConfig::compact().validate().unwrap();
        assert_eq!(AudioEncoderConfig::default().time_factor(), 4);
        let bad = AudioEncoderConfig { embed_dim: 100, ..AudioEncoderConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn output_length_matches_input() {
        let model = GroundingModel::new(tiny_config(), vocab(), 1).unwrap();
        for t in [7, 8, 13, 50] {
            let e = model.encode_audio(&mel(t, t as u64)).unwrap();
            assert_eq!((e.n_frames, e.dim), (t, 4));
        }
    }

    #[test]
    fn full_sized_encoder_keeps_500_frames() {
        let model = GroundingModel::new(AudioEncoderConfig::default(), vocab(), 1).unwrap();
        let e = model.encode_audio(&mel(500, 3)).unwrap();
        assert_eq!((e.n_frames, e.dim), (500, 256));
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let mut model = GroundingModel::new(tiny_config(), vocab(), 1).unwrap();
        let names: Vec<String> = model.params().names().to_vec();
        for name in names.iter().filter(|n| n.starts_with("audio.") && !n.ends_with("bn.weight")) {
            model.params_mut().get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let e = model.encode_audio(&mel(12, 5)).unwrap();
        assert!(e.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phrase_embedding_is_word_mean() {
        let mut model = GroundingModel::new(tiny_config(), vocab(), 1).unwrap();
        let single = model.vocab().encode("dog").unwrap();
        let table = model.params().get(EMBEDDING).unwrap().clone();
        let row = |id: usize| table.data()[id * 4..(id + 1) * 4].to_vec();
        assert_eq!(model.encode_phrase(&single).unwrap(), row(single.ids[0]));

        let pair = model.vocab().encode("dog barks").unwrap();
        let v = row(pair.ids[0]);
        let t = model.params_mut().get_mut(EMBEDDING).unwrap();
        for d in 0..4 {
            t.data_mut()[pair.ids[1] * 4 + d] = -v[d];
        }
        assert!(model.encode_phrase(&pair).unwrap().iter().all(|x| x.abs() < 1e-15));

        let ab = model.encode_phrase(&model.vocab().encode("a dog barks").unwrap()).unwrap();
        let ba = model.encode_phrase(&model.vocab().encode("barks a dog").unwrap()).unwrap();
        for (x, y) in ab.iter().zip(&ba) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(matches!(model.vocab().encode(" ... "), Err(Error::EmptyQuery)));
        assert_eq!(model.vocab().encode("zebra").unwrap().ids, [0]);
    }

    #[test]
    fn similarity_closed_forms() {
        let audio = Embeddings { n_frames: 2, dim: 2, data: vec![1.0, 2.0, 1.0 + 2f64.ln(), 2.0] };
        let s = similarity(&audio, &[1.0, 2.0]).unwrap();
        assert_eq!(s.scores[0], 1.0);
        assert!((s.scores[1] - 0.5).abs() < 1e-12);
        assert!(similarity(&audio, &[1.0]).is_err());
    }

    #[test]
    fn bce_closed_forms() {
        let eps = 1e-7;
        let near = FrameScores::new(vec![1.0 - eps; 4]);
        assert!((bce_loss(&near, &[1.0; 4], eps).unwrap() - 1e-7).abs() < 1e-12);
        let half = FrameScores::new(vec![0.5; 3]);
        assert!((bce_loss(&half, &[1.0, 0.0, 1.0], eps).unwrap() - 2f64.ln()).abs() < 1e-12);
        let s = FrameScores::new(vec![0.9, 0.2]);
        let expected = -0.5 * (0.9f64.ln() + 0.8f64.ln());
        assert!((bce_loss(&s, &[1.0, 0.0], eps).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.16425).abs() < 1e-5);
        assert!(bce_loss(&s, &[1.0], eps).is_err());
    }

    #[test]
    fn decode_examples() {
        let cfg = GroundingConfig::default();
        assert!(decode_segments(&FrameScores::new(vec![0.4; 10]), &cfg).is_empty());
        let segs = decode_segments(&FrameScores::new(vec![0.6, 0.6, 0.1, 0.7]), &cfg);
        assert_eq!(segs, [Segment { onset: 0.0, offset: 0.04 }, Segment { onset: 0.06, offset: 0.08 }]);
        let full = decode_segments(&FrameScores::new(vec![1.0; 500]), &cfg);
        assert_eq!(full, [Segment { onset: 0.0, offset: 10.0 }]);
        assert!(decode_segments(&FrameScores::new(vec![1.0; 5]), &GroundingConfig::with_threshold(1.0)).is_empty());
    }

    #[test]
    fn median_filter_removes_blips() {
        let cfg = GroundingConfig { median_filter: Some(3), ..GroundingConfig::default() };
        let s = FrameScores::new(vec![0.9, 0.9, 0.1, 0.9, 0.9, 0.1, 0.1, 0.9, 0.1, 0.1]);
        assert_eq!(decode_segments(&s, &cfg), [Segment { onset: 0.0, offset: 0.1 }]);
    }

    #[test]
    fn frame_labels() {
        let full = frames_from_segments(&[Segment { onset: 0.0, offset: 10.0 }], 500, 0.02).unwrap();
        assert!(full.iter().all(|&y| y == 1.0));
        assert!(frames_from_segments(&[], 5, 0.02).unwrap().iter().all(|&y| y == 0.0));
        let y = frames_from_segments(&[Segment { onset: 0.03, offset: 0.05 }], 4, 0.02).unwrap();
        assert_eq!(y, [0.0, 1.0, 0.0, 0.0]);
        assert!(frames_from_segments(&[Segment { onset: 0.5, offset: 0.2 }], 4, 0.02).is_err());
        assert!(frames_from_segments(&[Segment { onset: -0.1, offset: 0.2 }], 4, 0.02).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut model = GroundingModel::new(tiny_config(), vocab(), 9).unwrap();
        model.update_running_stats(&[BatchStats { mean: vec![0.5, -0.5], var: vec![2.0, 3.0], count: 10 }]);
        let back = GroundingModel::from_checkpoint(&Checkpoint::from_bytes(&model.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_checkpoint().to_bytes(), model.to_checkpoint().to_bytes());
    }
}
