//! Training loop: Adam, plateau learning-rate decay, early stopping and
//! best-validation checkpoint selection.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::DatasetSplit;
use crate::dsp::{MelSpectrogram, HOP_S};
use crate::model::{frames_from_segments, AudioEncoderConfig, GroundingModel, Mode, PhraseQuery, QueryRef, Vocab};
use crate::tensor::{Adam, Tape};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub lr: f64,
    pub lr_reduce_patience: usize,
    pub lr_reduce_factor: f64,
    pub early_stop_patience: usize,
    /// Clips per minibatch; every phrase of a clip joins its clip's batch.
    pub batch_size: usize,
    pub seed: u64,
    /// A validation loss counts as improved when it drops by more than this.
    pub min_improvement: f64,
    pub score_clamp: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            lr: 1e-3,
            lr_reduce_patience: 5,
            lr_reduce_factor: 0.1,
            early_stop_patience: 10,
            batch_size: 8,
            seed: 0,
            min_improvement: 1e-6,
            score_clamp: 1e-7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::InvalidArgument(why.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive and finite");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.early_stop_patience < self.lr_reduce_patience {
            return bad("early_stop_patience must be at least lr_reduce_patience");
        }
        if !(self.lr_reduce_factor > 0.0 && self.lr_reduce_factor <= 1.0) {
            return bad("lr_reduce_factor must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Reduce-on-plateau schedule with early stopping.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    best: f64,
    epochs_without_improvement: usize,
    since_reduction: usize,
    reduce_patience: usize,
    factor: f64,
    stop_patience: usize,
    min_improvement: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub improved: bool,
    /// Learning rate for the next epoch.
    pub lr: f64,
    pub stop: bool,
}

impl PlateauSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr,
            best: f64::INFINITY,
            epochs_without_improvement: 0,
            since_reduction: 0,
            reduce_patience: cfg.lr_reduce_patience,
            factor: cfg.lr_reduce_factor,
            stop_patience: cfg.early_stop_patience,
            min_improvement: cfg.min_improvement,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, val_loss: f64) -> Step {
        let improved = val_loss < self.best - self.min_improvement;
        if improved {
            self.best = val_loss;
            self.epochs_without_improvement = 0;
            self.since_reduction = 0;
        } else {
            self.epochs_without_improvement += 1;
            self.since_reduction += 1;
            if self.since_reduction >= self.reduce_patience {
                self.lr *= self.factor;
                self.since_reduction = 0;
            }
        }
        Step { improved, lr: self.lr, stop: self.epochs_without_improvement >= self.stop_patience }
    }
}

/// One (clip, phrase) training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub clip_id: String,
    pub mel: Arc<MelSpectrogram>,
    pub query: PhraseQuery,
    pub labels: Vec<f64>,
}

/// One sample per phrase of every clip. `features` holds each clip's
/// spectrogram in clip order.
pub fn build_samples(split: &DatasetSplit, features: &[MelSpectrogram], vocab: &Vocab) -> Result<Vec<Sample>> {
    if features.len() != split.clips.len() {
        return Err(Error::InvalidArgument(format!("{} feature matrices for {} clips", features.len(), split.clips.len())));
    }
    let mut out = Vec::with_capacity(split.n_phrases());
    for (clip, mel) in split.clips.iter().zip(features) {
        let mel = Arc::new(mel.clone());
        let end = mel.n_frames() as f64 * HOP_S + (mel.frame_length_s - HOP_S);
        for phrase in &clip.phrases {
            if let Some(seg) = phrase.segments.iter().find(|s| s.offset > end + 1e-6) {
                return Err(Error::dataset(
                    clip.audio_id.clone(),
                    format!("segment [{}, {}] of '{}' lies beyond the clip ({end} s)", seg.onset, seg.offset, phrase.text),
                ));
            }
            let labels = frames_from_segments(&phrase.segments, mel.n_frames(), HOP_S)
                .map_err(|e| Error::dataset(clip.audio_id.clone(), e.to_string()))?;
            let query = vocab.encode(&phrase.text).map_err(|e| Error::dataset(clip.audio_id.clone(), e.to_string()))?;
            out.push(Sample { clip_id: clip.audio_id.clone(), mel: Arc::clone(&mel), query, labels });
        }
    }
    Ok(out)
}

/// Vocabulary of every caption and phrase in a split.
pub fn build_vocab(split: &DatasetSplit) -> Vocab {
    let texts = split.clips.iter().flat_map(|c| std::iter::once(c.caption.as_str()).chain(c.phrases.iter().map(|p| p.text.as_str())));
    Vocab::from_texts(texts)
}

/// Samples grouped by clip, in first-appearance order.
fn group_by_clip(samples: &[Sample]) -> Vec<Vec<usize>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let g = *index.entry(s.clip_id.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

struct Batch<'a> {
    mels: Vec<&'a MelSpectrogram>,
    queries: Vec<QueryRef<'a>>,
    targets: Vec<f64>,
    mask: Vec<f64>,
}

fn make_batch<'a>(samples: &'a [Sample], groups: &[&Vec<usize>]) -> Batch<'a> {
    let mels: Vec<&MelSpectrogram> = groups.iter().map(|g| samples[g[0]].mel.as_ref()).collect();
    let t_max = mels.iter().map(|m| m.n_frames()).max().unwrap_or(0);
    let mut queries = Vec::new();
    let mut targets = Vec::new();
    let mut mask = Vec::new();
    for (c, g) in groups.iter().enumerate() {
        for &i in g.iter() {
            let s = &samples[i];
            queries.push(QueryRef { clip: c, ids: &s.query.ids });
            let n = s.labels.len();
            targets.extend(&s.labels);
            targets.extend(std::iter::repeat_n(0.0, t_max - n));
            mask.extend(std::iter::repeat_n(1.0, n));
            mask.extend(std::iter::repeat_n(0.0, t_max - n));
        }
    }
    Batch { mels, queries, targets, mask }
}

/// Mean masked BCE of one batch without gradients (eval mode).
pub fn batch_loss(model: &GroundingModel, samples: &[Sample], score_clamp: f64) -> Result<f64> {
    let groups = group_by_clip(samples);
    let refs: Vec<&Vec<usize>> = groups.iter().collect();
    let batch = make_batch(samples, &refs);
    let mut tape = Tape::new();
    let vars = model.params().register(&mut tape, false);
    let fwd = model.forward(&mut tape, &vars, &batch.mels, &batch.queries, Mode::Eval)?;
    let loss = tape.bce_masked(fwd.scores, &batch.targets, &batch.mask, score_clamp)?;
    Ok(tape.value(loss).item())
}

/// Mean per-sample validation loss, evaluated `batch_size` clips at a time.
pub fn evaluate_loss(model: &GroundingModel, samples: &[Sample], batch_size: usize, score_clamp: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let groups = group_by_clip(samples);
    let mut total = 0.0;
    for chunk in groups.chunks(batch_size.max(1)) {
        let refs: Vec<&Vec<usize>> = chunk.iter().collect();
        let batch = make_batch(samples, &refs);
        let mut tape = Tape::new();
        let vars = model.params().register(&mut tape, false);
        let fwd = model.forward(&mut tape, &vars, &batch.mels, &batch.queries, Mode::Eval)?;
        let s = tape.value(fwd.scores);
        let t_max = s.dim(1);
        for (row, len) in fwd.lengths.iter().enumerate() {
            let mut l = 0.0;
            for t in 0..*len {
                let c = s.data()[row * t_max + t].clamp(score_clamp, 1.0 - score_clamp);
                let y = batch.targets[row * t_max + t];
                l -= y * c.ln() + (1.0 - y) * (1.0 - c).ln();
            }
            total += l / *len as f64;
        }
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainLog {
    /// `#` header lines with the run settings, then
    /// `epoch,train_loss,val_loss,lr` rows.
    pub fn to_csv(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        writeln!(s, "# batch_size={} lr_reduce_factor={} seed={}", c.batch_size, c.lr_reduce_factor, c.seed).unwrap();
        writeln!(
            s,
            "# lr={} lr_reduce_patience={} early_stop_patience={} max_epochs={} best_epoch={}",
            c.lr, c.lr_reduce_patience, c.early_stop_patience, c.max_epochs, self.best_epoch
        )
        .unwrap();
        s.push_str("epoch,train_loss,val_loss,lr\n");
        for e in &self.epochs {
            writeln!(s, "{},{:?},{:?},{:?}", e.epoch, e.train_loss, e.val_loss, e.lr).unwrap();
        }
        s
    }
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: GroundingModel,
    pub log: TrainLog,
}

/// Trains a fresh model. Each epoch visits the training clips in a seeded
/// random order, `batch_size` clips per Adam step; the learning rate and
/// stopping follow [`PlateauSchedule`] on the mean validation loss.
pub fn train(
    train_samples: &[Sample],
    val_samples: &[Sample],
    vocab: Vocab,
    encoder: AudioEncoderConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let model = GroundingModel::new(encoder, vocab, cfg.seed)?;
    train_model(model, train_samples, val_samples, cfg, |_| {})
}

/// [`train`] starting from `model`, calling `on_epoch` after every epoch.
pub fn train_model(
    mut model: GroundingModel,
    train_samples: &[Sample],
    val_samples: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_samples.is_empty() || val_samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_ba7c_4e5);
    let groups = group_by_clip(train_samples);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut adam = Adam::new(cfg.lr);
    let mut schedule = PlateauSchedule::new(cfg);
    let mut best = model.clone();
    let mut log = TrainLog { config: cfg.clone(), epochs: Vec::new(), best_epoch: 0 };

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let lr = schedule.lr();
        adam.lr = lr;
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&Vec<usize>> = chunk.iter().map(|&g| &groups[g]).collect();
            let batch = make_batch(train_samples, &refs);
            let mut tape = Tape::new();
            let vars = model.params().register(&mut tape, true);
            let fwd = model.forward(&mut tape, &vars, &batch.mels, &batch.queries, Mode::Train)?;
            let loss = tape.bce_masked(fwd.scores, &batch.targets, &batch.mask, cfg.score_clamp)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                let clips: Vec<&str> = refs.iter().map(|g| train_samples[g[0]].clip_id.as_str()).collect();
                return Err(Error::NonFinite(format!("training loss {value} at epoch {epoch}, batch {n_batches} (clips {clips:?})")));
            }
            let mut grads = tape.backward(loss)?;
            let grads: Vec<_> = vars
                .iter()
                .zip(model.params().tensors())
                .map(|(&v, t)| grads.take(v).unwrap_or_else(|| crate::tensor::Tensor::zeros(t.shape())))
                .collect();
            if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} at epoch {epoch}, batch {n_batches}",
                    model.params().names()[i]
                )));
            }
            adam.step(model.params_mut().tensors_mut(), &grads)?;
            model.update_running_stats(&fwd.batch_stats);
            loss_sum += value;
            n_batches += 1;
        }
        let train_loss = loss_sum / n_batches as f64;
        let val_loss = evaluate_loss(&model, val_samples, cfg.batch_size, cfg.score_clamp)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        let record = EpochRecord { epoch, train_loss, val_loss, lr };
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:e}");
        on_epoch(&record);
        log.epochs.push(record);
        let step = schedule.observe(val_loss);
        if step.improved {
            best = model.clone();
            log.best_epoch = epoch;
        }
        if step.stop {
            log::info!("early stop after epoch {epoch}");
            break;
        }
    }
    Ok(TrainOutcome { model: best, log })
}
