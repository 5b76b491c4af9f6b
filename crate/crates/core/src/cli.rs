//! Command-line interface: `gen-data`, `extract-phrases`, `train`, `ground`,
//! `evaluate` and `probe`.
//!
//! Exit codes: 0 on success, 2 for usage or input errors, 3 for numeric
//! failures (a non-finite loss or gradient).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::chunk::extract_phrases;
use crate::data::{generate_synthetic, load_dataset, load_features, ScoredPhrase, SplitName};
use crate::dsp::log_mel;
use crate::metrics::{event_f1, export_roc, psds, EventList, EventMetricConfig, PsdsConfig};
use crate::model::{decode_segments, AudioEncoderConfig, FrameScores, GroundingConfig, GroundingModel};
use crate::pipeline::{run_probe, score_map, score_split};
use crate::train::{build_samples, build_vocab, train_model, TrainConfig};
use crate::wav::read_wav;
use crate::{frame_time, Error, Result, Segment};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tagkit", version, about = "Text-to-audio grounding: phrase extraction, training, inference and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a seeded synthetic corpus (WAVs plus dataset JSON).
    GenData(GenDataArgs),
    /// Extract NP and NP+VP phrases from captions.
    ExtractPhrases(ExtractArgs),
    /// Train a grounding model.
    Train(TrainArgs),
    /// Locate phrases in audio with a trained model.
    Ground(GroundArgs),
    /// Score hypotheses against reference annotations.
    Evaluate(EvaluateArgs),
    /// Compare event-F1 with true and with shuffled phrase queries.
    Probe(ProbeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub clips: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "train")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Caption to process; may be repeated.
    #[arg(long)]
    pub caption: Vec<String>,
    /// Text file with one caption per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output JSONL (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderSize {
    /// 16–128 channels, 256-dimensional embeddings.
    Full,
    /// 8–32 channels, 64-dimensional embeddings.
    Compact,
}

impl EncoderSize {
    pub fn config(self) -> AudioEncoderConfig {
        match self {
            EncoderSize::Full => AudioEncoderConfig::default(),
            EncoderSize::Compact => AudioEncoderConfig::compact(),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = EncoderSize::Full)]
    pub encoder: EncoderSize,
    /// Training log CSV (defaults to the checkpoint path with `.csv` appended).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GroundArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Single WAV file (used with --phrase).
    #[arg(long, requires = "phrase", conflicts_with = "dataset")]
    pub audio: Option<PathBuf>,
    #[arg(long, requires = "audio")]
    pub phrase: Option<String>,
    /// Dataset file: ground every phrase of every clip.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Odd median-filter width applied before segment extraction.
    #[arg(long)]
    pub median_filter: Option<usize>,
    /// Per-frame `time_s,score` CSV (single-audio mode).
    #[arg(long)]
    pub emit_scores: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub hyp: PathBuf,
    /// Comma-separated subset of `event,psds`.
    #[arg(long, default_value = "event,psds")]
    pub metrics: String,
    #[arg(long)]
    pub roc_out: Option<PathBuf>,
    /// Decoding threshold for score-only hypotheses.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

/// One grounding result, as written by `ground` and read by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypRecord {
    pub audio_id: String,
    pub phrase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<Segment>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name) and runs the command,
/// writing to `stdout`. Returns the process exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match run(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command, stdout: &mut dyn std::io::Write) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a, stdout),
        Command::ExtractPhrases(a) => extract(a, stdout),
        Command::Train(a) => train_cmd(a, stdout),
        Command::Ground(a) => ground(a),
        Command::Evaluate(a) => evaluate(a, stdout),
        Command::Probe(a) => probe(a, stdout),
    }
}

fn gen_data(a: GenDataArgs, out: &mut dyn std::io::Write) -> Result<()> {
    if a.clips == 0 {
        return Err(Error::InvalidArgument("--clips must be at least 1".into()));
    }
    let split: SplitName = a.split.parse()?;
    let ds = generate_synthetic(&a.out, split, a.clips, a.seed)?;
    writeln!(out, "{}", a.out.join(format!("{split}.json")).display())?;
    log::info!("wrote {} clips with {} phrases", ds.clips.len(), ds.n_phrases());
    Ok(())
}

fn extract(a: ExtractArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let mut captions = a.caption.clone();
    if let Some(path) = &a.input {
        let text = fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        captions.extend(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string));
    }
    if captions.is_empty() {
        return Err(Error::InvalidArgument("give --caption or --input".into()));
    }
    let mut text = String::new();
    for caption in &captions {
        let line = serde_json::json!({ "caption": caption, "phrases": extract_phrases(caption) });
        writeln!(text, "{line}").unwrap();
    }
    write_output(a.out.as_deref(), &text, out)
}

fn write_output(path: Option<&Path>, text: &str, stdout: &mut dyn std::io::Write) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn train_cmd(a: TrainArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let cfg = TrainConfig { max_epochs: a.epochs, lr: a.lr, batch_size: a.batch_size, seed: a.seed, ..TrainConfig::default() };
    cfg.validate()?;
    let train_split = load_dataset(&a.train)?;
    let val_split = load_dataset(&a.val)?;
    let vocab = build_vocab(&train_split);
    let train_samples = build_samples(&train_split, &load_features(&train_split)?, &vocab)?;
    let val_samples = build_samples(&val_split, &load_features(&val_split)?, &vocab)?;
    let model = GroundingModel::new(a.encoder.config(), vocab, cfg.seed)?;
    let outcome = train_model(model, &train_samples, &val_samples, &cfg, |_| {})?;
    outcome.model.save(&a.out)?;
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".csv");
        PathBuf::from(p)
    });
    fs::write(&log_path, outcome.log.to_csv())?;
    let best = &outcome.log.epochs[outcome.log.best_epoch.max(1) - 1];
    writeln!(out, "best epoch {} val_loss {:?}; wrote {} and {}", best.epoch, best.val_loss, a.out.display(), log_path.display())?;
    Ok(())
}

fn grounding_config(threshold: f64, median_filter: Option<usize>) -> Result<GroundingConfig> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must lie in (0, 1], got {threshold}")));
    }
    if let Some(w) = median_filter {
        if w == 0 || w % 2 == 0 {
            return Err(Error::InvalidArgument(format!("median filter width must be odd, got {w}")));
        }
    }
    Ok(GroundingConfig { threshold, median_filter, ..GroundingConfig::default() })
}

fn record_line(audio_id: &str, phrase: &str, scores: &FrameScores, cfg: &GroundingConfig) -> String {
    let rec = HypRecord {
        audio_id: audio_id.to_string(),
        phrase: phrase.to_string(),
        segments: Some(decode_segments(scores, cfg)),
        scores: Some(scores.scores.clone()),
    };
    serde_json::to_string(&rec).expect("record serializes") + "\n"
}

fn ground(a: GroundArgs) -> Result<()> {
    let cfg = grounding_config(a.threshold, a.median_filter)?;
    let model = GroundingModel::load(&a.model).map_err(|e| Error::InvalidArgument(format!("{}: {e}", a.model.display())))?;
    let mut text = String::new();
    match (&a.audio, &a.phrase, &a.dataset) {
        (Some(audio), Some(phrase), None) => {
            let query = model.vocab().encode(phrase)?;
            let wave = read_wav(audio)?;
            let mel = log_mel(&wave)?;
            let scores = model.score(&mel, std::slice::from_ref(&query))?.remove(0);
            let id = audio.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            text.push_str(&record_line(&id, phrase, &scores, &cfg));
            if let Some(csv) = &a.emit_scores {
                let mut rows = String::from("time_s,score\n");
                for (t, s) in scores.scores.iter().enumerate() {
                    writeln!(rows, "{:?},{:?}", frame_time(t, scores.frame_shift_s), s).unwrap();
                }
                fs::write(csv, rows)?;
            }
        }
        (None, None, Some(path)) => {
            if a.emit_scores.is_some() {
                return Err(Error::InvalidArgument("--emit-scores needs --audio/--phrase".into()));
            }
            let split = load_dataset(path)?;
            let features = load_features(&split)?;
            for s in score_split(&model, &split, &features)? {
                text.push_str(&record_line(&s.audio_id, &s.phrase, &s.scores, &cfg));
            }
        }
        _ => return Err(Error::InvalidArgument("give either --audio with --phrase, or --dataset".into())),
    }
    fs::write(&a.out, text)?;
    Ok(())
}

/// Reads hypothesis JSONL; blank lines are skipped.
pub fn read_hypotheses(path: &Path) -> Result<Vec<HypRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let de = &mut serde_json::Deserializer::from_str(l);
            serde_path_to_error::deserialize(de).map_err(|e| Error::Dataset {
                path: format!("{}:{} {}", path.display(), i + 1, e.path()),
                reason: e.inner().to_string(),
            })
        })
        .collect()
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn evaluate(a: EvaluateArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let wanted: BTreeSet<&str> = a.metrics.split(',').map(str::trim).filter(|m| !m.is_empty()).collect();
    if wanted.is_empty() || wanted.iter().any(|m| !matches!(*m, "event" | "psds")) {
        return Err(Error::InvalidArgument(format!("--metrics takes event and/or psds, got '{}'", a.metrics)));
    }
    let cfg = grounding_config(a.threshold, None)?;
    let split = load_dataset(&a.reference)?;
    let hyps = read_hypotheses(&a.hyp)?;
    let ids: BTreeSet<&str> = split.clips.iter().map(|c| c.audio_id.as_str()).collect();
    if let Some(h) = hyps.iter().find(|h| !ids.contains(h.audio_id.as_str())) {
        return Err(Error::InvalidArgument(format!("hypothesis refers to unknown audio_id '{}'", h.audio_id)));
    }
    let reference = EventList::from_split(&split)?;
    let mut result = serde_json::Map::new();

    if wanted.contains("event") {
        let mut hyp = EventList::new();
        for h in &hyps {
            let segs = match (&h.segments, &h.scores) {
                (Some(s), _) => s.clone(),
                (None, Some(s)) => decode_segments(&FrameScores::new(s.clone()), &cfg),
                (None, None) => {
                    return Err(Error::InvalidArgument(format!("record for '{}' / '{}' has neither segments nor scores", h.audio_id, h.phrase)))
                }
            };
            hyp.insert(h.audio_id.clone(), h.phrase.clone(), &segs)?;
        }
        let s = event_f1(&reference, &hyp, &EventMetricConfig::default())?;
        result.insert(
            "event".into(),
            serde_json::json!({
                "f1": round2(s.f1), "precision": round2(s.precision), "recall": round2(s.recall),
                "tp": s.tp, "fp": s.fp, "fn": s.fn_,
            }),
        );
    }
    if wanted.contains("psds") {
        let mut scored = Vec::with_capacity(hyps.len());
        for h in &hyps {
            let Some(s) = &h.scores else {
                return Err(Error::InvalidArgument("PSDS needs score-form hypotheses (records with \"scores\")".into()));
            };
            scored.push(ScoredPhrase { audio_id: h.audio_id.clone(), phrase: h.phrase.clone(), scores: FrameScores::new(s.clone()) });
        }
        let map = score_map(&scored);
        if let Some((clip, phrase)) = reference.keys().find(|k| !map.contains_key(*k)) {
            return Err(Error::InvalidArgument(format!("PSDS needs scores for phrase '{phrase}' of clip '{clip}'")));
        }
        let (value, roc) = psds(&reference, &map, split.total_duration_s()?, &PsdsConfig::default())?;
        result.insert("psds".into(), serde_json::json!((value * 1e4).round() / 1e4));
        if let Some(p) = &a.roc_out {
            fs::write(p, export_roc(&roc))?;
        }
    }
    writeln!(out, "{}", serde_json::Value::Object(result))?;
    Ok(())
}

fn probe(a: ProbeArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let cfg = grounding_config(a.threshold, None)?;
    let model = GroundingModel::load(&a.model).map_err(|e| Error::InvalidArgument(format!("{}: {e}", a.model.display())))?;
    let split = load_dataset(&a.test)?;
    let features = load_features(&split)?;
    let r = run_probe(&model, &split, &features, a.seed, &cfg, &EventMetricConfig::default())?;
    let line = serde_json::json!({
        "original_f1": round2(r.original_f1),
        "shuffled_f1": round2(r.shuffled_f1),
        "difference": round2(r.difference()),
    });
    writeln!(out, "{line}")?;
    Ok(())
}
