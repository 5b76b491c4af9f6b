//! Generates a synthetic corpus, trains the compact encoder on it and
//! reports event-F1 and PSDS on the test split next to the random baseline.
//!
//! cargo run --example train_synthetic -- [work_dir] [train_clips] [max_epochs]
//!
//! The trained checkpoint is written to `<work_dir>/model.tagm`.

use std::path::PathBuf;
use std::time::Instant;

use tagkit::data::{generate_synthetic, load_dataset, load_features, random_baseline, SplitName};
use tagkit::metrics::{EventMetricConfig, PsdsConfig};
use tagkit::model::{AudioEncoderConfig, GroundingConfig};
use tagkit::pipeline::{evaluate_scores, run_probe, score_split};
use tagkit::train::{build_samples, build_vocab, train_model, TrainConfig};

fn main() -> tagkit::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let dir = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("tagkit-synthetic"));
    let n_train: usize = args.next().map_or(200, |s| s.parse().expect("train clip count"));
    let max_epochs: usize = args.next().map_or(100, |s| s.parse().expect("epoch count"));

    let t0 = Instant::now();
    for (split, n, seed) in [(SplitName::Train, n_train, 1), (SplitName::Val, 20, 2), (SplitName::Test, 40, 3)] {
        generate_synthetic(&dir, split, n, seed)?;
    }
    let load = |name: &str| -> tagkit::Result<_> {
        let split = load_dataset(dir.join(format!("{name}.json")))?;
        let feats = load_features(&split)?;
        Ok((split, feats))
    };
    let (train_split, train_feats) = load("train")?;
    let (val_split, val_feats) = load("val")?;
    let (test_split, test_feats) = load("test")?;
    println!("data ready in {:.1} s", t0.elapsed().as_secs_f64());

    let vocab = build_vocab(&train_split);
    let train_samples = build_samples(&train_split, &train_feats, &vocab)?;
    let val_samples = build_samples(&val_split, &val_feats, &vocab)?;
    let cfg = TrainConfig { max_epochs, seed: 7, ..TrainConfig::default() };
    let model = tagkit::model::GroundingModel::new(AudioEncoderConfig::compact(), vocab, cfg.seed)?;
    let t1 = Instant::now();
    let outcome = train_model(model, &train_samples, &val_samples, &cfg, |e| {
        println!("epoch {:3}  train {:.5}  val {:.5}  lr {:e}  ({:.0} s)", e.epoch, e.train_loss, e.val_loss, e.lr, t1.elapsed().as_secs_f64())
    })?;
    println!("best epoch {} after {:.0} s", outcome.log.best_epoch, t1.elapsed().as_secs_f64());
    outcome.model.save(dir.join("model.tagm"))?;
    std::fs::write(dir.join("train_log.csv"), outcome.log.to_csv())?;

    let grounding = GroundingConfig::default();
    let (event_cfg, psds_cfg) = (EventMetricConfig::default(), PsdsConfig::default());
    let scored = score_split(&outcome.model, &test_split, &test_feats)?;
    let trained = evaluate_scores(&test_split, &scored, &grounding, &event_cfg, &psds_cfg)?;
    let random = evaluate_scores(&test_split, &random_baseline(&test_split, 11)?, &grounding, &event_cfg, &psds_cfg)?;
    println!("trained: event-F1 {:.2}%  P {:.2}%  R {:.2}%  PSDS {:.4}", trained.event.f1, trained.event.precision, trained.event.recall, trained.psds);
    println!("random:  event-F1 {:.2}%  PSDS {:.4}", random.event.f1, random.psds);
    let probe = run_probe(&outcome.model, &test_split, &test_feats, 5, &grounding, &event_cfg)?;
    println!("probe: original {:.2}%  shuffled {:.2}%", probe.original_f1, probe.shuffled_f1);
    Ok(())
}
