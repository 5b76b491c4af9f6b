//! The shuffled-query probe: evaluates a trained model once with the true
//! phrases and once with phrases swapped between events.
//!
//! cargo run --example probe -- <model.tagm> <test.json> [seed]

use tagkit::data::{load_dataset, load_features, shuffle_phrase_probe};
use tagkit::metrics::EventMetricConfig;
use tagkit::model::{GroundingConfig, GroundingModel};
use tagkit::pipeline::run_probe;

fn main() -> tagkit::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        eprintln!("usage: probe <model.tagm> <test.json> [seed]");
        std::process::exit(2);
    }
    let seed: u64 = args.get(2).map_or(0, |s| s.parse().expect("seed"));
    let model = GroundingModel::load(&args[0])?;
    let split = load_dataset(&args[1])?;

    let shuffled = shuffle_phrase_probe(&split, seed)?;
    for (a, b) in split.clips.iter().zip(&shuffled.clips).take(3) {
        for (p, q) in a.phrases.iter().zip(&b.phrases) {
            println!("{}: {:?} -> {:?}", a.audio_id, p.text, q.text);
        }
    }

    let features = load_features(&split)?;
    let r = run_probe(&model, &split, &features, seed, &GroundingConfig::default(), &EventMetricConfig::default())?;
    println!("event-F1 {:.2}% with true phrases, {:.2}% shuffled ({:+.2})", r.original_f1, r.shuffled_f1, -r.difference());
    Ok(())
}
