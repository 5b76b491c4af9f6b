//! Grounds one phrase in one clip and prints the detected segments with a
//! text plot of the frame scores.
//!
//! cargo run --example ground -- <model.tagm> <clip.wav> "a bright bird chirps"
//!
//! A checkpoint can be produced with the `train_synthetic` example.

use tagkit::dsp::log_mel;
use tagkit::model::{decode_segments, GroundingConfig, GroundingModel};
use tagkit::wav::read_wav;

fn main() -> tagkit::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [model, wav, phrase] = args.as_slice() else {
        eprintln!("usage: ground <model.tagm> <clip.wav> <phrase>");
        std::process::exit(2);
    };
    let model = GroundingModel::load(model)?;
    let mel = log_mel(&read_wav(wav)?)?;
    let query = model.vocab().encode(phrase)?;
    let unknown: Vec<&str> = query.tokens.iter().zip(&query.ids).filter(|(_, &id)| id == 0).map(|(t, _)| t.as_str()).collect();
    if !unknown.is_empty() {
        println!("out-of-vocabulary words: {}", unknown.join(", "));
    }
    let scores = model.score(&mel, &[query])?.remove(0);
    for s in decode_segments(&scores, &GroundingConfig::default()) {
        println!("{:.2} - {:.2} s", s.onset, s.offset);
    }
    // mean score per 0.2 s
    let line: String = scores
        .scores
        .chunks(10)
        .map(|c| {
            let m = c.iter().sum::<f64>() / c.len() as f64;
            [' ', '.', ':', '|', '#'][((m * 4.0).round() as usize).min(4)]
        })
        .collect();
    println!("|{line}|");
    Ok(())
}
