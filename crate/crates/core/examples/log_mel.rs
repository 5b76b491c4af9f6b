//! Log-mel features of a WAV file, or of a synthetic clip when no path is
//! given. Prints the feature shape and a coarse spectrogram in text.
//!
//! cargo run --example log_mel -- [file.wav]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tagkit::data::{synthesize_clip, SynthesisParams};
use tagkit::dsp::{log_mel, N_MELS};
use tagkit::wav::read_wav;

fn main() -> tagkit::Result<()> {
    let wave = match std::env::args().nth(1) {
        Some(path) => read_wav(path)?,
        None => {
            let (clip, wave) = synthesize_clip(&mut ChaCha8Rng::seed_from_u64(4), "demo".into(), &SynthesisParams::default())?;
            println!("synthetic clip: {}", clip.caption);
            for p in &clip.phrases {
                let spans: Vec<String> = p.segments.iter().map(|s| format!("{:.2}-{:.2}", s.onset, s.offset)).collect();
                println!("  {}: {}", p.text, spans.join(", "));
            }
            wave
        }
    };
    let mel = log_mel(&wave)?;
    println!("{:.2} s -> {} frames x {} mel bins", wave.duration_s(), mel.n_frames(), mel.n_mels());

    // one character per 10 frames and 4 mel bins, highest band on top
    let shades = [' ', '.', ':', '*', '#'];
    let (lo, hi) = mel.as_slice().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    for band in (0..N_MELS / 4).rev() {
        let row: String = (0..mel.n_frames() / 10)
            .map(|c| {
                let mut v = f64::NEG_INFINITY;
                for t in c * 10..c * 10 + 10 {
                    for m in band * 4..band * 4 + 4 {
                        v = v.max(mel.frame(t)[m]);
                    }
                }
                shades[(((v - lo) / (hi - lo)) * 4.0).round().clamp(0.0, 4.0) as usize]
            })
            .collect();
        println!("{band:>2} |{row}");
    }
    Ok(())
}
