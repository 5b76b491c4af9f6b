//! Saves a model, loads it back and confirms the bytes and the scores are
//! unchanged.

use tagkit::dsp::MelSpectrogram;
use tagkit::model::{AudioEncoderConfig, GroundingModel, Vocab};

fn main() -> tagkit::Result<()> {
    let vocab = Vocab::from_texts(["a dog barks", "a car passes by"]);
    let model = GroundingModel::new(AudioEncoderConfig::compact(), vocab, 3)?;
    let path = std::env::temp_dir().join("tagkit-example.tagm");
    model.save(&path)?;
    let restored = GroundingModel::load(&path)?;
    let same_bytes = restored.to_checkpoint().to_bytes() == model.to_checkpoint().to_bytes();

    let mel = MelSpectrogram::from_raw(50, 64, (0..50 * 64).map(|i| ((i % 97) as f64).ln_1p()).collect())?;
    let q = model.vocab().encode("a dog barks")?;
    let a = model.score(&mel, std::slice::from_ref(&q))?;
    let b = restored.score(&mel, &[q])?;
    println!(
        "{} bytes, {} parameter tensors; bytes equal: {same_bytes}; scores equal: {}",
        std::fs::metadata(&path)?.len(),
        model.params().len(),
        a == b
    );
    Ok(())
}
