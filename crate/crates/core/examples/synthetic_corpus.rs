//! Writes a small synthetic split (WAVs plus dataset JSON) and reads it back.
//!
//! cargo run --example synthetic_corpus -- [out_dir] [clips] [seed]

use std::path::PathBuf;

use tagkit::data::{generate_synthetic, load_dataset, SplitName};

fn main() -> tagkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("tagkit-corpus"));
    let n: usize = args.next().map_or(5, |s| s.parse().expect("clip count"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    generate_synthetic(&dir, SplitName::Test, n, seed)?;
    let split = load_dataset(dir.join("test.json"))?;
    for clip in &split.clips {
        println!("{}  {}", clip.audio_id, clip.caption);
        for p in &clip.phrases {
            let spans: Vec<String> = p.segments.iter().map(|s| format!("[{:.2}, {:.2})", s.onset, s.offset)).collect();
            println!("    {:<26} {}", p.text, spans.join(" "));
        }
    }
    println!("{} clips, {} phrases, {:.0} s of audio in {}", split.clips.len(), split.n_phrases(), split.total_duration_s()?, dir.display());
    Ok(())
}
