//! Rule-based NP and NP+VP extraction from captions.
//!
//! cargo run --example extract_phrases -- "A dog barks while cars pass by"

use tagkit::chunk::{extract_phrases, pos_tag, tokenize};

fn main() {
    let mut captions: Vec<String> = std::env::args().skip(1).collect();
    if captions.is_empty() {
        captions = vec![
            "A man is speaking while birds are chirping in the background".into(),
            "Water runs from a faucet and a woman laughs".into(),
            "Loud engine revving, then a horn honks twice".into(),
        ];
    }
    for caption in &captions {
        println!("{caption}");
        let tags: Vec<String> = pos_tag(&tokenize(caption)).iter().map(|t| format!("{}/{:?}", t.text, t.pos)).collect();
        println!("  tags: {}", tags.join(" "));
        for p in extract_phrases(caption) {
            println!("  {:<6?} [{}, {})  {}", p.kind, p.start, p.end, p.text);
        }
    }
}
