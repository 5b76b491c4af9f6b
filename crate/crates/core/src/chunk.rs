//! Rule-based extraction of sound-event phrases from captions.
//!
//! Captions are tokenized, tagged with a small deterministic lexicon +
//! suffix tagger and chunked into noun phrases (NP) and noun phrases
//! directly followed by a verb group (NP_VP), e.g. "a dog barks".

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

const LEXICON_TSV: &str = include_str!("../data/lexicon.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PosTag {
    DT,
    JJ,
    NN,
    NNS,
    VB,
    VBG,
    VBZ,
    VBP,
    IN,
    CC,
    OTHER,
}

impl PosTag {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "DT" => PosTag::DT,
            "JJ" => PosTag::JJ,
            "NN" => PosTag::NN,
            "NNS" => PosTag::NNS,
            "VB" => PosTag::VB,
            "VBG" => PosTag::VBG,
            "VBZ" => PosTag::VBZ,
            "VBP" => PosTag::VBP,
            "IN" => PosTag::IN,
            "CC" => PosTag::CC,
            "OTHER" => PosTag::OTHER,
            _ => return None,
        })
    }

    fn is_noun(self) -> bool {
        matches!(self, PosTag::NN | PosTag::NNS)
    }

    fn is_verb(self) -> bool {
        matches!(self, PosTag::VB | PosTag::VBG | PosTag::VBZ | PosTag::VBP)
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub pos: PosTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhraseKind {
    NP,
    #[serde(rename = "NP_VP")]
    NpVp,
}

/// Half-open token range `[start, end)` of one extracted phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhraseSpan {
    pub start: usize,
    pub end: usize,
    pub kind: PhraseKind,
}

/// Extracted phrase in the JSONL shape emitted by `extract-phrases`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedPhrase {
    pub text: String,
    pub kind: PhraseKind,
    pub start: usize,
    pub end: usize,
}

// Closed classes. Auxiliaries carry verb tags so they join the verb group.
const DETERMINERS: &[&str] = &[
    "a", "an", "the", "some", "another", "this", "that", "these", "those", "its", "his", "her",
    "their", "two", "three", "four", "many", "multiple", "few", "one",
];
const AUXILIARIES: &[(&str, PosTag)] = &[
    ("is", PosTag::VBZ),
    ("are", PosTag::VBP),
    ("was", PosTag::VB),
    ("were", PosTag::VB),
    ("be", PosTag::VB),
    ("been", PosTag::VB),
    ("being", PosTag::VBG),
    ("has", PosTag::VBZ),
    ("have", PosTag::VBP),
    ("can", PosTag::VB),
];
/// Prepositions govern the following noun phrase, which is then not a
/// sound source ("in the background").
const PREPOSITIONS: &[&str] = &[
    "in", "on", "at", "with", "from", "of", "by", "near", "behind", "under", "over", "into",
    "through", "during", "around", "across", "along", "against", "toward", "towards", "inside",
    "outside", "onto", "above", "below", "beside", "past", "amid", "for", "to", "like",
];
/// Subordinators are chunk barriers but do not govern a noun phrase.
const SUBORDINATORS: &[&str] = &["while", "as", "when", "whilst", "until", "before", "after", "then"];
const CONJUNCTIONS: &[&str] = &["and", "or", "but", "nor"];
const PRONOUNS: &[&str] = &[
    "he", "she", "it", "they", "we", "i", "you", "him", "them", "us", "me", "who", "which",
    "what", "there", "here", "not", "no",
];
const ADVERBS: &[&str] = &[
    "once", "twice", "again", "repeatedly", "loudly", "softly", "quietly", "quickly", "slowly",
    "briefly", "continuously", "intermittently", "constantly", "nearby", "away", "also",
];

fn closed_class(word: &str) -> Option<PosTag> {
    if DETERMINERS.contains(&word) {
        return Some(PosTag::DT);
    }
    if let Some(&(_, tag)) = AUXILIARIES.iter().find(|(w, _)| *w == word) {
        return Some(tag);
    }
    if PREPOSITIONS.contains(&word) || SUBORDINATORS.contains(&word) {
        return Some(PosTag::IN);
    }
    if CONJUNCTIONS.contains(&word) {
        return Some(PosTag::CC);
    }
    if PRONOUNS.contains(&word) || ADVERBS.contains(&word) {
        return Some(PosTag::OTHER);
    }
    None
}

/// The open-class lexicon, parsed once from the bundled data file.
pub fn lexicon() -> &'static HashMap<String, PosTag> {
    static LEXICON: OnceLock<HashMap<String, PosTag>> = OnceLock::new();
    LEXICON.get_or_init(|| {
        let mut map = HashMap::new();
        for line in LEXICON_TSV.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, tag) = line.split_once('\t').expect("lexicon line without tab");
            let tag = PosTag::parse(tag.trim()).expect("unknown tag in lexicon");
            map.entry(word.to_string()).or_insert(tag);
        }
        map
    })
}

/// Lowercases, splits on whitespace and strips surrounding punctuation.
pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

fn is_verb_stem(stem: &str) -> bool {
    lexicon().get(stem) == Some(&PosTag::VB)
}

fn tag_word(word: &str) -> PosTag {
    if let Some(tag) = closed_class(word) {
        return tag;
    }
    if let Some(&tag) = lexicon().get(word) {
        return tag;
    }
    if word.len() > 4 && word.ends_with("ing") {
        return PosTag::VBG;
    }
    if word.len() > 3 && word.ends_with("ed") {
        return PosTag::VB;
    }
    if word.len() > 2 && word.ends_with('s') && !word.ends_with("ss") {
        let stem = &word[..word.len() - 1];
        let es_stem = word.strip_suffix("es");
        if is_verb_stem(stem) || es_stem.is_some_and(is_verb_stem) {
            return PosTag::VBZ;
        }
        return PosTag::NNS;
    }
    PosTag::NN
}

pub fn pos_tag<S: AsRef<str>>(tokens: &[S]) -> Vec<Token> {
    tokens
        .iter()
        .map(|t| {
            let text = t.as_ref().to_string();
            let pos = tag_word(&text);
            Token { text, pos }
        })
        .collect()
}

/// Longest NP starting at `i`: (DT)? (JJ)* (NN|NNS)+. Returns its end.
fn match_np(tokens: &[Token], i: usize) -> Option<usize> {
    let mut j = i;
    if tokens.get(j).is_some_and(|t| t.pos == PosTag::DT) {
        j += 1;
    }
    while tokens.get(j).is_some_and(|t| t.pos == PosTag::JJ) {
        j += 1;
    }
    let nouns_start = j;
    while tokens.get(j).is_some_and(|t| t.pos.is_noun()) {
        j += 1;
    }
    (j > nouns_start).then_some(j)
}

fn match_vp(tokens: &[Token], i: usize) -> usize {
    let mut j = i;
    while tokens.get(j).is_some_and(|t| t.pos.is_verb()) {
        j += 1;
    }
    j
}

fn governed_by_preposition(tokens: &[Token], start: usize) -> bool {
    start > 0 && PREPOSITIONS.contains(&tokens[start - 1].text.as_str())
}

/// Greedy left-to-right longest-match chunking into NP and NP_VP spans.
pub fn chunk_phrases(tokens: &[Token]) -> Vec<PhraseSpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let Some(np_end) = match_np(tokens, i) else {
            i += 1;
            continue;
        };
        let vp_end = match_vp(tokens, np_end);
        if vp_end > np_end {
            spans.push(PhraseSpan { start: i, end: vp_end, kind: PhraseKind::NpVp });
            i = vp_end;
        } else {
            if !governed_by_preposition(tokens, i) {
                spans.push(PhraseSpan { start: i, end: np_end, kind: PhraseKind::NP });
            }
            i = np_end;
        }
    }
    spans
}

/// Tokenize, tag and chunk a caption.
pub fn extract_phrases(caption: &str) -> Vec<ExtractedPhrase> {
    let tokens = pos_tag(&tokenize(caption));
    chunk_phrases(&tokens)
        .into_iter()
        .map(|span| ExtractedPhrase {
            text: tokens[span.start..span.end]
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" "),
            kind: span.kind,
            start: span.start,
            end: span.end,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(caption: &str) -> Vec<String> {
        extract_phrases(caption).into_iter().map(|p| p.text).collect()
    }

    fn tags(words: &[&str]) -> Vec<PosTag> {
        pos_tag(words).into_iter().map(|t| t.pos).collect()
    }

    #[test]
    fn tokenize_cases() {
        assert_eq!(tokenize("A man is speaking."), ["a", "man", "is", "speaking"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("birds, chirping"), ["birds", "chirping"]);
        assert_eq!(tokenize("  \"Dogs\" -- bark! "), ["dogs", "bark"]);
    }

    #[test]
    fn tagging() {
        use PosTag::*;
        assert_eq!(tags(&["a", "dog", "barks"]), [DT, NN, VBZ]);
        assert_eq!(tags(&["wind", "blowing"]), [NN, VBG]);
        assert_eq!(tags(&["the"]), [DT]);
        assert_eq!(tags(&["birds", "hisses", "glass", "while", "and"]), [NNS, VBZ, NN, IN, CC]);
        assert_eq!(tags(&["zorblax", "honked"]), [NN, VB]);
    }

    #[test]
    fn man_speaking_birds_chirping() {
        assert_eq!(
            texts("A man is speaking while birds are chirping in the background"),
            ["a man is speaking", "birds are chirping"]
        );
    }

    #[test]
    fn people_crowd_dog() {
        let phrases = extract_phrases("People and a small crowd are speaking while a dog barks");
        let got: Vec<_> = phrases.iter().map(|p| (p.text.as_str(), p.kind)).collect();
        assert_eq!(
            got,
            [
                ("people", PhraseKind::NP),
                ("a small crowd are speaking", PhraseKind::NpVp),
                ("a dog barks", PhraseKind::NpVp),
            ]
        );
    }

    #[test]
    fn bare_np() {
        let spans = chunk_phrases(&pos_tag(&["the", "loud", "wind"]));
        assert_eq!(spans, [PhraseSpan { start: 0, end: 3, kind: PhraseKind::NP }]);
        assert!(chunk_phrases(&pos_tag(&["and", "loudly"])).is_empty());
    }

    #[test]
    fn young_female_speaking() {
        assert_eq!(texts("A young female speaking as cats meow"), ["a young female speaking", "cats meow"]);
    }

    #[test]
    fn span_kinds_serialize() {
        let p = &extract_phrases("a dog barks")[0];
        let json = serde_json::to_string(p).unwrap();
        assert_eq!(json, r#"{"text":"a dog barks","kind":"NP_VP","start":0,"end":3}"#);
    }

    const WORDS: &[&str] = &[
        "a", "the", "dog", "dogs", "barks", "is", "are", "speaking", "loud", "small", "wind",
        "while", "and", "in", "background", "people", "man", "birds", "chirping", "loudly",
    ];

    proptest! {
        #[test]
        fn spans_are_ordered_disjoint_and_idempotent(idx in prop::collection::vec(0..WORDS.len(), 0..14)) {
            let words: Vec<&str> = idx.iter().map(|&i| WORDS[i]).collect();
            let tokens = pos_tag(&words);
            let spans = chunk_phrases(&tokens);
            let mut prev_end = 0;
            for s in &spans {
                prop_assert!(s.start >= prev_end && s.start < s.end && s.end <= words.len());
                prev_end = s.end;
                if s.kind == PhraseKind::NpVp {
                    let text = words[s.start..s.end].join(" ");
                    let again = extract_phrases(&text);
                    prop_assert_eq!(again.len(), 1);
                    prop_assert_eq!(&again[0].text, &text);
                    prop_assert_eq!(again[0].kind, PhraseKind::NpVp);
                }
            }
        }
    }
}
