//! Utterance corpora: loading, tokenization and reproducible splits.
//!
//! A corpus file holds one JSON object per line with `id`, `language`,
//! `text` and an optional `source`. Splits shuffle with ChaCha8 seeded through
//! `SeedableRng::seed_from_u64`, followed by a Fisher-Yates pass and a
//! contiguous partition, so a given `(corpus, ratios, seed)` always yields the
//! same lists.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};

/// Break markers that may never appear as standalone tokens in raw text.
pub const RESERVED_MARKERS: [&str; 2] = ["#", "/"];

/// Splits on runs of whitespace; punctuation stays attached to its word.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    tokenize(text).join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "UtteranceRecord", into = "UtteranceRecord")]
pub struct Utterance {
    id: String,
    language: String,
    text: String,
    source: Option<String>,
    words: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UtteranceRecord {
    id: String,
    language: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

impl TryFrom<UtteranceRecord> for Utterance {
    type Error = Error;

    fn try_from(r: UtteranceRecord) -> Result<Self> {
        Utterance::new(r.id, r.language, r.text, r.source)
    }
}

impl From<Utterance> for UtteranceRecord {
    fn from(u: Utterance) -> Self {
        UtteranceRecord {
            id: u.id,
            language: u.language,
            text: u.text,
            source: u.source,
        }
    }
}

impl Utterance {
    pub fn new(
        id: impl Into<String>,
        language: impl Into<String>,
        text: impl Into<String>,
        source: Option<String>,
    ) -> Result<Self> {
        let id = id.into();
        let language = language.into();
        let text = text.into();
        if id.is_empty() {
            return Err(Error::validation("utterance id is empty"));
        }
        if !is_language_code(&language) {
            return Err(Error::validation(format!(
                "utterance {id}: language {language:?} is not a lowercase two-letter code"
            )));
        }
        let words: Vec<String> = tokenize(&text).into_iter().map(str::to_owned).collect();
        if words.is_empty() {
            return Err(Error::validation(format!("utterance {id}: text is empty")));
        }
        if let Some(tok) = words.iter().find(|w| RESERVED_MARKERS.contains(&w.as_str())) {
            return Err(Error::validation(format!(
                "utterance {id}: text contains reserved break symbol {tok:?} as a standalone token"
            )));
        }
        Ok(Utterance {
            id,
            language,
            text,
            source,
            words,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn source(&self) -> Option<&str> {
        self.source.as_deref()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }
}

fn is_language_code(s: &str) -> bool {
    s.len() == 2 && s.bytes().all(|b| b.is_ascii_lowercase())
}

/// Parses corpus records from line-delimited JSON. Blank lines are skipped.
pub fn parse_corpus(content: &str, path: &Path) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: UtteranceRecord =
            serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        let utt = Utterance::try_from(record)?;
        if !seen.insert(utt.id.clone()) {
            return Err(Error::validation(format!(
                "duplicate utterance id {:?} at line {}",
                utt.id,
                idx + 1
            )));
        }
        out.push(utt);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&content, path)
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &[Utterance]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = String::new();
    for u in corpus {
        buf.push_str(&serde_json::to_string(u)?);
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub ratios: [f64; 3],
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub valid_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train_ids.len(), self.valid_ids.len(), self.test_ids.len())
    }

    /// Digest over the serialized split, recorded in model metadata.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("split serializes"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&content)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }
}

const RATIO_TOLERANCE: f64 = 1e-9;

/// Shuffles ids with the seeded PRNG and cuts them into train/valid/test.
///
/// Cut points are the floors of the cumulative boundaries `n * r0` and
/// `n * (r0 + r1)`: train gets the floor, validation the next block and test
/// the remainder, which keeps every list within one element of its ratio.
pub fn split_dataset(corpus: &[Utterance], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if corpus.is_empty() {
        return Err(Error::validation("cannot split an empty corpus"));
    }
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::validation(format!(
            "split ratios must be finite and non-negative, got {ratios:?}"
        )));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > RATIO_TOLERANCE {
        return Err(Error::validation(format!(
            "split ratios must sum to 1, got {total}"
        )));
    }

    let mut ids: Vec<String> = corpus.iter().map(|u| u.id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n = ids.len();
    let cut = |r: f64| ((n as f64 * r) + RATIO_TOLERANCE).floor() as usize;
    let train_end = cut(ratios[0]).min(n);
    let valid_end = cut(ratios[0] + ratios[1]).clamp(train_end, n);

    let test_ids = ids.split_off(valid_end);
    let valid_ids = ids.split_off(train_end);
    Ok(DatasetSplit {
        ratios,
        seed,
        train_ids: ids,
        valid_ids,
        test_ids,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn utt(id: &str, text: &str) -> Utterance {
        Utterance::new(id, "en", text, None).unwrap()
    }

    fn corpus(n: usize) -> Vec<Utterance> {
        (0..n).map(|i| utt(&format!("u{i:04}"), "a b c")).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("the cat sat."), vec!["the", "cat", "sat."]);
        assert_eq!(tokenize("a  b"), vec!["a", "b"]);
        assert_eq!(tokenize("Hello"), vec!["Hello"]);
    }

    #[test]
    fn load_three_lines_in_order() {
        let content = r#"{"id":"a","language":"en","text":"one two"}
{"id":"b","language":"fr","text":"trois","source":"cv"}
{"id":"c","language":"es","text":"cuatro cinco seis"}
"#;
        let c = parse_corpus(content, Path::new("x.jsonl")).unwrap();
        let ids: Vec<_> = c.iter().map(Utterance::id).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(c[1].source(), Some("cv"));
        assert_eq!(c[2].word_count(), 3);
    }

    #[test]
    fn reserved_token_names_the_utterance() {
        let content = r#"{"id":"bad-one","language":"en","text":"a # b"}"#;
        let err = parse_corpus(content, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("bad-one"));
    }

    #[test]
    fn embedded_reserved_characters_are_fine() {
        let u = utt("x", "add 3/4 cup of C# code");
        assert_eq!(u.word_count(), 6);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(parse_corpus("", Path::new("x")).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let content = "{\"id\":\"a\",\"language\":\"en\",\"text\":\"x\"}\n{not json}\n";
        match parse_corpus(content, Path::new("c.jsonl")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let content = "{\"id\":\"a\",\"language\":\"en\",\"text\":\"x\"}\n{\"id\":\"a\",\"language\":\"en\",\"text\":\"y\"}\n";
        assert!(matches!(
            parse_corpus(content, Path::new("c")),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn bad_language_and_blank_text_rejected() {
        assert!(Utterance::new("a", "EN", "x", None).is_err());
        assert!(Utterance::new("a", "eng", "x", None).is_err());
        assert!(Utterance::new("a", "en", "   ", None).is_err());
    }

    #[test]
    fn split_paper_ratios() {
        let s = split_dataset(&corpus(1000), [0.85, 0.075, 0.075], 7).unwrap();
        assert_eq!(s.sizes(), (850, 75, 75));
    }

    #[test]
    fn split_small_corpus_rounding() {
        let s = split_dataset(&corpus(10), [0.85, 0.075, 0.075], 7).unwrap();
        let (a, b, c) = s.sizes();
        assert_eq!(a + b + c, 10);
        assert!((a as f64 - 8.5).abs() <= 1.0);
        assert!((b as f64 - 0.75).abs() <= 1.0);
        assert!((c as f64 - 0.75).abs() <= 1.0);
    }

    #[test]
    fn split_rejects_bad_ratios_and_empty() {
        assert!(split_dataset(&corpus(5), [0.5, 0.5, 0.5], 1).is_err());
        assert!(split_dataset(&[], [0.8, 0.1, 0.1], 1).is_err());
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let c = corpus(200);
        let a = split_dataset(&c, [0.8, 0.1, 0.1], 3).unwrap();
        let b = split_dataset(&c, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        let d = split_dataset(&c, [0.8, 0.1, 0.1], 4).unwrap();
        assert_ne!(a.train_ids, d.train_ids);
    }

    proptest! {
        #[test]
        fn split_partitions_corpus(n in 1usize..300, a in 0u32..=100, b in 0u32..=100, seed: u64) {
            let (a, b) = (a.min(100), b.min(100 - a.min(100)));
            let ratios = [a as f64 / 100.0, b as f64 / 100.0, (100 - a - b) as f64 / 100.0];
            let c = corpus(n);
            let s = split_dataset(&c, ratios, seed).unwrap();
            let mut all: Vec<&String> = s.train_ids.iter().chain(&s.valid_ids).chain(&s.test_ids).collect();
            all.sort();
            let mut want: Vec<&String> = c.iter().map(|u| &u.id).collect();
            want.sort();
            prop_assert_eq!(all, want);
            let (x, y, z) = s.sizes();
            prop_assert!((x as f64 - n as f64 * ratios[0]).abs() <= 1.0);
            prop_assert!((y as f64 - n as f64 * ratios[1]).abs() <= 1.0);
            prop_assert!((z as f64 - n as f64 * ratios[2]).abs() <= 1.0);
        }

        #[test]
        fn tokenize_round_trips_normalized(text in "[ \\ta-zé.,!?]{0,40}") {
            let joined = tokenize(&text).join(" ");
            prop_assert_eq!(joined, normalize_whitespace(&text));
        }
    }
}
