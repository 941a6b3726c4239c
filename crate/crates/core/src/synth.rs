//! Synthetic punctuated corpora labeled by the mock backend's rule.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::{parse_annotation, AnnotationSet, AnnotatorKind};
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::llm::annotate_by_rule;

const EN: &[&str] = &[
    "the", "cat", "sat", "on", "mat", "we", "walked", "home", "after", "rain", "she", "said",
    "that", "it", "was", "late", "river", "light", "small", "town", "never", "again", "bread",
    "morning", "quiet", "window", "letter", "friend", "slowly", "road",
];
const FR: &[&str] = &[
    "le", "chat", "dort", "sur", "tapis", "nous", "marchons", "vers", "la", "maison", "elle",
    "dit", "que", "était", "tard", "rivière", "lumière", "petite", "ville", "jamais", "pain",
    "matin", "fenêtre", "lettre", "ami", "lentement", "où", "déjà", "très", "été",
];
const ES: &[&str] = &[
    "el", "gato", "duerme", "sobre", "alfombra", "caminamos", "hacia", "casa", "ella", "dijo",
    "que", "era", "tarde", "río", "luz", "pequeña", "ciudad", "nunca", "pan", "mañana",
    "ventana", "carta", "amigo", "despacio", "camino", "también", "años", "niño", "sí", "está",
];

pub const LANGUAGES: [&str; 3] = ["en", "fr", "es"];

fn vocabulary(lang: &str) -> &'static [&'static str] {
    match lang {
        "fr" => FR,
        "es" => ES,
        _ => EN,
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// One to three sentences of one to three clauses each, joined by commas or
/// semicolons and closed by `.`, `!` or `?`, sometimes inside a quote.
pub fn synth_text(lang: &str, rng: &mut impl Rng) -> String {
    let vocab = vocabulary(lang);
    let mut words: Vec<String> = Vec::new();
    for _ in 0..rng.random_range(1..=3) {
        let clauses = rng.random_range(1..=3);
        for c in 0..clauses {
            let len = rng.random_range(2..=6);
            for i in 0..len {
                let mut w = (*vocab.choose(rng).expect("vocabulary is not empty")).to_owned();
                if c == 0 && i == 0 {
                    w = capitalize(&w);
                }
                if i + 1 == len {
                    if c + 1 < clauses {
                        w.push(if rng.random_bool(0.8) { ',' } else { ';' });
                    } else {
                        w.push(*['.', '.', '!', '?'].choose(rng).expect("non-empty"));
                        if rng.random_bool(0.1) {
                            w.push('"');
                        }
                    }
                } else if rng.random_bool(0.03) {
                    w.push(':');
                }
                words.push(w);
            }
        }
    }
    words.join(" ")
}

/// `n` utterances cycling through en, fr and es, with ids `syn-00000`...
pub fn rule_corpus(n: usize, seed: u64) -> Result<Vec<Utterance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let lang = LANGUAGES[i % LANGUAGES.len()];
            Utterance::new(format!("syn-{i:05}"), lang, synth_text(lang, &mut rng), None)
        })
        .collect()
}

/// Labels each utterance with the mock rule.
pub fn rule_labels(corpus: &[Utterance], annotator: AnnotatorKind) -> Result<AnnotationSet> {
    let mut set = AnnotationSet::new(annotator);
    for u in corpus {
        let labels = parse_annotation(u, &annotate_by_rule(u.text()))
            .map_err(|e| Error::contract(format!("rule output for {} does not parse: {e}", u.id())))?;
        set.insert(u.id(), labels)?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::BreakLabel;

    #[test]
    fn deterministic_and_labelled() {
        let a = rule_corpus(60, 3).unwrap();
        assert_eq!(a, rule_corpus(60, 3).unwrap());
        let set = rule_labels(&a, AnnotatorKind::HumanText).unwrap();
        assert_eq!(set.len(), 60);
        let mut seen = [0usize; 3];
        for l in set.entries.values() {
            assert_eq!(*l.labels().last().unwrap(), BreakLabel::SB);
            for (i, c) in l.counts().iter().enumerate() {
                seen[i] += c;
            }
        }
        assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
    }
}
