//! Prompt construction: persona system prompt, few-shot example selection
//! and the task prompt that wraps the target utterance.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{parse_annotation, read_annotation_records, render_annotation};
use crate::corpus::Utterance;
use crate::digest::FieldHasher;
use crate::error::{Error, Result};

pub const DEFAULT_MODEL_ID: &str = "gpt-4o-mini-2024-07-18";
pub const TARGET_BEGIN: &str = "<<<BEGIN TEXT>>>";
pub const TARGET_END: &str = "<<<END TEXT>>>";
/// Total number of demonstrations in every cross-lingual preset.
pub const PRESET_TOTAL: usize = 16;

const DEFAULT_TEMPLATE: &str = include_str!("../templates/default.txt");

/// Example counts per language code.
pub type Mix = BTreeMap<String, usize>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Persona {
    Monolingual(String),
    Multilingual,
}

impl Persona {
    fn describe(&self) -> String {
        match self {
            Persona::Monolingual(lang) => {
                format!("an expert {} linguist", language_name(lang))
            }
            Persona::Multilingual => "a multilingual expert linguist".to_owned(),
        }
    }
}

impl fmt::Display for Persona {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Persona::Monolingual(lang) => write!(f, "monolingual:{lang}"),
            Persona::Multilingual => f.write_str("multilingual"),
        }
    }
}

impl FromStr for Persona {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "multilingual" {
            return Ok(Persona::Multilingual);
        }
        match s.strip_prefix("monolingual:") {
            Some(lang) if lang.len() == 2 => Ok(Persona::Monolingual(lang.to_owned())),
            _ => Err(Error::validation(format!(
                "persona must be `multilingual` or `monolingual:<code>`, got {s:?}"
            ))),
        }
    }
}

impl Serialize for Persona {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Persona {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

pub fn language_name(code: &str) -> &str {
    match code {
        "en" => "English",
        "fr" => "French",
        "es" => "Spanish",
        "de" => "German",
        "it" => "Italian",
        "pt" => "Portuguese",
        "ko" => "Korean",
        "ja" => "Japanese",
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub persona: Persona,
    pub model_id: String,
    pub temperature: f64,
    pub top_p: f64,
    /// Language whose examples come first in the prompt.
    pub source_language: String,
    pub mix: Mix,
    pub seed: u64,
    /// Draw a fresh example set for every target instead of one per run.
    pub resample_per_target: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            persona: Persona::Monolingual("en".into()),
            model_id: DEFAULT_MODEL_ID.into(),
            temperature: 0.0,
            top_p: 1.0,
            source_language: "en".into(),
            mix: Mix::new(),
            seed: 42,
            resample_per_target: false,
        }
    }
}

impl PromptConfig {
    /// Monolingual configuration with `k` examples in `language`.
    pub fn few_shot(language: &str, k: usize) -> Self {
        let mut mix = Mix::new();
        if k > 0 {
            mix.insert(language.to_owned(), k);
        }
        PromptConfig {
            persona: Persona::Monolingual(language.to_owned()),
            source_language: language.to_owned(),
            mix,
            ..Default::default()
        }
    }

    /// Cross-lingual configuration: multilingual persona with a preset mix.
    pub fn cross_lingual(source: &str, mix: Mix) -> Self {
        PromptConfig {
            persona: Persona::Multilingual,
            source_language: source.to_owned(),
            mix,
            ..Default::default()
        }
    }

    pub fn k(&self) -> usize {
        self.mix.values().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::validation(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::validation(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.model_id.is_empty() {
            return Err(Error::validation("model_id is empty"));
        }
        Ok(())
    }

    /// Stable digest of the configuration, the template it is rendered with
    /// and the ids of the demonstrations it selected.
    pub fn digest(&self, template: &PromptTemplate, example_ids: &[&str]) -> String {
        let mut h = FieldHasher::new("prompt-config/v1");
        h.str(&self.persona.to_string())
            .str(&self.model_id)
            .f64(self.temperature)
            .f64(self.top_p)
            .str(&self.source_language)
            .u64(self.mix.len() as u64);
        for (lang, n) in &self.mix {
            h.str(lang).u64(*n as u64);
        }
        h.u64(self.seed)
            .u64(self.resample_per_target as u64)
            .str(&template.system)
            .str(&template.task)
            .u64(example_ids.len() as u64);
        for id in example_ids {
            h.str(id);
        }
        h.finish_hex()[..16].to_owned()
    }

    /// Human-readable setting name: `ZS`, `FS,k=8` or `en 4 + fr 12`.
    pub fn setting_label(&self) -> String {
        if self.persona == Persona::Multilingual {
            return mix_label(&self.source_language, &self.mix);
        }
        match self.k() {
            0 => "ZS".to_owned(),
            k => format!("FS,k={k}"),
        }
    }
}

pub fn mix_label(source: &str, mix: &Mix) -> String {
    let ordered = ordered_languages(source, mix);
    ordered
        .iter()
        .map(|l| format!("{l} {}", mix.get(*l).copied().unwrap_or(0)))
        .collect::<Vec<_>>()
        .join(" + ")
}

/// Languages in prompt order: the source language first, then the rest in
/// code order.
fn ordered_languages<'a>(source: &'a str, mix: &'a Mix) -> Vec<&'a str> {
    let mut out = Vec::with_capacity(mix.len());
    if mix.contains_key(source) {
        out.push(source);
    }
    out.extend(mix.keys().map(String::as_str).filter(|l| *l != source));
    out
}

/// A validated demonstration pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub id: String,
    pub language: String,
    pub text: String,
    pub annotated: String,
}

impl FewShotExample {
    pub fn new(
        id: impl Into<String>,
        language: impl Into<String>,
        text: impl Into<String>,
        annotated: impl Into<String>,
    ) -> Result<Self> {
        let ex = FewShotExample {
            id: id.into(),
            language: language.into(),
            text: text.into(),
            annotated: annotated.into(),
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        let u = Utterance::new(self.id.clone(), self.language.clone(), self.text.clone(), None)?;
        parse_annotation(&u, &self.annotated)
            .map_err(|e| Error::validation(format!("few-shot example {}: {e}", self.id)))?;
        for field in [&self.text, &self.annotated] {
            if field.contains(TARGET_BEGIN) || field.contains(TARGET_END) {
                return Err(Error::validation(format!(
                    "few-shot example {} contains a target delimiter",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Loads a demonstration pool from an annotation file. Records missing their
/// text are resolved against `corpus`.
pub fn load_example_pool(path: impl AsRef<Path>, corpus: &[Utterance]) -> Result<Vec<FewShotExample>> {
    let index: HashMap<&str, &Utterance> = corpus.iter().map(|u| (u.id(), u)).collect();
    read_annotation_records(path)?
        .iter()
        .map(|r| {
            let u = r.utterance(index.get(r.utterance_id.as_str()).copied())?;
            let labels = r.resolve_labels(Some(&u))?;
            let annotated = render_annotation(&u, &labels)?;
            FewShotExample::new(u.id(), u.language(), u.text(), annotated)
        })
        .collect()
}

/// Picks `mix[lang]` examples per language by seeded sampling without
/// replacement. Source-language examples come first, then the other
/// languages in code order; each group keeps its sampling order.
pub fn select_examples(
    pool: &[FewShotExample],
    mix: &Mix,
    source_language: &str,
    seed: u64,
) -> Result<Vec<FewShotExample>> {
    let mut selected = Vec::with_capacity(mix.values().sum());
    for lang in ordered_languages(source_language, mix) {
        let want = mix[lang];
        if want == 0 {
            continue;
        }
        let mut candidates: Vec<&FewShotExample> =
            pool.iter().filter(|e| e.language == lang).collect();
        if candidates.len() < want {
            return Err(Error::validation(format!(
                "example pool has {} {lang:?} examples, {want} requested (short by {})",
                candidates.len(),
                want - candidates.len()
            )));
        }
        let mut seed_bytes = [0u8; 32];
        let digest = FieldHasher::new("example-selection/v1").u64(seed).str(lang).finish_hex();
        hex::decode_to_slice(&digest, &mut seed_bytes).expect("sha256 hex");
        let mut rng = ChaCha8Rng::from_seed(seed_bytes);
        let (chosen, _) = candidates.partial_shuffle(&mut rng, want);
        for ex in chosen.iter() {
            ex.validate()?;
            selected.push((*ex).clone());
        }
    }
    Ok(selected)
}

/// Seed used when examples are re-drawn for each target.
pub fn per_target_seed(seed: u64, target_id: &str) -> u64 {
    let digest = FieldHasher::new("per-target-seed/v1").u64(seed).str(target_id).finish_hex();
    u64::from_str_radix(&digest[..16], 16).expect("hex")
}

/// The five cross-lingual presets, each with 16 demonstrations in total.
pub fn preset_mixes(source: &str, target: &str) -> Result<Vec<Mix>> {
    if source == target {
        return Err(Error::validation("source and target languages must differ"));
    }
    Ok([0, 4, 8, 12, 16]
        .into_iter()
        .map(|n_source| {
            let mut m = Mix::new();
            if n_source > 0 {
                m.insert(source.to_owned(), n_source);
            }
            m.insert(target.to_owned(), PRESET_TOTAL - n_source);
            m
        })
        .collect())
}

/// System and task templates. `{{persona}}` is substituted into the system
/// part; `{{examples}}` and `{{target}}` into the task part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptTemplate {
    pub system: String,
    pub task: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::parse(DEFAULT_TEMPLATE).expect("bundled template is valid")
    }
}

impl PromptTemplate {
    /// Parses a template file with a `[system]` section followed by a
    /// `[task]` section.
    pub fn parse(content: &str) -> Result<Self> {
        let body = content
            .strip_prefix("[system]\n")
            .ok_or_else(|| Error::validation("template must start with a [system] line"))?;
        let (system, task) = body
            .split_once("\n[task]\n")
            .ok_or_else(|| Error::validation("template is missing a [task] section"))?;
        let t = PromptTemplate {
            system: system.trim_end().to_owned(),
            task: task.trim_end().to_owned(),
        };
        for (part, name) in [(&t.system, "{{persona}}"), (&t.task, "{{examples}}"), (&t.task, "{{target}}")] {
            if !part.contains(name) {
                return Err(Error::validation(format!("template is missing {name}")));
            }
        }
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

pub fn build_system_prompt(template: &PromptTemplate, config: &PromptConfig) -> String {
    template.system.replace("{{persona}}", &config.persona.describe())
}

pub fn build_task_prompt(
    template: &PromptTemplate,
    target: &Utterance,
    examples: &[FewShotExample],
) -> Result<String> {
    if target.text().contains(TARGET_BEGIN) || target.text().contains(TARGET_END) {
        return Err(Error::validation(format!(
            "utterance {} contains a target delimiter",
            target.id()
        )));
    }
    let mut block = String::new();
    for (i, ex) in examples.iter().enumerate() {
        block.push_str(&format!(
            "Example {}\nInput: {}\nOutput: {}\n\n",
            i + 1,
            ex.text,
            ex.annotated
        ));
    }
    let target_block = format!("{TARGET_BEGIN}\n{}\n{TARGET_END}", target.text());
    Ok(template
        .task
        .replace("{{examples}}", &block)
        .replace("{{target}}", &target_block))
}

/// Pulls the target text back out of a task prompt.
pub fn extract_target(user_message: &str) -> Option<&str> {
    let start = user_message.rfind(TARGET_BEGIN)? + TARGET_BEGIN.len();
    let rest = &user_message[start..];
    let end = rest.find(TARGET_END)?;
    Some(rest[..end].trim())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptBundle {
    pub system_message: String,
    pub user_message: String,
    /// Digest of the configuration, demonstrations and target utterance.
    pub config_digest: String,
}

pub fn build_prompt(
    template: &PromptTemplate,
    config: &PromptConfig,
    target: &Utterance,
    examples: &[FewShotExample],
) -> Result<PromptBundle> {
    config.validate()?;
    let ids: Vec<&str> = examples.iter().map(|e| e.id.as_str()).collect();
    let config_digest = FieldHasher::new("prompt-bundle/v1")
        .str(&config.digest(template, &ids))
        .str(target.id())
        .finish_hex();
    Ok(PromptBundle {
        system_message: build_system_prompt(template, config),
        user_message: build_task_prompt(template, target, examples)?,
        config_digest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool() -> Vec<FewShotExample> {
        let mut p = Vec::new();
        for lang in ["en", "fr", "es"] {
            for i in 0..20 {
                p.push(
                    FewShotExample::new(
                        format!("{lang}-{i}"),
                        lang,
                        format!("w{i} x{i}, y{i}."),
                        format!("w{i} x{i}, # y{i}. /"),
                    )
                    .unwrap(),
                );
            }
        }
        p
    }

    fn mix(pairs: &[(&str, usize)]) -> Mix {
        pairs.iter().map(|(l, n)| (l.to_string(), *n)).collect()
    }

    #[test]
    fn system_prompt_personas() {
        let t = PromptTemplate::default();
        let en = build_system_prompt(&t, &PromptConfig::few_shot("en", 0));
        assert!(en.contains("expert English linguist"));
        assert!(en.contains("\"#\""));
        assert!(en.contains("\"/\""));
        assert!(en.contains("speak it aloud"));
        assert!(en.contains("Never alter the original text"));
        let multi = build_system_prompt(&t, &PromptConfig::cross_lingual("en", mix(&[("fr", 16)])));
        assert!(multi.contains("multilingual expert"));
        assert_eq!(en, build_system_prompt(&t, &PromptConfig::few_shot("en", 0)));
    }

    #[test]
    fn cross_lingual_selection_puts_source_first() {
        let sel = select_examples(&pool(), &mix(&[("en", 8), ("fr", 8)]), "en", 1).unwrap();
        assert_eq!(sel.len(), 16);
        assert!(sel[..8].iter().all(|e| e.language == "en"));
        assert!(sel[8..].iter().all(|e| e.language == "fr"));
        // Source first even when its code sorts later.
        let sel = select_examples(&pool(), &mix(&[("es", 4), ("fr", 12)]), "fr", 1).unwrap();
        assert!(sel[..12].iter().all(|e| e.language == "fr"));
    }

    #[test]
    fn source_only_mix() {
        let sel = select_examples(&pool(), &mix(&[("en", 16), ("fr", 0)]), "en", 1).unwrap();
        assert_eq!(sel.len(), 16);
        assert!(sel.iter().all(|e| e.language == "en"));
    }

    #[test]
    fn short_pool_names_language_and_shortfall() {
        let p: Vec<_> = pool().into_iter().filter(|e| e.language != "fr" || e.id.as_str() < "fr-2").collect();
        let fr = p.iter().filter(|e| e.language == "fr").count();
        let err = select_examples(&p, &mix(&[("fr", fr + 4)]), "en", 1).unwrap_err().to_string();
        assert!(err.contains("\"fr\""), "{err}");
        assert!(err.contains("short by 4"), "{err}");
    }

    #[test]
    fn selection_is_seeded() {
        let a = select_examples(&pool(), &mix(&[("en", 5)]), "en", 9).unwrap();
        let b = select_examples(&pool(), &mix(&[("en", 5)]), "en", 9).unwrap();
        let c = select_examples(&pool(), &mix(&[("en", 5)]), "en", 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let ids: std::collections::HashSet<_> = a.iter().map(|e| &e.id).collect();
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn invalid_example_rejected() {
        assert!(FewShotExample::new("x", "en", "a b", "a c /").is_err());
        assert!(FewShotExample::new("x", "en", "a b", "a b /").is_ok());
    }

    #[test]
    fn task_prompt_zero_and_two_shot() {
        let t = PromptTemplate::default();
        let target = Utterance::new("t", "en", "He said \"hi\", then left.", None).unwrap();
        let zs = build_task_prompt(&t, &target, &[]).unwrap();
        assert!(!zs.contains("Example 1"));
        assert_eq!(extract_target(&zs), Some(target.text()));

        let ex = &pool()[..2];
        let fs = build_task_prompt(&t, &target, ex).unwrap();
        assert!(fs.contains("Example 1\nInput: w0 x0, y0.\nOutput: w0 x0, # y0. /"));
        assert!(fs.contains("Example 2"));
        assert!(!fs.contains("Example 3"));
        assert!(fs.find("Example 2").unwrap() < fs.find(TARGET_BEGIN).unwrap());
        assert_eq!(fs, build_task_prompt(&t, &target, ex).unwrap());
        assert_eq!(extract_target(&fs), Some(target.text()));
    }

    #[test]
    fn delimiter_in_target_rejected() {
        let t = PromptTemplate::default();
        let target = Utterance::new("t", "en", format!("a {TARGET_END} b"), None).unwrap();
        assert!(build_task_prompt(&t, &target, &[]).is_err());
    }

    #[test]
    fn presets_match_cross_lingual_table() {
        let p = preset_mixes("en", "fr").unwrap();
        let expected = [
            mix(&[("fr", 16)]),
            mix(&[("en", 4), ("fr", 12)]),
            mix(&[("en", 8), ("fr", 8)]),
            mix(&[("en", 12), ("fr", 4)]),
            mix(&[("en", 16), ("fr", 0)]),
        ];
        assert_eq!(p, expected);
        assert!(p.iter().all(|m| m.values().sum::<usize>() == PRESET_TOTAL));
        let es = preset_mixes("en", "es").unwrap();
        assert_eq!(es[1], mix(&[("en", 4), ("es", 12)]));
        assert!(preset_mixes("en", "en").is_err());
        assert_eq!(mix_label("en", &p[1]), "en 4 + fr 12");
    }

    #[test]
    fn digests_are_stable_and_sensitive() {
        let t = PromptTemplate::default();
        let c = PromptConfig::few_shot("en", 2);
        assert_eq!(c.digest(&t, &["a", "b"]), c.digest(&t, &["a", "b"]));
        assert_ne!(c.digest(&t, &["a", "b"]), c.digest(&t, &["ab"]));
        let mut c2 = c.clone();
        c2.seed = 7;
        assert_ne!(c.digest(&t, &[]), c2.digest(&t, &[]));
    }

    #[test]
    fn config_validation_and_toml_shape() {
        let mut c = PromptConfig::default();
        assert!(c.validate().is_ok());
        c.top_p = 0.0;
        assert!(c.validate().is_err());
        c.top_p = 1.0;
        c.temperature = -0.1;
        assert!(c.validate().is_err());
        let json = serde_json::to_string(&PromptConfig::cross_lingual("en", mix(&[("fr", 16)]))).unwrap();
        assert!(json.contains("\"persona\":\"multilingual\""));
        assert!("monolingual:fr".parse::<Persona>().is_ok());
        assert!("bilingual".parse::<Persona>().is_err());
    }

    #[test]
    fn template_parse_requires_placeholders() {
        assert!(PromptTemplate::parse("[system]\nYou are {{persona}}.\n[task]\n{{examples}}{{target}}\n").is_ok());
        assert!(PromptTemplate::parse("[system]\nYou are.\n[task]\n{{examples}}{{target}}\n").is_err());
        assert!(PromptTemplate::parse("no sections").is_err());
    }

    #[test]
    fn setting_labels() {
        assert_eq!(PromptConfig::few_shot("en", 0).setting_label(), "ZS");
        assert_eq!(PromptConfig::few_shot("en", 4).setting_label(), "FS,k=4");
    }
}
