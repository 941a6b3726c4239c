//! Break labels and the `#` / `/` markup.
//!
//! Every word in an utterance owns the junction that follows it, so an
//! utterance of `n` words carries exactly `n` labels, the last one being the
//! utterance-final boundary. In markup a standalone `#` after a word marks an
//! intonation phrase break (IP) and a standalone `/` a sentence boundary (SB).
//! Junctions with no marker are accent-phrase junctions (AP): the markup only
//! ever spells out pauses and sentence ends, and AP is what is left over.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;

use crate::corpus::{tokenize, Utterance};
use crate::error::{Error, Result};
use crate::scalar::{Real, Scalar};

pub const IP_MARKER: &str = "#";
pub const SB_MARKER: &str = "/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BreakLabel {
    AP,
    IP,
    SB,
}

impl BreakLabel {
    /// Fixed label order; also the argmax tie-break order.
    pub const ALL: [BreakLabel; 3] = [BreakLabel::AP, BreakLabel::IP, BreakLabel::SB];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BreakLabel::AP => "AP",
            BreakLabel::IP => "IP",
            BreakLabel::SB => "SB",
        }
    }

    fn marker(self) -> Option<&'static str> {
        match self {
            BreakLabel::AP => None,
            BreakLabel::IP => Some(IP_MARKER),
            BreakLabel::SB => Some(SB_MARKER),
        }
    }
}

impl fmt::Display for BreakLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BreakLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "AP" => Ok(BreakLabel::AP),
            "IP" => Ok(BreakLabel::IP),
            "SB" => Ok(BreakLabel::SB),
            other => Err(Error::validation(format!("unknown break label {other:?}"))),
        }
    }
}

/// Per-junction labels for one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<BreakLabel>", into = "Vec<BreakLabel>")]
pub struct LabelSequence(Vec<BreakLabel>);

impl LabelSequence {
    pub fn new(labels: Vec<BreakLabel>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::validation("label sequence must not be empty"));
        }
        Ok(LabelSequence(labels))
    }

    pub fn labels(&self) -> &[BreakLabel] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for l in &self.0 {
            c[l.index()] += 1;
        }
        c
    }

    fn check_matches(&self, utterance: &Utterance) -> Result<()> {
        if self.len() != utterance.word_count() {
            return Err(Error::contract(format!(
                "utterance {}: {} labels for {} words",
                utterance.id(),
                self.len(),
                utterance.word_count()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<BreakLabel>> for LabelSequence {
    type Error = Error;

    fn try_from(v: Vec<BreakLabel>) -> Result<Self> {
        LabelSequence::new(v)
    }
}

impl From<LabelSequence> for Vec<BreakLabel> {
    fn from(s: LabelSequence) -> Self {
        s.0
    }
}

/// Who produced an annotation. LLM annotations carry the digest of the
/// prompt configuration that produced them.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AnnotatorKind {
    HumanAudio,
    HumanText,
    Llm { config_digest: String },
}

impl AnnotatorKind {
    pub fn llm(config_digest: impl Into<String>) -> Result<Self> {
        let config_digest = config_digest.into();
        if config_digest.is_empty() {
            return Err(Error::validation("llm annotator requires a config digest"));
        }
        Ok(AnnotatorKind::Llm { config_digest })
    }

    pub fn tag(&self) -> String {
        self.to_string()
    }

    pub fn config_digest(&self) -> Option<&str> {
        match self {
            AnnotatorKind::Llm { config_digest } => Some(config_digest),
            _ => None,
        }
    }
}

impl fmt::Display for AnnotatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnnotatorKind::HumanAudio => f.write_str("H-A"),
            AnnotatorKind::HumanText => f.write_str("H-T"),
            AnnotatorKind::Llm { config_digest } => write!(f, "llm:{config_digest}"),
        }
    }
}

impl FromStr for AnnotatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "H-A" => Ok(AnnotatorKind::HumanAudio),
            "H-T" => Ok(AnnotatorKind::HumanText),
            _ => match s.strip_prefix("llm:") {
                Some(d) => AnnotatorKind::llm(d),
                None => Err(Error::validation(format!("unknown annotator tag {s:?}"))),
            },
        }
    }
}

impl Serialize for AnnotatorKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AnnotatorKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedUtterance {
    pub utterance_id: String,
    pub labels: LabelSequence,
    pub annotator: AnnotatorKind,
}

/// A set of labeled utterances from a single annotator.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub annotator: AnnotatorKind,
    pub entries: BTreeMap<String, LabelSequence>,
}

impl AnnotationSet {
    pub fn new(annotator: AnnotatorKind) -> Self {
        AnnotationSet {
            annotator,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, utterance_id: impl Into<String>, labels: LabelSequence) -> Result<()> {
        let id = utterance_id.into();
        if self.entries.contains_key(&id) {
            return Err(Error::validation(format!(
                "annotation set {} already has an entry for {id}",
                self.annotator
            )));
        }
        self.entries.insert(id, labels);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabelSequence> {
        self.entries.get(id)
    }

    /// Builds the set from records, resolving markup through `corpus`.
    /// Every record must carry this set's annotator tag.
    pub fn from_records(
        annotator: AnnotatorKind,
        records: &[AnnotationRecord],
        corpus: &HashMap<&str, &Utterance>,
    ) -> Result<Self> {
        let mut set = AnnotationSet::new(annotator);
        for r in records {
            if r.annotator != set.annotator {
                return Err(Error::validation(format!(
                    "record for {} has annotator {}, expected {}",
                    r.utterance_id, r.annotator, set.annotator
                )));
            }
            let labels = r.resolve_labels(corpus.get(r.utterance_id.as_str()).copied())?;
            set.insert(r.utterance_id.clone(), labels)?;
        }
        Ok(set)
    }
}

/// Why an annotated string failed validation against its source text.
#[derive(Debug, Clone, PartialEq, Eq, ThisError)]
pub enum ParseError {
    #[error("output is empty")]
    EmptyOutput,
    #[error("text altered at word {position}: expected {expected:?}, found {found:?}")]
    TextAltered {
        position: usize,
        expected: Option<String>,
        found: Option<String>,
    },
    #[error("{missing} source word(s) missing from the output")]
    MissingWord { missing: usize },
    #[error("misplaced marker at token {position}: {reason}")]
    MisplacedMarker { position: usize, reason: MarkerFault },
    #[error("unknown symbol {symbol:?} at token {position}")]
    UnknownSymbol { position: usize, symbol: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerFault {
    BeforeFirstWord,
    Consecutive,
    Attached,
}

impl fmt::Display for MarkerFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarkerFault::BeforeFirstWord => "marker before the first word",
            MarkerFault::Consecutive => "two consecutive markers",
            MarkerFault::Attached => "marker attached to a word",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    EmptyOutput,
    TextAltered,
    MissingWord,
    MisplacedMarker,
    UnknownSymbol,
}

impl ParseError {
    pub fn kind(&self) -> FailureKind {
        match self {
            ParseError::EmptyOutput => FailureKind::EmptyOutput,
            ParseError::TextAltered { .. } => FailureKind::TextAltered,
            ParseError::MissingWord { .. } => FailureKind::MissingWord,
            ParseError::MisplacedMarker { .. } => FailureKind::MisplacedMarker,
            ParseError::UnknownSymbol { .. } => FailureKind::UnknownSymbol,
        }
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureKind::EmptyOutput => "empty_output",
            FailureKind::TextAltered => "text_altered",
            FailureKind::MissingWord => "missing_word",
            FailureKind::MisplacedMarker => "misplaced_marker",
            FailureKind::UnknownSymbol => "unknown_symbol",
        })
    }
}

/// Tokens rejected as [`ParseError::UnknownSymbol`] when they appear where a
/// source word was expected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseOptions {
    /// Exact tokens that are always illegal, e.g. `<break>`.
    pub illegal_tokens: Vec<String>,
    /// Treat any token made only of these characters (other than the two
    /// markers themselves) as an unknown symbol, e.g. `##`, `//`, `|`.
    pub symbol_chars: String,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            illegal_tokens: vec!["<break>".into(), "<pause>".into(), "<sb>".into()],
            symbol_chars: "#/|\\".into(),
        }
    }
}

impl ParseOptions {
    fn is_illegal(&self, token: &str) -> bool {
        self.illegal_tokens.iter().any(|t| t == token)
            || (!token.is_empty() && token.chars().all(|c| self.symbol_chars.contains(c)))
    }
}

fn marker_label(token: &str) -> Option<BreakLabel> {
    match token {
        IP_MARKER => Some(BreakLabel::IP),
        SB_MARKER => Some(BreakLabel::SB),
        _ => None,
    }
}

/// Parses markup with the default [`ParseOptions`].
pub fn parse_annotation(
    utterance: &Utterance,
    annotated: &str,
) -> std::result::Result<LabelSequence, ParseError> {
    parse_annotation_with(utterance, annotated, &ParseOptions::default())
}

pub fn parse_annotation_with(
    utterance: &Utterance,
    annotated: &str,
    options: &ParseOptions,
) -> std::result::Result<LabelSequence, ParseError> {
    let words = utterance.words();
    let tokens = tokenize(annotated);
    if tokens.is_empty() {
        return Err(ParseError::EmptyOutput);
    }

    let mut labels = vec![BreakLabel::AP; words.len()];
    let mut next_word = 0usize;
    let mut after_marker = false;

    for (pos, &tok) in tokens.iter().enumerate() {
        if let Some(label) = marker_label(tok) {
            if next_word == 0 {
                return Err(ParseError::MisplacedMarker {
                    position: pos,
                    reason: MarkerFault::BeforeFirstWord,
                });
            }
            if after_marker {
                return Err(ParseError::MisplacedMarker {
                    position: pos,
                    reason: MarkerFault::Consecutive,
                });
            }
            labels[next_word - 1] = label;
            after_marker = true;
            continue;
        }

        let expected = words.get(next_word).map(String::as_str);
        if expected == Some(tok) {
            next_word += 1;
            after_marker = false;
            continue;
        }
        if options.is_illegal(tok) {
            return Err(ParseError::UnknownSymbol {
                position: pos,
                symbol: tok.to_owned(),
            });
        }
        if let Some(exp) = expected {
            if strip_attached_markers(tok) == exp {
                return Err(ParseError::MisplacedMarker {
                    position: pos,
                    reason: MarkerFault::Attached,
                });
            }
        }
        return Err(classify_alteration(words, &tokens, next_word));
    }

    if next_word < words.len() {
        return Err(ParseError::MissingWord {
            missing: words.len() - next_word,
        });
    }
    Ok(LabelSequence(labels))
}

fn strip_attached_markers(tok: &str) -> &str {
    tok.trim_start_matches(['#', '/']).trim_end_matches(['#', '/'])
}

/// Distinguishes dropped words from any other edit of the word sequence.
fn classify_alteration(words: &[String], tokens: &[&str], position: usize) -> ParseError {
    let produced: Vec<&str> = tokens
        .iter()
        .copied()
        .filter(|t| marker_label(t).is_none())
        .collect();
    if produced.len() < words.len() && is_subsequence(&produced, words) {
        return ParseError::MissingWord {
            missing: words.len() - produced.len(),
        };
    }
    ParseError::TextAltered {
        position,
        expected: words.get(position).cloned(),
        found: produced.get(position).map(|s| (*s).to_owned()),
    }
}

fn is_subsequence(needle: &[&str], haystack: &[String]) -> bool {
    let mut it = haystack.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

/// Inverse of [`parse_annotation`]: words separated by single spaces with a
/// standalone marker after every IP or SB junction.
pub fn render_annotation(utterance: &Utterance, labels: &LabelSequence) -> Result<String> {
    labels.check_matches(utterance)?;
    let mut out = String::with_capacity(utterance.text().len() + labels.len() * 2);
    for (i, (word, label)) in utterance.words().iter().zip(labels.labels()).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(word);
        if let Some(m) = label.marker() {
            out.push(' ');
            out.push_str(m);
        }
    }
    Ok(out)
}

/// Mean and population standard deviation of the per-utterance label
/// percentages, in percent units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhrasingStats<T> {
    pub mean: [T; 3],
    pub std_dev: [T; 3],
    pub utterance_count: usize,
}

impl<T: Scalar> PhrasingStats<T> {
    pub fn mean_of(&self, label: BreakLabel) -> T {
        self.mean[label.index()]
    }

    pub fn std_of(&self, label: BreakLabel) -> T {
        self.std_dev[label.index()]
    }
}

pub fn phrasing_stats<T: Real>(set: &AnnotationSet) -> Result<PhrasingStats<T>> {
    phrasing_stats_of(set.entries.values())
}

pub fn phrasing_stats_of<'a, T: Real>(
    sequences: impl IntoIterator<Item = &'a LabelSequence>,
) -> Result<PhrasingStats<T>> {
    let percentages: Vec<[T; 3]> = sequences
        .into_iter()
        .map(|seq| {
            let c = seq.counts();
            c.map(|k| T::ratio(k, seq.len()) * T::hundred())
        })
        .collect();
    if percentages.is_empty() {
        return Err(Error::validation("phrasing statistics need at least one utterance"));
    }
    let n = T::from_count(percentages.len());
    let mut mean = [T::zero(); 3];
    for p in &percentages {
        for (m, v) in mean.iter_mut().zip(p) {
            *m = *m + *v;
        }
    }
    let mean = mean.map(|s| s / n);
    let mut var = [T::zero(); 3];
    for p in &percentages {
        for j in 0..3 {
            let d = p[j] - mean[j];
            var[j] = var[j] + d * d;
        }
    }
    Ok(PhrasingStats {
        mean,
        std_dev: var.map(|v| (v / n).sqrt()),
        utterance_count: percentages.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationFailure {
    pub utterance_id: String,
    pub kind: FailureKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub total_outputs: usize,
    pub passed: usize,
    pub failures: Vec<ValidationFailure>,
    pub failure_counts: BTreeMap<FailureKind, usize>,
    /// Passing outputs whose final junction is not a sentence boundary.
    pub missing_final_boundary: usize,
    pub pass_rate: f64,
}

impl ValidationReport {
    pub fn count_of(&self, kind: FailureKind) -> usize {
        self.failure_counts.get(&kind).copied().unwrap_or(0)
    }

    /// Fixed-width table for terminal output.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<20} {:>8}\n", "outputs", self.total_outputs));
        s.push_str(&format!("{:<20} {:>8}\n", "passed", self.passed));
        for (kind, n) in &self.failure_counts {
            s.push_str(&format!("{:<20} {:>8}\n", kind.to_string(), n));
        }
        s.push_str(&format!(
            "{:<20} {:>8}\n",
            "missing_final_sb", self.missing_final_boundary
        ));
        s.push_str(&format!("{:<20} {:>8.2}\n", "pass_rate", self.pass_rate));
        s
    }
}

/// Output of [`pass_rate`]: the report plus the labels of every passing output.
#[derive(Debug, Clone)]
pub struct ValidatedOutputs {
    pub report: ValidationReport,
    pub parsed: Vec<Option<LabelSequence>>,
}

pub fn pass_rate(utterances: &[Utterance], raw_outputs: &[String]) -> Result<ValidationReport> {
    Ok(validate_outputs(utterances, raw_outputs, &ParseOptions::default())?.report)
}

pub fn validate_outputs(
    utterances: &[Utterance],
    raw_outputs: &[String],
    options: &ParseOptions,
) -> Result<ValidatedOutputs> {
    if utterances.len() != raw_outputs.len() {
        return Err(Error::contract(format!(
            "{} utterances but {} outputs",
            utterances.len(),
            raw_outputs.len()
        )));
    }
    if raw_outputs.is_empty() {
        return Err(Error::validation("no outputs to validate"));
    }
    let mut failures = Vec::new();
    let mut failure_counts = BTreeMap::new();
    let mut parsed = Vec::with_capacity(raw_outputs.len());
    let mut missing_final_boundary = 0;
    for (u, out) in utterances.iter().zip(raw_outputs) {
        match parse_annotation_with(u, out, options) {
            Ok(labels) => {
                if labels.labels().last() != Some(&BreakLabel::SB) {
                    missing_final_boundary += 1;
                }
                parsed.push(Some(labels));
            }
            Err(e) => {
                *failure_counts.entry(e.kind()).or_insert(0) += 1;
                failures.push(ValidationFailure {
                    utterance_id: u.id().to_owned(),
                    kind: e.kind(),
                    detail: e.to_string(),
                });
                parsed.push(None);
            }
        }
    }
    let total = raw_outputs.len();
    let passed = total - failures.len();
    Ok(ValidatedOutputs {
        report: ValidationReport {
            total_outputs: total,
            passed,
            failures,
            failure_counts,
            missing_final_boundary,
            pass_rate: 100.0 * passed as f64 / total as f64,
        },
        parsed,
    })
}

/// One line of an annotation file. Readers accept `annotated`, `labels` or
/// both; writers always emit both, plus the utterance text and language so
/// the file can serve as a few-shot example pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub utterance_id: String,
    pub annotator: AnnotatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotated: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelSequence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl AnnotationRecord {
    pub fn new(utterance: &Utterance, labels: LabelSequence, annotator: AnnotatorKind) -> Result<Self> {
        let annotated = render_annotation(utterance, &labels)?;
        Ok(AnnotationRecord {
            utterance_id: utterance.id().to_owned(),
            annotator,
            annotated: Some(annotated),
            labels: Some(labels),
            language: Some(utterance.language().to_owned()),
            text: Some(utterance.text().to_owned()),
        })
    }

    /// The utterance this record refers to: looked up in the corpus when
    /// available, otherwise rebuilt from the embedded text and language.
    pub fn utterance(&self, corpus: Option<&Utterance>) -> Result<Utterance> {
        if let Some(u) = corpus {
            return Ok(u.clone());
        }
        match (&self.text, &self.language) {
            (Some(text), Some(lang)) => {
                Utterance::new(self.utterance_id.clone(), lang.clone(), text.clone(), None)
            }
            _ => Err(Error::validation(format!(
                "record {} has no text/language and is not in the corpus",
                self.utterance_id
            ))),
        }
    }

    /// Labels from the record, checked against the utterance when one is known.
    /// When both fields are present they must agree.
    pub fn resolve_labels(&self, corpus: Option<&Utterance>) -> Result<LabelSequence> {
        let utt = self.utterance(corpus).ok();
        let from_markup = match (&self.annotated, &utt) {
            (Some(markup), Some(u)) => Some(parse_annotation(u, markup).map_err(|e| {
                Error::validation(format!("record {}: {e}", self.utterance_id))
            })?),
            _ => None,
        };
        let labels = match (from_markup, &self.labels) {
            (Some(parsed), Some(given)) if &parsed != given => {
                return Err(Error::validation(format!(
                    "record {}: `annotated` and `labels` disagree",
                    self.utterance_id
                )))
            }
            (Some(parsed), _) => parsed,
            (None, Some(given)) => given.clone(),
            (None, None) => {
                return Err(Error::validation(format!(
                    "record {}: needs `labels`, or `annotated` with a known utterance",
                    self.utterance_id
                )))
            }
        };
        if let Some(u) = &utt {
            labels.check_matches(u).map_err(|e| Error::validation(e.to_string()))?;
        }
        Ok(labels)
    }
}

pub fn read_annotation_records(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_annotation_records(path: impl AsRef<Path>, records: &[AnnotationRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r)?);
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Loads an annotation file and groups it into one set per annotator.
pub fn load_annotation_sets(
    path: impl AsRef<Path>,
    corpus: &[Utterance],
) -> Result<Vec<AnnotationSet>> {
    let records = read_annotation_records(path)?;
    let index: HashMap<&str, &Utterance> = corpus.iter().map(|u| (u.id(), u)).collect();
    let mut grouped: BTreeMap<AnnotatorKind, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.annotator.clone()).or_default().push(r);
    }
    grouped
        .into_iter()
        .map(|(kind, recs)| AnnotationSet::from_records(kind, &recs, &index))
        .collect()
}

/// Loads an annotation file that must contain exactly one annotator.
pub fn load_annotation_set(path: impl AsRef<Path>, corpus: &[Utterance]) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let mut sets = load_annotation_sets(path, corpus)?;
    match sets.len() {
        1 => Ok(sets.pop().expect("one set")),
        0 => Err(Error::validation(format!("{} has no annotations", path.display()))),
        n => Err(Error::validation(format!(
            "{} mixes {n} annotators; expected one",
            path.display()
        ))),
    }
}
