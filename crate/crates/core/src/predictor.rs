//! Junction-level break classifier: hashed sparse features and multinomial
//! logistic regression trained by seeded SGD with L2 regularization.
//!
//! Weights are laid out label-major, `w[label * dim + feature]`. Training
//! keeps them as `scale * v` so the L2 shrink of every step is a single
//! multiplication and each update only touches the active features.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationSet, BreakLabel, LabelSequence};
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::metrics::{f1_from_counts, F1Report};
use crate::scalar::{Real, Scalar};

pub const DIM: usize = 1 << 18;
pub const MODEL_FORMAT: &str = "phrasebreak-model";
pub const MODEL_VERSION: u32 = 1;
const LABELS: usize = 3;

const TERMINAL: &[char] = &['.', '!', '?', '…', '。', '！', '？'];
const CLAUSE: &[char] = &[',', ';', '،', '、', '，', '；'];
const CLOSERS: &[char] = &['"', '\'', '»', '”', '’', ')', ']', '}'];

/// Sorted, deduplicated feature indices, all below [`DIM`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<u32>);

impl FeatureVector {
    pub fn from_names<S: AsRef<str>>(names: impl IntoIterator<Item = S>) -> Self {
        let mut idx: Vec<u32> = names.into_iter().map(|n| feature_index(n.as_ref())).collect();
        idx.sort_unstable();
        idx.dedup();
        FeatureVector(idx)
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }
}

/// 64-bit FNV-1a of the feature name, reduced modulo [`DIM`].
pub fn feature_index(name: &str) -> u32 {
    let mut h = FnvHasher::default();
    h.write(name.as_bytes());
    (h.finish() % DIM as u64) as u32
}

fn punct_class(word: &str) -> &'static str {
    let core = word.trim_end_matches(CLOSERS);
    match core.chars().last() {
        Some(c) if TERMINAL.contains(&c) => "terminal",
        Some(c) if CLAUSE.contains(&c) => "clause",
        Some(':') => "colon",
        Some('-' | '–' | '—') => "dash",
        Some(c) if c.is_alphanumeric() => "none",
        _ => "other",
    }
}

fn suffixes(prefix: &str, word: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    for k in 1..=3.min(chars.len()) {
        let s: String = chars[chars.len() - k..].iter().collect();
        out.push(format!("{prefix}{k}={s}"));
    }
}

fn is_capitalized(word: &str) -> bool {
    word.chars().find(|c| c.is_alphabetic()).is_some_and(char::is_uppercase)
}

/// Feature names of the junction after word `junction`.
pub fn feature_names(utterance: &Utterance, junction: usize) -> Vec<String> {
    let words = utterance.words();
    assert!(junction < words.len(), "junction {junction} out of range");
    let n = words.len();
    let cur = &words[junction];
    let cur_lc = cur.to_lowercase();
    let mut f = vec![
        "bias".to_owned(),
        format!("w0={cur_lc}"),
        format!("cap0={}", is_capitalized(cur)),
        format!("punct0={}", punct_class(cur)),
        format!("closer0={}", cur.ends_with(CLOSERS)),
        format!("last0={}", cur_lc.chars().last().unwrap_or(' ')),
        format!("pos={}", junction * 5 / n),
        format!("final={}", junction + 1 == n),
    ];
    suffixes("s0_", &cur_lc, &mut f);
    match words.get(junction + 1) {
        Some(next) => {
            let next_lc = next.to_lowercase();
            f.push(format!("w1={next_lc}"));
            f.push(format!("cap1={}", is_capitalized(next)));
            suffixes("s1_", &next_lc, &mut f);
        }
        None => f.push("w1=</s>".to_owned()),
    }
    f
}

pub fn featurize(utterance: &Utterance, junction: usize) -> FeatureVector {
    FeatureVector::from_names(feature_names(utterance, junction))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSplit {
    #[default]
    Validation,
    /// Selects on the test set, as the original protocol did.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    /// Which split the selection set passed to [`train`] is; recorded only.
    pub selection: SelectionSplit,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            learning_rate: 0.1,
            epochs: 30,
            l2: 1e-4,
            seed: 42,
            selection: SelectionSplit::Validation,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::validation("learning rate must be finite and non-negative"));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::validation("L2 strength must be finite and non-negative"));
        }
        if self.learning_rate * self.l2 >= 1.0 {
            return Err(Error::validation("learning rate times L2 strength must be below 1"));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    pub utterance: Utterance,
    pub labels: LabelSequence,
}

/// Pairs corpus utterances with their labels in `set`, optionally limited
/// to `ids` (in that order).
pub fn labeled(corpus: &[Utterance], set: &AnnotationSet, ids: Option<&[String]>) -> Result<Vec<LabeledUtterance>> {
    let index: HashMap<&str, &Utterance> = corpus.iter().map(|u| (u.id(), u)).collect();
    let wanted: Vec<&str> = match ids {
        Some(ids) => ids.iter().map(String::as_str).collect(),
        None => set.entries.keys().map(String::as_str).collect(),
    };
    wanted
        .into_iter()
        .map(|id| {
            let u = index
                .get(id)
                .ok_or_else(|| Error::NotFound(format!("utterance {id} is not in the corpus")))?;
            let labels = set
                .get(id)
                .ok_or_else(|| Error::NotFound(format!("no labels for {id} in {}", set.annotator)))?;
            if labels.len() != u.word_count() {
                return Err(Error::contract(format!(
                    "utterance {id}: {} labels for {} words",
                    labels.len(),
                    u.word_count()
                )));
            }
            Ok(LabeledUtterance {
                utterance: (*u).clone(),
                labels: labels.clone(),
            })
        })
        .collect()
}

/// Regularized mean cross-entropy over `samples` and its gradient, for
/// weights of any feature dimension:
/// `J(w) = (1/N) sum_i -ln softmax(W x_i)[y_i] + (l2/2) |w|^2`.
pub fn objective<T: Real>(weights: &[T], dim: usize, samples: &[(Vec<u32>, BreakLabel)], l2: T) -> (T, Vec<T>) {
    assert_eq!(weights.len(), LABELS * dim);
    let mut grad: Vec<T> = weights.iter().map(|&w| l2 * w).collect();
    let mut loss = T::zero();
    let inv_n = T::one() / T::from_count(samples.len().max(1));
    for (features, label) in samples {
        let p = softmax(scores(weights, dim, T::one(), features));
        loss = loss - p[label.index()].ln();
        for (k, pk) in p.iter().enumerate() {
            let g = (*pk - indicator(k == label.index())) * inv_n;
            for &f in features {
                let i = k * dim + f as usize;
                grad[i] = grad[i] + g;
            }
        }
    }
    let sq = weights.iter().fold(T::zero(), |acc, &w| acc + w * w);
    let half = T::one() / (T::one() + T::one());
    (loss * inv_n + half * l2 * sq, grad)
}

fn indicator<T: Scalar>(b: bool) -> T {
    if b {
        T::one()
    } else {
        T::zero()
    }
}

fn scores<T: Real>(v: &[T], dim: usize, scale: T, features: &[u32]) -> [T; LABELS] {
    let mut s = [T::zero(); LABELS];
    for (k, sk) in s.iter_mut().enumerate() {
        let row = &v[k * dim..(k + 1) * dim];
        *sk = features.iter().fold(T::zero(), |acc, &f| acc + row[f as usize]) * scale;
    }
    s
}

fn softmax<T: Real>(s: [T; LABELS]) -> [T; LABELS] {
    let max = s.iter().copied().fold(T::neg_infinity(), T::max);
    let e = s.map(|x| (x - max).exp());
    let z = e.iter().fold(T::zero(), |a, &b| a + b);
    e.map(|x| x / z)
}

/// First label with the highest score.
fn argmax<T: Real>(s: &[T; LABELS]) -> BreakLabel {
    let mut best = 0;
    for k in 1..LABELS {
        if s[k] > s[best] {
            best = k;
        }
    }
    BreakLabel::from_index(best).expect("label index in range")
}

/// Weights held as `scale * v`.
struct SgdState<T> {
    v: Vec<T>,
    scale: T,
    dim: usize,
}

impl<T: Real> SgdState<T> {
    fn new(dim: usize) -> Self {
        SgdState {
            v: vec![T::zero(); LABELS * dim],
            scale: T::one(),
            dim,
        }
    }

    /// One step on `CE(x, y) + (l2/2)|w|^2`:
    /// `w <- (1 - lr*l2) w - lr (p - y) x`.
    fn step(&mut self, features: &[u32], label: usize, lr: T, decay: T) {
        let p = softmax(scores(&self.v, self.dim, self.scale, features));
        self.scale = self.scale * decay;
        for (k, pk) in p.iter().enumerate() {
            let g = *pk - indicator(k == label);
            if g == T::zero() {
                continue;
            }
            let delta = lr * g / self.scale;
            for &f in features {
                let i = k * self.dim + f as usize;
                self.v[i] = self.v[i] - delta;
            }
        }
        if self.scale < T::from_f64_lossy(1e-4) {
            self.materialize();
        }
    }

    fn materialize(&mut self) {
        let s = self.scale;
        for x in &mut self.v {
            *x = *x * s;
        }
        self.scale = T::one();
    }

    fn weights(&self) -> Vec<T> {
        self.v.iter().map(|&x| x * self.scale).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelMetadata {
    pub annotation_source: Option<String>,
    pub split_digest: Option<String>,
    pub selection: SelectionSplit,
    pub selected_epoch: usize,
    pub selection_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    weights: Vec<T>,
    pub hyper: Hyper,
    pub metadata: ModelMetadata,
}

impl<T: Real> Model<T> {
    pub fn zeros(hyper: Hyper) -> Self {
        Model {
            weights: vec![T::zero(); LABELS * DIM],
            hyper,
            metadata: ModelMetadata::default(),
        }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weight(&self, label: BreakLabel, feature: u32) -> T {
        self.weights[label.index() * DIM + feature as usize]
    }

    /// Multiplies every weight by `factor`.
    pub fn scale_weights(&mut self, factor: T) {
        for w in &mut self.weights {
            *w = *w * factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub fn junction_scores(&self, features: &FeatureVector) -> [T; LABELS] {
        scores(&self.weights, DIM, T::one(), features.indices())
    }

    /// Highest-scoring label per junction, ties resolved AP, IP, SB.
    pub fn predict(&self, utterance: &Utterance) -> LabelSequence {
        let labels = (0..utterance.word_count())
            .map(|j| argmax(&self.junction_scores(&featurize(utterance, j))))
            .collect();
        LabelSequence::new(labels).expect("utterances have at least one word")
    }

    pub fn predict_set<'a>(
        &self,
        utterances: impl IntoIterator<Item = &'a Utterance>,
        annotator: crate::annotation::AnnotatorKind,
    ) -> Result<AnnotationSet> {
        let mut set = AnnotationSet::new(annotator);
        for u in utterances {
            set.insert(u.id(), self.predict(u))?;
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let weights: Vec<(usize, u32, f64)> = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != T::zero())
            .map(|(i, w)| (i / DIM, (i % DIM) as u32, w.as_f64()))
            .collect();
        let file = ModelFile {
            format: MODEL_FORMAT.to_owned(),
            version: MODEL_VERSION,
            dim: DIM,
            labels: BreakLabel::ALL.iter().map(|l| l.as_str().to_owned()).collect(),
            hyper: self.hyper.clone(),
            metadata: self.metadata.clone(),
            weights,
        };
        let mut bytes = serde_json::to_vec(&file)?;
        bytes.push(b'\n');
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_slice(&bytes)?;
        let bad = |m: String| Error::validation(format!("{}: {m}", path.display()));
        if file.format != MODEL_FORMAT {
            return Err(bad(format!("not a model file (format {:?})", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(bad(format!(
                "model version {} is not supported (expected {MODEL_VERSION})",
                file.version
            )));
        }
        if file.dim != DIM {
            return Err(bad(format!("feature dimension {} != {DIM}", file.dim)));
        }
        let expected: Vec<&str> = BreakLabel::ALL.iter().map(|l| l.as_str()).collect();
        if file.labels != expected {
            return Err(bad(format!("label order {:?} != {expected:?}", file.labels)));
        }
        let mut weights = vec![T::zero(); LABELS * DIM];
        for (label, feature, value) in file.weights {
            if label >= LABELS || feature as usize >= DIM || !value.is_finite() {
                return Err(bad(format!("bad weight entry ({label}, {feature}, {value})")));
            }
            weights[label * DIM + feature as usize] = T::from_f64_lossy(value);
        }
        Ok(Model {
            weights,
            hyper: file.hyper,
            metadata: file.metadata,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    dim: usize,
    labels: Vec<String>,
    hyper: Hyper,
    metadata: ModelMetadata,
    /// Nonzero entries as (label, feature, value).
    weights: Vec<(usize, u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub selection_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub macro_f1: f64,
    pub per_label_f1: BTreeMap<BreakLabel, f64>,
    pub junctions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub hyper: Hyper,
    pub train_utterances: usize,
    pub selection_utterances: usize,
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the best selection macro-F1, earliest on ties.
    pub selected_epoch: usize,
    pub warnings: Vec<String>,
    pub test: Option<TestMetrics>,
}

impl TrainReport {
    pub fn record_test<T: Scalar>(&mut self, f1: &F1Report<T>) {
        self.test = Some(TestMetrics {
            macro_f1: f1.macro_f1.as_f64(),
            per_label_f1: f1.per_label.iter().map(|(l, v)| (*l, v.as_f64())).collect(),
            junctions: f1.compared_junctions,
        });
    }
}

fn samples(data: &[LabeledUtterance]) -> Vec<(Vec<u32>, BreakLabel)> {
    data.iter()
        .flat_map(|d| {
            d.labels
                .labels()
                .iter()
                .enumerate()
                .map(|(j, l)| (featurize(&d.utterance, j).0, *l))
        })
        .collect()
}

fn data_loss<T: Real>(weights: &[T], samples: &[(Vec<u32>, BreakLabel)], l2: T) -> T {
    let mut loss = T::zero();
    for (features, label) in samples {
        let p = softmax(scores(weights, DIM, T::one(), features));
        loss = loss - p[label.index()].ln();
    }
    let sq = weights.iter().fold(T::zero(), |acc, &w| acc + w * w);
    let half = T::one() / (T::one() + T::one());
    loss / T::from_count(samples.len()) + half * l2 * sq
}

fn counts_f1<T: Real>(weights: &[T], samples: &[(Vec<u32>, BreakLabel)]) -> Result<F1Report<T>> {
    let mut tp = [0usize; 3];
    let mut fp = [0usize; 3];
    let mut fn_ = [0usize; 3];
    for (features, gold) in samples {
        let guess = argmax(&scores(weights, DIM, T::one(), features));
        if guess == *gold {
            tp[gold.index()] += 1;
        } else {
            fn_[gold.index()] += 1;
            fp[guess.index()] += 1;
        }
    }
    f1_from_counts(&tp, &fp, &fn_, samples.len())
}

/// Trains for `hyper.epochs` passes over `train` in a seeded random order,
/// scoring `selection` after every epoch and returning the best epoch's
/// weights.
pub fn train<T: Real>(
    train: &[LabeledUtterance],
    selection: &[LabeledUtterance],
    hyper: &Hyper,
) -> Result<(Model<T>, TrainReport)> {
    hyper.validate()?;
    if train.is_empty() || selection.is_empty() {
        return Err(Error::validation("training and selection sets must be non-empty"));
    }
    let train_samples = samples(train);
    let selection_samples = samples(selection);

    let mut warnings = Vec::new();
    let mut present = [false; LABELS];
    for (_, l) in &train_samples {
        present[l.index()] = true;
    }
    for label in BreakLabel::ALL {
        if !present[label.index()] {
            let w = format!("label {label} does not occur in the training data");
            log::warn!("{w}");
            warnings.push(w);
        }
    }

    let lr = T::from_f64_lossy(hyper.learning_rate);
    let l2 = T::from_f64_lossy(hyper.l2);
    let decay = T::one() - lr * l2;
    let mut state = SgdState::<T>::new(DIM);
    let initial_loss = data_loss(&state.weights(), &train_samples, l2).as_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();

    let mut epochs = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(T, usize, Vec<T>)> = None;
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (features, label) = &train_samples[i];
            state.step(features, label.index(), lr, decay);
        }
        let weights = state.weights();
        let loss = data_loss(&weights, &train_samples, l2);
        if !loss.is_finite() {
            return Err(Error::Training(format!("training loss is not finite at epoch {epoch}")));
        }
        let f1 = counts_f1(&weights, &selection_samples)?.macro_f1;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss.as_f64(),
            selection_macro_f1: f1.as_f64(),
        });
        if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
            best = Some((f1, epoch, weights));
        }
    }
    let (_, selected_epoch, weights) = best.expect("at least one epoch");
    let metadata = ModelMetadata {
        annotation_source: None,
        split_digest: None,
        selection: hyper.selection,
        selected_epoch,
        selection_history: epochs.iter().map(|e| e.selection_macro_f1).collect(),
    };
    let report = TrainReport {
        hyper: hyper.clone(),
        train_utterances: train.len(),
        selection_utterances: selection.len(),
        initial_loss,
        epochs,
        selected_epoch,
        warnings,
        test: None,
    };
    Ok((
        Model {
            weights,
            hyper: hyper.clone(),
            metadata,
        },
        report,
    ))
}

/// Junction-level F1 of the model's predictions against `test` labels.
pub fn evaluate<T: Real>(model: &Model<T>, test: &[LabeledUtterance]) -> Result<F1Report<T>> {
    if test.is_empty() {
        return Err(Error::validation("test set is empty"));
    }
    counts_f1(&model.weights, &samples(test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::AnnotatorKind;
    use crate::synth::{rule_corpus, rule_labels};
    use rand::Rng;

    fn rule_data(n: usize, seed: u64) -> Vec<LabeledUtterance> {
        let corpus = rule_corpus(n, seed).unwrap();
        let set = rule_labels(&corpus, AnnotatorKind::HumanText).unwrap();
        labeled(&corpus, &set, None).unwrap()
    }

    fn utt(text: &str) -> Utterance {
        Utterance::new("t", "en", text, None).unwrap()
    }

    #[test]
    fn features_are_deterministic_and_bounded() {
        let u = utt("The cat sat on the mat.");
        assert_eq!(featurize(&u, 2), featurize(&u, 2));
        let names = feature_names(&u, 5);
        assert!(names.contains(&"punct0=terminal".to_owned()));
        assert!(names.contains(&"final=true".to_owned()));
        assert!(names.contains(&"w1=</s>".to_owned()));
        for j in 0..u.word_count() {
            let f = featurize(&u, j);
            assert!(f.indices().iter().all(|&i| (i as usize) < DIM));
            assert!(f.indices().windows(2).all(|w| w[0] < w[1]));
        }
        assert_ne!(feature_index("w0=cat"), feature_index("w0=mat."));
    }

    #[test]
    fn punctuation_classes() {
        assert_eq!(punct_class("said."), "terminal");
        assert_eq!(punct_class("oui»"), "none");
        assert_eq!(punct_class("left.\""), "terminal");
        assert_eq!(punct_class("well,"), "clause");
        assert_eq!(punct_class("note:"), "colon");
    }

    #[test]
    fn zero_model_predicts_ap() {
        let m = Model::<f64>::zeros(Hyper::default());
        let u = utt("a b c");
        assert_eq!(m.predict(&u).labels(), &[BreakLabel::AP; 3]);
    }

    fn random_instance(rng: &mut impl Rng, dim: usize) -> (Vec<f64>, Vec<(Vec<u32>, BreakLabel)>) {
        let w = (0..LABELS * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = rng.random_range(1..=3);
        let s = (0..n)
            .map(|_| {
                let mut f: Vec<u32> = (0..rng.random_range(1..=dim)).map(|_| rng.random_range(0..dim as u32)).collect();
                f.sort_unstable();
                f.dedup();
                (f, BreakLabel::from_index(rng.random_range(0..3)).unwrap())
            })
            .collect();
        (w, s)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let dim = rng.random_range(1..=20);
            let (w, s) = random_instance(&mut rng, dim);
            let l2 = 0.01;
            let (_, grad) = objective(&w, dim, &s, l2);
            let h = 1e-5;
            for i in 0..w.len() {
                let mut plus = w.clone();
                plus[i] += h;
                let mut minus = w.clone();
                minus[i] -= h;
                let fd = (objective(&plus, dim, &s, l2).0 - objective(&minus, dim, &s, l2).0) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
                assert!(rel < 1e-5 || (fd - grad[i]).abs() < 1e-9, "i={i} fd={fd} an={}", grad[i]);
            }
        }
    }

    #[test]
    fn scaled_step_equals_dense_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 7;
        let (w0, s) = random_instance(&mut rng, dim);
        let (lr, l2) = (0.3, 0.05);
        let mut state = SgdState::<f64>::new(dim);
        state.v = w0.clone();
        let mut dense = w0;
        for (f, label) in s.iter().cycle().take(40) {
            let (_, g) = objective(&dense, dim, &[(f.clone(), *label)], l2);
            for (d, gi) in dense.iter_mut().zip(&g) {
                *d -= lr * gi;
            }
            state.step(f, label.index(), lr, 1.0 - lr * l2);
        }
        for (a, b) in state.weights().iter().zip(&dense) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn learns_the_rule_corpus() {
        let data = rule_data(300, 1);
        let (train_set, valid) = data.split_at(240);
        let hyper = Hyper {
            epochs: 8,
            ..Default::default()
        };
        let (model, report) = train::<f64>(train_set, valid, &hyper).unwrap();
        assert!(report.epochs.last().unwrap().train_loss < report.initial_loss);
        let best = report
            .epochs
            .iter()
            .map(|e| e.selection_macro_f1)
            .fold(f64::MIN, f64::max);
        let first_best = report.epochs.iter().find(|e| e.selection_macro_f1 == best).unwrap();
        assert_eq!(report.selected_epoch, first_best.epoch);
        assert!(evaluate(&model, train_set).unwrap().macro_f1 >= 0.99);

        let p = model.predict(&utt("hello, world."));
        assert_eq!(p.labels(), &[BreakLabel::IP, BreakLabel::SB]);

        let mut scaled = model.clone();
        scaled.scale_weights(3.5);
        for d in valid {
            assert_eq!(scaled.predict(&d.utterance), model.predict(&d.utterance));
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let data = rule_data(30, 2);
        let hyper = Hyper {
            learning_rate: 0.0,
            epochs: 3,
            ..Default::default()
        };
        let (model, report) = train::<f64>(&data, &data, &hyper).unwrap();
        assert!(model.weights().iter().all(|&w| w == 0.0));
        assert!(report.epochs.iter().all(|e| e.train_loss == report.initial_loss));
    }

    #[test]
    fn training_is_deterministic_and_round_trips() {
        let data = rule_data(60, 4);
        let hyper = Hyper {
            epochs: 3,
            ..Default::default()
        };
        let (a, ra) = train::<f32>(&data[..50], &data[50..], &hyper).unwrap();
        let (b, rb) = train::<f32>(&data[..50], &data[50..], &hyper).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        a.save(&path).unwrap();
        assert_eq!(Model::<f32>::load(&path).unwrap(), a);

        let text = fs::read_to_string(&path).unwrap().replace("\"version\":1", "\"version\":99");
        fs::write(&path, text).unwrap();
        assert!(Model::<f32>::load(&path).is_err());
    }

    #[test]
    fn absent_label_warns() {
        let corpus: Vec<Utterance> = (0..5).map(|i| Utterance::new(format!("u{i}"), "en", "a b", None).unwrap()).collect();
        let mut set = AnnotationSet::new(AnnotatorKind::HumanText);
        for u in &corpus {
            set.insert(u.id(), LabelSequence::new(vec![BreakLabel::AP, BreakLabel::SB]).unwrap()).unwrap();
        }
        let data = labeled(&corpus, &set, None).unwrap();
        let (_, report) = train::<f64>(&data, &data, &Hyper { epochs: 1, ..Default::default() }).unwrap();
        assert_eq!(report.warnings.len(), 1);
        assert!(report.warnings[0].contains("IP"));
    }

    #[test]
    fn degenerate_inputs() {
        let m = Model::<f64>::zeros(Hyper::default());
        assert!(evaluate(&m, &[]).is_err());
        let bad = Hyper {
            epochs: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
