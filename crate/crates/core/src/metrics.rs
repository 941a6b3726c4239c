//! Agreement between two annotation sets.
//!
//! All metrics are computed over the utterance ids both sets share.
//! Krippendorff's alpha treats every `(utterance, junction)` position as an
//! item coded by two coders at the nominal level; passing
//! [`AlphaUnit::Utterance`] codes whole label sequences instead.
//!
//! The functions are generic over [`Scalar`], so exact results are available
//! with a rational type:
//!
//! ```
//! use num_rational::Rational64;
//! use phrasebreak_core::annotation::{AnnotationSet, AnnotatorKind, BreakLabel::*, LabelSequence};
//! use phrasebreak_core::metrics::krippendorff_alpha;
//!
//! let mut a = AnnotationSet::new(AnnotatorKind::HumanAudio);
//! let mut b = AnnotationSet::new(AnnotatorKind::HumanText);
//! a.insert("u", LabelSequence::new(vec![AP, AP, IP, SB]).unwrap()).unwrap();
//! b.insert("u", LabelSequence::new(vec![AP, IP, IP, SB]).unwrap()).unwrap();
//! let alpha = krippendorff_alpha::<Rational64>(&a, &b).unwrap();
//! assert_eq!(alpha.value, Rational64::new(2, 3));
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use crate::annotation::{AnnotationSet, BreakLabel, LabelSequence};
use crate::error::{Error, Result};
use crate::review::{Judgment, Verdict};
use crate::scalar::Scalar;

/// Pairs of label sequences for the ids present in both sets, in id order.
fn shared<'a>(
    a: &'a AnnotationSet,
    b: &'a AnnotationSet,
) -> Result<Vec<(&'a str, &'a LabelSequence, &'a LabelSequence)>> {
    let mut out = Vec::new();
    for (id, la) in &a.entries {
        if let Some(lb) = b.entries.get(id) {
            if la.len() != lb.len() {
                return Err(Error::validation(format!(
                    "utterance {id}: {} labels in {} but {} in {}",
                    la.len(),
                    a.annotator,
                    lb.len(),
                    b.annotator
                )));
            }
            out.push((id.as_str(), la, lb));
        }
    }
    if out.is_empty() {
        return Err(Error::validation(format!(
            "annotation sets {} and {} share no utterance ids",
            a.annotator, b.annotator
        )));
    }
    Ok(out)
}

/// Percentage of shared utterances whose label sequences match exactly.
pub fn exact_agreement<T: Scalar>(a: &AnnotationSet, b: &AnnotationSet) -> Result<T> {
    let pairs = shared(a, b)?;
    let matches = pairs.iter().filter(|(_, x, y)| x == y).count();
    Ok(T::ratio(matches, pairs.len()) * T::hundred())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaUnit {
    #[default]
    Junction,
    Utterance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaResult<T> {
    pub value: T,
    /// Every pairable value was identical, so expected disagreement is zero
    /// and `value` is 1 by convention.
    pub degenerate: bool,
    pub pairable_items: usize,
}

pub fn krippendorff_alpha<T: Scalar>(a: &AnnotationSet, b: &AnnotationSet) -> Result<AlphaResult<T>> {
    krippendorff_alpha_with(a, b, AlphaUnit::Junction)
}

pub fn krippendorff_alpha_with<T: Scalar>(
    a: &AnnotationSet,
    b: &AnnotationSet,
    unit: AlphaUnit,
) -> Result<AlphaResult<T>> {
    let pairs = shared(a, b)?;
    let (items, n_values) = match unit {
        AlphaUnit::Junction => {
            let items: Vec<(usize, usize)> = pairs
                .iter()
                .flat_map(|(_, x, y)| {
                    x.labels()
                        .iter()
                        .zip(y.labels())
                        .map(|(p, q)| (p.index(), q.index()))
                })
                .collect();
            (items, BreakLabel::ALL.len())
        }
        AlphaUnit::Utterance => {
            let mut codes: HashMap<&LabelSequence, usize> = HashMap::new();
            let mut code = |s| {
                let next = codes.len();
                *codes.entry(s).or_insert(next)
            };
            let items: Vec<(usize, usize)> =
                pairs.iter().map(|(_, x, y)| (code(*x), code(*y))).collect();
            (items, codes.len())
        }
    };
    alpha_from_pairs(&items, n_values)
}

/// Nominal alpha for two coders from the coincidence matrix:
/// `alpha = 1 - (n - 1) * sum_{c != k} o_ck / sum_{c != k} n_c * n_k`.
pub fn alpha_from_pairs<T: Scalar>(items: &[(usize, usize)], n_values: usize) -> Result<AlphaResult<T>> {
    if items.len() < 2 {
        return Err(Error::validation(format!(
            "alpha needs at least 2 pairable items, got {}",
            items.len()
        )));
    }
    // Each two-coder item adds one ordered pair in both directions; the
    // 1 / (m_u - 1) weight is 1.
    let mut coincidence = vec![vec![0usize; n_values]; n_values];
    for &(c, k) in items {
        coincidence[c][k] += 1;
        coincidence[k][c] += 1;
    }
    let marginals: Vec<usize> = coincidence.iter().map(|row| row.iter().sum()).collect();
    let n: usize = marginals.iter().sum();

    let mut observed = 0usize;
    let mut expected = 0usize;
    for c in 0..n_values {
        for k in 0..n_values {
            if c != k {
                observed += coincidence[c][k];
                expected += marginals[c] * marginals[k];
            }
        }
    }
    if expected == 0 {
        return Ok(AlphaResult {
            value: T::one(),
            degenerate: true,
            pairable_items: items.len(),
        });
    }
    let value = T::one() - T::from_count(n - 1) * T::from_count(observed) / T::from_count(expected);
    Ok(AlphaResult {
        value,
        degenerate: false,
        pairable_items: items.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct F1Report<T> {
    /// F1 per label with nonzero support in either set.
    pub per_label: BTreeMap<BreakLabel, T>,
    pub macro_f1: T,
    pub compared_junctions: usize,
}

/// Junction-level F1 per label, `2TP / (2TP + FP + FN)`, averaged over the
/// labels that occur in at least one of the two sets.
pub fn macro_f1<T: Scalar>(reference: &AnnotationSet, prediction: &AnnotationSet) -> Result<F1Report<T>> {
    let pairs = shared(reference, prediction)?;
    let mut tp = [0usize; 3];
    let mut fp = [0usize; 3];
    let mut fn_ = [0usize; 3];
    let mut junctions = 0;
    for (_, r, p) in &pairs {
        for (gold, guess) in r.labels().iter().zip(p.labels()) {
            junctions += 1;
            if gold == guess {
                tp[gold.index()] += 1;
            } else {
                fn_[gold.index()] += 1;
                fp[guess.index()] += 1;
            }
        }
    }
    f1_from_counts(&tp, &fp, &fn_, junctions)
}

pub(crate) fn f1_from_counts<T: Scalar>(
    tp: &[usize; 3],
    fp: &[usize; 3],
    fn_: &[usize; 3],
    junctions: usize,
) -> Result<F1Report<T>> {
    let mut per_label = BTreeMap::new();
    let mut sum = T::zero();
    for label in BreakLabel::ALL {
        let i = label.index();
        let denom = 2 * tp[i] + fp[i] + fn_[i];
        if denom == 0 {
            continue;
        }
        let f1 = T::ratio(2 * tp[i], denom);
        sum = sum + f1;
        per_label.insert(label, f1);
    }
    if per_label.is_empty() {
        return Err(Error::validation("no junctions to score"));
    }
    Ok(F1Report {
        macro_f1: sum / T::from_count(per_label.len()),
        per_label,
        compared_junctions: junctions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonResult<T> {
    pub agreement: T,
    pub alpha: T,
    pub alpha_degenerate: bool,
    pub per_label_f1: BTreeMap<BreakLabel, T>,
    pub macro_f1: T,
    pub compared_utterances: usize,
    pub compared_junctions: usize,
}

/// Agreement, alpha and F1 in one pass; `a` is treated as the reference for
/// the per-label F1 breakdown (macro-F1 itself is symmetric).
pub fn compare<T: Scalar>(a: &AnnotationSet, b: &AnnotationSet) -> Result<ComparisonResult<T>> {
    compare_with(a, b, AlphaUnit::Junction)
}

pub fn compare_with<T: Scalar>(
    a: &AnnotationSet,
    b: &AnnotationSet,
    unit: AlphaUnit,
) -> Result<ComparisonResult<T>> {
    let compared_utterances = shared(a, b)?.len();
    let agreement = exact_agreement(a, b)?;
    let alpha: AlphaResult<T> = krippendorff_alpha_with(a, b, unit)?;
    let f1 = macro_f1(a, b)?;
    Ok(ComparisonResult {
        agreement,
        alpha: alpha.value,
        alpha_degenerate: alpha.degenerate,
        per_label_f1: f1.per_label,
        macro_f1: f1.macro_f1,
        compared_utterances,
        compared_junctions: f1.compared_junctions,
    })
}

/// Percentage of acceptable verdicts. Abstentions are not counted.
pub fn human_score<T: Scalar>(judgments: &[Judgment]) -> Result<T> {
    let mut seen = HashSet::new();
    for j in judgments {
        if !seen.insert((j.pair_id.as_str(), j.evaluator_id.as_str())) {
            return Err(Error::validation(format!(
                "evaluator {} judged pair {} more than once",
                j.evaluator_id, j.pair_id
            )));
        }
    }
    let decided: Vec<&Judgment> = judgments
        .iter()
        .filter(|j| j.verdict != Verdict::Abstain)
        .collect();
    if decided.is_empty() {
        return Err(Error::validation("no judgments to score"));
    }
    let acceptable = decided
        .iter()
        .filter(|j| j.verdict == Verdict::Acceptable)
        .count();
    Ok(T::ratio(acceptable, decided.len()) * T::hundred())
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use num_rational::Rational64;
    use proptest::prelude::*;

    use super::*;
    use crate::annotation::AnnotatorKind;
    use BreakLabel::*;

    fn set(kind: AnnotatorKind, entries: &[(&str, &[BreakLabel])]) -> AnnotationSet {
        let mut s = AnnotationSet::new(kind);
        for (id, l) in entries {
            s.insert(*id, LabelSequence::new(l.to_vec()).unwrap()).unwrap();
        }
        s
    }

    fn ha(entries: &[(&str, &[BreakLabel])]) -> AnnotationSet {
        set(AnnotatorKind::HumanAudio, entries)
    }

    fn ht(entries: &[(&str, &[BreakLabel])]) -> AnnotationSet {
        set(AnnotatorKind::HumanText, entries)
    }

    #[test]
    fn agreement_counts_whole_sequences() {
        let a = ha(&[("1", &[AP, SB]), ("2", &[AP, SB]), ("3", &[IP, SB]), ("4", &[SB])]);
        let b = ht(&[("1", &[AP, SB]), ("2", &[IP, SB]), ("3", &[IP, SB]), ("4", &[SB])]);
        assert_eq!(exact_agreement::<f64>(&a, &a).unwrap(), 100.0);
        assert_eq!(exact_agreement::<f64>(&a, &b).unwrap(), 75.0);
    }

    #[test]
    fn agreement_errors() {
        let a = ha(&[("1", &[AP, SB])]);
        let b = ht(&[("2", &[AP, SB])]);
        assert!(exact_agreement::<f64>(&a, &b).is_err());
        let c = ht(&[("1", &[SB])]);
        let err = exact_agreement::<f64>(&a, &c).unwrap_err().to_string();
        assert!(err.contains("utterance 1"), "{err}");
    }

    #[test]
    fn alpha_hand_computed_instance() {
        // n = 8, observed off-diagonal = 2, sum n_c n_k = 64 - 22 = 42.
        let a = ha(&[("u", &[AP, AP, IP, SB])]);
        let b = ht(&[("u", &[AP, IP, IP, SB])]);
        let exact = krippendorff_alpha::<Rational64>(&a, &b).unwrap();
        assert_eq!(exact.value, Rational64::new(2, 3));
        let float = krippendorff_alpha::<f64>(&a, &b).unwrap();
        assert_abs_diff_eq!(float.value, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn alpha_identical_and_degenerate() {
        let a = ha(&[("u", &[AP, IP, SB]), ("v", &[AP, SB])]);
        let r = krippendorff_alpha::<f64>(&a, &a).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(!r.degenerate);
        let flat = ha(&[("u", &[AP, AP])]);
        let r = krippendorff_alpha::<f64>(&flat, &flat).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(r.degenerate);
    }

    #[test]
    fn alpha_needs_two_items() {
        let a = ha(&[("u", &[SB])]);
        assert!(krippendorff_alpha::<f64>(&a, &a).is_err());
    }

    #[test]
    fn alpha_systematic_disagreement_is_not_positive() {
        let a = ha(&[("u", &[AP, IP, AP, IP])]);
        let b = ht(&[("u", &[IP, AP, IP, AP])]);
        let r = krippendorff_alpha::<Rational64>(&a, &b).unwrap();
        assert!(r.value <= Rational64::from_integer(0));
    }

    #[test]
    fn utterance_level_alpha() {
        let a = ha(&[("1", &[AP, SB]), ("2", &[IP, SB]), ("3", &[AP, SB])]);
        let r = krippendorff_alpha_with::<f64>(&a, &a, AlphaUnit::Utterance).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.pairable_items, 3);
    }

    #[test]
    fn f1_identity_and_total_miss() {
        let a = ha(&[("u", &[AP, IP, SB])]);
        assert_eq!(macro_f1::<f64>(&a, &a).unwrap().macro_f1, 1.0);

        // All-AP reference vs all-IP prediction on 10 junctions:
        // AP: tp 0, fn 10 -> 0; IP: tp 0, fp 10 -> 0; SB absent from both.
        let r = ha(&[("u", &[AP; 10])]);
        let p = ht(&[("u", &[IP; 10])]);
        let f = macro_f1::<f64>(&r, &p).unwrap();
        assert_eq!(f.per_label.get(&AP), Some(&0.0));
        assert_eq!(f.per_label.get(&IP), Some(&0.0));
        assert!(!f.per_label.contains_key(&SB));
        assert_eq!(f.macro_f1, 0.0);
    }

    #[test]
    fn compare_bundles_everything() {
        let a = ha(&[("1", &[AP, IP, SB]), ("2", &[AP, SB])]);
        let c = compare::<f64>(&a, &a).unwrap();
        assert_eq!(c.agreement, 100.0);
        assert_eq!(c.alpha, 1.0);
        assert_eq!(c.macro_f1, 1.0);
        assert_eq!(c.compared_utterances, 2);
        assert_eq!(c.compared_junctions, 5);
    }

    fn judgment(pair: &str, evaluator: &str, verdict: Verdict) -> Judgment {
        Judgment {
            session_id: "s".into(),
            pair_id: pair.into(),
            evaluator_id: evaluator.into(),
            verdict,
            judged_at_ms: 0,
        }
    }

    #[test]
    fn human_score_ratio() {
        let js: Vec<_> = (0..10)
            .map(|i| {
                let v = if i < 7 { Verdict::Acceptable } else { Verdict::Unacceptable };
                judgment(&format!("p{i}"), "e", v)
            })
            .collect();
        assert_eq!(human_score::<f64>(&js).unwrap(), 70.0);
        assert_eq!(human_score::<f64>(&js[..7]).unwrap(), 100.0);
        assert!(human_score::<f64>(&[]).is_err());
        let mut dup = js.clone();
        dup.push(judgment("p0", "e", Verdict::Acceptable));
        assert!(human_score::<f64>(&dup).is_err());
        // Same pair, different evaluator is fine; abstentions leave the denominator.
        let mut multi = js.clone();
        multi.push(judgment("p0", "f", Verdict::Acceptable));
        multi.push(judgment("p1", "f", Verdict::Abstain));
        assert_abs_diff_eq!(human_score::<f64>(&multi).unwrap(), 800.0 / 11.0, epsilon = 1e-12);
    }

    fn label() -> impl Strategy<Value = BreakLabel> {
        (0usize..3).prop_map(|i| BreakLabel::ALL[i])
    }

    /// Two sets over the same ids with equal lengths per id.
    fn set_pair() -> impl Strategy<Value = (AnnotationSet, AnnotationSet)> {
        prop::collection::vec(
            (1usize..8).prop_flat_map(|n| (prop::collection::vec(label(), n), prop::collection::vec(label(), n))),
            1..12,
        )
        .prop_map(|rows| {
            let mut a = AnnotationSet::new(AnnotatorKind::HumanAudio);
            let mut b = AnnotationSet::new(AnnotatorKind::HumanText);
            for (i, (x, y)) in rows.into_iter().enumerate() {
                a.insert(format!("u{i}"), LabelSequence::new(x).unwrap()).unwrap();
                b.insert(format!("u{i}"), LabelSequence::new(y).unwrap()).unwrap();
            }
            (a, b)
        })
    }

    proptest! {
        #[test]
        fn macro_f1_is_symmetric((a, b) in set_pair()) {
            let ab = macro_f1::<f64>(&a, &b).unwrap().macro_f1;
            let ba = macro_f1::<f64>(&b, &a).unwrap().macro_f1;
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
        }

        #[test]
        fn alpha_in_range_and_exact_rational_agrees((a, b) in set_pair()) {
            if let Ok(r) = krippendorff_alpha::<f64>(&a, &b) {
                prop_assert!((-1.0..=1.0).contains(&r.value));
                let q = krippendorff_alpha::<Rational64>(&a, &b).unwrap();
                prop_assert!((q.value.as_f64() - r.value).abs() < 1e-12);
            }
        }

        #[test]
        fn full_agreement_implies_unit_alpha((a, _) in set_pair()) {
            let agreement = exact_agreement::<f64>(&a, &a).unwrap();
            prop_assert_eq!(agreement, 100.0);
            if let Ok(r) = krippendorff_alpha::<f64>(&a, &a) {
                prop_assert_eq!(r.value, 1.0);
            }
        }

        #[test]
        fn metrics_ignore_insertion_order((a, b) in set_pair(), seed: u64) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut entries: Vec<_> = b.entries.clone().into_iter().collect();
            entries.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut shuffled = AnnotationSet::new(b.annotator.clone());
            for (id, l) in entries {
                shuffled.insert(id, l).unwrap();
            }
            let x = compare::<f64>(&a, &b);
            let y = compare::<f64>(&a, &shuffled);
            match (x, y) {
                (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "one ordering failed"),
            }
        }
    }
}
