//! Metric implementations checked against independent re-derivations.

use num_rational::Rational64;
use phrasebreak_core::annotation::{AnnotationSet, AnnotatorKind, BreakLabel, LabelSequence};
use phrasebreak_core::metrics::{alpha_from_pairs, compare, krippendorff_alpha, macro_f1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Alpha straight from its definition: observed disagreement is the share
/// of items whose two values differ; expected disagreement is the share of
/// differing ordered pairs among all pooled values, drawn without
/// replacement.
fn alpha_by_enumeration(items: &[(usize, usize)]) -> f64 {
    let values: Vec<usize> = items.iter().flat_map(|&(a, b)| [a, b]).collect();
    let n = values.len() as f64;
    let d_o = items.iter().filter(|(a, b)| a != b).count() as f64 / items.len() as f64;
    let mut differing = 0u64;
    let mut total = 0u64;
    for i in 0..values.len() {
        for j in 0..values.len() {
            if i != j {
                total += 1;
                if values[i] != values[j] {
                    differing += 1;
                }
            }
        }
    }
    assert_eq!(total as f64, n * (n - 1.0));
    let d_e = differing as f64 / total as f64;
    if d_e == 0.0 {
        1.0
    } else {
        1.0 - d_o / d_e
    }
}

fn set(kind: AnnotatorKind, seqs: &[Vec<BreakLabel>]) -> AnnotationSet {
    let mut s = AnnotationSet::new(kind);
    for (i, l) in seqs.iter().enumerate() {
        s.insert(format!("u{i}"), LabelSequence::new(l.clone()).unwrap()).unwrap();
    }
    s
}

fn random_labels(rng: &mut impl Rng, n: usize) -> Vec<BreakLabel> {
    (0..n).map(|_| BreakLabel::from_index(rng.random_range(0..3)).unwrap()).collect()
}

#[test]
fn alpha_matches_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let values = rng.random_range(1..=4);
        let items: Vec<(usize, usize)> = (0..n)
            .map(|_| (rng.random_range(0..values), rng.random_range(0..values)))
            .collect();
        let got = alpha_from_pairs::<f64>(&items, values).unwrap().value;
        let want = alpha_by_enumeration(&items);
        assert!((got - want).abs() <= 1e-9, "{items:?}: {got} vs {want}");
        assert!((-1.0..=1.0).contains(&got), "{items:?}: {got}");
    }
}

#[test]
fn alpha_hand_instance() {
    use BreakLabel::*;
    let a = set(AnnotatorKind::HumanAudio, &[vec![AP, AP, IP, SB]]);
    let b = set(AnnotatorKind::HumanText, &[vec![AP, IP, IP, SB]]);
    // n = 8, D_o = 2/8, D_e = (64 - 22) / 56 = 3/4.
    assert_eq!(krippendorff_alpha::<Rational64>(&a, &b).unwrap().value, Rational64::new(2, 3));
    assert!((krippendorff_alpha::<f64>(&a, &b).unwrap().value - 2.0 / 3.0).abs() < 1e-9);
}

#[test]
fn total_disagreement_is_not_positive() {
    use BreakLabel::*;
    let a = set(AnnotatorKind::HumanAudio, &[vec![AP, IP, AP, IP]]);
    let b = set(AnnotatorKind::HumanText, &[vec![IP, AP, IP, AP]]);
    assert!(krippendorff_alpha::<f64>(&a, &b).unwrap().value <= 0.0);
}

#[test]
fn f1_hand_count() {
    let a = set(AnnotatorKind::HumanAudio, &[vec![BreakLabel::AP; 10]]);
    let b = set(AnnotatorKind::HumanText, &[vec![BreakLabel::IP; 10]]);
    let r = macro_f1::<f64>(&a, &b).unwrap();
    assert_eq!(r.per_label.len(), 2);
    assert_eq!(r.macro_f1, 0.0);
}

/// Per-label F1 from precision and recall rather than from pooled counts.
fn f1_by_precision_recall(a: &[Vec<BreakLabel>], b: &[Vec<BreakLabel>]) -> f64 {
    let pairs: Vec<(BreakLabel, BreakLabel)> = a.iter().flatten().copied().zip(b.iter().flatten().copied()).collect();
    let mut scores = Vec::new();
    for label in BreakLabel::ALL {
        let gold = pairs.iter().filter(|(g, _)| *g == label).count() as f64;
        let pred = pairs.iter().filter(|(_, p)| *p == label).count() as f64;
        if gold == 0.0 && pred == 0.0 {
            continue;
        }
        let hit = pairs.iter().filter(|(g, p)| *g == label && *p == label).count() as f64;
        let precision = if pred > 0.0 { hit / pred } else { 0.0 };
        let recall = if gold > 0.0 { hit / gold } else { 0.0 };
        scores.push(if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 });
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

#[test]
fn f1_matches_precision_recall_and_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..300 {
        let lens: Vec<usize> = (0..rng.random_range(1..6)).map(|_| rng.random_range(1..10)).collect();
        let sa: Vec<_> = lens.iter().map(|&n| random_labels(&mut rng, n)).collect();
        let sb: Vec<_> = lens.iter().map(|&n| random_labels(&mut rng, n)).collect();
        let a = set(AnnotatorKind::HumanAudio, &sa);
        let b = set(AnnotatorKind::HumanText, &sb);
        let ab = macro_f1::<f64>(&a, &b).unwrap().macro_f1;
        assert!((ab - f1_by_precision_recall(&sa, &sb)).abs() < 1e-12);
        assert_eq!(
            macro_f1::<Rational64>(&a, &b).unwrap().macro_f1,
            macro_f1::<Rational64>(&b, &a).unwrap().macro_f1
        );
    }
}

#[test]
fn agreement_hundred_implies_alpha_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let seqs: Vec<_> = (0..4).map(|_| random_labels(&mut rng, 5)).collect();
        let a = set(AnnotatorKind::HumanAudio, &seqs);
        let b = set(AnnotatorKind::HumanText, &seqs);
        let c = compare::<f64>(&a, &b).unwrap();
        assert_eq!(c.agreement, 100.0);
        assert_eq!(c.alpha, 1.0);
        assert_eq!(c.macro_f1, 1.0);
    }
}
