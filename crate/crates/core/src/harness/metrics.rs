//! Exact match, token F1 and answerability accuracies.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Lowercase, drop ASCII punctuation and the articles a/an/the, and split
/// on whitespace.
pub fn normalize_answer(text: &str) -> Vec<String> {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .map(str::to_string)
        .collect()
}

/// `None` means the model abstained (or the question has no answer).
pub fn exact_match(prediction: Option<&str>, gold: Option<&str>) -> f64 {
    match (prediction, gold) {
        (None, None) => 1.0,
        (Some(p), Some(g)) => f64::from(u8::from(normalize_answer(p) == normalize_answer(g))),
        _ => 0.0,
    }
}

pub fn f1_score(prediction: Option<&str>, gold: Option<&str>) -> f64 {
    let (p, g) = match (prediction, gold) {
        (None, None) => return 1.0,
        (Some(p), Some(g)) => (normalize_answer(p), normalize_answer(g)),
        _ => return 0.0,
    };
    if p.is_empty() || g.is_empty() {
        return f64::from(u8::from(p == g));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// One scored example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub id: String,
    pub prediction: Option<String>,
    pub gold: Option<String>,
}

/// All values are percentages. A class accuracy is NaN when the dataset
/// has no example of that class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(with = "super::float")]
    pub em: f64,
    #[serde(with = "super::float")]
    pub f1: f64,
    #[serde(with = "super::float")]
    pub na_accuracy: f64,
    #[serde(with = "super::float")]
    pub answerable_accuracy: f64,
    pub count: usize,
    pub answerable: usize,
    pub unanswerable: usize,
}

fn percent(num: f64, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        100.0 * num / den as f64
    }
}

pub fn score(items: &[ScoredPrediction]) -> Metrics {
    let (mut em, mut f1) = (0.0, 0.0);
    let (mut answerable, mut unanswerable) = (0usize, 0usize);
    let (mut ans_ok, mut na_ok) = (0usize, 0usize);
    for it in items {
        let (p, g) = (it.prediction.as_deref(), it.gold.as_deref());
        em += exact_match(p, g);
        f1 += f1_score(p, g);
        match g {
            Some(_) => {
                answerable += 1;
                ans_ok += usize::from(p.is_some());
            }
            None => {
                unanswerable += 1;
                na_ok += usize::from(p.is_none());
            }
        }
    }
    Metrics {
        em: percent(em, items.len()),
        f1: percent(f1, items.len()),
        na_accuracy: percent(na_ok as f64, unanswerable),
        answerable_accuracy: percent(ans_ok as f64, answerable),
        count: items.len(),
        answerable,
        unanswerable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(p: Option<&str>, g: Option<&str>) -> ScoredPrediction {
        ScoredPrediction {
            id: String::new(),
            prediction: p.map(str::to_string),
            gold: g.map(str::to_string),
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The  Big, cat!"), ["big", "cat"]);
        assert_eq!(normalize_answer("an apple"), ["apple"]);
    }

    #[test]
    fn partial_overlap_is_two_thirds() {
        let f = f1_score(Some("heavily impacted"), Some("impacted"));
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(exact_match(Some("heavily impacted"), Some("impacted")), 0.0);
    }

    #[test]
    fn no_answer_cases() {
        assert_eq!(f1_score(None, None), 1.0);
        assert_eq!(exact_match(None, None), 1.0);
        assert_eq!(f1_score(Some("x"), None), 0.0);
        assert_eq!(f1_score(None, Some("x")), 0.0);
    }

    #[test]
    fn perfect_predictions_score_100() {
        let items = [item(Some("a cat"), Some("cat")), item(None, None)];
        let m = score(&items);
        assert_eq!(
            (m.em, m.f1, m.na_accuracy, m.answerable_accuracy),
            (100.0, 100.0, 100.0, 100.0)
        );
    }

    #[test]
    fn empty_class_is_nan() {
        let m = score(&[item(None, None)]);
        assert!(m.answerable_accuracy.is_nan());
    }
}
