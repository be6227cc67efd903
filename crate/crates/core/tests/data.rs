use std::collections::HashMap;
use std::path::PathBuf;

use relmod::data::{
    batchify, generate_synthetic, load_dataset, read_jsonl, write_jsonl, Example, SyntheticConfig, Vocab, UNK_ID,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[test]
fn squad_fixture_spans_and_flags() {
    let examples = load_dataset(&fixture("squad_mini.json")).unwrap();
    assert_eq!(examples.len(), 3);
    let expected_tokens = [
        "hurricane",
        "katrina",
        "caused",
        "$",
        "125",
        "billion",
        "in",
        "damage",
        ".",
        "it",
        "struck",
        "new",
        "orleans",
        "in",
        "2005",
        ".",
    ];
    for ex in &examples {
        assert_eq!(ex.context_tokens, expected_tokens);
        ex.check().unwrap();
    }
    let by_id: HashMap<&str, &Example> = examples.iter().map(|e| (e.id.as_str(), e)).collect();

    let a = by_id["mini-answerable"];
    assert!(a.is_answerable);
    assert_eq!(a.answer_span, Some((0, 1)));
    assert_eq!(a.plausible_span, Some((0, 1)));
    assert_eq!(a.answer_text(), "Hurricane Katrina");

    let p = by_id["mini-plausible"];
    assert!(!p.is_answerable);
    assert_eq!(p.answer_span, None);
    assert_eq!(p.plausible_span, Some((11, 12)));
    assert_eq!(p.span_text((11, 12)), "New Orleans");

    let i = by_id["mini-impossible"];
    assert!(!i.is_answerable);
    assert_eq!(i.answer_span, None);
    assert_eq!(i.plausible_span, None);
}

/// Facts recovered from a synthetic context by pattern matching on its
/// two sentence shapes.
struct Parsed {
    quantity: HashMap<String, String>,
    unit: HashMap<String, String>,
    /// Token index of the event word in each quantity sentence, by name.
    event_at: HashMap<String, usize>,
}

fn parse_context(tokens: &[String]) -> Parsed {
    let mut parsed = Parsed {
        quantity: HashMap::new(),
        unit: HashMap::new(),
        event_at: HashMap::new(),
    };
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if t != "." {
            continue;
        }
        let s: Vec<&str> = tokens[start..=i].iter().map(String::as_str).collect();
        match s.as_slice() {
            ["the", _event, name, "caused", q, "in", "damage", "."] => {
                assert!(parsed.quantity.insert(name.to_string(), q.to_string()).is_none());
                parsed.event_at.insert(name.to_string(), start + 1);
            }
            ["the", "losses", "of", name, "were", "counted", "in", u, "of", "dollars", "."] => {
                assert!(parsed.unit.insert(name.to_string(), u.to_string()).is_none());
            }
            _ => {}
        }
        start = i + 1;
    }
    parsed
}

#[test]
fn synthetic_labels_match_rule_based_oracle() {
    let cfg = SyntheticConfig {
        num_examples: 400,
        answerable_ratio: 0.5,
        rng_seed: 99,
        ..Default::default()
    };
    let examples = generate_synthetic(&cfg).unwrap();
    assert_eq!(examples.len(), 400);
    assert_eq!(examples.iter().filter(|e| e.is_answerable).count(), 200);

    let mut shared_mismatch = 0;
    for ex in &examples {
        ex.check().unwrap();
        let q: Vec<&str> = ex.question_tokens.iter().map(String::as_str).collect();
        let ["what", "caused", quantity, unit, "dollars", "in", "damage", "?"] = q.as_slice() else {
            panic!("unexpected question {q:?}");
        };
        let parsed = parse_context(&ex.context_tokens);
        assert_eq!(parsed.quantity.len(), cfg.facts_per_example);
        assert_eq!(parsed.unit.len(), cfg.facts_per_example);

        let matching: Vec<&String> = parsed
            .quantity
            .iter()
            .filter(|(name, q)| q.as_str() == *quantity && parsed.unit[*name] == *unit)
            .map(|(name, _)| name)
            .collect();
        assert_eq!(ex.is_answerable, matching.len() == 1, "{}", ex.id);
        assert!(matching.len() <= 1);

        let (s, e) = ex.plausible_span.unwrap();
        assert_eq!(e, s + 1);
        let target = &ex.context_tokens[e];
        assert_eq!(parsed.event_at[target], s);
        if ex.is_answerable {
            assert_eq!(matching[0], target);
            assert_eq!(ex.answer_span, Some((s, e)));
        } else {
            let q_diff = parsed.quantity[target] != *quantity;
            let u_diff = parsed.unit[target] != *unit;
            assert!(q_diff ^ u_diff, "{}: exactly one attribute must differ", ex.id);
            let stated_elsewhere = if q_diff {
                parsed.quantity.values().any(|v| v == quantity)
            } else {
                parsed.unit.values().any(|v| v == unit)
            };
            shared_mismatch += usize::from(stated_elsewhere);
        }
    }
    assert_eq!(shared_mismatch, 200, "every mutated value is stated for some event");
}

#[test]
fn synthetic_is_deterministic_per_seed() {
    let cfg = SyntheticConfig {
        num_examples: 50,
        ..Default::default()
    };
    let a = generate_synthetic(&cfg).unwrap();
    assert_eq!(a, generate_synthetic(&cfg).unwrap());
    let b = generate_synthetic(&SyntheticConfig { rng_seed: 18, ..cfg }).unwrap();
    assert_ne!(a, b);
}

#[test]
fn synthetic_ratio_extremes() {
    for (ratio, expected) in [(0.0, 0), (1.0, 30), (0.3, 9)] {
        let cfg = SyntheticConfig {
            num_examples: 30,
            answerable_ratio: ratio,
            ..Default::default()
        };
        let n = generate_synthetic(&cfg)
            .unwrap()
            .iter()
            .filter(|e| e.is_answerable)
            .count();
        assert_eq!(n, expected);
    }
}

#[test]
fn jsonl_round_trip() {
    let examples = generate_synthetic(&SyntheticConfig {
        num_examples: 10,
        ..Default::default()
    })
    .unwrap();
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &examples).unwrap();
    assert_eq!(read_jsonl(buf.as_slice()).unwrap(), examples);
}

#[test]
fn batches_unpad_to_encoded_examples() {
    let examples = generate_synthetic(&SyntheticConfig {
        num_examples: 23,
        ..Default::default()
    })
    .unwrap();
    let vocab = Vocab::build(&examples);
    let batches = batchify(&examples, 8, &vocab);
    assert_eq!(batches.iter().map(|b| b.len()).collect::<Vec<_>>(), [8, 8, 7]);
    let unpadded: Vec<_> = batches.iter().flat_map(|b| b.unpad()).collect();
    for (ex, (q, c)) in examples.iter().zip(&unpadded) {
        assert_eq!(q, &vocab.encode(&ex.question_tokens));
        assert_eq!(c, &vocab.encode(&ex.context_tokens));
        let decoded: Vec<&str> = c.iter().map(|&id| vocab.token(id)).collect();
        assert_eq!(decoded, ex.context_tokens);
    }
    for b in &batches {
        let width = b.context_ids[0].len();
        assert_eq!(width, (0..b.len()).map(|i| b.context_len(i)).max().unwrap());
    }
}

#[test]
fn unknown_tokens_map_to_unk() {
    let examples = generate_synthetic(&SyntheticConfig {
        num_examples: 5,
        ..Default::default()
    })
    .unwrap();
    let vocab = Vocab::build(&examples);
    let known = examples[0].context_tokens[0].clone();
    let ids = vocab.encode(&[known, "zzzunseen".to_string()]);
    assert_ne!(ids[0], UNK_ID);
    assert_eq!(ids[1], UNK_ID);
}
