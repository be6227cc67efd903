mod common;

use std::path::PathBuf;

use common::reference_score;

use relmod::data::{encode_batch, generate_synthetic, Example, SyntheticConfig, Vocab};
use relmod::harness::{
    ablation_specs, evaluate_full, evaluate_model, exact_match, f1_score, gradcheck, inspect_model, score, sweep_tau,
    train, Checkpoint, RunConfig, ScoredPrediction,
};
use relmod::model::{Model, ModelConfig, Variant};
use relmod::substrate::Graph;
use serde::Deserialize;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[derive(Deserialize)]
struct ScoredItem {
    id: String,
    prediction: Option<String>,
    gold: Option<String>,
    em: u8,
    f1: [u32; 2],
}

#[derive(Deserialize)]
struct Expected {
    em: [u32; 2],
    f1: [u32; 2],
    na_accuracy: [u32; 2],
    answerable_accuracy: [u32; 2],
    answerable: usize,
    unanswerable: usize,
}

fn ratio([n, d]: [u32; 2]) -> f64 {
    f64::from(n) / f64::from(d)
}

#[test]
fn metrics_match_hand_scored_fixture() {
    let items: Vec<ScoredItem> = std::fs::read_to_string(fixture("metrics_20.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let expected: Expected =
        serde_json::from_str(&std::fs::read_to_string(fixture("metrics_20_expected.json")).unwrap()).unwrap();
    assert_eq!(items.len(), 20);

    for item in &items {
        let (p, g) = (item.prediction.as_deref(), item.gold.as_deref());
        assert_eq!(exact_match(p, g), f64::from(item.em), "{} EM", item.id);
        assert!((f1_score(p, g) - ratio(item.f1)).abs() < 1e-12, "{} F1", item.id);
    }

    let (mut em_sum, mut f1_sum) = (0.0, 0.0);
    for item in &items {
        let (em, f1) = reference_score(item.prediction.as_deref(), item.gold.as_deref());
        assert_eq!(em, f64::from(item.em), "{} reference EM", item.id);
        assert!((f1 - ratio(item.f1)).abs() < 1e-12, "{} reference F1", item.id);
        em_sum += em;
        f1_sum += f1;
    }

    let preds: Vec<ScoredPrediction> = items
        .iter()
        .map(|i| ScoredPrediction {
            id: i.id.clone(),
            prediction: i.prediction.clone(),
            gold: i.gold.clone(),
        })
        .collect();
    let m = score(&preds);
    assert_eq!(m.count, 20);
    assert_eq!(m.answerable, expected.answerable);
    assert_eq!(m.unanswerable, expected.unanswerable);
    assert!((m.em - 100.0 * em_sum / 20.0).abs() < 1e-9);
    assert!((m.f1 - 100.0 * f1_sum / 20.0).abs() < 1e-9);
    assert!((m.em - 100.0 * ratio(expected.em)).abs() < 1e-9, "EM {}", m.em);
    assert!((m.f1 - 100.0 * ratio(expected.f1)).abs() < 1e-9, "F1 {}", m.f1);
    assert!((m.na_accuracy - 100.0 * ratio(expected.na_accuracy)).abs() < 1e-9);
    assert!((m.answerable_accuracy - 100.0 * ratio(expected.answerable_accuracy)).abs() < 1e-9);
}

#[test]
fn perfect_predictions_score_100() {
    let golds = [Some("hurricane katrina"), None, Some("125 billion"), None];
    let preds: Vec<ScoredPrediction> = golds
        .iter()
        .enumerate()
        .map(|(i, g)| ScoredPrediction {
            id: i.to_string(),
            prediction: g.map(str::to_string),
            gold: g.map(str::to_string),
        })
        .collect();
    let m = score(&preds);
    assert_eq!(
        (m.em, m.f1, m.na_accuracy, m.answerable_accuracy),
        (100.0, 100.0, 100.0, 100.0)
    );
}

fn tiny_config(variant: Variant) -> RunConfig {
    let mut c = RunConfig {
        model: ModelConfig {
            hidden: 8,
            embed: 6,
            context_heads: 3,
            question_heads: 2,
            variant,
            ..Default::default()
        },
        batch_size: 8,
        epochs: 2,
        synthetic_dev_examples: 16,
        ..Default::default()
    };
    c.synthetic.num_examples = 32;
    c
}

fn tiny_data() -> (Vec<Example>, Vec<Example>) {
    let train_set = generate_synthetic(&SyntheticConfig {
        num_examples: 32,
        ..Default::default()
    })
    .unwrap();
    let dev = generate_synthetic(&SyntheticConfig {
        num_examples: 16,
        rng_seed: 18,
        ..Default::default()
    })
    .unwrap();
    (train_set, dev)
}

#[test]
fn checkpoint_reload_reproduces_evaluation_bit_exactly() {
    let (train_set, dev) = tiny_data();
    let ck = train(&tiny_config(Variant::RelationModule), &train_set, &dev, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("tiny.ckpt");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.epoch, ck.epoch);
    assert_eq!(loaded.history.len(), 2);

    let a = evaluate_full(&ck, &dev, 0.0).unwrap();
    let b = evaluate_full(&loaded, &dev, 0.0).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    assert_eq!(a.predictions, b.predictions);
    assert_eq!(a.decisions, b.decisions);
    let best = ck.history.iter().find(|r| r.epoch == ck.epoch).unwrap();
    assert_eq!(best.dev_loss.to_bits(), a.loss.to_bits());
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let (train_set, dev) = tiny_data();
    let config = tiny_config(Variant::RelationModule);
    let a = train(&config, &train_set, &dev, |_| {}).unwrap();
    let b = train(&config, &train_set, &dev, |_| {}).unwrap();
    assert_eq!(a.history, b.history);
    for (x, y) in a.params.iter().zip(&b.params) {
        assert_eq!(x.tensor, y.tensor, "{}", x.name);
    }
    let c = train(&RunConfig { seed: 2, ..config }, &train_set, &dev, |_| {}).unwrap();
    assert_ne!(a.history[0].train_loss, c.history[0].train_loss);
}

#[test]
fn inspect_reports_sorted_attention_rows() {
    let (train_set, _) = tiny_data();
    let vocab = Vocab::build(&train_set);
    let config = tiny_config(Variant::RelationModule).model;
    let model = Model::new(config, vocab.len(), 3).unwrap();
    let ex = &train_set[0];
    let record = inspect_model(&model, &vocab, ex, 4, 0.0).unwrap();
    let context: Vec<_> = record.heads.iter().filter(|h| h.side == "context").collect();
    let question: Vec<_> = record.heads.iter().filter(|h| h.side == "question").collect();
    assert_eq!(context.len(), 3);
    assert_eq!(question.len(), 2);
    for head in &record.heads {
        assert_eq!(head.top.len(), 4);
        assert!(head.top.windows(2).all(|w| w[0].weight >= w[1].weight));
        for tw in &head.top {
            let tokens = if head.side == "context" {
                &ex.raw_context_tokens
            } else {
                &ex.question_tokens
            };
            assert_eq!(tw.token, tokens[tw.position]);
            assert!(tw.weight > 0.0 && tw.weight <= 1.0);
        }
    }

    let batch = encode_batch(&[ex], &vocab);
    let mut g = Graph::new(&model.store);
    let fwd = model.forward(&mut g, &batch, 0).unwrap();
    let a = g.value(fwd.context_attention.unwrap());
    for head in record.heads.iter().filter(|h| h.side == "context") {
        for tw in &head.top {
            assert_eq!(tw.weight.to_bits(), a.at(head.head, tw.position).to_bits());
        }
        let mut row = a.row(head.head).to_vec();
        row.sort_by(|x, y| y.total_cmp(x));
        let dumped: Vec<f64> = head.top.iter().map(|t| t.weight).collect();
        assert_eq!(dumped, row[..4]);
    }

    let mut single = ex.clone();
    single.context_tokens.truncate(1);
    single.raw_context_tokens.truncate(1);
    single.answer_span = Some((0, 0));
    single.plausible_span = Some((0, 0));
    single.is_answerable = true;
    let record = inspect_model(&model, &vocab, &single, 4, 0.0).unwrap();
    for head in record.heads.iter().filter(|h| h.side == "context") {
        assert_eq!(head.top.len(), 1);
        assert_eq!(head.top[0].position, 0);
        assert!((head.top[0].weight - 1.0).abs() < 1e-12);
    }
}

#[test]
fn gradcheck_covers_every_parameter_group() {
    let report = gradcheck(1e-5, 1).unwrap();
    let groups: Vec<&str> = report.groups.iter().map(|g| g.group.as_str()).collect();
    assert_eq!(
        groups,
        [
            "reader",
            "augment",
            "context_extractor",
            "question_extractor",
            "relnet",
            "na_head"
        ]
    );
    for g in &report.groups {
        assert!(g.scalars > 0);
        assert!(
            g.max_rel_error < 1e-4,
            "{} {:.3e} at {}",
            g.group,
            g.max_rel_error,
            g.worst
        );
    }
}

#[test]
fn extreme_thresholds_force_one_class() {
    let (train_set, dev) = tiny_data();
    let vocab = Vocab::build(&train_set);
    let model = Model::new(tiny_config(Variant::RelationModule).model, vocab.len(), 5).unwrap();
    let always = evaluate_model(&model, &vocab, &dev, f64::NEG_INFINITY).unwrap().metrics;
    assert_eq!(always.na_accuracy, 0.0);
    assert_eq!(always.answerable_accuracy, 100.0);
    let never = evaluate_model(&model, &vocab, &dev, f64::INFINITY).unwrap().metrics;
    assert_eq!(never.na_accuracy, 100.0);
    assert_eq!(never.answerable_accuracy, 0.0);

    let eval = evaluate_model(&model, &vocab, &dev, 0.0).unwrap();
    let (curve, best) = sweep_tau(&dev, &eval.decisions).unwrap();
    assert!(curve.iter().all(|p| p.metrics.f1 <= curve[best].metrics.f1));
    for point in &curve {
        let direct = evaluate_model(&model, &vocab, &dev, point.tau).unwrap().metrics;
        assert_eq!(direct, point.metrics, "tau {}", point.tau);
    }
}

#[test]
fn variants_register_only_their_groups() {
    let expect = [
        (
            Variant::RelationModule,
            &[
                "reader",
                "augment",
                "context_extractor",
                "question_extractor",
                "relnet",
                "na_head",
            ][..],
        ),
        (Variant::BaselineFcNa, &["reader", "na_head"][..]),
        (Variant::PlausibleOnly, &["reader", "augment", "na_head"][..]),
        (
            Variant::NoAugmentation,
            &["reader", "context_extractor", "question_extractor", "relnet", "na_head"][..],
        ),
    ];
    for (variant, groups) in expect {
        let model = Model::new(tiny_config(variant).model, 20, 1).unwrap();
        assert_eq!(model.store.groups(), groups, "{variant:?}");
    }
}

#[test]
fn ablation_specs_cover_heads_and_baselines() {
    let specs = ablation_specs(&RunConfig::default(), &[4, 16, 64]);
    let names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "heads_4",
            "heads_16",
            "heads_64",
            "baseline_fc_na",
            "plausible_only",
            "no_augmentation"
        ]
    );
    assert_eq!(specs[2].config.model.context_heads, 64);
    assert_eq!(specs[2].config.model.variant, Variant::RelationModule);
    assert_eq!(specs[4].config.model.variant, Variant::PlausibleOnly);
}
