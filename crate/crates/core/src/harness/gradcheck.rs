//! Analytic versus central finite-difference gradients of the joint loss.

use serde::{Deserialize, Serialize};

use crate::data::{encode_batch, EncodedBatch, Example, Vocab};
use crate::error::Result;
use crate::model::{Model, ModelConfig, Variant};
use crate::substrate::{Gradients, Graph};

/// Denominator floor of the relative error, so that entries whose true
/// gradient is zero are judged by absolute error.
pub const REL_FLOOR: f64 = 1e-6;
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relation-module model with every optional path switched on and all
/// dimensions at most 8.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        hidden: 6,
        embed: 4,
        context_heads: 3,
        question_heads: 2,
        g_hidden: Some(5),
        relation_dim: Some(5),
        f_hidden: Some(5),
        summary_dim: Some(5),
        alpha: 0.0005,
        augment_bias: true,
        use_pooled_summary: true,
        variant: Variant::RelationModule,
        max_span_len: 3,
        ..ModelConfig::default()
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn example(id: &str, q: &str, c: &str, answer: Option<(usize, usize)>, plausible: Option<(usize, usize)>) -> Example {
    Example {
        id: id.into(),
        question_tokens: words(q),
        context_tokens: words(c),
        raw_context_tokens: words(c),
        answer_span: answer,
        plausible_span: plausible,
        is_answerable: answer.is_some(),
    }
}

/// Three examples with contexts of at most 4 tokens: answerable,
/// unanswerable with a plausible span, and unanswerable without one
/// (shorter, so the batch carries padding).
pub fn micro_examples() -> Vec<Example> {
    vec![
        example(
            "g0",
            "who caused it",
            "storm ike caused damage",
            Some((0, 1)),
            Some((0, 1)),
        ),
        example("g1", "what was 5", "flood rita caused 8", None, Some((0, 1))),
        example("g2", "who was it", "ike was big", None, None),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: String,
    pub scalars: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter and flat index of the largest relative error.
    pub worst: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub loss: f64,
    pub groups: Vec<GroupReport>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

fn total_loss(model: &Model, batch: &EncodedBatch) -> Result<f64> {
    let mut total = 0.0;
    for b in 0..batch.len() {
        let mut g = Graph::new(&model.store);
        let (_, l) = model.example_loss(&mut g, batch, b)?;
        total += g.value(l).item();
    }
    Ok(total)
}

fn analytic(model: &Model, batch: &EncodedBatch) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(&model.store);
    for b in 0..batch.len() {
        let mut g = Graph::new(&model.store);
        let (_, l) = model.example_loss(&mut g, batch, b)?;
        grads.add_assign(g.backward(l)?.gradients());
    }
    Ok(grads)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks every scalar parameter of a freshly initialised model on
/// `examples` (summed joint loss).
pub fn gradcheck_model(config: &ModelConfig, examples: &[Example], seed: u64, step: f64) -> Result<GradcheckReport> {
    let vocab = Vocab::build(examples);
    let refs: Vec<&Example> = examples.iter().collect();
    let batch = encode_batch(&refs, &vocab);
    let mut model = Model::new(config.clone(), vocab.len(), seed)?;
    let loss = total_loss(&model, &batch)?;
    let grads = analytic(&model, &batch)?;

    let mut groups: Vec<GroupReport> = model
        .store
        .groups()
        .into_iter()
        .map(|group| GroupReport {
            group,
            scalars: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst: String::new(),
        })
        .collect();
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let name = model.store.get(id).name.clone();
        let gi = groups
            .iter()
            .position(|g| g.group == model.store.get(id).group)
            .expect("every group listed");
        for k in 0..model.store.value(id).len() {
            let orig = model.store.value(id).data()[k];
            model.store.value_mut(id).data_mut()[k] = orig + step;
            let plus = total_loss(&model, &batch)?;
            model.store.value_mut(id).data_mut()[k] = orig - step;
            let minus = total_loss(&model, &batch)?;
            model.store.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grads.get(id).data()[k];
            let rel = relative_error(a, numeric);
            let report = &mut groups[gi];
            report.scalars += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = format!("{name}[{k}]");
            }
        }
    }
    Ok(GradcheckReport { step, loss, groups })
}

pub fn gradcheck(step: f64, seed: u64) -> Result<GradcheckReport> {
    gradcheck_model(&micro_config(), &micro_examples(), seed, step)
}
