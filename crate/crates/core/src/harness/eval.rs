use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::metrics::{score, Metrics, ScoredPrediction};
use crate::data::{batchify, Example, Vocab};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::reader::{predict_span, Prediction, SpanDecision};
use crate::substrate::Graph;

const EVAL_BATCH: usize = 64;

/// Per-example outputs of one evaluation pass.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: Metrics,
    /// Mean joint loss over the examples.
    pub loss: f64,
    pub predictions: Vec<ScoredPrediction>,
    pub decisions: Vec<SpanDecision>,
}

fn prediction_text(ex: &Example, decision: &SpanDecision) -> Option<String> {
    match decision.prediction {
        Prediction::Span(span) => Some(ex.span_text(span)),
        Prediction::NoAnswer => None,
    }
}

fn gold_text(ex: &Example) -> Option<String> {
    ex.answer_span.map(|s| ex.span_text(s))
}

/// Runs the model over `examples`, computing both the joint loss and the
/// span decisions at threshold `tau`.
pub fn evaluate_model(model: &Model, vocab: &Vocab, examples: &[Example], tau: f64) -> Result<Evaluation> {
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(examples.len());
    let mut decisions = Vec::with_capacity(examples.len());
    let mut offset = 0;
    for batch in batchify(examples, EVAL_BATCH, vocab) {
        for b in 0..batch.len() {
            let ex = &examples[offset + b];
            let mut g = Graph::new(&model.store);
            let (fwd, l) = model.example_loss(&mut g, &batch, b)?;
            loss += g.value(l).item();
            let decision = predict_span(
                g.value(fwd.start).data(),
                g.value(fwd.end).data(),
                &batch.context_mask[b],
                model.config.max_span_len,
                tau,
            );
            predictions.push(ScoredPrediction {
                id: ex.id.clone(),
                prediction: prediction_text(ex, &decision),
                gold: gold_text(ex),
            });
            decisions.push(decision);
        }
        offset += batch.len();
    }
    Ok(Evaluation {
        metrics: score(&predictions),
        loss: loss / examples.len().max(1) as f64,
        predictions,
        decisions,
    })
}

pub fn evaluate_full(checkpoint: &Checkpoint, examples: &[Example], tau: f64) -> Result<Evaluation> {
    let model = checkpoint.model()?;
    evaluate_model(&model, &checkpoint.vocab, examples, tau)
}

pub fn evaluate(checkpoint: &Checkpoint, examples: &[Example], tau: f64) -> Result<Metrics> {
    evaluate_full(checkpoint, examples, tau).map(|e| e.metrics)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauPoint {
    #[serde(with = "super::float")]
    pub tau: f64,
    pub metrics: Metrics,
}

/// Re-scores stored decisions at every threshold where some prediction
/// flips, plus `−∞`. Returns the curve and the index of the best F1 (ties go
/// to the smaller threshold).
pub fn sweep_tau(examples: &[Example], decisions: &[SpanDecision]) -> Result<(Vec<TauPoint>, usize)> {
    if examples.len() != decisions.len() {
        return Err(Error::Config(format!(
            "{} examples but {} decisions",
            examples.len(),
            decisions.len()
        )));
    }
    let mut taus: Vec<f64> = decisions
        .iter()
        .map(SpanDecision::answer_margin)
        .filter(|m| m.is_finite())
        .collect();
    taus.push(f64::NEG_INFINITY);
    taus.push(f64::INFINITY);
    taus.sort_by(f64::total_cmp);
    taus.dedup();

    let mut curve = Vec::with_capacity(taus.len());
    let mut best = 0;
    for tau in taus {
        let items: Vec<ScoredPrediction> = examples
            .iter()
            .zip(decisions)
            .map(|(ex, d)| {
                let prediction = match d.best_span {
                    Some((span, _)) if d.answer_margin() >= tau => Some(ex.span_text(span)),
                    _ => None,
                };
                ScoredPrediction {
                    id: ex.id.clone(),
                    prediction,
                    gold: gold_text(ex),
                }
            })
            .collect();
        let metrics = score(&items);
        if metrics.f1 > curve.get(best).map_or(f64::NEG_INFINITY, |p: &TauPoint| p.metrics.f1) {
            best = curve.len();
        }
        curve.push(TauPoint { tau, metrics });
    }
    Ok((curve, best))
}
