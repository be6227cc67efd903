use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use crate::data::{encode_batch, Example, Vocab};
use crate::error::Result;
use crate::model::Model;
use crate::reader::{predict_span, Prediction};
use crate::substrate::{Graph, Tensor};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenWeight {
    pub position: usize,
    pub token: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadDump {
    /// `"context"` or `"question"`.
    pub side: String,
    pub head: usize,
    pub top: Vec<TokenWeight>,
}

/// One JSON line of `inspect` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectRecord {
    pub example_id: String,
    pub heads: Vec<HeadDump>,
    pub na_logit: f64,
    pub prediction: Option<String>,
}

/// Indices of the `k` largest entries of `row` among unmasked positions,
/// largest first; ties keep the earlier position first.
pub fn top_k(row: &[f64], mask: &[bool], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..row.len()).filter(|&i| mask[i]).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| (i, row[i])).collect()
}

fn dump(side: &str, a: &Tensor, tokens: &[String], mask: &[bool], k: usize) -> Vec<HeadDump> {
    (0..a.rows())
        .map(|head| HeadDump {
            side: side.to_string(),
            head,
            top: top_k(a.row(head), mask, k)
                .into_iter()
                .map(|(position, weight)| TokenWeight {
                    position,
                    token: tokens[position].clone(),
                    weight,
                })
                .collect(),
        })
        .collect()
}

/// Top-`k` attention weights of every context and question head. Models
/// without extractors produce an empty head list.
pub fn inspect_model(model: &Model, vocab: &Vocab, example: &Example, k: usize, tau: f64) -> Result<InspectRecord> {
    let batch = encode_batch(&[example], vocab);
    let mut g = Graph::new(&model.store);
    let fwd = model.forward(&mut g, &batch, 0)?;
    let mut heads = Vec::new();
    if let Some(a) = fwd.context_attention {
        heads.extend(dump(
            "context",
            g.value(a),
            &example.raw_context_tokens,
            &batch.context_mask[0],
            k,
        ));
    }
    if let Some(a) = fwd.question_attention {
        heads.extend(dump(
            "question",
            g.value(a),
            &example.question_tokens,
            &batch.question_mask[0],
            k,
        ));
    }
    let decision = predict_span(
        g.value(fwd.start).data(),
        g.value(fwd.end).data(),
        &batch.context_mask[0],
        model.config.max_span_len,
        tau,
    );
    Ok(InspectRecord {
        example_id: example.id.clone(),
        heads,
        na_logit: g.value(fwd.na).item(),
        prediction: match decision.prediction {
            Prediction::Span(span) => Some(example.span_text(span)),
            Prediction::NoAnswer => None,
        },
    })
}

pub fn inspect(checkpoint: &Checkpoint, examples: &[Example], k: usize) -> Result<Vec<InspectRecord>> {
    let model = checkpoint.model()?;
    examples
        .iter()
        .map(|ex| inspect_model(&model, &checkpoint.vocab, ex, k, checkpoint.config.tau))
        .collect()
}
