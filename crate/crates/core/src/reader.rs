//! Small trainable reader: token embeddings plus an exact-match feature,
//! two stacked bidirectional tanh recurrent layers shared by question and
//! context, and start/end projections over the context encoding.

use rand::Rng;

use crate::data::{EncodedBatch, Span, PAD_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::substrate::{Graph, ParamId, ParamStore, Tensor, Var};

pub const GROUP: &str = "reader";

/// Recurrent direction: `h_t = tanh(x_t·W_in + h_{t−1}·W_rec + b)`.
#[derive(Clone, Debug)]
struct Direction {
    w_in: ParamId,
    w_rec: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct BiLayer {
    forward: Direction,
    backward: Direction,
}

#[derive(Clone, Debug)]
pub struct ReaderParams {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    embedding: ParamId,
    layers: Vec<BiLayer>,
    w_start: ParamId,
    w_end: ParamId,
}

/// Encoder outputs for one example, padded to the batch widths.
#[derive(Clone, Copy, Debug)]
pub struct Encoded {
    /// `Lq × h`.
    pub question: Var,
    /// `Lc × h`.
    pub context: Var,
}

impl ReaderParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        vocab_size: usize,
        embed_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden < 2 || hidden % 2 != 0 {
            return Err(Error::Config(format!(
                "reader hidden size must be even and ≥ 2, got {hidden}"
            )));
        }
        let half = hidden / 2;
        let embedding = store.add_uniform(GROUP, "reader.embedding", &[vocab_size, embed_dim], 0.1, rng);
        let mut layers = Vec::new();
        for (l, input) in [(0, embed_dim + 1), (1, hidden)] {
            let mut direction = |name: &str, rng: &mut R| Direction {
                w_in: store.add_glorot(GROUP, &format!("reader.l{l}.{name}.w_in"), &[input, half], rng),
                w_rec: store.add_glorot(GROUP, &format!("reader.l{l}.{name}.w_rec"), &[half, half], rng),
                bias: store.add_zeros(GROUP, &format!("reader.l{l}.{name}.bias"), &[half]),
            };
            let forward = direction("fwd", rng);
            let backward = direction("bwd", rng);
            layers.push(BiLayer { forward, backward });
        }
        Ok(ReaderParams {
            vocab_size,
            embed_dim,
            hidden,
            embedding,
            layers,
            w_start: store.add_glorot(GROUP, "reader.w_start", &[hidden, 1], rng),
            w_end: store.add_glorot(GROUP, "reader.w_end", &[hidden, 1], rng),
        })
    }

    /// Encodes every example of `batch`.
    pub fn encode(&self, g: &mut Graph<'_>, batch: &EncodedBatch) -> Result<Vec<Encoded>> {
        (0..batch.len()).map(|b| self.encode_example(g, batch, b)).collect()
    }

    pub fn encode_example(&self, g: &mut Graph<'_>, batch: &EncodedBatch, b: usize) -> Result<Encoded> {
        let question = self.encode_sequence(
            g,
            &batch.question_ids[b],
            &batch.question_mask[b],
            &batch.context_ids[b],
        )?;
        let context = self.encode_sequence(g, &batch.context_ids[b], &batch.context_mask[b], &batch.question_ids[b])?;
        Ok(Encoded { question, context })
    }

    /// Runs the recurrent stack over the unmasked prefix of `ids`; padded
    /// rows of the result are zero. `other` is the opposite side of the pair,
    /// used for the exact-match feature.
    pub fn encode_sequence(&self, g: &mut Graph<'_>, ids: &[usize], mask: &[bool], other: &[usize]) -> Result<Var> {
        let len = prefix_len(mask)?;
        if let Some(&id) = ids[..len].iter().find(|&&id| id >= self.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: self.vocab_size,
            });
        }
        if len == 0 {
            return Ok(g.input(Tensor::zeros(&[ids.len(), self.hidden])));
        }
        let table = g.param(self.embedding);
        let emb = g.gather(table, &ids[..len])?;
        let flags: Vec<f64> = ids[..len]
            .iter()
            .map(|id| {
                let hit = *id != PAD_ID && *id != UNK_ID && other.contains(id);
                if hit {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let flag = g.input(Tensor::new(vec![len, 1], flags)?);
        let mut x = g.concat_cols(&[emb, flag])?;
        for layer in &self.layers {
            let fwd = run_direction(g, &layer.forward, x, len, false)?;
            let bwd = run_direction(g, &layer.backward, x, len, true)?;
            x = g.concat_cols(&[fwd, bwd])?;
        }
        let pad = ids.len() - len;
        if pad > 0 {
            let zeros = g.input(Tensor::zeros(&[pad, self.hidden]));
            x = g.concat_rows(&[x, zeros])?;
        }
        Ok(x)
    }

    /// Start and end logits over `Lc + 1` positions: the context positions
    /// (padding pushed to −1e30) followed by the virtual no-answer slot,
    /// whose logit is `na` (zero when absent).
    pub fn span_logits(&self, g: &mut Graph<'_>, context: Var, mask: &[bool], na: Option<Var>) -> Result<(Var, Var)> {
        let na = match na {
            Some(v) => v,
            None => g.input(Tensor::scalar(0.0)),
        };
        let mut heads = [self.w_start, self.w_end].into_iter().map(|w| -> Result<Var> {
            let wv = g.param(w);
            let col = g.matmul(context, wv)?;
            let row = g.transpose(col)?;
            let masked = g.mask_fill(row, mask)?;
            g.concat_cols(&[masked, na])
        });
        let start = heads.next().expect("two heads")?;
        let end = heads.next().expect("two heads")?;
        Ok((start, end))
    }
}

fn prefix_len(mask: &[bool]) -> Result<usize> {
    let len = mask.iter().take_while(|m| **m).count();
    if mask[len..].iter().any(|m| *m) {
        return Err(Error::InvalidShape {
            op: "encode",
            detail: "mask must be a contiguous prefix".into(),
        });
    }
    Ok(len)
}

fn run_direction(g: &mut Graph<'_>, dir: &Direction, x: Var, len: usize, reverse: bool) -> Result<Var> {
    let w_in = g.param(dir.w_in);
    let w_rec = g.param(dir.w_rec);
    let bias = g.param(dir.bias);
    let projected = g.matmul(x, w_in)?;
    let pre = g.add_bias(projected, bias)?;
    let mut states: Vec<Option<Var>> = vec![None; len];
    let mut prev: Option<Var> = None;
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    };
    for t in order {
        let mut step = g.slice_rows(pre, t, 1)?;
        if let Some(h) = prev {
            let rec = g.matmul(h, w_rec)?;
            step = g.add(step, rec)?;
        }
        let h = g.tanh(step);
        states[t] = Some(h);
        prev = Some(h);
    }
    let rows: Vec<Var> = states.into_iter().map(|s| s.expect("every step visited")).collect();
    g.concat_rows(&rows)
}

/// Decision for one example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Prediction {
    Span(Span),
    NoAnswer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpanDecision {
    pub prediction: Prediction,
    /// Highest `start[i] + end[j]` over admissible real spans.
    pub best_span: Option<(Span, f64)>,
    /// `start[Lc] + end[Lc]`.
    pub na_score: f64,
}

impl SpanDecision {
    /// `best_span_score − na_score`; the example is predicted answerable
    /// when this is at least the threshold.
    pub fn answer_margin(&self) -> f64 {
        match self.best_span {
            Some((_, s)) => s - self.na_score,
            None => f64::NEG_INFINITY,
        }
    }
}

/// Best span with `i ≤ j ≤ i + max_span_len` over unmasked positions, and the
/// no-answer decision: a span is returned when its score beats the virtual
/// slot's by at least `tau` (so `tau = −∞` never abstains, `tau = +∞` always
/// does). The last entry of `start` and `end` is the virtual no-answer slot.
pub fn predict_span(start: &[f64], end: &[f64], mask: &[bool], max_span_len: usize, tau: f64) -> SpanDecision {
    let lc = start.len() - 1;
    let na_score = start[lc] + end[lc];
    let mut best: Option<(Span, f64)> = None;
    for i in (0..lc).filter(|&i| mask[i]) {
        for j in i..=(i + max_span_len).min(lc - 1) {
            if !mask[j] {
                continue;
            }
            let score = start[i] + end[j];
            if best.is_none_or(|(_, s)| score > s) {
                best = Some(((i, j), score));
            }
        }
    }
    let prediction = match best {
        Some((span, score)) if score - na_score >= tau => Prediction::Span(span),
        _ => Prediction::NoAnswer,
    };
    SpanDecision {
        prediction,
        best_span: best,
        na_score,
    }
}
