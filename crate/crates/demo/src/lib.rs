//! Browser bindings for three model pieces, run on untrained weights:
//! multi-head attention over a sentence, the relation network over the
//! extracted objects, and the span/no-answer decision rule.
//!
//! Tokens are embedded with fixed pseudo-random vectors derived from their
//! text, so equal words always get equal vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use relmod::data::tokenize_words;
use relmod::objects::{orthogonality_penalty, Activation, ExtractorParams, PenaltyNorm};
use relmod::reader::{predict_span, Prediction};
use relmod::relnet::{RelNetDims, RelNetParams};
use relmod::substrate::{Graph, ParamStore, Tensor};
use relmod::{Error, Result};

pub const EMBED_DIM: usize = 8;
const MAX_HEADS: usize = 64;

#[derive(Clone, Debug, Serialize)]
pub struct Attention {
    pub tokens: Vec<String>,
    /// `heads × tokens`.
    pub weights: Vec<Vec<f64>>,
    /// `‖A·Aᵀ − I‖_F`.
    pub penalty: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Relations {
    pub context_heads: usize,
    pub question_heads: usize,
    /// Pair weights `Ω`, one row per context object.
    pub omega: Vec<Vec<f64>>,
    /// Object weights `Γ`.
    pub gamma: Vec<f64>,
    pub na_logit: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Decision {
    /// Inclusive token span, or `None` for no answer.
    pub span: Option<(usize, usize)>,
    pub best_span: Option<(usize, usize)>,
    pub best_score: Option<f64>,
    pub na_score: f64,
    pub margin: f64,
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

pub fn embed(tokens: &[String]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = tokens
        .iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(t));
            (0..EMBED_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()
        })
        .collect();
    Tensor::from_rows(&rows)
}

fn tokens_of(text: &str) -> Result<Vec<String>> {
    let tokens = tokenize_words(text);
    if tokens.is_empty() {
        return Err(Error::Config("enter at least one word".into()));
    }
    Ok(tokens)
}

fn check_heads(heads: usize) -> Result<()> {
    if heads == 0 || heads > MAX_HEADS {
        return Err(Error::Config(format!("heads must be in 1..={MAX_HEADS}")));
    }
    Ok(())
}

pub fn attention(text: &str, heads: usize, seed: u64) -> Result<Attention> {
    check_heads(heads)?;
    let tokens = tokens_of(text)?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ext = ExtractorParams::new(
        &mut store,
        "context_extractor",
        heads,
        EMBED_DIM,
        Activation::Tanh,
        &mut rng,
    )?;
    let mut g = Graph::new(&store);
    let x = g.input(embed(&tokens)?);
    let (a, _) = ext.run(&mut g, x, &vec![true; tokens.len()])?;
    let p = orthogonality_penalty(&mut g, a, 1.0, PenaltyNorm::Frobenius)?;
    let a = g.value(a);
    Ok(Attention {
        weights: (0..a.rows()).map(|h| a.row(h).to_vec()).collect(),
        penalty: g.value(p).item(),
        tokens,
    })
}

pub fn relations(context: &str, question: &str, heads: usize, seed: u64) -> Result<Relations> {
    check_heads(heads)?;
    let context = tokens_of(context)?;
    let question = tokens_of(question)?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ce = ExtractorParams::new(
        &mut store,
        "context_extractor",
        heads,
        EMBED_DIM,
        Activation::Tanh,
        &mut rng,
    )?;
    let qe = ExtractorParams::new(
        &mut store,
        "question_extractor",
        2,
        EMBED_DIM,
        Activation::Tanh,
        &mut rng,
    )?;
    let dims = RelNetDims {
        hidden: EMBED_DIM,
        g_hidden: EMBED_DIM,
        relation: EMBED_DIM,
        f_hidden: EMBED_DIM,
        summary: EMBED_DIM,
    };
    let rn = RelNetParams::new(&mut store, dims, false, &mut rng)?;
    let mut g = Graph::new(&store);
    let cx = g.input(embed(&context)?);
    let qx = g.input(embed(&question)?);
    let (_, o) = ce.run(&mut g, cx, &vec![true; context.len()])?;
    let (_, q) = qe.run(&mut g, qx, &vec![true; question.len()])?;
    let out = rn.run(&mut g, o, q, None)?.values(&g);
    Ok(Relations {
        context_heads: heads,
        question_heads: 2,
        omega: (0..out.omega.rows()).map(|i| out.omega.row(i).to_vec()).collect(),
        gamma: out.gamma,
        na_logit: out.na,
    })
}

/// `start` and `end` hold one logit per token followed by the no-answer slot.
pub fn decision(start: &[f64], end: &[f64], tau: f64, max_span_len: usize) -> Result<Decision> {
    if start.len() != end.len() || start.len() < 2 {
        return Err(Error::Config(
            "need equal start and end logits for ≥ 1 token plus the no-answer slot".into(),
        ));
    }
    let d = predict_span(start, end, &vec![true; start.len() - 1], max_span_len, tau);
    Ok(Decision {
        span: match d.prediction {
            Prediction::Span(s) => Some(s),
            Prediction::NoAnswer => None,
        },
        best_span: d.best_span.map(|(s, _)| s),
        best_score: d.best_span.map(|(_, v)| v),
        na_score: d.na_score,
        margin: d.answer_margin(),
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

/// JSON [`Attention`] for `text`.
#[wasm_bindgen(js_name = attention)]
pub fn attention_js(text: &str, heads: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(attention(text, heads, u64::from(seed)))
}

/// JSON [`Relations`] for a context and a question.
#[wasm_bindgen(js_name = relations)]
pub fn relations_js(context: &str, question: &str, heads: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(relations(context, question, heads, u64::from(seed)))
}

/// JSON [`Decision`] for start and end logits.
#[wasm_bindgen(js_name = decide)]
pub fn decision_js(start: &[f64], end: &[f64], tau: f64, max_span_len: usize) -> std::result::Result<String, JsError> {
    to_js(decision(start, end, tau, max_span_len))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_rows_sum_to_one() {
        let a = attention("the storm caused 5 billion in damage", 4, 1).unwrap();
        assert_eq!(a.tokens.len(), 7);
        assert_eq!(a.weights.len(), 4);
        for row in &a.weights {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(a.penalty > 0.0);
    }

    #[test]
    fn equal_words_share_embeddings() {
        let e = embed(&["storm".into(), "flood".into(), "storm".into()]).unwrap();
        assert_eq!(e.row(0), e.row(2));
        assert_ne!(e.row(0), e.row(1));
    }

    #[test]
    fn relations_are_distributions() {
        let r = relations("katrina caused 125 billion in damage", "what caused damage ?", 3, 2).unwrap();
        assert_eq!(r.omega.len(), 3);
        assert!((r.gamma.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for row in &r.omega {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(r.na_logit.is_finite());
    }

    #[test]
    fn decision_follows_threshold() {
        let start = [2.0, 0.0, 0.5];
        let end = [0.0, 1.0, 0.5];
        let d = decision(&start, &end, 0.0, 5).unwrap();
        assert_eq!(d.best_span, Some((0, 1)));
        assert_eq!(d.span, Some((0, 1)));
        assert!((d.margin - 2.0).abs() < 1e-12);
        assert_eq!(decision(&start, &end, 2.5, 5).unwrap().span, None);
    }

    #[test]
    fn bad_inputs_are_errors() {
        assert!(attention("   ", 2, 0).is_err());
        assert!(attention("word", 0, 0).is_err());
        assert!(decision(&[1.0], &[1.0], 0.0, 3).is_err());
        assert!(decision(&[1.0, 0.0], &[1.0], 0.0, 3).is_err());
    }
}
