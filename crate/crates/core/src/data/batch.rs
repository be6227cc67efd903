use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::example::{Example, Span};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

/// Token ↔ id mapping. Id 0 is padding, id 1 stands for unknown tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabTokens", into = "VocabTokens")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Serialize, Deserialize)]
struct VocabTokens {
    tokens: Vec<String>,
}

impl From<VocabTokens> for Vocab {
    fn from(v: VocabTokens) -> Self {
        Vocab::from_tokens(v.tokens)
    }
}

impl From<Vocab> for VocabTokens {
    fn from(v: Vocab) -> Self {
        VocabTokens { tokens: v.tokens }
    }
}

impl Vocab {
    /// Builds a vocabulary from question and context tokens, most frequent
    /// first (ties broken lexicographically).
    pub fn build<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for ex in examples {
            for t in ex.question_tokens.iter().chain(&ex.context_tokens) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(t, _)| *t != PAD && *t != UNK).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = [PAD, UNK]
            .into_iter()
            .chain(ranked.into_iter().map(|(t, _)| t))
            .map(str::to_string)
            .collect();
        Vocab::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK, String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Padded id matrices and labels for a group of examples.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBatch {
    pub example_ids: Vec<String>,
    /// `B × Lq`, padded with [`PAD_ID`].
    pub question_ids: Vec<Vec<usize>>,
    pub question_mask: Vec<Vec<bool>>,
    /// `B × Lc`, padded with [`PAD_ID`].
    pub context_ids: Vec<Vec<usize>>,
    pub context_mask: Vec<Vec<bool>>,
    pub answer_spans: Vec<Option<Span>>,
    pub plausible_spans: Vec<Option<Span>>,
    pub answerable: Vec<bool>,
}

impl EncodedBatch {
    pub fn len(&self) -> usize {
        self.example_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.example_ids.is_empty()
    }

    pub fn question_len(&self, b: usize) -> usize {
        self.question_mask[b].iter().filter(|m| **m).count()
    }

    pub fn context_len(&self, b: usize) -> usize {
        self.context_mask[b].iter().filter(|m| **m).count()
    }

    /// Span used for the auxiliary plausible-answer loss.
    pub fn auxiliary_span(&self, b: usize) -> Option<Span> {
        self.answer_spans[b].or(self.plausible_spans[b])
    }

    /// Strips padding: `(question ids, context ids)` per example.
    pub fn unpad(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        (0..self.len())
            .map(|b| {
                (
                    self.question_ids[b][..self.question_len(b)].to_vec(),
                    self.context_ids[b][..self.context_len(b)].to_vec(),
                )
            })
            .collect()
    }
}

fn pad(rows: Vec<Vec<usize>>) -> (Vec<Vec<usize>>, Vec<Vec<bool>>) {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let masks = rows.iter().map(|r| (0..width).map(|i| i < r.len()).collect()).collect();
    let padded = rows
        .into_iter()
        .map(|mut r| {
            r.resize(width, PAD_ID);
            r
        })
        .collect();
    (padded, masks)
}

pub fn encode_batch(examples: &[&Example], vocab: &Vocab) -> EncodedBatch {
    let (question_ids, question_mask) = pad(examples.iter().map(|e| vocab.encode(&e.question_tokens)).collect());
    let (context_ids, context_mask) = pad(examples.iter().map(|e| vocab.encode(&e.context_tokens)).collect());
    EncodedBatch {
        example_ids: examples.iter().map(|e| e.id.clone()).collect(),
        question_ids,
        question_mask,
        context_ids,
        context_mask,
        answer_spans: examples.iter().map(|e| e.answer_span).collect(),
        plausible_spans: examples.iter().map(|e| e.plausible_span).collect(),
        answerable: examples.iter().map(|e| e.is_answerable).collect(),
    }
}

/// Consecutive chunks of `batch_size` examples, each padded to its own
/// maximum lengths.
pub fn batchify(examples: &[Example], batch_size: usize, vocab: &Vocab) -> Vec<EncodedBatch> {
    let refs: Vec<&Example> = examples.iter().collect();
    refs.chunks(batch_size.max(1))
        .map(|chunk| encode_batch(chunk, vocab))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: &str, context_len: usize) -> Example {
        let context: Vec<String> = (0..context_len).map(|i| format!("w{i}")).collect();
        Example {
            id: id.into(),
            question_tokens: vec!["what".into(), "w0".into()],
            raw_context_tokens: context.clone(),
            context_tokens: context,
            answer_span: Some((0, 0)),
            plausible_span: Some((0, 0)),
            is_answerable: true,
        }
    }

    #[test]
    fn pads_to_batch_max() {
        let data = vec![ex("a", 5), ex("b", 9)];
        let vocab = Vocab::build(&data);
        let batches = batchify(&data, 8, &vocab);
        assert_eq!(batches.len(), 1);
        let b = &batches[0];
        assert_eq!(b.context_ids.len(), 2);
        assert!(b.context_ids.iter().all(|r| r.len() == 9));
        let sums: Vec<usize> = (0..2).map(|i| b.context_len(i)).collect();
        assert_eq!(sums, [5, 9]);
        assert_eq!(b.context_ids[0][5..], [PAD_ID; 4]);
    }

    #[test]
    fn unknown_token_maps_to_unk() {
        let vocab = Vocab::build(&[ex("a", 2)]);
        assert_eq!(vocab.id("never-seen"), UNK_ID);
        assert_eq!(vocab.id("<pad>"), PAD_ID);
        assert_ne!(vocab.id("w1"), UNK_ID);
    }

    #[test]
    fn empty_input_gives_no_batches() {
        let vocab = Vocab::build(&[]);
        assert!(batchify(&[], 4, &vocab).is_empty());
    }

    #[test]
    fn vocab_order_is_deterministic() {
        let data = vec![ex("a", 3), ex("b", 4)];
        assert_eq!(Vocab::build(&data), Vocab::build(data.iter().rev()));
    }
}
