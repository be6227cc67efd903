use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive `(start, end)` token indices into the context.
pub type Span = (usize, usize);

/// One question/context pair.
///
/// Tokens are stored as lowercased strings; ids are assigned by a
/// [`super::Vocab`] at batching time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub question_tokens: Vec<String>,
    pub context_tokens: Vec<String>,
    /// Surface forms of the context tokens, for scoring and inspection.
    pub raw_context_tokens: Vec<String>,
    pub answer_span: Option<Span>,
    pub plausible_span: Option<Span>,
    pub is_answerable: bool,
}

impl Example {
    pub fn check(&self) -> Result<()> {
        let bad = |detail: String| Error::Dataset {
            path: self.id.clone(),
            detail,
        };
        if self.is_answerable != self.answer_span.is_some() {
            return Err(bad("is_answerable disagrees with answer_span".into()));
        }
        if self.raw_context_tokens.len() != self.context_tokens.len() {
            return Err(bad("raw_context_tokens length differs from context_tokens".into()));
        }
        if self.is_answerable && self.plausible_span != self.answer_span {
            return Err(bad("answerable example must use its answer as plausible span".into()));
        }
        for (start, end) in self.answer_span.iter().chain(&self.plausible_span) {
            if start > end || *end >= self.context_tokens.len() {
                return Err(bad(format!(
                    "span ({start}, {end}) outside context of {} tokens",
                    self.context_tokens.len()
                )));
            }
        }
        Ok(())
    }

    /// Span used as auxiliary supervision: the true answer if there is one,
    /// otherwise the plausible answer.
    pub fn auxiliary_span(&self) -> Option<Span> {
        self.answer_span.or(self.plausible_span)
    }

    /// Gold answer text; empty for unanswerable examples.
    pub fn answer_text(&self) -> String {
        match self.answer_span {
            Some(span) => self.span_text(span),
            None => String::new(),
        }
    }

    pub fn span_text(&self, (start, end): Span) -> String {
        self.raw_context_tokens[start..=end].join(" ")
    }
}

pub fn write_jsonl<W: Write>(mut out: W, examples: &[Example]) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            path: format!("line {}", lineno + 1),
            detail: e.to_string(),
        })?;
        ex.check()?;
        out.push(ex);
    }
    Ok(out)
}
