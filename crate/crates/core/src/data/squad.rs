//! Reader for the SQuAD 2.0 JSON layout:
//! `data[] → paragraphs[] → {context, qas[] → {id, question, is_impossible,
//! answers[], plausible_answers[]}}`.

use serde_json::Value;

use super::example::{Example, Span};
use super::tokenize::{tokenize, tokenize_words, Token};
use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct SquadParse {
    pub examples: Vec<Example>,
    /// Questions dropped because an answer offset did not line up with the
    /// context text.
    pub skipped: usize,
}

fn field<'a>(v: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    v.get(key).ok_or_else(|| Error::Dataset {
        path: format!("{path}.{key}"),
        detail: "missing field".into(),
    })
}

fn array<'a>(v: &'a Value, key: &str, path: &str) -> Result<&'a Vec<Value>> {
    field(v, key, path)?.as_array().ok_or_else(|| Error::Dataset {
        path: format!("{path}.{key}"),
        detail: "expected an array".into(),
    })
}

fn string<'a>(v: &'a Value, key: &str, path: &str) -> Result<&'a str> {
    field(v, key, path)?.as_str().ok_or_else(|| Error::Dataset {
        path: format!("{path}.{key}"),
        detail: "expected a string".into(),
    })
}

/// Answer object → `(answer_start, text)`.
fn answer(v: &Value, path: &str) -> Result<(usize, String)> {
    let start = field(v, "answer_start", path)?.as_u64().ok_or_else(|| Error::Dataset {
        path: format!("{path}.answer_start"),
        detail: "expected a non-negative integer".into(),
    })?;
    Ok((start as usize, string(v, "text", path)?.to_string()))
}

/// Maps a character-offset answer onto inclusive token indices. `None` when
/// the text at the offset differs from the answer or covers no token.
pub fn align_answer(context: &[char], tokens: &[Token], start: usize, text: &str) -> Option<Span> {
    let len = text.chars().count();
    if len == 0 || start + len > context.len() {
        return None;
    }
    if !context[start..start + len].iter().copied().eq(text.chars()) {
        return None;
    }
    let end = start + len;
    let first = tokens.iter().position(|t| t.char_end > start)?;
    let last = tokens.iter().rposition(|t| t.char_start < end)?;
    (first <= last).then_some((first, last))
}

pub fn parse_squad_v2(document: &str) -> Result<SquadParse> {
    let root: Value = serde_json::from_str(document).map_err(|e| Error::Dataset {
        path: "$".into(),
        detail: e.to_string(),
    })?;
    let mut out = SquadParse::default();
    for (di, article) in array(&root, "data", "$")?.iter().enumerate() {
        let apath = format!("data[{di}]");
        for (pi, para) in array(article, "paragraphs", &apath)?.iter().enumerate() {
            let ppath = format!("{apath}.paragraphs[{pi}]");
            let context = string(para, "context", &ppath)?;
            let chars: Vec<char> = context.chars().collect();
            let tokens = tokenize(context);
            for (qi, qa) in array(para, "qas", &ppath)?.iter().enumerate() {
                let qpath = format!("{ppath}.qas[{qi}]");
                let id = string(qa, "id", &qpath)?;
                let question = string(qa, "question", &qpath)?;
                let impossible = match qa.get("is_impossible") {
                    None => false,
                    Some(v) => v.as_bool().ok_or_else(|| Error::Dataset {
                        path: format!("{qpath}.is_impossible"),
                        detail: "expected a boolean".into(),
                    })?,
                };

                let (answer_span, plausible_span) = if impossible {
                    let plausible = match qa.get("plausible_answers").and_then(Value::as_array) {
                        Some(list) if !list.is_empty() => {
                            Some(answer(&list[0], &format!("{qpath}.plausible_answers[0]"))?)
                        }
                        _ => None,
                    };
                    match plausible {
                        None => (None, None),
                        Some((start, text)) => match align_answer(&chars, &tokens, start, &text) {
                            Some(span) => (None, Some(span)),
                            None => {
                                log::warn!(
                                    "{qpath}: plausible answer {text:?} does not align at offset {start}; skipped"
                                );
                                out.skipped += 1;
                                continue;
                            }
                        },
                    }
                } else {
                    let answers = array(qa, "answers", &qpath)?;
                    let Some(first) = answers.first() else {
                        return Err(Error::Dataset {
                            path: format!("{qpath}.answers"),
                            detail: "answerable question without answers".into(),
                        });
                    };
                    let (start, text) = answer(first, &format!("{qpath}.answers[0]"))?;
                    match align_answer(&chars, &tokens, start, &text) {
                        Some(span) => (Some(span), Some(span)),
                        None => {
                            log::warn!("{qpath}: answer {text:?} does not align at offset {start}; skipped");
                            out.skipped += 1;
                            continue;
                        }
                    }
                };

                out.examples.push(Example {
                    id: id.to_string(),
                    question_tokens: tokenize_words(question),
                    context_tokens: tokens.iter().map(|t| t.text.clone()).collect(),
                    raw_context_tokens: tokens.iter().map(|t| t.raw.clone()).collect(),
                    answer_span,
                    plausible_span,
                    is_answerable: !impossible,
                });
            }
        }
    }
    Ok(out)
}
