/// A token with its character (not byte) offsets in the source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    /// Lowercased form used for vocabulary lookup.
    pub text: String,
    /// Surface form as it appears in the source.
    pub raw: String,
    pub char_start: usize,
    /// Exclusive.
    pub char_end: usize,
}

/// Splits on whitespace and makes every punctuation character its own token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    for (idx, ch) in text.chars().enumerate() {
        if ch.is_whitespace() || ch.is_ascii_punctuation() || is_unicode_punct(ch) {
            flush(&mut out, &mut current, start, idx);
            if !ch.is_whitespace() {
                out.push(Token {
                    text: ch.to_lowercase().collect(),
                    raw: ch.to_string(),
                    char_start: idx,
                    char_end: idx + 1,
                });
            }
        } else {
            if current.is_empty() {
                start = idx;
            }
            current.push(ch);
        }
    }
    let end = text.chars().count();
    flush(&mut out, &mut current, start, end);
    out
}

fn flush(out: &mut Vec<Token>, current: &mut String, start: usize, end: usize) {
    if current.is_empty() {
        return;
    }
    out.push(Token {
        text: current.to_lowercase(),
        raw: std::mem::take(current),
        char_start: start,
        char_end: end,
    });
}

fn is_unicode_punct(ch: char) -> bool {
    matches!(
        ch,
        '\u{2010}'..='\u{2027}' | '\u{2030}'..='\u{205E}' | '\u{00A1}' | '\u{00A7}' | '\u{00AB}' | '\u{00B6}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}'
    )
}

/// Lowercased token strings of `text`.
pub fn tokenize_words(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text).collect()
}
