/// A token with its character offsets `[start, end)` into the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Lowercasing whitespace/punctuation tokenizer.
///
/// Runs of alphanumeric characters (plus apostrophes inside a word) form a
/// token; every other non-space character is a token of its own. Offsets
/// count Unicode scalar values, not bytes.
pub fn tokenize(text: &str) -> Vec<RawToken> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_alphanumeric() {
            while i < chars.len()
                && (chars[i].is_alphanumeric()
                    || (chars[i] == '\'' && i + 1 < chars.len() && chars[i + 1].is_alphanumeric() && i > start))
            {
                i += 1;
            }
        } else {
            i += 1;
        }
        out.push(RawToken {
            text: chars[start..i].iter().collect::<String>().to_lowercase(),
            start,
            end: i,
        });
    }
    out
}
