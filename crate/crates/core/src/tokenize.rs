//! Rule-based tokenizer used for block-length accounting and query truncation.
//!
//! Text is split on whitespace. Punctuation marks from a fixed alphabet are
//! detached from the start and end of each whitespace chunk (and from CJK
//! neighbours) into single-character [`TokenKind::Punct`] tokens. CJK
//! characters become one word token each. Separators between tokens are kept
//! so that [`Tokenized::detokenize`] reproduces the source byte-for-byte.

use serde::{Deserialize, Serialize};

/// Punctuation marks recognised by the tokenizer.
pub const PUNCTUATION: [char; 12] = [
    '.', '!', '?', ';', ':', ',', '。', '！', '？', '；', '：', '，',
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Word,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
    /// Byte offset of the first byte in the source text.
    pub start: usize,
    /// Byte offset one past the last byte in the source text.
    pub end: usize,
}

impl Token {
    pub fn is_punct(&self) -> bool {
        self.kind == TokenKind::Punct
    }

    /// The punctuation character of a punct token.
    pub fn punct_char(&self) -> Option<char> {
        match self.kind {
            TokenKind::Punct => self.text.chars().next(),
            TokenKind::Word => None,
        }
    }
}

/// Tokens plus the separators around them.
///
/// `separators.len() == tokens.len() + 1`: `separators[0]` precedes the first
/// token, `separators[i]` sits between `tokens[i - 1]` and `tokens[i]`, and the
/// last entry trails the final token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub tokens: Vec<Token>,
    pub separators: Vec<String>,
}

impl Tokenized {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn detokenize(&self) -> String {
        let mut out = String::new();
        for (sep, tok) in self.separators.iter().zip(&self.tokens) {
            out.push_str(sep);
            out.push_str(&tok.text);
        }
        if let Some(last) = self.separators.last() {
            out.push_str(last);
        }
        out
    }
}

pub fn is_punctuation(c: char) -> bool {
    PUNCTUATION.contains(&c)
}

fn is_cjk_punctuation(c: char) -> bool {
    is_punctuation(c) && !c.is_ascii()
}

/// CJK ideographs, kana and hangul syllables.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2FA1F)
}

pub fn tokenize(text: &str) -> Tokenized {
    let mut tokens = Vec::new();
    let mut chunk_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = chunk_start.take() {
                split_chunk(text, s, i, &mut tokens);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    if let Some(s) = chunk_start {
        split_chunk(text, s, text.len(), &mut tokens);
    }

    let mut separators = Vec::with_capacity(tokens.len() + 1);
    let mut cursor = 0;
    for tok in &tokens {
        separators.push(text[cursor..tok.start].to_string());
        cursor = tok.end;
    }
    separators.push(text[cursor..].to_string());
    Tokenized { tokens, separators }
}

/// Number of engine tokens in `text`.
pub fn count_tokens(text: &str) -> usize {
    tokenize(text).len()
}

/// Prefix of `text` holding at most `max_tokens` tokens, without the separator
/// that would follow the last kept token.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> &str {
    let tokenized = tokenize(text);
    if tokenized.len() <= max_tokens {
        return text;
    }
    match max_tokens {
        0 => "",
        n => &text[..tokenized.tokens[n - 1].end],
    }
}

fn split_chunk(text: &str, start: usize, end: usize, out: &mut Vec<Token>) {
    let chars: Vec<(usize, char)> = text[start..end]
        .char_indices()
        .map(|(i, c)| (start + i, c))
        .collect();
    let n = chars.len();

    let mut detached = vec![false; n];
    for i in 0..n {
        if !is_punctuation(chars[i].1) {
            break;
        }
        detached[i] = true;
    }
    for i in (0..n).rev() {
        if !is_punctuation(chars[i].1) {
            break;
        }
        detached[i] = true;
    }
    for i in 0..n {
        let c = chars[i].1;
        if is_punctuation(c)
            && (is_cjk_punctuation(c) || (i > 0 && (is_cjk(chars[i - 1].1) || detached[i - 1])))
        {
            detached[i] = true;
        }
    }
    for i in (0..n).rev() {
        let c = chars[i].1;
        if is_punctuation(c) && i + 1 < n && (is_cjk(chars[i + 1].1) || detached[i + 1]) {
            detached[i] = true;
        }
    }

    let mut word_start: Option<usize> = None;
    let flush = |out: &mut Vec<Token>, from: usize, to: usize| {
        out.push(Token {
            text: text[from..to].to_string(),
            kind: TokenKind::Word,
            start: from,
            end: to,
        });
    };
    for (idx, &(pos, c)) in chars.iter().enumerate() {
        let single = detached[idx] || is_cjk(c);
        if single {
            if let Some(ws) = word_start.take() {
                flush(out, ws, pos);
            }
            let kind = if detached[idx] {
                TokenKind::Punct
            } else {
                TokenKind::Word
            };
            let e = pos + c.len_utf8();
            out.push(Token {
                text: text[pos..e].to_string(),
                kind,
                start: pos,
                end: e,
            });
        } else if word_start.is_none() {
            word_start = Some(pos);
        }
    }
    if let Some(ws) = word_start {
        flush(out, ws, end);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(t: &Tokenized) -> Vec<(&str, TokenKind)> {
        t.tokens.iter().map(|t| (t.text.as_str(), t.kind)).collect()
    }

    #[test]
    fn english_sentence() {
        let t = tokenize("Hello, world!");
        assert_eq!(
            texts(&t),
            vec![
                ("Hello", TokenKind::Word),
                (",", TokenKind::Punct),
                ("world", TokenKind::Word),
                ("!", TokenKind::Punct),
            ]
        );
    }

    #[test]
    fn empty_and_blank() {
        assert!(tokenize("").is_empty());
        let blank = tokenize("  \n\t");
        assert!(blank.is_empty());
        assert_eq!(blank.detokenize(), "  \n\t");
    }

    #[test]
    fn chinese_characters_split() {
        let t = tokenize("你好。");
        assert_eq!(
            texts(&t),
            vec![
                ("你", TokenKind::Word),
                ("好", TokenKind::Word),
                ("。", TokenKind::Punct),
            ]
        );
    }

    #[test]
    fn interior_cjk_punctuation_detached() {
        let t = tokenize("你好，世界。再见");
        let kinds: Vec<_> = t.tokens.iter().map(|t| t.kind).collect();
        assert_eq!(t.len(), 8);
        assert_eq!(kinds[2], TokenKind::Punct);
        assert_eq!(kinds[5], TokenKind::Punct);
    }

    #[test]
    fn interior_ascii_punctuation_stays_in_word() {
        let t = tokenize("pi is 3.14, e.g. approx");
        let words: Vec<_> = t.tokens.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(words, vec!["pi", "is", "3.14", ",", "e.g", ".", "approx"]);
    }

    #[test]
    fn leading_punctuation_run() {
        let t = tokenize("...wait");
        assert_eq!(t.len(), 4);
        assert_eq!(t.tokens[3].text, "wait");
    }

    #[test]
    fn counts() {
        assert_eq!(count_tokens("a b c"), 3);
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("end."), 2);
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_tokens("a b, c d", 3), "a b,");
        assert_eq!(truncate_tokens("a b", 5), "a b");
        assert_eq!(truncate_tokens("a b", 0), "");
    }

    proptest! {
        #[test]
        fn round_trip(s in "[a-z .,!?;:你好世界。，！ \n]{0,60}") {
            let t = tokenize(&s);
            prop_assert_eq!(t.detokenize(), s.clone());
            prop_assert_eq!(t.separators.len(), t.tokens.len() + 1);
            for tok in &t.tokens {
                prop_assert!(!tok.text.is_empty());
                prop_assert!(!tok.text.chars().any(char::is_whitespace));
                if tok.kind == TokenKind::Punct {
                    prop_assert_eq!(tok.text.chars().count(), 1);
                    prop_assert!(is_punctuation(tok.text.chars().next().unwrap()));
                }
            }
            prop_assert_eq!(tokenize(&s), t);
        }

        #[test]
        fn round_trip_arbitrary_unicode(s in any::<String>()) {
            prop_assert_eq!(tokenize(&s).detokenize(), s);
        }
    }
}
