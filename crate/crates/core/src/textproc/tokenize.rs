use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Language tag carried by a token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    Source,
    Target,
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lang::Source => f.write_str("source"),
            Lang::Target => f.write_str("target"),
        }
    }
}

/// A tokenized sentence or query. No token contains whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub lang: Lang,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>, lang: Lang) -> Self {
        debug_assert!(tokens.iter().all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
        Self { tokens, lang }
    }

    pub fn from_words<I, S>(words: I, lang: Lang) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(words.into_iter().map(Into::into).collect(), lang)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.iter().any(|t| t == token)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    /// Tokens joined by single spaces.
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Word characters: letters, digits and combining marks. Everything else that
/// is not whitespace is split off as a one-character token.
fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c)
}

fn is_combining_mark(c: char) -> bool {
    matches!(c as u32,
        0x0300..=0x036F | 0x1AB0..=0x1AFF | 0x1DC0..=0x1DFF | 0x20D0..=0x20FF | 0xFE20..=0xFE2F)
}

/// NFC-normalize, lowercase, split on whitespace and split punctuation off as
/// separate tokens.
///
/// | input | output |
/// | --- | --- |
/// | `Meizu Phone 6` | `meizu` `phone` `6` |
/// | `red,shoes` | `red` `,` `shoes` |
/// | `"USB-C"` | `"` `usb` `-` `c` `"` |
pub fn tokenize(text: &str, lang: Lang) -> TokenSequence {
    let normalized: String = text.nfc().collect::<String>().to_lowercase();
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in normalized.chars() {
        if c.is_whitespace() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
        } else if is_word_char(c) {
            word.push(c);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    TokenSequence::new(tokens, lang)
}
