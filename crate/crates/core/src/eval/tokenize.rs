//! Tokenization for BLEU. Case is preserved.

use serde::{Deserialize, Serialize};

use crate::corpus::LangPair;
use crate::text::{is_cjk, is_punct};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    /// Whitespace-delimited words with punctuation split off.
    Latin,
    /// Every CJK character is a token; other runs follow the latin rules.
    Cjk,
}

impl TokenizerMode {
    /// Mode for the language the pair translates into.
    pub fn for_target(pair: LangPair) -> Self {
        if pair.target_is_cjk() {
            TokenizerMode::Cjk
        } else {
            TokenizerMode::Latin
        }
    }
}

pub fn tokenize(text: &str, mode: TokenizerMode) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut word, &mut out);
        } else if is_punct(c) || (mode == TokenizerMode::Cjk && is_cjk(c)) {
            flush(&mut word, &mut out);
            out.push(c.to_string());
        } else {
            word.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}
