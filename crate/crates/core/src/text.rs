//! Character classes shared by word counting and BLEU tokenization.

/// Ideographs, kana and hangul syllables. Each such codepoint is a word of its own.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x3400..=0x4DBF    // ext A
        | 0x4E00..=0x9FFF    // unified ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F  // ext B and beyond
    )
}

/// ASCII punctuation plus the common general, CJK and full-width punctuation blocks.
pub fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c as u32,
            0x00A1..=0x00BF
            | 0x2010..=0x2027
            | 0x2030..=0x205E
            | 0x3001..=0x3003
            | 0x3008..=0x3011
            | 0x3014..=0x301F
            | 0x30FB
            | 0xFF01..=0xFF0F
            | 0xFF1A..=0xFF20
            | 0xFF3B..=0xFF40
            | 0xFF5B..=0xFF65
        )
}

/// Word count used for corpus statistics: whitespace tokens, except that
/// every CJK codepoint counts as one word and each maximal non-CJK run
/// inside a token counts as one more.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace()
        .map(|token| {
            let mut n = 0;
            let mut in_run = false;
            for c in token.chars() {
                if is_cjk(c) {
                    n += 1;
                    in_run = false;
                } else if !in_run {
                    n += 1;
                    in_run = true;
                }
            }
            n
        })
        .sum()
}
