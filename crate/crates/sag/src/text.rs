//! Shared text segmentation for word counting, style encoding, and metrics.
//!
//! One segmentation rule serves the whole crate: contiguous runs of non-CJK
//! alphanumerics form one unit, every CJK character is its own unit, emoji
//! are their own units, and everything else separates. Callers decide what
//! to keep (word counting drops emoji, metric tokenization keeps them).

/// A segment produced by [`segment`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    /// A run of non-CJK alphanumeric characters.
    Word(String),
    /// A single CJK character (Han, Hiragana, Katakana, Hangul).
    Cjk(char),
    /// A single emoji codepoint.
    Emoji(char),
}

/// Han, Hiragana, Katakana, and Hangul ranges.
pub fn is_cjk(ch: char) -> bool {
    matches!(ch as u32,
        0x4E00..=0x9FFF      // CJK Unified Ideographs
        | 0x3400..=0x4DBF    // Extension A
        | 0xF900..=0xFAFF    // Compatibility Ideographs
        | 0x3040..=0x309F    // Hiragana
        | 0x30A0..=0x30FF    // Katakana
        | 0xAC00..=0xD7AF    // Hangul Syllables
        | 0x1100..=0x11FF    // Hangul Jamo
    )
}

/// Pictographic ranges: misc symbols, dingbats, and the emoji planes.
pub fn is_emoji(ch: char) -> bool {
    matches!(ch as u32,
        0x1F000..=0x1FAFF | 0x2600..=0x27BF | 0x2B50 | 0x2B55
    )
}

/// Split `text` into segments. Input is lowercased first so downstream
/// consumers are case-insensitive by construction.
pub fn segment(text: &str) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut run = String::new();
    for ch in text.chars().flat_map(|c| c.to_lowercase()) {
        if is_emoji(ch) {
            if !run.is_empty() {
                out.push(Segment::Word(std::mem::take(&mut run)));
            }
            out.push(Segment::Emoji(ch));
        } else if is_cjk(ch) {
            if !run.is_empty() {
                out.push(Segment::Word(std::mem::take(&mut run)));
            }
            out.push(Segment::Cjk(ch));
        } else if ch.is_alphanumeric() {
            run.push(ch);
        } else if !run.is_empty() {
            out.push(Segment::Word(std::mem::take(&mut run)));
        }
    }
    if !run.is_empty() {
        out.push(Segment::Word(run));
    }
    out
}

/// Word units in `text`: one per alphanumeric run, one per CJK character,
/// zero for punctuation and emoji.
pub fn word_count(text: &str) -> usize {
    segment(text)
        .iter()
        .filter(|s| !matches!(s, Segment::Emoji(_)))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_counts_zero() {
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("   \t\n"), 0);
    }

    #[test]
    fn whitespace_split() {
        assert_eq!(word_count("hello world"), 2);
    }

    #[test]
    fn punctuation_is_zero() {
        assert_eq!(word_count("!!! ... ???"), 0);
        assert_eq!(word_count("well, well; well."), 3);
    }

    // Hand count per the rule: runs "today" "the" "cafe2" = 3,
    // four Han characters = 4, emoji = 0. Total 7.
    #[test]
    fn mixed_latin_cjk_hand_oracle() {
        assert_eq!(word_count("today 非常好喝 the cafe2 🎉"), 7);
    }

    #[test]
    fn emoji_kept_as_segments_but_not_words() {
        let segs = segment("nice 🌵 day");
        assert_eq!(segs.len(), 3);
        assert!(matches!(segs[1], Segment::Emoji('🌵')));
        assert_eq!(word_count("nice 🌵 day"), 2);
    }

    // Monotone under concatenation with a word-bearing suffix.
    #[test]
    fn concat_monotone() {
        let base = "some words here";
        let n = word_count(base);
        assert!(word_count(&format!("{base} and more")) > n);
    }
}
