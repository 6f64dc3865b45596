//! Byte-level tokenizer with four reserved sentinels.
//!
//! Raw bytes map to ids 0..=255, so any UTF-8 corpus tokenizes without an
//! external vocabulary asset. The sentinels terminate the four prompt
//! sections; byte input can never collide with them.

/// Section terminators. `Response` doubles as the generation stop token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sentinel {
    /// End of the summary section.
    Summary,
    /// End of the neutral-text section.
    Neutral,
    /// End of the style-reference section.
    Reference,
    /// End of the response section.
    Response,
}

impl Sentinel {
    pub const fn id(self) -> usize {
        match self {
            Sentinel::Summary => 256,
            Sentinel::Neutral => 257,
            Sentinel::Reference => 258,
            Sentinel::Response => 259,
        }
    }
}

/// Smallest vocabulary that can hold all bytes plus the sentinels.
pub const MIN_VOCAB: usize = 260;

pub fn is_sentinel(id: usize) -> bool {
    (256..260).contains(&id)
}

/// Text to byte token ids.
pub fn encode_text(text: &str) -> Vec<usize> {
    text.bytes().map(|b| b as usize).collect()
}

/// Byte token ids back to text; sentinels and out-of-range ids are skipped,
/// invalid UTF-8 is replaced.
pub fn decode_text(tokens: &[usize]) -> String {
    let bytes: Vec<u8> = tokens
        .iter()
        .filter_map(|&t| (t < 256).then_some(t as u8))
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_roundtrip() {
        let s = "style 风格 🌵!";
        assert_eq!(decode_text(&encode_text(s)), s);
    }

    #[test]
    fn sentinels_outside_byte_range() {
        for s in [Sentinel::Summary, Sentinel::Neutral, Sentinel::Reference, Sentinel::Response] {
            assert!(s.id() >= 256 && s.id() < MIN_VOCAB);
            assert!(is_sentinel(s.id()));
        }
        assert!(!is_sentinel(255));
        assert!(!is_sentinel(260));
    }

    #[test]
    fn decode_skips_sentinels() {
        let mut toks = encode_text("ab");
        toks.push(Sentinel::Response.id());
        assert_eq!(decode_text(&toks), "ab");
    }
}
