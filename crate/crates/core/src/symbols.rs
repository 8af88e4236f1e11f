//! Symbol alphabet and the boundary-marked word type shared by every module.
//!
//! Words are sequences of UTF-8 bytes. Two extra symbols mark the beginning
//! and the end of a word, so the model alphabet has 258 entries. A third
//! extra symbol, [`END`], is only used by the decoder: it pads the byte
//! history window and terminates subwords that do not end a word.

use std::fmt;

use crate::error::{Error, Result};

pub type Symbol = u16;

/// Beginning-of-word marker.
pub const BOW: Symbol = 256;
/// End-of-word marker.
pub const EOW: Symbol = 257;
/// Decoder padding / end-of-subword symbol. Never part of a [`BoundedWord`].
pub const END: Symbol = 258;

/// Number of symbols a word may contain (256 bytes + BOW + EOW).
pub const ALPHABET_SIZE: usize = 258;
/// Number of decoder output classes (alphabet + END).
pub const DECODER_CLASSES: usize = 259;

/// A byte sequence with optional word-boundary markers.
///
/// BOW may only appear first and EOW only last; at least one byte is always
/// present. A full word carries both markers, an interior subword neither.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoundedWord {
    symbols: Vec<Symbol>,
}

impl BoundedWord {
    pub fn new(bytes: &[u8], has_bow: bool, has_eow: bool) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::InvalidWord("subword must contain at least one byte".into()));
        }
        let mut symbols = Vec::with_capacity(bytes.len() + 2);
        if has_bow {
            symbols.push(BOW);
        }
        symbols.extend(bytes.iter().map(|&b| b as Symbol));
        if has_eow {
            symbols.push(EOW);
        }
        Ok(Self { symbols })
    }

    /// A whole word: `BOW bytes EOW`.
    pub fn word(bytes: &[u8]) -> Result<Self> {
        Self::new(bytes, true, true)
    }

    pub fn from_symbols(symbols: Vec<Symbol>) -> Result<Self> {
        let n = symbols.len();
        let mut bytes = 0usize;
        for (i, &s) in symbols.iter().enumerate() {
            match s {
                0..=255 => bytes += 1,
                BOW if i == 0 => {}
                EOW if i + 1 == n => {}
                BOW | EOW => {
                    return Err(Error::InvalidWord(format!(
                        "boundary marker at interior position {i}"
                    )))
                }
                other => return Err(Error::InvalidWord(format!("symbol {other} out of range"))),
            }
        }
        if bytes == 0 {
            return Err(Error::InvalidWord("subword must contain at least one byte".into()));
        }
        Ok(Self { symbols })
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn has_bow(&self) -> bool {
        self.symbols.first() == Some(&BOW)
    }

    pub fn has_eow(&self) -> bool {
        self.symbols.last() == Some(&EOW)
    }

    /// Number of bytes, markers excluded.
    pub fn byte_len(&self) -> usize {
        self.symbols.len() - self.has_bow() as usize - self.has_eow() as usize
    }

    pub fn bytes(&self) -> Vec<u8> {
        self.symbols
            .iter()
            .filter(|&&s| s < 256)
            .map(|&s| s as u8)
            .collect()
    }

    /// Splits the byte content at `at` (1..byte_len), left keeps BOW, right keeps EOW.
    pub fn split_at_byte(&self, at: usize) -> Result<(BoundedWord, BoundedWord)> {
        let bytes = self.bytes();
        if at == 0 || at >= bytes.len() {
            return Err(Error::InvalidWord(format!(
                "split point {at} is not an interior boundary of a {}-byte word",
                bytes.len()
            )));
        }
        Ok((
            BoundedWord::new(&bytes[..at], self.has_bow(), false)?,
            BoundedWord::new(&bytes[at..], false, self.has_eow())?,
        ))
    }
}

impl fmt::Display for BoundedWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_symbols(&self.symbols))
    }
}

impl fmt::Debug for BoundedWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BoundedWord({self})")
    }
}

/// Human-readable rendering: markers as `␣`, valid UTF-8 printed as text,
/// everything ambiguous escaped (`\\`, `\␣`, `\:`, `\u{..}`, `\xHH`).
pub fn render_symbols(symbols: &[Symbol]) -> String {
    let mut out = String::new();
    let mut run = Vec::new();
    let flush = |run: &mut Vec<u8>, out: &mut String| {
        for chunk in run.utf8_chunks() {
            for c in chunk.valid().chars() {
                match c {
                    '\\' => out.push_str("\\\\"),
                    '␣' => out.push_str("\\␣"),
                    ':' => out.push_str("\\:"),
                    c if c.is_whitespace() || c.is_control() => {
                        out.push_str(&format!("\\u{{{:x}}}", c as u32))
                    }
                    c => out.push(c),
                }
            }
            for b in chunk.invalid() {
                out.push_str(&format!("\\x{b:02X}"));
            }
        }
        run.clear();
    };
    for &s in symbols {
        if s < 256 {
            run.push(s as u8);
        } else {
            flush(&mut run, &mut out);
            out.push('␣');
        }
    }
    flush(&mut run, &mut out);
    out
}

/// Inverse of [`render_symbols`] for subwords: a leading `␣` is BOW, a
/// trailing one EOW; a bare `␣` anywhere else is rejected.
pub fn parse_rendered(s: &str) -> Result<Vec<Symbol>> {
    let bad = |why: &str| Error::InvalidWord(format!("{s:?}: {why}"));
    let mut out = Vec::new();
    let mut chars = s.char_indices().peekable();
    let mut buf = [0u8; 4];
    while let Some((at, c)) = chars.next() {
        match c {
            '␣' if at == 0 => out.push(BOW),
            '␣' if chars.peek().is_none() => out.push(EOW),
            '␣' => return Err(bad("marker inside a subword")),
            '\\' => match chars.next().map(|(_, c)| c) {
                Some('\\') => out.push(b'\\' as Symbol),
                Some(':') => out.push(b':' as Symbol),
                Some('␣') => out.extend("␣".bytes().map(Symbol::from)),
                Some('x') => {
                    let hex: String = (0..2).filter_map(|_| chars.next().map(|(_, c)| c)).collect();
                    let b = u8::from_str_radix(&hex, 16).map_err(|_| bad("bad \\x escape"))?;
                    out.push(b as Symbol);
                }
                Some('u') => {
                    if chars.next().map(|(_, c)| c) != Some('{') {
                        return Err(bad("bad \\u escape"));
                    }
                    let hex: String = chars.by_ref().map(|(_, c)| c).take_while(|&c| c != '}').collect();
                    let c = u32::from_str_radix(&hex, 16)
                        .ok()
                        .and_then(char::from_u32)
                        .ok_or_else(|| bad("bad \\u escape"))?;
                    out.extend(c.encode_utf8(&mut buf).bytes().map(Symbol::from));
                }
                _ => return Err(bad("unknown escape")),
            },
            c => out.extend(c.encode_utf8(&mut buf).bytes().map(Symbol::from)),
        }
    }
    Ok(out)
}

/// Whitespace test used by the pretokenizer: Unicode `White_Space` on valid
/// scalar values; undecodable bytes are never whitespace.
pub fn split_words(text: &[u8]) -> Vec<&[u8]> {
    let mut words = Vec::new();
    let mut start: Option<usize> = None;
    let mut pos = 0usize;
    for chunk in text.utf8_chunks() {
        for (off, c) in chunk.valid().char_indices() {
            let at = pos + off;
            if c.is_whitespace() {
                if let Some(s) = start.take() {
                    words.push(&text[s..at]);
                }
            } else if start.is_none() {
                start = Some(at);
            }
        }
        pos += chunk.valid().len();
        if !chunk.invalid().is_empty() && start.is_none() {
            start = Some(pos);
        }
        pos += chunk.invalid().len();
    }
    if let Some(s) = start {
        words.push(&text[s..]);
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markers_only_at_edges() {
        assert!(BoundedWord::from_symbols(vec![BOW, 97, EOW]).is_ok());
        assert!(BoundedWord::from_symbols(vec![97, BOW]).is_err());
        assert!(BoundedWord::from_symbols(vec![EOW, 97]).is_err());
        assert!(BoundedWord::from_symbols(vec![BOW, EOW]).is_err());
        assert!(BoundedWord::from_symbols(vec![97, END]).is_err());
    }

    #[test]
    fn split_keeps_outer_markers() {
        let w = BoundedWord::word(b"melon").unwrap();
        let (l, r) = w.split_at_byte(2).unwrap();
        assert_eq!(l.symbols(), &[BOW, b'm' as u16, b'e' as u16]);
        assert_eq!(r.symbols(), &[b'l' as u16, b'o' as u16, b'n' as u16, EOW]);
        assert!(w.split_at_byte(0).is_err());
        assert!(w.split_at_byte(5).is_err());
    }

    #[test]
    fn pretokenizer_handles_unicode_space_and_invalid_bytes() {
        let text = "a\u{3000}b  c\u{a0}d".as_bytes();
        assert_eq!(split_words(text), vec![&b"a"[..], b"b", b"c", b"d"]);
        let raw = b"x\xffy \xfe";
        assert_eq!(split_words(raw), vec![&b"x\xffy"[..], b"\xfe"]);
        assert!(split_words(b"   ").is_empty());
    }

    #[test]
    fn rendering_escapes_ambiguous_content() {
        let w = BoundedWord::new("a:b\\".as_bytes(), true, false).unwrap();
        assert_eq!(w.to_string(), "␣a\\:b\\\\");
        let raw = BoundedWord::new(b"\xff", false, true).unwrap();
        assert_eq!(raw.to_string(), "\\xFF␣");
    }

    #[test]
    fn parse_rejects_inner_markers_and_bad_escapes() {
        assert!(parse_rendered("a␣b").is_err());
        assert!(parse_rendered("a\\q").is_err());
        assert!(parse_rendered("\\xZZ").is_err());
        assert_eq!(parse_rendered("\\␣").unwrap(), "␣".bytes().map(Symbol::from).collect::<Vec<_>>());
    }

    proptest::proptest! {
        #[test]
        fn parse_inverts_render(
            bytes in proptest::collection::vec(proptest::prelude::any::<u8>(), 1..12),
            bow: bool,
            eow: bool,
        ) {
            let w = BoundedWord::new(&bytes, bow, eow).unwrap();
            proptest::prop_assert_eq!(parse_rendered(&w.to_string()).unwrap(), w.symbols().to_vec());
        }
    }
}
