//! Byte-level BPE baseline with BPE-dropout.
//!
//! Words are encoded as `BOW bytes EOW`; both markers are ordinary base
//! symbols. Token ids `0..=255` are bytes, 256 and 257 the markers; every
//! merge that yields a new string adds the next id, while a merge whose
//! result already exists (`ab·c` after `a·bc`) reuses that token.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::Rng;

use crate::corpus::WordFrequencyList;
use crate::error::{Error, Result};
use crate::symbols::{Symbol, ALPHABET_SIZE, BOW, EOW};

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeTable {
    merges: Vec<(TokenId, TokenId)>,
    /// Token produced by each merge.
    results: Vec<TokenId>,
    /// Symbol sequence of every token id.
    expansions: Vec<Vec<Symbol>>,
    by_expansion: HashMap<Vec<Symbol>, TokenId>,
    ranks: HashMap<(TokenId, TokenId), usize>,
}

impl Default for MergeTable {
    fn default() -> Self {
        Self::new()
    }
}

impl MergeTable {
    /// Table without merges: bytes and markers only.
    pub fn new() -> Self {
        let expansions: Vec<Vec<Symbol>> = (0..ALPHABET_SIZE as Symbol).map(|s| vec![s]).collect();
        Self {
            merges: Vec::new(),
            results: Vec::new(),
            by_expansion: expansions
                .iter()
                .enumerate()
                .map(|(i, e)| (e.clone(), i as TokenId))
                .collect(),
            expansions,
            ranks: HashMap::new(),
        }
    }

    /// Appends a merge and returns the token it produces. Both operands
    /// must already exist and the pair must be new.
    pub fn push(&mut self, left: TokenId, right: TokenId) -> Result<TokenId> {
        let n = self.expansions.len() as TokenId;
        if left >= n || right >= n {
            return Err(Error::InvalidArgument(format!(
                "merge ({left}, {right}) refers to an unknown token"
            )));
        }
        if self.ranks.contains_key(&(left, right)) {
            return Err(Error::InvalidArgument(format!("merge ({left}, {right}) listed twice")));
        }
        self.ranks.insert((left, right), self.merges.len());
        self.merges.push((left, right));
        let mut e = self.expansions[left as usize].clone();
        e.extend_from_slice(&self.expansions[right as usize]);
        let id = *self.by_expansion.entry(e.clone()).or_insert(n);
        if id == n {
            self.expansions.push(e);
        }
        self.results.push(id);
        Ok(id)
    }

    /// Token produced by merge `rank`.
    pub fn result(&self, rank: usize) -> TokenId {
        self.results[rank]
    }

    pub fn token(&self, expansion: &[Symbol]) -> Option<TokenId> {
        self.by_expansion.get(expansion).copied()
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    /// Number of token ids: 258 base symbols plus one per distinct merge result.
    pub fn num_tokens(&self) -> usize {
        self.expansions.len()
    }

    pub fn expansion(&self, token: TokenId) -> &[Symbol] {
        &self.expansions[token as usize]
    }

    pub fn rank(&self, left: TokenId, right: TokenId) -> Option<usize> {
        self.ranks.get(&(left, right)).copied()
    }

    /// Learns `vocab_size − 256` merges from a frequency list, each time
    /// merging the adjacent pair with the highest frequency-weighted count.
    /// Ties go to the pair whose (left, right) expansions are
    /// lexicographically smallest. Stops early when no pair is left.
    pub fn train(list: &WordFrequencyList, vocab_size: usize) -> Result<Self> {
        if vocab_size <= 256 {
            return Err(Error::InvalidArgument(format!(
                "BPE vocabulary size must exceed 256, got {vocab_size}"
            )));
        }
        let budget = vocab_size - 256;
        let mut table = Self::new();
        let mut words: Vec<(Vec<TokenId>, u64)> =
            list.entries().iter().map(|(w, f)| (base_tokens(w), *f)).collect();
        let mut counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        let mut where_: HashMap<(TokenId, TokenId), HashSet<usize>> = HashMap::new();
        for (i, (toks, f)) in words.iter().enumerate() {
            for p in toks.windows(2) {
                *counts.entry((p[0], p[1])).or_default() += f;
                where_.entry((p[0], p[1])).or_default().insert(i);
            }
        }
        while table.merges.len() < budget {
            let Some((&pair, _)) = counts
                .iter()
                .filter(|(_, &c)| c > 0)
                .min_by(|a, b| {
                    b.1.cmp(a.1).then_with(|| {
                        let ka = (table.expansion(a.0 .0), table.expansion(a.0 .1));
                        let kb = (table.expansion(b.0 .0), table.expansion(b.0 .1));
                        ka.cmp(&kb)
                    })
                })
            else {
                break;
            };
            let new = table.push(pair.0, pair.1)?;
            let mut affected: Vec<usize> = where_.remove(&pair).unwrap_or_default().into_iter().collect();
            affected.sort_unstable();
            for i in affected {
                let (toks, f) = &mut words[i];
                for p in toks.windows(2) {
                    let c = counts.get_mut(&(p[0], p[1])).expect("counted");
                    *c -= *f;
                }
                *toks = merge_all(toks, pair, new);
                for p in toks.windows(2) {
                    *counts.entry((p[0], p[1])).or_default() += *f;
                    where_.entry((p[0], p[1])).or_default().insert(i);
                }
            }
            counts.retain(|_, c| *c > 0);
        }
        Ok(table)
    }

    /// Encodes one word (without markers; they are added here). Merges are
    /// applied in table order; with `dropout > 0` every applicable
    /// occurrence is skipped with that probability.
    pub fn encode<R: Rng + ?Sized>(&self, word: &[u8], dropout: f64, rng: Option<&mut R>) -> Result<Vec<TokenId>> {
        if !(0.0..=1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!("dropout {dropout} outside [0, 1]")));
        }
        let mut rng = match (dropout > 0.0, rng) {
            (true, None) => {
                return Err(Error::InvalidArgument("dropout needs a random generator".into()))
            }
            (true, Some(r)) => Some(r),
            (false, _) => None,
        };
        let mut toks = base_tokens(word);
        let mut floor = 0usize;
        loop {
            // Lowest-ranked merge applicable that has not been processed yet.
            let next = toks
                .windows(2)
                .filter_map(|p| self.rank(p[0], p[1]))
                .filter(|&r| r >= floor)
                .min();
            let Some(r) = next else { break };
            let pair = self.merges[r];
            let new = self.results[r];
            let mut out = Vec::with_capacity(toks.len());
            let mut i = 0;
            while i < toks.len() {
                if i + 1 < toks.len() && (toks[i], toks[i + 1]) == pair {
                    let skip = match rng.as_deref_mut() {
                        Some(rng) => rng.random::<f64>() < dropout,
                        None => false,
                    };
                    if !skip {
                        out.push(new);
                        i += 2;
                        continue;
                    }
                }
                out.push(toks[i]);
                i += 1;
            }
            toks = out;
            floor = r + 1;
        }
        Ok(toks)
    }

    /// One merge per line, `left right`, in priority order. Bytes outside
    /// printable ASCII and the backslash are written as `\xHH`, the
    /// markers as `\B` and `\E`.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for &(l, r) in &self.merges {
            writeln!(out, "{} {}", escape(self.expansion(l)), escape(self.expansion(r)))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut table = Self::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let bad = |reason: &str| Error::format("merge table", format!("line {}: {reason}", n + 1));
            let (l, r) = line.split_once(' ').ok_or_else(|| bad("expected `left right`"))?;
            let l = unescape(l).ok_or_else(|| bad("bad escape"))?;
            let r = unescape(r).ok_or_else(|| bad("bad escape"))?;
            let lid = table.token(&l).ok_or_else(|| bad("unknown left operand"))?;
            let rid = table.token(&r).ok_or_else(|| bad("unknown right operand"))?;
            table.push(lid, rid).map_err(|e| bad(&e.to_string()))?;
        }
        Ok(table)
    }
}

/// `train_bpe(freq_list, vocab_size)`.
pub fn train_bpe(list: &WordFrequencyList, vocab_size: usize) -> Result<MergeTable> {
    MergeTable::train(list, vocab_size)
}

/// `encode_bpe(word, table, dropout, rng)`.
pub fn encode_bpe<R: Rng + ?Sized>(
    word: &[u8],
    table: &MergeTable,
    dropout: f64,
    rng: Option<&mut R>,
) -> Result<Vec<TokenId>> {
    table.encode(word, dropout, rng)
}

fn base_tokens(word: &[u8]) -> Vec<TokenId> {
    let mut t = Vec::with_capacity(word.len() + 2);
    t.push(BOW as TokenId);
    t.extend(word.iter().map(|&b| b as TokenId));
    t.push(EOW as TokenId);
    t
}

fn merge_all(toks: &[TokenId], pair: (TokenId, TokenId), new: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(toks.len());
    let mut i = 0;
    while i < toks.len() {
        if i + 1 < toks.len() && (toks[i], toks[i + 1]) == pair {
            out.push(new);
            i += 2;
        } else {
            out.push(toks[i]);
            i += 1;
        }
    }
    out
}

fn escape(symbols: &[Symbol]) -> String {
    let mut s = String::new();
    for &sym in symbols {
        match sym {
            BOW => s.push_str("\\B"),
            EOW => s.push_str("\\E"),
            0x5c => s.push_str("\\\\"),
            0x21..=0x7e => s.push(sym as u8 as char),
            b => s.push_str(&format!("\\x{b:02X}")),
        }
    }
    s
}

fn unescape(s: &str) -> Option<Vec<Symbol>> {
    let mut out = Vec::new();
    let mut bytes = s.bytes();
    while let Some(b) = bytes.next() {
        if b != b'\\' {
            if !(0x21..=0x7e).contains(&b) {
                return None;
            }
            out.push(b as Symbol);
            continue;
        }
        match bytes.next()? {
            b'B' => out.push(BOW),
            b'E' => out.push(EOW),
            b'\\' => out.push(b'\\' as Symbol),
            b'x' => {
                let hex = [bytes.next()?, bytes.next()?];
                let v = u8::from_str_radix(std::str::from_utf8(&hex).ok()?, 16).ok()?;
                out.push(v as Symbol);
            }
            _ => return None,
        }
    }
    (!out.is_empty()).then_some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn list(words: &[(&str, u64)]) -> WordFrequencyList {
        WordFrequencyList::from_counts(words.iter().map(|(w, c)| (w.as_bytes().to_vec(), *c)).collect())
            .unwrap()
    }

    #[test]
    fn banana_first_merge_is_an() {
        let t = MergeTable::train(&list(&[("banana", 1)]), 257).unwrap();
        assert_eq!(t.merges().len(), 1);
        assert_eq!(t.expansion(258), b"an".map(Symbol::from));
        let enc = t.encode::<ChaCha8Rng>(b"banana", 0.0, None).unwrap();
        assert_eq!(enc, vec![BOW as u32, b'b' as u32, 258, 258, b'a' as u32, EOW as u32]);
    }

    #[test]
    fn exhausted_corpus_stops_early() {
        let t = MergeTable::train(&list(&[("ab", 3)]), 1000).unwrap();
        // ␣ab␣ collapses in three merges.
        assert_eq!(t.merges().len(), 3);
        assert_eq!(t.encode::<ChaCha8Rng>(b"ab", 0.0, None).unwrap(), vec![260]);
    }

    #[test]
    fn equal_strings_share_a_token() {
        let mut t = MergeTable::new();
        let ab = t.push(b'a' as u32, b'b' as u32).unwrap();
        let bc = t.push(b'b' as u32, b'c' as u32).unwrap();
        let x = t.push(ab, b'c' as u32).unwrap();
        let y = t.push(b'a' as u32, bc).unwrap();
        assert_eq!(x, y);
        assert_eq!(t.num_tokens(), 261);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(MergeTable::read(&buf[..]).unwrap(), t);
    }

    #[test]
    fn full_dropout_gives_bytes() {
        let t = MergeTable::train(&list(&[("banana", 5), ("bandana", 2)]), 300).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = t.encode(b"banana", 1.0, Some(&mut rng)).unwrap();
        assert_eq!(enc.len(), 8);
        assert!(t.encode::<ChaCha8Rng>(b"x", 0.5, None).is_err());
    }

    #[test]
    fn merge_file_round_trip() {
        let t = MergeTable::train(&list(&[("a\\b\\c", 4), ("é\u{7f}", 2), ("ab", 3)]), 300).unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().all(|l| l.split(' ').count() == 2));
        assert_eq!(MergeTable::read(&buf[..]).unwrap(), t);
        assert!(MergeTable::read(&b"zz q\n"[..]).is_err());
        assert!(MergeTable::read(&b"a b\na b\n"[..]).is_err());
    }
}
