//! Shortest-path segmentation over the vocabulary lattice.
//!
//! Positions of a boundary-marked word are graph nodes; every vocabulary
//! subword that matches at position `i` is an edge to `i + len`. Dijkstra
//! finds the cheapest path from 0 to the end. Among equally cheap paths the
//! one with fewer pieces wins, then the one whose split positions are
//! lexicographically largest (the longest first piece).

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::symbols::{split_words, BoundedWord};
use crate::triplet::Triplet;
use crate::vocab::{Vocabulary, VocabularyEntry};

pub const DEFAULT_ALPHA_SPLIT: f64 = 0.1;
pub const DEFAULT_SIGMA_SAMPLE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMode {
    #[default]
    Deterministic,
    Sampling,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParams {
    /// Constant cost per piece.
    pub alpha_split: f64,
    /// Standard deviation of the log-normal length noise; only used when sampling.
    pub sigma_sample: f64,
    pub mode: ScoreMode,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            alpha_split: DEFAULT_ALPHA_SPLIT,
            sigma_sample: DEFAULT_SIGMA_SAMPLE,
            mode: ScoreMode::Deterministic,
        }
    }
}

impl ScoreParams {
    pub fn deterministic(alpha_split: f64) -> Self {
        Self {
            alpha_split,
            ..Self::default()
        }
    }

    pub fn sampling(alpha_split: f64, sigma_sample: f64) -> Self {
        Self {
            alpha_split,
            sigma_sample,
            mode: ScoreMode::Sampling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_split.is_finite() && self.alpha_split >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha_split must be finite and non-negative, got {}",
                self.alpha_split
            )));
        }
        if !(self.sigma_sample.is_finite() && self.sigma_sample >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma_sample must be finite and non-negative, got {}",
                self.sigma_sample
            )));
        }
        Ok(())
    }
}

/// `−logprob + α`.
pub fn deterministic_score(logprob: f64, alpha_split: f64) -> f64 {
    -logprob + alpha_split
}

/// `−logprob + α + |w|·exp(ε)`, with `|w|` the byte length without markers.
pub fn sampled_score(logprob: f64, alpha_split: f64, byte_len: usize, epsilon: f64) -> f64 {
    -logprob + alpha_split + byte_len as f64 * epsilon.exp()
}

/// Score of one entry under `params`. Sampling mode draws a fresh
/// `ε ~ N(0, σ²)` and needs `rng`.
pub fn score<R: Rng + ?Sized>(
    entry: &VocabularyEntry,
    params: &ScoreParams,
    rng: Option<&mut R>,
) -> Result<f64> {
    match params.mode {
        ScoreMode::Deterministic => Ok(deterministic_score(entry.logprob, params.alpha_split)),
        ScoreMode::Sampling => {
            let rng = rng.ok_or_else(|| {
                Error::InvalidArgument("sampling mode needs a random generator".into())
            })?;
            let eps = noise(params.sigma_sample)?.sample(rng);
            Ok(sampled_score(
                entry.logprob,
                params.alpha_split,
                entry.subword.byte_len(),
                eps,
            ))
        }
    }
}

fn noise(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(format!("sigma_sample: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub subword: BoundedWord,
    pub triplet: Triplet,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tokenization {
    pub pieces: Vec<Piece>,
    pub total_score: f64,
}

impl Tokenization {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn triplets(&self) -> Vec<Triplet> {
        self.pieces.iter().map(|p| p.triplet).collect()
    }

    /// Concatenated bytes of the pieces, markers dropped.
    pub fn bytes(&self) -> Vec<u8> {
        self.pieces.iter().flat_map(|p| p.subword.bytes()).collect()
    }

    /// `subword:r,g,b` pieces separated by single spaces.
    pub fn render(&self) -> String {
        let parts: Vec<String> = self
            .pieces
            .iter()
            .map(|p| format!("{}:{}", p.subword, p.triplet))
            .collect();
        parts.join(" ")
    }
}

/// Immutable vocabulary plus scoring parameters.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocabulary,
    params: ScoreParams,
}

#[derive(Clone, Copy)]
struct Label {
    cost: f64,
    pieces: usize,
    prev: usize,
    entry: u32,
    score: f64,
}

impl Tokenizer {
    pub fn new(vocab: Vocabulary, params: ScoreParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { vocab, params })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ScoreParams {
        &self.params
    }

    pub fn with_params(&self, params: ScoreParams) -> Result<Self> {
        Self::new(self.vocab.clone(), params)
    }

    /// Minimum-score segmentation with the deterministic score, whatever
    /// the configured mode.
    pub fn tokenize_word(&self, word: &BoundedWord) -> Result<Tokenization> {
        let alpha = self.params.alpha_split;
        self.search(word, |e| deterministic_score(e.logprob, alpha))
    }

    /// Minimum-score segmentation with fresh length noise on every edge.
    pub fn sample_word<R: Rng + ?Sized>(&self, word: &BoundedWord, rng: &mut R) -> Result<Tokenization> {
        let alpha = self.params.alpha_split;
        let dist = noise(self.params.sigma_sample)?;
        self.search(word, |e| {
            sampled_score(e.logprob, alpha, e.subword.byte_len(), dist.sample(rng))
        })
    }

    /// Dispatches on the configured mode.
    pub fn tokenize_word_with<R: Rng + ?Sized>(&self, word: &BoundedWord, rng: &mut R) -> Result<Tokenization> {
        match self.params.mode {
            ScoreMode::Deterministic => self.tokenize_word(word),
            ScoreMode::Sampling => self.sample_word(word, rng),
        }
    }

    /// `n` independent sampled segmentations of `word`.
    pub fn sample_tokenizations<R: Rng + ?Sized>(
        &self,
        word: &BoundedWord,
        rng: &mut R,
        n: usize,
    ) -> Result<Vec<Tokenization>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        (0..n).map(|_| self.sample_word(word, rng)).collect()
    }

    /// Splits `text` on whitespace, marks each word with BOW and EOW and
    /// tokenizes it deterministically.
    pub fn tokenize_text(&self, text: &[u8]) -> Result<Vec<Tokenization>> {
        split_words(text)
            .into_iter()
            .map(|w| self.tokenize_word(&BoundedWord::word(w)?))
            .collect()
    }

    /// Like [`tokenize_text`](Self::tokenize_text) but honouring the mode.
    pub fn tokenize_text_with<R: Rng + ?Sized>(&self, text: &[u8], rng: &mut R) -> Result<Vec<Tokenization>> {
        split_words(text)
            .into_iter()
            .map(|w| self.tokenize_word_with(&BoundedWord::word(w)?, rng))
            .collect()
    }

    /// `n` samples of every word of `text`, indexed `[word][sample]`. The
    /// generator is consumed word by word, so any front end that walks the
    /// same words in the same order with the same seed reproduces them.
    pub fn sample_text<R: Rng + ?Sized>(&self, text: &[u8], rng: &mut R, n: usize) -> Result<Vec<Vec<Tokenization>>> {
        split_words(text)
            .into_iter()
            .map(|w| self.sample_tokenizations(&BoundedWord::word(w)?, rng, n))
            .collect()
    }

    pub fn detokenize(&self, triplets: &[Triplet]) -> Result<Vec<u8>> {
        detokenize(triplets, &self.vocab)
    }

    fn search(&self, word: &BoundedWord, mut score: impl FnMut(&VocabularyEntry) -> f64) -> Result<Tokenization> {
        let syms = word.symbols();
        let n = syms.len();
        if n == 0 {
            return Ok(Tokenization::default());
        }
        let dawg = self.vocab.dawg();
        let mut labels: Vec<Option<Label>> = vec![None; n + 1];
        labels[0] = Some(Label {
            cost: 0.0,
            pieces: 0,
            prev: 0,
            entry: 0,
            score: 0.0,
        });
        let mut done = vec![false; n + 1];
        let mut heap = BinaryHeap::new();
        heap.push(Reverse(HeapKey(0.0, 0)));
        while let Some(Reverse(HeapKey(cost, pos))) = heap.pop() {
            if done[pos] || labels[pos].is_some_and(|l| l.cost < cost) {
                continue;
            }
            done[pos] = true;
            if pos == n {
                break;
            }
            let here = labels[pos].expect("queued positions are labelled");
            for (len, entry) in dawg.iter_prefixes(&syms[pos..]) {
                let s = score(self.vocab.entry(entry));
                assert!(s >= 0.0, "negative edge score {s}");
                let next = pos + len;
                let cand = Label {
                    cost: here.cost + s,
                    pieces: here.pieces + 1,
                    prev: pos,
                    entry,
                    score: s,
                };
                let replace = match &labels[next] {
                    None => true,
                    Some(old) => match cand.cost.total_cmp(&old.cost).then(cand.pieces.cmp(&old.pieces)) {
                        Ordering::Less => true,
                        Ordering::Greater => false,
                        Ordering::Equal => {
                            splits(&labels, pos, next) > splits(&labels, old.prev, next)
                        }
                    },
                };
                if replace {
                    debug_assert!(!done[next]);
                    labels[next] = Some(cand);
                    heap.push(Reverse(HeapKey(cand.cost, next)));
                }
            }
        }
        let Some(end) = labels[n] else {
            // The furthest reachable position: no subword starts there.
            let position = (0..n).rev().find(|&i| done[i]).unwrap_or(0);
            return Err(Error::Uncoverable { position });
        };
        let mut pieces = Vec::with_capacity(end.pieces);
        let mut pos = n;
        while pos > 0 {
            let l = labels[pos].expect("path positions are labelled");
            let e = self.vocab.entry(l.entry);
            pieces.push(Piece {
                subword: e.subword.clone(),
                triplet: e.triplet,
                score: l.score,
            });
            pos = l.prev;
        }
        pieces.reverse();
        Ok(Tokenization {
            pieces,
            total_score: end.cost,
        })
    }
}

/// Split positions of the path reaching `end` through predecessor `prev`.
fn splits(labels: &[Option<Label>], prev: usize, end: usize) -> Vec<usize> {
    let mut out = vec![end];
    let mut pos = prev;
    while pos > 0 {
        out.push(pos);
        pos = labels[pos].expect("labelled").prev;
    }
    out.reverse();
    out
}

#[derive(Clone, Copy, PartialEq)]
struct HeapKey(f64, usize);

impl Eq for HeapKey {}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Concatenates the subwords of `triplets`. A single space separates two
/// pieces when the first ends a word or the second starts one.
pub fn detokenize(triplets: &[Triplet], vocab: &Vocabulary) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut word_open = false;
    for (position, &t) in triplets.iter().enumerate() {
        let e = vocab.by_triplet(t).ok_or(Error::UnknownTriplet {
            position,
            r: t.r(),
            g: t.g(),
            b: t.b(),
        })?;
        if position > 0 && (!word_open || e.subword.has_bow()) {
            out.push(b' ');
        }
        out.extend(e.subword.bytes());
        word_open = !e.subword.has_eow();
    }
    Ok(out)
}

/// Detokenizes word by word and joins the words with single spaces.
pub fn detokenize_text(words: &[Vec<Triplet>], vocab: &Vocabulary) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            out.push(b' ');
        }
        let bytes = detokenize(w, vocab).map_err(|e| match e {
            Error::UnknownTriplet { position, r, g, b } => Error::UnknownTriplet {
                position: position + offset,
                r,
                g,
                b,
            },
            e => e,
        })?;
        out.extend(bytes);
        offset += w.len();
    }
    Ok(out)
}

/// Cuts a flat triplet stream into words: a word ends after a piece that
/// carries EOW or before a piece that carries BOW.
pub fn split_triplet_words(triplets: &[Triplet], vocab: &Vocabulary) -> Result<Vec<Vec<Triplet>>> {
    let mut words: Vec<Vec<Triplet>> = Vec::new();
    let mut open = false;
    for (position, &t) in triplets.iter().enumerate() {
        let e = vocab.by_triplet(t).ok_or(Error::UnknownTriplet {
            position,
            r: t.r(),
            g: t.g(),
            b: t.b(),
        })?;
        if !open || e.subword.has_bow() {
            words.push(Vec::new());
        }
        words.last_mut().expect("a word is open").push(t);
        open = !e.subword.has_eow();
    }
    Ok(words)
}

/// Packs triplets as three bytes each when `K ≤ 256`, else three
/// little-endian u16 values.
pub fn pack_triplets(triplets: &[Triplet], codebook_size: usize) -> Vec<u8> {
    let wide = codebook_size > 256;
    let mut out = Vec::with_capacity(triplets.len() * if wide { 6 } else { 3 });
    for t in triplets {
        for c in t.0 {
            if wide {
                out.extend(c.to_le_bytes());
            } else {
                out.push(c as u8);
            }
        }
    }
    out
}

pub fn unpack_triplets(bytes: &[u8], codebook_size: usize) -> Result<Vec<Triplet>> {
    let width = if codebook_size > 256 { 6 } else { 3 };
    if bytes.len() % width != 0 {
        return Err(Error::format(
            "packed triplets",
            format!("{} bytes is not a multiple of {width}", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks(width)
        .map(|c| {
            if width == 6 {
                Triplet([
                    u16::from_le_bytes([c[0], c[1]]),
                    u16::from_le_bytes([c[2], c[3]]),
                    u16::from_le_bytes([c[4], c[5]]),
                ])
            } else {
                Triplet([c[0] as u16, c[1] as u16, c[2] as u16])
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn entry(s: &str, t: u16, logprob: f64) -> VocabularyEntry {
        let bow = s.starts_with('_');
        let eow = s.len() > 1 && s.ends_with('_');
        VocabularyEntry {
            subword: BoundedWord::new(s.trim_matches('_').as_bytes(), bow, eow).unwrap(),
            triplet: Triplet::new(t, 0, 0),
            logprob,
            fallback: false,
        }
    }

    fn plain(word: &str) -> BoundedWord {
        BoundedWord::new(word.as_bytes(), false, false).unwrap()
    }

    fn tok(entries: Vec<VocabularyEntry>, alpha: f64) -> Tokenizer {
        Tokenizer::new(Vocabulary::new(64, entries).unwrap(), ScoreParams::deterministic(alpha)).unwrap()
    }

    #[test]
    fn score_arithmetic() {
        let e = entry("abc", 0, -1.0);
        let det = score::<ChaCha8Rng>(&e, &ScoreParams::deterministic(0.1), None).unwrap();
        assert!((det - 1.1).abs() < 1e-15);
        assert_eq!(sampled_score(-1.0, 0.1, 3, 0.0), det + 3.0);
        assert!(score::<ChaCha8Rng>(&e, &ScoreParams::sampling(0.1, 0.02), None).is_err());
    }

    #[test]
    fn whole_piece_beats_split() {
        // Scores with α applied: ab → 1.1, a → 1.0, b → 0.9.
        let t = tok(vec![entry("ab", 0, -1.1), entry("a", 1, -1.0), entry("b", 2, -0.9)], 0.0);
        let out = t.tokenize_word(&plain("ab")).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.total_score - 1.1).abs() < 1e-12);
    }

    #[test]
    fn equal_cost_prefers_fewer_pieces_then_longer_first_piece() {
        let t = tok(
            vec![
                entry("a", 0, -0.5),
                entry("bc", 1, -0.5),
                entry("ab", 2, -0.5),
                entry("c", 3, -0.5),
                entry("abc", 4, -1.0),
            ],
            0.0,
        );
        let out = t.tokenize_word(&plain("abc")).unwrap();
        assert_eq!(out.triplets(), vec![Triplet::new(4, 0, 0)]);
        let t = tok(
            vec![entry("a", 0, -0.5), entry("bc", 1, -0.5), entry("ab", 2, -0.5), entry("c", 3, -0.5)],
            0.0,
        );
        let out = t.tokenize_word(&plain("abc")).unwrap();
        assert_eq!(out.triplets(), vec![Triplet::new(2, 0, 0), Triplet::new(3, 0, 0)]);
    }

    #[test]
    fn uncoverable_names_position() {
        let t = tok(vec![entry("ab", 0, -1.0), entry("a", 1, -1.0)], 0.1);
        match t.tokenize_word(&plain("abxa")) {
            Err(Error::Uncoverable { position }) => assert_eq!(position, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn detokenize_joins_words() {
        let v = Vocabulary::new(
            64,
            vec![entry("_ab", 0, -1.0), entry("c_", 1, -1.0), entry("_d_", 2, -1.0)],
        )
        .unwrap();
        let ts = [0, 1, 2, 0, 1].map(|i| Triplet::new(i, 0, 0));
        assert_eq!(detokenize(&ts, &v).unwrap(), b"abc d abc");
        assert_eq!(detokenize(&[], &v).unwrap(), b"");
        match detokenize(&[Triplet::new(0, 0, 0), Triplet::new(9, 9, 9)], &v) {
            Err(Error::UnknownTriplet { position: 1, r: 9, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let t = tok(
            vec![entry("a", 0, -0.5), entry("bc", 1, -0.5), entry("ab", 2, -0.5), entry("c", 3, -0.5)],
            0.1,
        );
        let t = t.with_params(ScoreParams::sampling(0.1, 0.5)).unwrap();
        let w = plain("abc");
        let a = t.sample_tokenizations(&w, &mut ChaCha8Rng::seed_from_u64(3), 32).unwrap();
        let b = t.sample_tokenizations(&w, &mut ChaCha8Rng::seed_from_u64(3), 32).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.bytes() == b"abc"));
    }

    #[test]
    fn packing_round_trips() {
        let ts = vec![Triplet::new(1, 2, 3), Triplet::new(255, 0, 7)];
        assert_eq!(pack_triplets(&ts, 256), vec![1, 2, 3, 255, 0, 7]);
        assert_eq!(unpack_triplets(&pack_triplets(&ts, 256), 256).unwrap(), ts);
        let wide = vec![Triplet::new(300, 2, 1000)];
        assert_eq!(unpack_triplets(&pack_triplets(&wide, 1024), 1024).unwrap(), wide);
        assert!(unpack_triplets(&[1, 2], 16).is_err());
    }
}
