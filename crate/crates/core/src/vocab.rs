//! Static vocabulary: `(subword, triplet, log p(subword | triplet))` entries
//! decoded from a trained model, made injective in both directions and
//! completed with single-byte fallbacks.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic "FZVOCAB\0" | version u32 | K u32 | entry count u64
//! per entry: flags u8 (1 = BOW, 2 = EOW, 4 = fallback) | byte length varint | bytes
//!            | r, g, b as u8 (K ≤ 256) or u16 | logprob f64
//! automaton: state count varint, per state (transitions << 1 | final) varint,
//!            then (label delta, source − target) varint pairs; payload table
//! ```
//!
//! Entries are stored sorted by symbol sequence, so an entry's index equals
//! its rank in the automaton.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autoencoder::{greedy_decode, targets, SubwordDecoder};
use crate::binio::{read_header, Reader, Writer};
use crate::checkpoint::Checkpoint;
use crate::dawg::SubwordDawg;
use crate::error::{Error, Result};
use crate::symbols::{parse_rendered, render_symbols, BoundedWord, Symbol, DECODER_CLASSES};
use crate::triplet::Triplet;

pub const VOCAB_MAGIC: &[u8; 8] = b"FZVOCAB\0";
pub const VOCAB_VERSION: u32 = 1;

const FLAG_BOW: u8 = 1;
const FLAG_EOW: u8 = 2;
const FLAG_FALLBACK: u8 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct VocabularyEntry {
    pub subword: BoundedWord,
    pub triplet: Triplet,
    pub logprob: f64,
    /// Injected single-byte entry rather than a decoded one.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    codebook_size: usize,
    entries: Vec<VocabularyEntry>,
    by_triplet: HashMap<Triplet, u32>,
    dawg: SubwordDawg,
}

impl Vocabulary {
    /// Validates and indexes `entries`. Subwords and triplets must each be
    /// unique, triplets within `[0, K)³` and log-probabilities finite and ≤ 0.
    pub fn new(codebook_size: usize, mut entries: Vec<VocabularyEntry>) -> Result<Self> {
        if codebook_size == 0 || codebook_size > u16::MAX as usize + 1 {
            return Err(Error::InvalidArgument(format!(
                "codebook size {codebook_size} out of range"
            )));
        }
        if entries.is_empty() {
            return Err(Error::Vocabulary("no entries".into()));
        }
        entries.sort_by(|a, b| a.subword.symbols().cmp(b.subword.symbols()));
        let mut by_triplet = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if !e.triplet.in_range(codebook_size) {
                return Err(Error::Vocabulary(format!(
                    "triplet {} outside [0, {codebook_size})",
                    e.triplet
                )));
            }
            if !(e.logprob.is_finite() && e.logprob <= 0.0) {
                return Err(Error::Vocabulary(format!(
                    "entry {} has log-probability {}",
                    e.subword, e.logprob
                )));
            }
            if by_triplet.insert(e.triplet, i as u32).is_some() {
                return Err(Error::Vocabulary(format!("triplet {} used twice", e.triplet)));
            }
        }
        let dawg = SubwordDawg::build(
            entries
                .iter()
                .enumerate()
                .map(|(i, e)| (e.subword.symbols(), i as u32)),
        )
        .map_err(|_| Error::Vocabulary("subword listed twice".into()))?;
        Ok(Self {
            codebook_size,
            entries,
            by_triplet,
            dawg,
        })
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn entries(&self) -> &[VocabularyEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, index: u32) -> &VocabularyEntry {
        &self.entries[index as usize]
    }

    pub fn dawg(&self) -> &SubwordDawg {
        &self.dawg
    }

    pub fn get(&self, subword: &[Symbol]) -> Option<&VocabularyEntry> {
        self.dawg.get(subword).map(|i| self.entry(i))
    }

    pub fn by_triplet(&self, triplet: Triplet) -> Option<&VocabularyEntry> {
        self.by_triplet.get(&triplet).map(|&i| self.entry(i))
    }

    pub fn fallback_count(&self) -> usize {
        self.entries.iter().filter(|e| e.fallback).count()
    }

    /// For each byte, whether all four marker variants (bare, `␣b`, `b␣`,
    /// `␣b␣`) are present. When every byte is covered, any word is.
    pub fn byte_coverage(&self) -> [bool; 256] {
        let mut out = [false; 256];
        for (b, slot) in out.iter_mut().enumerate() {
            *slot = byte_variants(b as u8).iter().all(|w| self.dawg.contains(w.symbols()));
        }
        out
    }

    pub fn covers_all_bytes(&self) -> bool {
        self.byte_coverage().iter().all(|&c| c)
    }

    pub fn min_logprob(&self) -> f64 {
        self.entries.iter().map(|e| e.logprob).fold(f64::INFINITY, f64::min)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = Writer::new(out);
        w.bytes(VOCAB_MAGIC)?;
        w.u32(VOCAB_VERSION)?;
        w.u32(self.codebook_size as u32)?;
        w.u64(self.entries.len() as u64)?;
        let wide = self.codebook_size > 256;
        for e in &self.entries {
            let mut flags = 0;
            if e.subword.has_bow() {
                flags |= FLAG_BOW;
            }
            if e.subword.has_eow() {
                flags |= FLAG_EOW;
            }
            if e.fallback {
                flags |= FLAG_FALLBACK;
            }
            w.u8(flags)?;
            let bytes = e.subword.bytes();
            w.varint(bytes.len() as u64)?;
            w.bytes(&bytes)?;
            for c in e.triplet.0 {
                if wide {
                    w.u16(c)?;
                } else {
                    w.u8(c as u8)?;
                }
            }
            w.f64(e.logprob)?;
        }
        self.dawg.write_to(&mut w)?;
        w.finish()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader::new(input, "vocabulary");
        let version = read_header(&mut r, VOCAB_MAGIC)?;
        if version != VOCAB_VERSION {
            return Err(Error::Version {
                what: "vocabulary",
                expected: VOCAB_VERSION,
                found: version,
            });
        }
        let k = r.u32()? as usize;
        let n = r.len(1 << 32)?;
        let wide = k > 256;
        let mut entries = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let flags = r.u8()?;
            if flags & !(FLAG_BOW | FLAG_EOW | FLAG_FALLBACK) != 0 {
                return Err(r.err(format!("unknown entry flags {flags:#x}")));
            }
            let len = r.varint_len(1 << 16)?;
            let bytes = r.vec(len)?;
            let subword = BoundedWord::new(&bytes, flags & FLAG_BOW != 0, flags & FLAG_EOW != 0)
                .map_err(|e| r.err(e.to_string()))?;
            let mut t = [0u16; 3];
            for c in t.iter_mut() {
                *c = if wide { r.u16()? } else { r.u8()? as u16 };
            }
            entries.push(VocabularyEntry {
                subword,
                triplet: Triplet(t),
                logprob: r.f64()?,
                fallback: flags & FLAG_FALLBACK != 0,
            });
        }
        let stored = SubwordDawg::read_from(&mut r)?;
        r.expect_eof()?;
        let vocab = Self::new(k, entries).map_err(|e| Error::format("vocabulary", e.to_string()))?;
        if stored != vocab.dawg {
            return Err(Error::format(
                "vocabulary",
                "stored automaton does not match the entry table",
            ));
        }
        Ok(vocab)
    }

    /// One line per entry: `subword<TAB>r,g,b<TAB>logprob<TAB>kind`, where
    /// kind is `learned` or `fallback`. Logprobs print in shortest
    /// round-trip form, so [`read_tsv`](Self::read_tsv) restores them
    /// exactly.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            let kind = if e.fallback { "fallback" } else { "learned" };
            writeln!(out, "{}\t{}\t{}\t{kind}", e.subword, e.triplet, e.logprob)?;
        }
        Ok(())
    }

    /// Reads the [`write_tsv`](Self::write_tsv) format. The codebook size
    /// is not part of the text and must be given.
    pub fn read_tsv<R: BufRead>(codebook_size: usize, input: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |why: String| Error::format("vocabulary TSV", format!("line {}: {why}", n + 1));
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(format!("expected 4 columns, found {}", cols.len())));
            }
            let symbols = parse_rendered(cols[0]).map_err(|e| bad(e.to_string()))?;
            let subword = BoundedWord::from_symbols(symbols).map_err(|e| bad(e.to_string()))?;
            let triplet: Triplet = cols[1].parse().map_err(bad)?;
            let logprob: f64 = cols[2]
                .parse()
                .map_err(|_| bad(format!("bad logprob {:?}", cols[2])))?;
            let fallback = match cols[3] {
                "learned" => false,
                "fallback" => true,
                k => return Err(bad(format!("unknown entry kind {k:?}"))),
            };
            entries.push(VocabularyEntry {
                subword,
                triplet,
                logprob,
                fallback,
            });
        }
        Self::new(codebook_size, entries).map_err(|e| match e {
            Error::Vocabulary(why) | Error::InvalidArgument(why) => Error::format("vocabulary TSV", why),
            e => e,
        })
    }

    /// Vocabulary of `learned` entries completed with byte fallbacks, for
    /// hand-made vocabularies. Fallbacks take the first free triplets in
    /// flat-index order.
    pub fn with_byte_fallbacks(codebook_size: usize, mut learned: Vec<VocabularyEntry>) -> Result<Self> {
        inject_fallbacks(&mut learned, codebook_size, &BTreeMap::new())?;
        Self::new(codebook_size, learned)
    }
}

/// The four marker variants of a single byte: bare, `␣b`, `b␣`, `␣b␣`.
pub fn byte_variants(b: u8) -> [BoundedWord; 4] {
    [(false, false), (true, false), (false, true), (true, true)]
        .map(|(bow, eow)| BoundedWord::new(&[b], bow, eow).expect("single byte"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub beam_width: usize,
    pub byte_fallbacks: bool,
    /// Worker threads for decoding; the result does not depend on it.
    pub threads: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            beam_width: 8,
            byte_fallbacks: true,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneReason {
    /// The decoded subword scores higher under another used triplet.
    DuplicateSubword,
    /// The subword's best triplet is claimed by a higher-scoring subword.
    TripletTaken,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub subword: BoundedWord,
    pub triplet: Triplet,
    pub logprob: f64,
    pub reason: PruneReason,
    /// The subword that kept the contested triplet (`TripletTaken`) or the
    /// triplet that kept the subword (`DuplicateSubword`), rendered.
    pub winner: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    pub used_triplets: usize,
    pub distinct_subwords: usize,
    /// Decodes that hit the maximum length instead of ending.
    pub forced: usize,
    pub pruned: Vec<Pruned>,
    pub fallbacks: usize,
}

/// Builds the vocabulary of a checkpoint from its EMA parameters and its
/// recorded triplet usage.
pub fn build_from_checkpoint(
    checkpoint: &Checkpoint,
    options: &BuildOptions,
) -> Result<(Vocabulary, BuildReport)> {
    let model = checkpoint.model()?;
    build_vocabulary(&model, &checkpoint.usage, options)
}

/// Decodes every used triplet, reassigns each distinct subword to its most
/// likely used triplet, prunes collisions and injects byte fallbacks.
pub fn build_vocabulary<D>(
    decoder: &D,
    usage: &BTreeMap<Triplet, u64>,
    options: &BuildOptions,
) -> Result<(Vocabulary, BuildReport)>
where
    D: SubwordDecoder + Sync,
{
    let k = decoder.codebook_size();
    let used: Vec<Triplet> = usage
        .iter()
        .filter(|(t, &n)| n > 0 && t.in_range(k))
        .map(|(&t, _)| t)
        .collect();
    if used.is_empty() {
        return Err(Error::Vocabulary("no triplet was used during training".into()));
    }
    let mut report = BuildReport {
        used_triplets: used.len(),
        ..Default::default()
    };

    let decoded = par_map(&used, options.threads, |&t| {
        let ctx = decoder.context(t);
        greedy_decode(decoder, &ctx, options.beam_width)
    });

    // Distinct subwords, seeded with the score of the first triplet that
    // produced them (a lower bound on the maximum).
    let mut seeds: BTreeMap<Vec<Symbol>, (BoundedWord, f64, Triplet)> = BTreeMap::new();
    for (&t, d) in used.iter().zip(&decoded) {
        report.forced += d.forced as usize;
        seeds
            .entry(d.word.symbols().to_vec())
            .and_modify(|s| {
                if d.logprob > s.1 {
                    *s = (d.word.clone(), d.logprob, t);
                }
            })
            .or_insert((d.word.clone(), d.logprob, t));
    }
    let words: Vec<BoundedWord> = seeds.values().map(|s| s.0.clone()).collect();
    report.distinct_subwords = words.len();

    let trie = TargetTrie::new(&words);
    let seed_best: Vec<(f64, Triplet)> = seeds.values().map(|s| (s.1, s.2)).collect();
    let partial = par_chunks(&used, options.threads, |chunk| {
        let mut best = seed_best.clone();
        let mut search = Search {
            decoder,
            trie: &trie,
            best: &mut best,
            min_best: vec![f64::NEG_INFINITY; trie.nodes.len()],
        };
        search.init_mins();
        for &t in chunk {
            let ctx = decoder.context(t);
            search.visit_triplet(&ctx, t);
        }
        best
    });
    // Merge per-chunk maxima; ties go to the smaller triplet.
    let mut best = seed_best;
    for chunk_best in partial {
        for (b, c) in best.iter_mut().zip(chunk_best) {
            if better(c, *b) {
                *b = c;
            }
        }
    }

    // Triplets whose decoded subword is stored under another triplet.
    for (&t, d) in used.iter().zip(&decoded) {
        let i = words
            .binary_search_by(|w| w.symbols().cmp(d.word.symbols()))
            .expect("every decoded subword is indexed");
        let winner = best[i].1;
        if t == winner {
            continue;
        }
        let p = Pruned {
            subword: d.word.clone(),
            triplet: t,
            logprob: d.logprob,
            reason: PruneReason::DuplicateSubword,
            winner: winner.to_string(),
        };
        log::info!("pruned {} at {}: subword kept by {}", p.subword, p.triplet, p.winner);
        report.pruned.push(p);
    }

    // One subword per triplet: the highest log-probability wins, ties go
    // to the smaller symbol sequence.
    let mut claims: BTreeMap<Triplet, usize> = BTreeMap::new();
    let mut losers = Vec::new();
    for (i, &(lp, t)) in best.iter().enumerate() {
        match claims.get(&t) {
            Some(&j) if best[j].0 >= lp => losers.push(i),
            Some(&j) => {
                losers.push(j);
                claims.insert(t, i);
            }
            None => {
                claims.insert(t, i);
            }
        }
    }
    losers.sort_unstable();
    for i in losers {
        let (lp, t) = best[i];
        let p = Pruned {
            subword: words[i].clone(),
            triplet: t,
            logprob: lp,
            reason: PruneReason::TripletTaken,
            winner: words[claims[&t]].to_string(),
        };
        log::info!("pruned {} at {}: triplet kept by {}", p.subword, p.triplet, p.winner);
        report.pruned.push(p);
    }

    let mut entries: Vec<VocabularyEntry> = claims
        .iter()
        .map(|(&t, &i)| VocabularyEntry {
            subword: words[i].clone(),
            triplet: t,
            logprob: best[i].0,
            fallback: false,
        })
        .collect();

    if options.byte_fallbacks {
        let added = inject_fallbacks(&mut entries, k, usage)?;
        report.fallbacks = added;
    }
    let vocab = Vocabulary::new(k, entries)?;
    Ok((vocab, report))
}

fn better(a: (f64, Triplet), b: (f64, Triplet)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Adds every missing single-byte variant with `logprob = min − 1`, on
/// triplets no entry uses, preferring ones never used in training.
fn inject_fallbacks(
    entries: &mut Vec<VocabularyEntry>,
    k: usize,
    usage: &BTreeMap<Triplet, u64>,
) -> Result<usize> {
    let present: std::collections::HashSet<Vec<Symbol>> =
        entries.iter().map(|e| e.subword.symbols().to_vec()).collect();
    let missing: Vec<BoundedWord> = (0..=255u8)
        .flat_map(byte_variants)
        .filter(|w| !present.contains(w.symbols()))
        .collect();
    if missing.is_empty() {
        return Ok(0);
    }
    let taken: std::collections::HashSet<Triplet> = entries.iter().map(|e| e.triplet).collect();
    let total = k * k * k;
    let free = |want_unused: bool| {
        (0..total)
            .map(move |i| Triplet::from_flat_index(i, k))
            .filter(move |t| usage.get(t).copied().unwrap_or(0) == 0 || !want_unused)
    };
    let mut slots = free(true)
        .chain(free(false).filter(|t| usage.get(t).copied().unwrap_or(0) > 0))
        .filter(|t| !taken.contains(t));
    let floor = entries.iter().map(|e| e.logprob).fold(f64::INFINITY, f64::min) - 1.0;
    let n = missing.len();
    for subword in missing {
        let triplet = slots.next().ok_or_else(|| {
            Error::Vocabulary(format!(
                "{n} byte fallbacks do not fit into the {total} triplets left by {} entries",
                taken.len()
            ))
        })?;
        entries.push(VocabularyEntry {
            subword,
            triplet,
            logprob: floor,
            fallback: true,
        });
    }
    Ok(n)
}

/// Trie over decoder target sequences (symbols plus END for subwords that
/// do not end with EOW). Target sequences are prefix-free, so words sit at
/// leaves.
struct TargetTrie {
    nodes: Vec<TrieNode>,
}

#[derive(Default)]
struct TrieNode {
    children: Vec<(usize, usize)>,
    word: Option<usize>,
}

impl TargetTrie {
    fn new(words: &[BoundedWord]) -> Self {
        let mut nodes = vec![TrieNode::default()];
        for (i, w) in words.iter().enumerate() {
            let mut node = 0;
            for sym in targets(w) {
                node = match nodes[node].children.iter().find(|c| c.0 == sym) {
                    Some(&(_, child)) => child,
                    None => {
                        nodes.push(TrieNode::default());
                        let child = nodes.len() - 1;
                        nodes[node].children.push((sym, child));
                        child
                    }
                };
            }
            nodes[node].word = Some(i);
        }
        Self { nodes }
    }
}

/// Exact branch and bound for `argmax_z log p(w | z)` over all trie words
/// at once. Partial sums only decrease along a path, so a node is cut when
/// its partial score is below the current best of every word beneath it.
struct Search<'a, D: SubwordDecoder> {
    decoder: &'a D,
    trie: &'a TargetTrie,
    best: &'a mut Vec<(f64, Triplet)>,
    /// Minimum current best over the words below each node.
    min_best: Vec<f64>,
}

impl<D: SubwordDecoder> Search<'_, D> {
    fn init_mins(&mut self) {
        // Children always have larger indices than their parents.
        for n in (0..self.trie.nodes.len()).rev() {
            let node = &self.trie.nodes[n];
            self.min_best[n] = match node.word {
                Some(w) => self.best[w].0,
                None => node
                    .children
                    .iter()
                    .map(|&(_, c)| self.min_best[c])
                    .fold(f64::INFINITY, f64::min),
            };
        }
    }

    fn visit_triplet(&mut self, ctx: &D::Context, t: Triplet) {
        let mut prefix = Vec::new();
        let mut buf = vec![0.0; DECODER_CLASSES];
        self.visit(ctx, t, 0, &mut prefix, 0.0, &mut buf);
    }

    fn visit(
        &mut self,
        ctx: &D::Context,
        t: Triplet,
        node: usize,
        prefix: &mut Vec<usize>,
        partial: f64,
        buf: &mut [f64],
    ) -> f64 {
        let trie = self.trie;
        if let Some(w) = trie.nodes[node].word {
            if better((partial, t), self.best[w]) {
                self.best[w] = (partial, t);
            }
            self.min_best[node] = self.best[w].0;
            return self.min_best[node];
        }
        if partial < self.min_best[node] {
            return self.min_best[node];
        }
        self.decoder.next_log_probs(ctx, prefix, buf);
        let steps: Vec<(usize, usize, f64)> = trie.nodes[node]
            .children
            .iter()
            .map(|&(sym, child)| (sym, child, buf[sym]))
            .collect();
        let mut min = f64::INFINITY;
        for (sym, child, lp) in steps {
            prefix.push(sym);
            min = min.min(self.visit(ctx, t, child, prefix, partial + lp, buf));
            prefix.pop();
        }
        self.min_best[node] = min;
        min
    }
}

fn par_map<T: Sync, U: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    par_chunks(items, threads, |chunk| chunk.iter().map(&f).collect::<Vec<_>>())
        .into_iter()
        .flatten()
        .collect()
}

/// Applies `f` to contiguous chunks of `items` on up to `threads` threads
/// and returns the results in chunk order.
fn par_chunks<T: Sync, U: Send>(items: &[T], threads: usize, f: impl Fn(&[T]) -> U + Sync) -> Vec<U> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return vec![f(items)];
    }
    let size = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(size).map(|c| s.spawn(|| f(c))).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Renders a subword for messages and TSV output.
pub fn render(word: &BoundedWord) -> String {
    render_symbols(word.symbols())
}
