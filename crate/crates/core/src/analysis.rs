//! Tokenizer-level measurements: splits per word, index histograms,
//! character noise and RGB rendering of triplets.

use std::fmt::Write as _;
use std::io::Write;

use rand::Rng;

use crate::bpe::MergeTable;
use crate::corpus::WordFrequencyList;
use crate::error::{Error, Result};
use crate::symbols::BoundedWord;
use crate::tokenizer::{ScoreParams, Tokenization, Tokenizer};
use crate::triplet::Triplet;
use crate::vq::entropy;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitsRow {
    /// `α_split` for the factorizer, vocabulary size for BPE.
    pub param: f64,
    pub words: u64,
    pub pieces: u64,
}

impl SplitsRow {
    pub fn mean(&self) -> f64 {
        self.pieces as f64 / self.words as f64
    }
}

/// Mean pieces per word over the running words of `corpus` (each type
/// weighted by its count), for every `α_split` in `alphas`.
pub fn splits_per_word(tokenizer: &Tokenizer, corpus: &WordFrequencyList, alphas: &[f64]) -> Result<Vec<SplitsRow>> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    alphas
        .iter()
        .map(|&alpha| {
            let t = tokenizer.with_params(ScoreParams::deterministic(alpha))?;
            let mut row = SplitsRow {
                param: alpha,
                words: 0,
                pieces: 0,
            };
            for (w, f) in corpus.entries() {
                let n = t.tokenize_word(&BoundedWord::word(w)?)?.len() as u64;
                row.words += f;
                row.pieces += n * f;
            }
            Ok(row)
        })
        .collect()
}

/// Same statistic for BPE, training one merge table per vocabulary size
/// on `train` and encoding `corpus`.
pub fn bpe_splits_per_word(train: &WordFrequencyList, corpus: &WordFrequencyList, sizes: &[usize]) -> Result<Vec<SplitsRow>> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    sizes
        .iter()
        .map(|&size| {
            let table = MergeTable::train(train, size)?;
            let mut row = SplitsRow {
                param: size as f64,
                words: 0,
                pieces: 0,
            };
            for (w, f) in corpus.entries() {
                let n = table.encode::<rand_chacha::ChaCha8Rng>(w, 0.0, None)?.len() as u64;
                row.words += f;
                row.pieces += n * f;
            }
            Ok(row)
        })
        .collect()
}

/// `param,mean_pieces_per_word,words,pieces`.
pub fn write_splits_csv<W: Write>(rows: &[SplitsRow], mut out: W) -> Result<()> {
    writeln!(out, "param,mean_pieces_per_word,words,pieces")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.param, r.mean(), r.words, r.pieces)?;
    }
    Ok(())
}

/// Counts of each index value, per channel (factorizer) or a single
/// channel of token ids (BPE).
#[derive(Debug, Clone, PartialEq)]
pub struct IndexHistogram {
    pub channels: Vec<Vec<u64>>,
}

impl IndexHistogram {
    /// Empty per-channel histogram for codebooks of size `K`.
    pub fn triplets(codebook_size: usize) -> Self {
        Self {
            channels: vec![vec![0; codebook_size]; 3],
        }
    }

    /// Empty single-channel histogram of `num_tokens` token ids.
    pub fn tokens(num_tokens: usize) -> Self {
        Self {
            channels: vec![vec![0; num_tokens]],
        }
    }

    /// Counts every piece of `t`, `weight` times.
    pub fn add_tokenization(&mut self, t: &Tokenization, weight: u64) {
        for p in &t.pieces {
            for (c, &i) in p.triplet.0.iter().enumerate() {
                self.channels[c][i as usize] += weight;
            }
        }
    }

    pub fn add_tokens(&mut self, ids: &[u32], weight: u64) {
        for &t in ids {
            self.channels[0][t as usize] += weight;
        }
    }

    /// Per-channel index counts over all pieces of `tokenizations`.
    pub fn from_tokenizations<'a>(
        codebook_size: usize,
        tokenizations: impl IntoIterator<Item = &'a Tokenization>,
    ) -> Self {
        let mut h = Self::triplets(codebook_size);
        for t in tokenizations {
            h.add_tokenization(t, 1);
        }
        h
    }

    /// Token-id counts; `num_tokens` sets the histogram width.
    pub fn from_token_ids<'a>(num_tokens: usize, sequences: impl IntoIterator<Item = &'a [u32]>) -> Self {
        let mut h = Self::tokens(num_tokens);
        for seq in sequences {
            h.add_tokens(seq, 1);
        }
        h
    }

    pub fn total(&self, channel: usize) -> u64 {
        self.channels[channel].iter().sum()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self, channel: usize) -> f64 {
        let w: Vec<f64> = self.channels[channel].iter().map(|&c| c as f64).collect();
        entropy(&w)
    }

    /// Entropy divided by `ln(width)`, in [0, 1].
    pub fn normalized_entropy(&self, channel: usize) -> f64 {
        let width = self.channels[channel].len();
        if width < 2 {
            return 0.0;
        }
        self.entropy(channel) / (width as f64).ln()
    }

    /// `channel,index,count`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "channel,index,count")?;
        for (c, counts) in self.channels.iter().enumerate() {
            for (i, n) in counts.iter().enumerate() {
                writeln!(out, "{c},{i},{n}")?;
            }
        }
        Ok(())
    }

    pub fn write_entropy_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "channel,entropy,normalized_entropy")?;
        for c in 0..self.channels.len() {
            writeln!(out, "{c},{},{}", self.entropy(c), self.normalized_entropy(c))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Delete,
    ChangeCase,
    Repeat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub p_noise: f64,
    pub seed: u64,
    /// Always apply this perturbation instead of drawing one.
    pub forced: Option<NoiseKind>,
}

impl NoiseConfig {
    pub fn new(p_noise: f64, seed: u64) -> Result<Self> {
        let c = Self {
            p_noise,
            seed,
            forced: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_noise) {
            return Err(Error::InvalidArgument(format!(
                "noise probability {} outside [0, 1]",
                self.p_noise
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NoiseStats {
    pub chars: u64,
    pub deleted: u64,
    pub case_changed: u64,
    pub repeated: u64,
}

impl NoiseStats {
    pub fn perturbed(&self) -> u64 {
        self.deleted + self.case_changed + self.repeated
    }

    pub fn rate(&self) -> f64 {
        self.perturbed() as f64 / self.chars as f64
    }
}

/// Perturbs each character (Unicode scalar value) with probability
/// `p_noise`: delete it, flip its case, or repeat it 1–3 extra times, each
/// with equal chance. A case flip of a caseless character leaves it as is
/// but still counts as a perturbation. `config.seed` is not used here; the
/// caller seeds `rng`.
pub fn perturb<R: Rng + ?Sized>(text: &str, config: &NoiseConfig, rng: &mut R) -> Result<(String, NoiseStats)> {
    config.validate()?;
    let mut out = String::with_capacity(text.len());
    let mut stats = NoiseStats::default();
    for c in text.chars() {
        stats.chars += 1;
        if !rng.random_bool(config.p_noise) {
            out.push(c);
            continue;
        }
        let kind = config.forced.unwrap_or_else(|| match rng.random_range(0..3) {
            0 => NoiseKind::Delete,
            1 => NoiseKind::ChangeCase,
            _ => NoiseKind::Repeat,
        });
        match kind {
            NoiseKind::Delete => stats.deleted += 1,
            NoiseKind::ChangeCase => {
                stats.case_changed += 1;
                if c.is_lowercase() {
                    out.extend(c.to_uppercase());
                } else if c.is_uppercase() {
                    out.extend(c.to_lowercase());
                } else {
                    out.push(c);
                }
            }
            NoiseKind::Repeat => {
                stats.repeated += 1;
                let extra = rng.random_range(1..=3);
                for _ in 0..=extra {
                    out.push(c);
                }
            }
        }
    }
    Ok((out, stats))
}

/// `#RRGGBB` for a triplet. Channels are used as-is when `K ≤ 256` and
/// scaled to `round(c · 255 / (K − 1))` otherwise.
pub fn hex_color(triplet: Triplet, codebook_size: usize) -> String {
    let [r, g, b] = triplet.0.map(|c| channel_byte(c, codebook_size));
    format!("#{r:02X}{g:02X}{b:02X}")
}

fn channel_byte(c: u16, k: usize) -> u8 {
    if k <= 256 {
        c as u8
    } else {
        ((c as f64) * 255.0 / (k - 1) as f64).round() as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorPiece {
    pub subword: BoundedWord,
    pub triplet: Triplet,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorReport {
    /// One list of pieces per word.
    pub words: Vec<Vec<ColorPiece>>,
    /// Channels were rescaled because `K > 256`.
    pub scaled: bool,
}

pub fn colorize<'a>(
    codebook_size: usize,
    tokenizations: impl IntoIterator<Item = &'a Tokenization>,
) -> ColorReport {
    let scaled = codebook_size > 256;
    if scaled {
        log::warn!("codebook size {codebook_size} exceeds 256; colors are rescaled to 8 bits");
    }
    let words = tokenizations
        .into_iter()
        .map(|t| {
            t.pieces
                .iter()
                .map(|p| ColorPiece {
                    subword: p.subword.clone(),
                    triplet: p.triplet,
                    color: hex_color(p.triplet, codebook_size),
                })
                .collect()
        })
        .collect();
    ColorReport { words, scaled }
}

impl ColorReport {
    /// Self-contained HTML page with one `<span>` per piece.
    pub fn to_html(&self) -> String {
        let mut s = String::from(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>triplet colors</title></head>\n<body style=\"font-family:monospace\">\n<p>\n",
        );
        for (i, word) in self.words.iter().enumerate() {
            if i > 0 {
                s.push_str(" \n");
            }
            for p in word {
                let text = String::from_utf8_lossy(&p.subword.bytes()).into_owned();
                let _ = write!(
                    s,
                    "<span style=\"background-color:{};color:{}\" title=\"{}\">{}</span>",
                    p.color,
                    text_color(&p.color),
                    p.triplet,
                    html_escape(&text)
                );
            }
        }
        s.push_str("\n</p>\n</body></html>\n");
        s
    }

    /// `subword<TAB>r,g,b<TAB>#RRGGBB`, one piece per line, words separated
    /// by blank lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, word) in self.words.iter().enumerate() {
            if i > 0 {
                s.push('\n');
            }
            for p in word {
                let _ = writeln!(s, "{}\t{}\t{}", p.subword, p.triplet, p.color);
            }
        }
        s
    }
}

fn text_color(bg: &str) -> &'static str {
    let v = u32::from_str_radix(&bg[1..], 16).unwrap_or(0);
    let (r, g, b) = ((v >> 16) & 0xff, (v >> 8) & 0xff, v & 0xff);
    if 299 * r + 587 * g + 114 * b > 128_000 {
        "#000000"
    } else {
        "#FFFFFF"
    }
}

fn html_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}
