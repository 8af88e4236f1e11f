//! Word-frequency lists and the training-data distributions built on them.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::symbols::{split_words, BoundedWord};

/// Word → corpus count, sorted by descending count then ascending bytes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WordFrequencyList {
    entries: Vec<(Vec<u8>, u64)>,
    total_words: u64,
}

impl WordFrequencyList {
    pub fn from_counts(counts: HashMap<Vec<u8>, u64>) -> Result<Self> {
        let mut entries: Vec<(Vec<u8>, u64)> = counts.into_iter().collect();
        for (word, count) in &entries {
            if *count == 0 {
                return Err(Error::InvalidArgument(format!(
                    "word {:?} has a zero count",
                    String::from_utf8_lossy(word)
                )));
            }
            if word.is_empty() || split_words(word).len() != 1 || split_words(word)[0] != &word[..]
            {
                return Err(Error::InvalidArgument(format!(
                    "{:?} is not a single whitespace-free word",
                    String::from_utf8_lossy(word)
                )));
            }
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let total_words = entries.iter().map(|e| e.1).sum();
        Ok(Self {
            entries,
            total_words,
        })
    }

    /// Counts words in an in-memory text.
    pub fn from_text(text: &[u8]) -> Self {
        let mut counts = HashMap::new();
        count_into(&mut counts, text);
        Self::from_counts(counts).expect("pretokenized words are valid")
    }

    /// Streams a text line by line and counts its words.
    pub fn extract<R: BufRead>(mut reader: R) -> Result<Self> {
        let mut counts = HashMap::new();
        let mut line = Vec::new();
        loop {
            line.clear();
            if reader.read_until(b'\n', &mut line)? == 0 {
                break;
            }
            count_into(&mut counts, &line);
        }
        Self::from_counts(counts)
    }

    /// Order-independent merge of two shards.
    pub fn merge(&self, other: &Self) -> Self {
        let mut counts: HashMap<Vec<u8>, u64> = self.entries.iter().cloned().collect();
        for (w, c) in &other.entries {
            *counts.entry(w.clone()).or_default() += c;
        }
        Self::from_counts(counts).expect("merged shards stay valid")
    }

    pub fn entries(&self) -> &[(Vec<u8>, u64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_words(&self) -> u64 {
        self.total_words
    }

    pub fn max_count(&self) -> Option<u64> {
        self.entries.first().map(|e| e.1)
    }

    pub fn count(&self, word: &[u8]) -> Option<u64> {
        self.entries.iter().find(|e| e.0 == word).map(|e| e.1)
    }

    /// Keeps only words satisfying `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&[u8]) -> bool) {
        self.entries.retain(|(w, _)| keep(w));
        self.total_words = self.entries.iter().map(|e| e.1).sum();
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for (word, count) in &self.entries {
            writeln!(out, "{}\t{}", escape_tsv_word(word), count)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut counts = HashMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (word, count) = line.rsplit_once('\t').ok_or_else(|| {
                Error::format("frequency list", format!("line {}: missing tab", lineno + 1))
            })?;
            let count: u64 = count.trim().parse().map_err(|_| {
                Error::format(
                    "frequency list",
                    format!("line {}: bad count {count:?}", lineno + 1),
                )
            })?;
            let word = unescape_tsv_word(word).ok_or_else(|| {
                Error::format("frequency list", format!("line {}: bad escape", lineno + 1))
            })?;
            *counts.entry(word).or_insert(0) += count;
        }
        Self::from_counts(counts)
    }
}

fn count_into(counts: &mut HashMap<Vec<u8>, u64>, text: &[u8]) {
    for word in split_words(text) {
        match counts.get_mut(word) {
            Some(c) => *c += 1,
            None => {
                counts.insert(word.to_vec(), 1);
            }
        }
    }
}

/// Escapes `\`, tab, newline, carriage return and undecodable bytes.
pub fn escape_tsv_word(word: &[u8]) -> String {
    let mut out = String::with_capacity(word.len());
    for chunk in word.utf8_chunks() {
        for c in chunk.valid().chars() {
            match c {
                '\\' => out.push_str("\\\\"),
                '\t' => out.push_str("\\t"),
                '\n' => out.push_str("\\n"),
                '\r' => out.push_str("\\r"),
                c => out.push(c),
            }
        }
        for b in chunk.invalid() {
            out.push_str(&format!("\\x{b:02X}"));
        }
    }
    out
}

pub fn unescape_tsv_word(s: &str) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(s.len());
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'\\' {
            out.push(bytes[i]);
            i += 1;
            continue;
        }
        match bytes.get(i + 1)? {
            b'\\' => out.push(b'\\'),
            b't' => out.push(b'\t'),
            b'n' => out.push(b'\n'),
            b'r' => out.push(b'\r'),
            b'x' => {
                let hex = s.get(i + 2..i + 4)?;
                out.push(u8::from_str_radix(hex, 16).ok()?);
                i += 2;
            }
            _ => return None,
        }
        i += 2;
    }
    Some(out)
}

fn check_count(f: u64) -> Result<f64> {
    if f == 0 {
        return Err(Error::InvalidArgument("word frequency must be at least 1".into()));
    }
    Ok(f as f64)
}

/// Unnormalized sampling mass `f / ln(f + 1)`.
pub fn sample_weight(f: u64) -> Result<f64> {
    let f = check_count(f)?;
    Ok(f / f.ln_1p())
}

/// Per-example loss weight `ln(f + 1)`, compensating for [`sample_weight`].
pub fn loss_weight(f: u64) -> Result<f64> {
    Ok(check_count(f)?.ln_1p())
}

/// Probability of keeping a sampled word unsplit: `ln(f + 1) / ln(f_max + 1)`.
pub fn not_split_probability(f: u64, f_max: u64) -> Result<f64> {
    let fw = check_count(f)?;
    if f > f_max {
        return Err(Error::InvalidArgument(format!(
            "word frequency {f} exceeds the maximum frequency {f_max}"
        )));
    }
    Ok(fw.ln_1p() / (f_max as f64).ln_1p())
}

/// Real-valued variants used by the closed-form checks (`f = e − 1` etc).
pub mod real {
    pub fn sample_weight(f: f64) -> f64 {
        f / f.ln_1p()
    }

    pub fn loss_weight(f: f64) -> f64 {
        f.ln_1p()
    }

    pub fn not_split_probability(f: f64, f_max: f64) -> f64 {
        f.ln_1p() / f_max.ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExampleKind {
    Whole(BoundedWord),
    Split(BoundedWord, BoundedWord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    /// Index of the source word in the frequency list.
    pub word_index: usize,
    pub kind: ExampleKind,
    pub loss_weight: f64,
}

/// Draws training examples: words ∝ `f / ln(f + 1)`, split with probability
/// `1 − not_split_probability` at a uniform interior byte boundary.
#[derive(Debug, Clone)]
pub struct TrainingSampler {
    words: Vec<BoundedWord>,
    keep_prob: Vec<f64>,
    loss_weights: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl TrainingSampler {
    pub fn new(list: &WordFrequencyList) -> Result<Self> {
        let f_max = list
            .max_count()
            .ok_or_else(|| Error::InvalidArgument("frequency list is empty".into()))?;
        let mut words = Vec::with_capacity(list.len());
        let mut keep_prob = Vec::with_capacity(list.len());
        let mut loss_weights = Vec::with_capacity(list.len());
        let mut sample = Vec::with_capacity(list.len());
        for (w, f) in list.entries() {
            words.push(BoundedWord::word(w)?);
            keep_prob.push(not_split_probability(*f, f_max)?);
            loss_weights.push(loss_weight(*f)?);
            sample.push(sample_weight(*f)?);
        }
        let index = WeightedIndex::new(&sample)
            .map_err(|e| Error::InvalidArgument(format!("sampling weights: {e}")))?;
        Ok(Self {
            words,
            keep_prob,
            loss_weights,
            index,
        })
    }

    pub fn draw_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> TrainingExample {
        let word_index = self.draw_index(rng);
        let word = &self.words[word_index];
        let n = word.byte_len();
        let keep = n < 2 || rng.random::<f64>() < self.keep_prob[word_index];
        let kind = if keep {
            ExampleKind::Whole(word.clone())
        } else {
            let at = rng.random_range(1..n);
            let (l, r) = word.split_at_byte(at).expect("interior split point");
            ExampleKind::Split(l, r)
        };
        TrainingExample {
            word_index,
            kind,
            loss_weight: self.loss_weights[word_index],
        }
    }
}
