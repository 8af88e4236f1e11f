//! Deterministic synthetic corpora for tests, benchmarks and smoke runs.

use std::collections::{BTreeSet, HashMap};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::WordFrequencyList;

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "st", "tr", "pl", "ch",
    "sh", "",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou", "é", "ü"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "l", "t", "ng"];

/// `n` distinct pseudo-words built from 1–3 syllables, with Zipf-distributed
/// counts `⌈1000 / rank⌉`. Mostly ASCII, with a few two-byte UTF-8 vowels.
pub fn frequency_list(n: usize, seed: u64) -> WordFrequencyList {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(n);
    while words.len() < n {
        let syllables = rng.random_range(1..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(&mut rng).unwrap());
            w.push_str(NUCLEI.choose(&mut rng).unwrap());
            w.push_str(CODAS.choose(&mut rng).unwrap());
        }
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    let counts: HashMap<Vec<u8>, u64> = words
        .into_iter()
        .enumerate()
        .map(|(rank, w)| (w.into_bytes(), 1000u64.div_ceil(rank as u64 + 1)))
        .collect();
    WordFrequencyList::from_counts(counts).expect("generated words are valid")
}

/// Running text sampled from [`frequency_list`] proportionally to counts.
pub fn text(list: &WordFrequencyList, words: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = list.entries();
    let dist = rand::distr::weighted::WeightedIndex::new(entries.iter().map(|e| e.1))
        .expect("positive counts");
    let mut out = String::new();
    for i in 0..words {
        if i > 0 {
            out.push(if rng.random_range(0..12) == 0 { '\n' } else { ' ' });
        }
        let w = &entries[rng.sample(&dist)].0;
        out.push_str(std::str::from_utf8(w).expect("synthetic words are UTF-8"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct() {
        let a = frequency_list(200, 1);
        assert_eq!(a, frequency_list(200, 1));
        assert_eq!(a.len(), 200);
        assert_eq!(a.max_count(), Some(1000));
        assert!(a.entries().iter().all(|(w, _)| w.len() + 2 <= 64));
    }
}
