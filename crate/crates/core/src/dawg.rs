//! Minimized acyclic automaton over boundary-marked subwords.
//!
//! Built with incremental minimization over sorted input. Every state knows
//! how many words its right language holds, so a word maps to its rank in
//! the sorted set (a minimal perfect hash). Payloads are stored per rank,
//! which keeps states free of payloads and lets equivalent suffixes merge.
//!
//! States are numbered in post-order: every transition points to a lower
//! index and the root is the last state.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::symbols::{Symbol, DECODER_CLASSES};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordDawg {
    /// Transitions of state `s` are `labels/targets[offsets[s]..offsets[s+1]]`,
    /// sorted by label.
    offsets: Vec<u32>,
    labels: Vec<Symbol>,
    targets: Vec<u32>,
    finals: Vec<bool>,
    /// Number of accepted words reachable from each state, itself included.
    counts: Vec<u32>,
    /// Payload of the word with rank `i`.
    values: Vec<u32>,
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Hash)]
struct BuildState {
    is_final: bool,
    trans: Vec<(Symbol, u32)>,
}

impl SubwordDawg {
    /// Builds the automaton from `(word, payload)` pairs in any order.
    /// Duplicate words are rejected; the empty word is allowed.
    pub fn build<I, W>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (W, u32)>,
        W: AsRef<[Symbol]>,
    {
        let mut items: Vec<(Vec<Symbol>, u32)> = items
            .into_iter()
            .map(|(w, v)| (w.as_ref().to_vec(), v))
            .collect();
        items.sort_by(|a, b| a.0.cmp(&b.0));
        for pair in items.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::InvalidArgument(format!(
                    "duplicate word in automaton input: {:?}",
                    pair[0].0
                )));
            }
        }
        if items.len() > u32::MAX as usize {
            return Err(Error::InvalidArgument("too many words".into()));
        }

        let mut states = vec![BuildState::default()];
        let mut register: HashMap<BuildState, u32> = HashMap::new();
        // Path of not-yet-minimized states: (parent, label, child).
        let mut unchecked: Vec<(u32, Symbol, u32)> = Vec::new();
        let mut prev: &[Symbol] = &[];

        for (word, _) in &items {
            let common = word.iter().zip(prev).take_while(|(a, b)| a == b).count();
            minimize(&mut states, &mut register, &mut unchecked, common);
            let mut node = unchecked.last().map_or(0, |u| u.2);
            for &sym in &word[common..] {
                let child = states.len() as u32;
                states.push(BuildState::default());
                states[node as usize].trans.push((sym, child));
                unchecked.push((node, sym, child));
                node = child;
            }
            states[node as usize].is_final = true;
            prev = word;
        }
        minimize(&mut states, &mut register, &mut unchecked, 0);

        let mut dawg = compact(&states, 0);
        dawg.values = items.iter().map(|(_, v)| *v).collect();
        Ok(dawg)
    }

    pub fn root(&self) -> u32 {
        (self.finals.len() - 1) as u32
    }

    /// Number of words in the language.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.finals.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.labels.len()
    }

    fn transitions(&self, state: u32) -> std::ops::Range<usize> {
        self.offsets[state as usize] as usize..self.offsets[state as usize + 1] as usize
    }

    /// Follows `sym` from `state`, adding the ranks skipped on the way.
    fn step(&self, state: u32, sym: Symbol, rank: &mut u32) -> Option<u32> {
        let range = self.transitions(state);
        let labels = &self.labels[range.clone()];
        let i = labels.binary_search(&sym).ok()?;
        if self.finals[state as usize] {
            *rank += 1;
        }
        for &t in &self.targets[range.start..range.start + i] {
            *rank += self.counts[t as usize];
        }
        Some(self.targets[range.start + i])
    }

    /// Rank of `word` in the sorted language, if accepted.
    pub fn rank(&self, word: &[Symbol]) -> Option<usize> {
        let mut state = self.root();
        let mut rank = 0;
        for &sym in word {
            state = self.step(state, sym, &mut rank)?;
        }
        self.finals[state as usize].then_some(rank as usize)
    }

    pub fn get(&self, word: &[Symbol]) -> Option<u32> {
        self.rank(word).map(|r| self.values[r])
    }

    pub fn contains(&self, word: &[Symbol]) -> bool {
        self.rank(word).is_some()
    }

    /// Accepted prefixes of `input` as `(length, payload)`, shortest first.
    pub fn iter_prefixes<'a>(&'a self, input: &'a [Symbol]) -> Prefixes<'a> {
        Prefixes {
            dawg: self,
            input,
            state: Some(self.root()),
            pos: 0,
            rank: 0,
        }
    }

    /// All `(word, payload)` pairs in sorted order.
    pub fn words(&self) -> Vec<(Vec<Symbol>, u32)> {
        let mut out = Vec::with_capacity(self.len());
        let mut path = Vec::new();
        self.collect(self.root(), &mut path, &mut out);
        out
    }

    fn collect(&self, state: u32, path: &mut Vec<Symbol>, out: &mut Vec<(Vec<Symbol>, u32)>) {
        if self.finals[state as usize] {
            out.push((path.clone(), self.values[out.len()]));
        }
        for i in self.transitions(state) {
            path.push(self.labels[i]);
            self.collect(self.targets[i], path, out);
            path.pop();
        }
    }

    /// Serializes states as delta-encoded transition lists followed by the
    /// payload table.
    pub(crate) fn write_to<W: Write>(&self, w: &mut Writer<W>) -> Result<()> {
        w.varint(self.num_states() as u64)?;
        for s in 0..self.num_states() as u32 {
            let range = self.transitions(s);
            w.varint(((range.len() as u64) << 1) | self.finals[s as usize] as u64)?;
            let mut prev_label = 0u64;
            for i in range {
                w.varint(self.labels[i] as u64 - prev_label)?;
                prev_label = self.labels[i] as u64;
                // Targets are always below the source; store the distance.
                w.varint((s - self.targets[i]) as u64)?;
            }
        }
        w.varint(self.values.len() as u64)?;
        for &v in &self.values {
            w.varint(v as u64)?;
        }
        Ok(())
    }

    pub(crate) fn read_from<R: Read>(r: &mut Reader<R>) -> Result<Self> {
        let n = r.varint_len(u32::MAX as u64)?;
        if n == 0 {
            return Err(r.err("automaton without states"));
        }
        let mut offsets = Vec::with_capacity(n.min(1 << 20) + 1);
        let mut labels = Vec::new();
        let mut targets = Vec::new();
        let mut finals = Vec::with_capacity(n.min(1 << 20));
        offsets.push(0);
        for s in 0..n as u64 {
            let head = r.varint()?;
            finals.push(head & 1 == 1);
            let ntrans = head >> 1;
            if ntrans > DECODER_CLASSES as u64 {
                return Err(r.err(format!("state {s} has {ntrans} transitions")));
            }
            let mut label = 0u64;
            for i in 0..ntrans {
                let delta = r.varint()?;
                if i > 0 && delta == 0 {
                    return Err(r.err(format!("state {s} has unsorted transitions")));
                }
                label += delta;
                if label >= DECODER_CLASSES as u64 {
                    return Err(r.err(format!("state {s} has label {label} outside the alphabet")));
                }
                let back = r.varint()?;
                if back == 0 || back > s {
                    return Err(r.err(format!("state {s} has an invalid transition target")));
                }
                labels.push(label as Symbol);
                targets.push((s - back) as u32);
            }
            offsets.push(labels.len() as u32);
        }
        let mut dawg = SubwordDawg {
            offsets,
            labels,
            targets,
            finals,
            counts: Vec::new(),
            values: Vec::new(),
        };
        dawg.counts = dawg.right_counts()?;
        let nvalues = r.varint_len(u32::MAX as u64)?;
        if nvalues != dawg.counts[dawg.root() as usize] as usize {
            return Err(r.err("payload count does not match the automaton language"));
        }
        dawg.values = (0..nvalues)
            .map(|_| r.varint().map(|v| v as u32))
            .collect::<Result<_>>()?;
        Ok(dawg)
    }

    fn right_counts(&self) -> Result<Vec<u32>> {
        let mut counts = vec![0u32; self.num_states()];
        for s in 0..self.num_states() {
            let mut c = self.finals[s] as u64;
            for i in self.transitions(s as u32) {
                c += counts[self.targets[i] as usize] as u64;
            }
            counts[s] = u32::try_from(c).map_err(|_| Error::format("automaton", "language too large"))?;
        }
        Ok(counts)
    }
}

fn minimize(
    states: &mut [BuildState],
    register: &mut HashMap<BuildState, u32>,
    unchecked: &mut Vec<(u32, Symbol, u32)>,
    down_to: usize,
) {
    while unchecked.len() > down_to {
        let (parent, sym, child) = unchecked.pop().unwrap();
        let key = states[child as usize].clone();
        let target = *register.entry(key).or_insert(child);
        let last = states[parent as usize].trans.last_mut().unwrap();
        debug_assert_eq!(last.0, sym);
        last.1 = target;
    }
}

/// Renumbers the states reachable from `root` in post-order.
fn compact(states: &[BuildState], root: u32) -> SubwordDawg {
    let mut new_id: Vec<Option<u32>> = vec![None; states.len()];
    let mut order = Vec::new();
    // Iterative post-order DFS.
    let mut stack = vec![(root, 0usize)];
    while let Some((s, i)) = stack.pop() {
        let trans = &states[s as usize].trans;
        if i < trans.len() {
            stack.push((s, i + 1));
            let child = trans[i].1;
            if new_id[child as usize].is_none() {
                stack.push((child, 0));
            }
        } else if new_id[s as usize].is_none() {
            new_id[s as usize] = Some(order.len() as u32);
            order.push(s);
        }
    }
    let mut dawg = SubwordDawg {
        offsets: vec![0],
        labels: Vec::new(),
        targets: Vec::new(),
        finals: Vec::with_capacity(order.len()),
        counts: Vec::new(),
        values: Vec::new(),
    };
    for &s in &order {
        let st = &states[s as usize];
        dawg.finals.push(st.is_final);
        for &(sym, t) in &st.trans {
            dawg.labels.push(sym);
            dawg.targets.push(new_id[t as usize].expect("child numbered first"));
        }
        dawg.offsets.push(dawg.labels.len() as u32);
    }
    dawg.counts = dawg.right_counts().expect("built from a u32-sized input");
    dawg
}

pub struct Prefixes<'a> {
    dawg: &'a SubwordDawg,
    input: &'a [Symbol],
    state: Option<u32>,
    pos: usize,
    rank: u32,
}

impl Iterator for Prefixes<'_> {
    type Item = (usize, u32);

    fn next(&mut self) -> Option<(usize, u32)> {
        loop {
            let state = self.state?;
            let len = self.pos;
            let hit = self.dawg.finals[state as usize].then_some(self.rank);
            self.state = self
                .input
                .get(self.pos)
                .and_then(|&sym| self.dawg.step(state, sym, &mut self.rank));
            self.pos += 1;
            // The empty prefix is never reported.
            if let (Some(rank), true) = (hit, len > 0) {
                return Some((len, self.dawg.values[rank as usize]));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::{BTreeSet, HashSet};

    fn syms(s: &str) -> Vec<Symbol> {
        s.bytes().map(Symbol::from).collect()
    }

    fn trie_states(words: &BTreeSet<Vec<Symbol>>) -> usize {
        let mut prefixes: HashSet<&[Symbol]> = words
            .iter()
            .flat_map(|w| (0..=w.len()).map(move |i| &w[..i]))
            .collect();
        prefixes.insert(&[]);
        prefixes.len()
    }

    #[test]
    fn small_language() {
        let d = SubwordDawg::build([("a", 10), ("ab", 11), ("abc", 12)].map(|(w, v)| (syms(w), v)))
            .unwrap();
        assert_eq!(d.len(), 3);
        assert!(d.contains(&syms("ab")));
        assert!(!d.contains(&syms("b")));
        assert!(!d.contains(&[]));
        assert_eq!(d.get(&syms("abc")), Some(12));
        let p: Vec<_> = d.iter_prefixes(&syms("abd")).collect();
        assert_eq!(p, vec![(1, 10), (2, 11)]);
        assert_eq!(d.iter_prefixes(&[]).count(), 0);
    }

    #[test]
    fn shared_suffixes_merge() {
        let words = ["tap", "taps", "top", "tops"];
        let d = SubwordDawg::build(words.iter().enumerate().map(|(i, w)| (syms(w), i as u32))).unwrap();
        // t, {a,o} → shared p → shared s.
        assert_eq!(d.num_states(), 5);
        for (i, w) in words.iter().enumerate() {
            assert_eq!(d.get(&syms(w)), Some(i as u32));
        }
    }

    #[test]
    fn duplicates_rejected() {
        assert!(SubwordDawg::build([(syms("a"), 0), (syms("a"), 1)]).is_err());
    }

    #[test]
    fn empty_language() {
        let d = SubwordDawg::build(Vec::<(Vec<Symbol>, u32)>::new()).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.num_states(), 1);
        assert!(!d.contains(&syms("a")));
    }

    #[test]
    fn serialization_round_trip() {
        let d = SubwordDawg::build(
            ["a", "ab", "abc", "b", "bc", "zzz"]
                .iter()
                .enumerate()
                .map(|(i, w)| (syms(w), 100 + i as u32)),
        )
        .unwrap();
        let mut w = Writer::new(Vec::new());
        d.write_to(&mut w).unwrap();
        let buf = w.finish().unwrap();
        let mut r = Reader::new(&buf[..], "automaton");
        let back = SubwordDawg::read_from(&mut r).unwrap();
        assert_eq!(back, d);
    }

    fn vocab() -> impl Strategy<Value = BTreeSet<Vec<Symbol>>> {
        proptest::collection::btree_set(proptest::collection::vec(0u16..6, 1..7), 0..40)
    }

    proptest! {
        #[test]
        fn matches_set_oracle(words in vocab(), probes in proptest::collection::vec(proptest::collection::vec(0u16..6, 0..8), 30)) {
            let d = SubwordDawg::build(words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32))).unwrap();
            let sorted: Vec<_> = words.iter().cloned().collect();
            prop_assert!(d.num_states() <= trie_states(&words));
            prop_assert_eq!(d.words(), sorted.iter().cloned().enumerate().map(|(i, w)| (w, i as u32)).collect::<Vec<_>>());
            for p in &probes {
                prop_assert_eq!(d.contains(p), words.contains(p));
                let naive: Vec<(usize, u32)> = (1..=p.len())
                    .filter_map(|n| sorted.iter().position(|w| w[..] == p[..n]).map(|i| (n, i as u32)))
                    .collect();
                prop_assert_eq!(d.iter_prefixes(p).collect::<Vec<_>>(), naive);
            }
        }
    }
}
