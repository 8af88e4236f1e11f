use std::cmp::Ordering;

use crate::symbols::{BoundedWord, Symbol, BOW, DECODER_CLASSES, END, EOW};
use crate::triplet::Triplet;

/// An autoregressive model of `p(w | z)` over boundary-marked subwords.
///
/// Vocabulary construction and the beam decoder only need this interface,
/// so toy decoders can stand in for a trained network in tests.
pub trait SubwordDecoder {
    /// Per-triplet precomputation reused across decoding steps.
    type Context;

    fn codebook_size(&self) -> usize;

    fn max_len(&self) -> usize;

    fn context(&self, triplet: Triplet) -> Self::Context;

    /// Writes the log-probabilities of the symbol following `prefix` over
    /// all [`DECODER_CLASSES`] into `out`.
    fn next_log_probs(&self, ctx: &Self::Context, prefix: &[usize], out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub word: BoundedWord,
    pub logprob: f64,
    /// The subword was cut at the maximum length instead of ending naturally.
    pub forced: bool,
}

/// `log p(w | z)`: teacher-forced sum of next-symbol log-probabilities,
/// including the END step for subwords that do not end with EOW.
pub fn decode_logprob<D: SubwordDecoder + ?Sized>(
    dec: &D,
    ctx: &D::Context,
    word: &BoundedWord,
) -> f64 {
    let targets = super::network::targets(word);
    let mut buf = vec![0.0; DECODER_CLASSES];
    let mut total = 0.0;
    for t in 0..targets.len() {
        dec.next_log_probs(ctx, &targets[..t], &mut buf);
        total += buf[targets[t]];
    }
    total
}

/// Whether `sym` may follow `prefix` in a well-formed subword.
pub(crate) fn allowed(prefix: &[usize], max_len: usize, sym: usize) -> bool {
    let len = prefix.len();
    let has_byte = prefix.iter().any(|&s| s < 256);
    match sym as Symbol {
        0..=255 => len < max_len,
        BOW => len == 0,
        EOW => has_byte && len < max_len,
        END => has_byte,
        _ => false,
    }
}

#[derive(Clone)]
struct Hyp {
    syms: Vec<usize>,
    score: f64,
    finished: bool,
    forced: bool,
}

fn rank(a: &Hyp, b: &Hyp) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.syms.cmp(&b.syms))
        .then_with(|| b.finished.cmp(&a.finished))
}

/// Beam search over well-formed subwords. Finished hypotheses compete for
/// beam slots with open ones; the search ends when every slot is finished.
/// Width 1 is plain per-step argmax decoding.
pub fn beam_decode<D: SubwordDecoder + ?Sized>(dec: &D, ctx: &D::Context, width: usize) -> Decoded {
    let width = width.max(1);
    let max_len = dec.max_len();
    let mut buf = vec![0.0; DECODER_CLASSES];
    let mut beam = vec![Hyp {
        syms: Vec::new(),
        score: 0.0,
        finished: false,
        forced: false,
    }];
    loop {
        let mut candidates = Vec::with_capacity(beam.len() * 8);
        for h in &beam {
            if h.finished {
                candidates.push(h.clone());
                continue;
            }
            dec.next_log_probs(ctx, &h.syms, &mut buf);
            for (sym, &lp) in buf.iter().enumerate() {
                if !allowed(&h.syms, max_len, sym) {
                    continue;
                }
                let mut syms = h.syms.clone();
                let score = h.score + lp;
                let (finished, forced) = match sym as Symbol {
                    EOW => {
                        syms.push(sym);
                        (true, false)
                    }
                    END => (true, h.syms.len() == max_len),
                    _ => {
                        syms.push(sym);
                        (false, false)
                    }
                };
                candidates.push(Hyp {
                    syms,
                    score,
                    finished,
                    forced,
                });
            }
        }
        candidates.sort_by(rank);
        candidates.truncate(width);
        beam = candidates;
        if beam.iter().all(|h| h.finished) {
            break;
        }
    }
    let best = beam.swap_remove(0);
    Decoded {
        word: BoundedWord::from_symbols(best.syms.iter().map(|&s| s as Symbol).collect())
            .expect("decoder only emits well-formed subwords"),
        logprob: best.score,
        forced: best.forced,
    }
}

/// Approximate `argmax_w p(w | z)`: beam search of the given width, never
/// worse than the width-1 greedy path.
pub fn greedy_decode<D: SubwordDecoder + ?Sized>(dec: &D, ctx: &D::Context, width: usize) -> Decoded {
    let beam = beam_decode(dec, ctx, width);
    if width <= 1 {
        return beam;
    }
    let greedy = beam_decode(dec, ctx, 1);
    if greedy.logprob > beam.logprob {
        greedy
    } else {
        beam
    }
}


#[cfg(test)]
mod tests {
    use super::toy::LookupDecoder;
    use super::*;
    use std::collections::HashMap;

    fn syms(w: &BoundedWord) -> Vec<usize> {
        w.symbols().iter().map(|&s| s as usize).collect()
    }

    #[test]
    fn deterministic_decoder_spells_its_word() {
        let w = BoundedWord::word(b"ab").unwrap();
        let t = Triplet::new(0, 1, 2);
        let dec = LookupDecoder {
            k: 4,
            max_len: 16,
            table: HashMap::from([(t, syms(&w))]),
            leak: 1e-9,
        };
        let ctx = dec.context(t);
        for width in [1, 8] {
            let d = greedy_decode(&dec, &ctx, width);
            assert_eq!(d.word, w);
            assert!(!d.forced);
            assert!((d.logprob - decode_logprob(&dec, &ctx, &w)).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_subword_ends_with_end_symbol() {
        let w = BoundedWord::new(b"xyz", false, false).unwrap();
        let t = Triplet::new(1, 1, 1);
        let dec = LookupDecoder {
            k: 2,
            max_len: 8,
            table: HashMap::from([(t, syms(&w))]),
            leak: 1e-6,
        };
        let ctx = dec.context(t);
        assert_eq!(beam_decode(&dec, &ctx, 3).word, w);
        // four steps: x, y, z, END
        let expected = 4.0 * (1.0 - 1e-6f64).ln();
        assert!((decode_logprob(&dec, &ctx, &w) - expected).abs() < 1e-12);
    }

    #[test]
    fn overlong_output_is_forced_to_stop() {
        let long = vec![b'a' as usize; 10];
        let t = Triplet::new(0, 0, 0);
        let dec = LookupDecoder {
            k: 2,
            max_len: 4,
            table: HashMap::from([(t, long)]),
            leak: 1e-6,
        };
        let d = beam_decode(&dec, &dec.context(t), 1);
        assert_eq!(d.word.len(), 4);
        assert!(d.forced);
    }

    #[test]
    fn allowed_symbols() {
        assert!(allowed(&[], 8, BOW as usize));
        assert!(!allowed(&[], 8, EOW as usize));
        assert!(!allowed(&[], 8, END as usize));
        assert!(!allowed(&[BOW as usize], 8, END as usize));
        assert!(allowed(&[BOW as usize, 97], 8, END as usize));
        assert!(!allowed(&[97], 8, BOW as usize));
        assert!(!allowed(&[97, 97], 2, 97));
        assert!(!allowed(&[97, 97], 2, EOW as usize));
        assert!(allowed(&[97, 97], 2, END as usize));
    }
}
