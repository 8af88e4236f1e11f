//! Acceptance criteria A1–A12. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails. Pass criterion names (`A5`) as
//! arguments to run a subset.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use factorizer::analysis::{perturb, IndexHistogram, NoiseConfig};
use factorizer::autoencoder::{step_forward_backward, surrogate_loss, Sample};
use factorizer::bpe::{MergeTable, TokenId};
use factorizer::corpus::{loss_weight, real, sample_weight, TrainingSampler};
use factorizer::symbols::{split_words, Symbol, BOW, EOW};
use factorizer::tokenizer::score;
use factorizer::vocab::{build_from_checkpoint, BuildOptions};
use factorizer::vq::{Codebook, StraightThrough};
use factorizer::{
    synthetic, BoundedWord, Model, ModelConfig, ScoreParams, SubwordDawg, Tokenizer, Trainer, Triplet, Vocabulary,
    VocabularyEntry, WordFrequencyList,
};
use ndarray::{array, Array1, Array2};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fixture_vocab() -> Vocabulary {
    let tsv = std::fs::read(fixtures().join("vocab.tsv")).unwrap();
    let learned = Vocabulary::read_tsv(16, &tsv[..]).unwrap().entries().to_vec();
    Vocabulary::with_byte_fallbacks(16, learned).unwrap()
}

fn word(bytes: &[u8]) -> BoundedWord {
    BoundedWord::word(bytes).unwrap()
}

/// Symbols of the piece `bytes[i..j]` of an `n`-byte word.
fn piece_symbols(bytes: &[u8], i: usize, j: usize) -> Vec<Symbol> {
    let mut s = Vec::with_capacity(j - i + 2);
    if i == 0 {
        s.push(BOW);
    }
    s.extend(bytes[i..j].iter().map(|&b| Symbol::from(b)));
    if j == bytes.len() {
        s.push(EOW);
    }
    s
}

// ---------------------------------------------------------------- A1

/// Minimum total score over all 2^(n−1) segmentations, or None.
fn exhaustive_best(bytes: &[u8], lp: &HashMap<Vec<Symbol>, f64>, alpha: f64) -> Option<f64> {
    let n = bytes.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << (n - 1)) {
        let mut total = 0.0;
        let mut start = 0;
        let mut ok = true;
        for end in 1..=n {
            if end < n && mask & (1 << (end - 1)) == 0 {
                continue;
            }
            match lp.get(&piece_symbols(bytes, start, end)) {
                Some(&l) => total += -l + alpha,
                None => {
                    ok = false;
                    break;
                }
            }
            start = end;
        }
        if ok && best.is_none_or(|b| total < b) {
            best = Some(total);
        }
    }
    best
}

fn a1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let alphabet = b"abc";
    let mut max_err = 0.0f64;
    let mut mismatches = 0;
    for _ in 0..1000 {
        let mut subwords: HashSet<Vec<Symbol>> = HashSet::new();
        // Every byte in every marker variant, so each word is coverable.
        for &b in alphabet {
            for (bow, eow) in [(false, false), (true, false), (false, true), (true, true)] {
                subwords.insert(BoundedWord::new(&[b], bow, eow).unwrap().symbols().to_vec());
            }
        }
        let extra = rng.random_range(5..40);
        while subwords.len() < 12 + extra {
            let len = rng.random_range(2..6);
            let bytes: Vec<u8> = (0..len).map(|_| *alphabet.choose(&mut rng).unwrap()).collect();
            let w = BoundedWord::new(&bytes, rng.random_bool(0.3), rng.random_bool(0.3)).unwrap();
            subwords.insert(w.symbols().to_vec());
        }
        let mut subwords: Vec<_> = subwords.into_iter().collect();
        subwords.sort();
        let lp: HashMap<Vec<Symbol>, f64> = subwords
            .iter()
            .map(|s| (s.clone(), -rng.random_range(0.0..8.0)))
            .collect();
        let entries = subwords
            .iter()
            .enumerate()
            .map(|(i, s)| VocabularyEntry {
                subword: BoundedWord::from_symbols(s.clone()).unwrap(),
                triplet: Triplet::from_flat_index(i, 8),
                logprob: lp[s],
                fallback: false,
            })
            .collect();
        let alpha = [0.0, 0.1, 0.5, rng.random_range(0.0..2.0)][rng.random_range(0..4)];
        let tok = Tokenizer::new(Vocabulary::new(8, entries).unwrap(), ScoreParams::deterministic(alpha)).unwrap();
        let n = rng.random_range(1..=12);
        let bytes: Vec<u8> = (0..n).map(|_| *alphabet.choose(&mut rng).unwrap()).collect();
        let got = tok.tokenize_word(&word(&bytes)).unwrap().total_score;
        let want = exhaustive_best(&bytes, &lp, alpha).expect("single bytes cover every word");
        let err = (got - want).abs();
        max_err = max_err.max(err);
        if err > 1e-9 {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 60.0,
        format!("1000 instances, {mismatches} mismatches, max |Δ| {max_err:.1e} (tol 1e-9), {secs:.1} s (limit 60 s)"),
    )
}

// ---------------------------------------------------------------- A2

fn random_symbols(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<Symbol> {
    let len = rng.random_range(1..=max_len);
    (0..len)
        .map(|_| match rng.random_range(0..10) {
            0 => BOW,
            1 => EOW,
            _ => Symbol::from(b"abcd"[rng.random_range(0..4)]),
        })
        .collect()
}

fn a2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut prefix_cases = 0;
    let mut prefix_bad = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..300);
        let set: HashMap<Vec<Symbol>, u32> = (0..n).map(|i| (random_symbols(&mut rng, 7), i)).collect();
        let mut items: Vec<_> = set.iter().map(|(w, &v)| (w.clone(), v)).collect();
        items.sort();
        let dawg = SubwordDawg::build(items).unwrap();
        for _ in 0..100 {
            let input = random_symbols(&mut rng, 10);
            let got: Vec<(usize, u32)> = dawg.iter_prefixes(&input).collect();
            let want: Vec<(usize, u32)> = (1..=input.len())
                .filter_map(|l| set.get(&input[..l]).map(|&v| (l, v)))
                .collect();
            prefix_cases += 1;
            if got != want {
                prefix_bad += 1;
            }
        }
    }
    let set: HashSet<Vec<Symbol>> = (0..5000).map(|_| random_symbols(&mut rng, 8)).collect();
    let mut items: Vec<_> = set.iter().cloned().zip(0u32..).collect();
    items.sort();
    let dawg = SubwordDawg::build(items).unwrap();
    let mut member_bad = 0;
    for _ in 0..100_000 {
        let probe = random_symbols(&mut rng, 8);
        if dawg.contains(&probe) != set.contains(&probe) {
            member_bad += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        prefix_bad == 0 && member_bad == 0 && secs < 30.0,
        format!(
            "{prefix_cases} prefix cases ({prefix_bad} wrong), 100000 membership probes ({member_bad} wrong), {secs:.1} s (limit 30 s)"
        ),
    )
}

// ---------------------------------------------------------------- A3

fn a3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut nn_bad = 0;
    for _ in 0..100 {
        let k = rng.random_range(2..32);
        let d = rng.random_range(1..12);
        let vectors = Array2::from_shape_fn((k, d), |_| rng.sample::<f64, _>(StandardNormal));
        let cb = Codebook::new(vectors.clone(), 0.96, 0.1).unwrap();
        for _ in 0..1000 {
            let x = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
            let mut best = (f64::INFINITY, 0);
            for i in 0..k {
                let dist: f64 = vectors.row(i).iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, i);
                }
            }
            if cb.nearest(x.view()).unwrap() != best.1 {
                nn_bad += 1;
            }
        }
    }
    let fixed = Codebook::new(array![[0.0, 0.0], [3.0, 4.0]], 0.96, 0.1).unwrap();
    let q = fixed.quantize(array![3.0, 3.0].view()).unwrap();
    let example_ok = q.index == 1 && q.distance == 1.0;

    // λ = 0.96, c = 1, two latents (2 and 4) assigned to code 0.
    let mut cb = Codebook::with_usage(array![[1.0], [5.0]], vec![1.0, 1.0], 0.96, 0.1).unwrap();
    cb.ema_update(array![[2.0], [4.0]].view(), &[0, 0]).unwrap();
    let c_new = 0.96 * 1.0 + 0.04 * 2.0;
    let z_new = (0.96 * 1.0 * 1.0 + 0.04 * (2.0 + 4.0)) / c_new;
    let ema_err = [
        (cb.usage()[0] - 1.04).abs(),
        (cb.vectors()[[0, 0]] - z_new).abs(),
        (cb.usage()[1] - 0.96).abs(),
        (cb.vectors()[[1, 0]] - 5.0).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let mut reset_bad = 0;
    for _ in 0..1000 {
        let k = 8;
        let usage: Vec<f64> = (0..k)
            .map(|_| match rng.random_range(0..4) {
                0 => 0.1,
                1 => 0.1 - 1e-12,
                2 => rng.random_range(0.0..0.1),
                _ => rng.random_range(0.1..2.0),
            })
            .collect();
        let vectors = Array2::from_shape_fn((k, 2), |_| rng.random::<f64>());
        let mut cb = Codebook::with_usage(vectors.clone(), usage.clone(), 0.96, 0.1).unwrap();
        let batch = Array2::from_shape_fn((4, 2), |_| 10.0 + rng.random::<f64>());
        let report = cb.reset_dead_codes(batch.view(), &mut rng).unwrap();
        let want: Vec<usize> = (0..k).filter(|&i| usage[i] < 0.1).collect();
        let untouched = (0..k)
            .filter(|i| !want.contains(i))
            .all(|i| cb.usage()[i] == usage[i] && cb.vectors().row(i) == vectors.row(i));
        let reset_ok = want
            .iter()
            .all(|&i| cb.usage()[i] == 1.0 && batch.rows().into_iter().any(|r| r == cb.vectors().row(i)));
        if report.reset != want || !untouched || !reset_ok {
            reset_bad += 1;
        }
    }
    outcome(
        nn_bad == 0 && example_ok && ema_err <= 1e-12 && reset_bad == 0,
        format!(
            "nearest vs brute force on 100000 pairs: {nn_bad} wrong; EMA c′=1.04 closed form max err {ema_err:.1e} (tol 1e-12); reset iff c < c_min: {reset_bad}/1000 trials wrong"
        ),
    )
}

// ---------------------------------------------------------------- A4

fn a4() -> Outcome {
    let list = synthetic::frequency_list(50, 4);
    let cfg = ModelConfig {
        batch_size: 6,
        ..ModelConfig::default()
    };
    let trainer = Trainer::new(&list, cfg.clone(), 5).unwrap();
    let p = trainer.params().clone();
    let samples: Vec<Sample> = list.entries()[..6]
        .iter()
        .enumerate()
        .map(|(i, (w, _))| Sample {
            word: word(w),
            weight: 0.5 + i as f64 * 0.3,
        })
        .collect();
    let out = step_forward_backward(&p, &cfg, trainer.codebooks(), &samples).unwrap();
    let loss = |q: &factorizer::autoencoder::Params| surrogate_loss(q, &cfg, &samples, &out.latents, &out.quantized);
    let base = loss(&p);
    let consistent = (base - out.loss).abs() <= 1e-9 * out.loss.abs().max(1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let h = 1e-4;
    let mut worst = (0.0f64, String::new());
    let mut probes = 0;
    for (t, grad) in out.grads.tensors.iter().enumerate() {
        // Probe entries the batch actually reaches; unreached embedding
        // rows have zero gradient on both sides.
        let live: Vec<(usize, usize)> = grad
            .indexed_iter()
            .filter(|(_, g)| g.abs() > 1e-7)
            .map(|(i, _)| i)
            .collect();
        for _ in 0..10 {
            let idx = *live.choose(&mut rng).expect("every tensor receives gradient");
            let mut plus = p.clone();
            plus.tensors[t][idx] += h;
            let mut minus = p.clone();
            minus.tensors[t][idx] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let analytic = grad[idx];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs());
            if rel > worst.0 {
                worst = (rel, format!("tensor {t} {idx:?}"));
            }
            probes += 1;
        }
    }

    let latent = Array1::from_shape_fn(32, |_| rng.sample::<f64, _>(StandardNormal));
    let quantized = Array1::from_shape_fn(32, |_| rng.sample::<f64, _>(StandardNormal));
    let upstream = Array1::from_shape_fn(32, |_| rng.sample::<f64, _>(StandardNormal));
    let st = StraightThrough::new(latent.view(), quantized.view()).unwrap();
    let st_exact = st.forward() == quantized.view() && st.backward(upstream.view()) == upstream;

    outcome(
        consistent && worst.0 < 1e-4 && st_exact,
        format!(
            "{probes} probes over {} tensors, max relative error {:.2e} at {} (tol 1e-4); straight-through Jacobian exact: {st_exact}",
            out.grads.tensors.len(),
            worst.0,
            worst.1
        ),
    )
}

// ---------------------------------------------------------------- A5

struct Trained {
    list: WordFrequencyList,
    trainer: Trainer,
}

fn a5(trained: &mut Option<Trained>) -> Outcome {
    let list = synthetic::frequency_list(200, 7);
    let cfg = ModelConfig::default();
    let start = Instant::now();
    let mut trainer = Trainer::new(&list, cfg.clone(), 42).unwrap();
    if let Err(e) = trainer.run(|_| {}) {
        return outcome(false, format!("training failed: {e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    let model: Model = trainer.model().unwrap();
    let exact = list
        .entries()
        .iter()
        .filter(|(w, _)| {
            let w = word(w);
            model.reconstruct(&w).unwrap().word == w
        })
        .count();
    let rate = exact as f64 / list.len() as f64;
    let floor = (cfg.codebook_size as f64).ln() / 2.0;
    let entropies: Vec<f64> = trainer.codebooks().iter().map(|c| c.usage_entropy()).collect();
    let pass = rate >= 0.95 && entropies.iter().all(|&e| e >= floor) && secs < 600.0;
    *trained = Some(Trained { list, trainer });
    outcome(
        pass,
        format!(
            "K={} D={} {} steps: exact match {exact}/200 = {:.1}% (need ≥ 95%), usage entropy {:.3}/{:.3}/{:.3} (need ≥ {floor:.3}), {secs:.0} s (limit 600 s)",
            cfg.codebook_size,
            cfg.latent_dim,
            cfg.steps,
            rate * 100.0,
            entropies[0],
            entropies[1],
            entropies[2]
        ),
    )
}

// ---------------------------------------------------------------- A6

fn a6() -> Outcome {
    let tok = Tokenizer::new(fixture_vocab(), ScoreParams::default()).unwrap();
    let text = std::fs::read(fixtures().join("corpus.txt")).unwrap();
    let words = split_words(&text);
    let grid = [0.0, 0.1, 0.5, 1.0, 5.0, 50.0];
    let means: Vec<f64> = grid
        .iter()
        .map(|&a| {
            let t = tok.with_params(ScoreParams::deterministic(a)).unwrap();
            let pieces: usize = words.iter().map(|w| t.tokenize_word(&word(w)).unwrap().len()).sum();
            pieces as f64 / words.len() as f64
        })
        .collect();
    let non_increasing = means.windows(2).all(|w| w[1] <= w[0]);
    let strict = means.windows(2).any(|w| w[1] < w[0]);
    let shown: Vec<String> = grid.iter().zip(&means).map(|(a, m)| format!("{a}:{m:.3}")).collect();
    outcome(
        non_increasing && strict,
        format!("mean splits per word over α {{{}}} on {} words", shown.join(", "), words.len()),
    )
}

// ---------------------------------------------------------------- A7

fn a7(trained: &Option<Trained>) -> Outcome {
    let Some(Trained { list, trainer }) = trained else {
        return outcome(false, "needs the A5 model (run A5 first)");
    };
    let ckpt = trainer.checkpoint();
    let k = ckpt.config.codebook_size;
    let (vocab, report) = match build_from_checkpoint(&ckpt, &BuildOptions::default()) {
        Ok(v) => v,
        Err(e) => return outcome(false, format!("vocabulary build failed: {e}")),
    };
    let tok = Tokenizer::new(vocab, ScoreParams::default()).unwrap();
    let mut fz = IndexHistogram::triplets(k);
    for (w, f) in list.entries() {
        fz.add_tokenization(&tok.tokenize_word(&word(w)).unwrap(), *f);
    }
    let bpe = MergeTable::train(list, 256 + k * k * k).unwrap();
    let mut bp = IndexHistogram::tokens(bpe.num_tokens());
    for (w, f) in list.entries() {
        bp.add_tokens(&bpe.encode::<ChaCha8Rng>(w, 0.0, None).unwrap(), *f);
    }
    let channels: Vec<f64> = (0..3).map(|c| fz.normalized_entropy(c)).collect();
    let baseline = bp.normalized_entropy(0);
    outcome(
        channels.iter().all(|&h| h > baseline),
        format!(
            "normalized index entropy R/G/B {:.3}/{:.3}/{:.3} vs BPE token-id {baseline:.3} ({} merges, {} tokens); vocabulary {} learned entries from {} used triplets",
            channels[0],
            channels[1],
            channels[2],
            bpe.merges().len(),
            bpe.num_tokens(),
            tok.vocab().len() - tok.vocab().fallback_count(),
            report.used_triplets
        ),
    )
}

// ---------------------------------------------------------------- A8

fn a8() -> Outcome {
    let tok = Tokenizer::new(fixture_vocab(), ScoreParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let synth = synthetic::frequency_list(6000, 8);
    let mut words: Vec<Vec<u8>> = synth.entries().iter().map(|(w, _)| w.clone()).collect();
    let pool: Vec<char> = "aäßΩ日本語🍉-:\\␣".chars().collect();
    while words.len() < 10_000 {
        let w: Vec<u8> = match rng.random_range(0..3) {
            0 => (0..rng.random_range(1..12))
                .map(|_| *pool.choose(&mut rng).unwrap())
                .collect::<String>()
                .into_bytes(),
            1 => (0..rng.random_range(1..12)).map(|_| rng.random::<u8>()).collect(),
            _ => {
                let mut w = synth.entries()[rng.random_range(0..synth.len())].0.clone();
                let at = rng.random_range(0..=w.len());
                w.insert(at, rng.random_range(0x80..=0xFF));
                w
            }
        };
        // Raw bytes may contain whitespace; the pretokenizer's words are
        // what gets tokenized.
        words.extend(split_words(&w).into_iter().map(<[u8]>::to_vec));
    }
    words.truncate(10_000);
    let mut failures = 0;
    let mut errors = 0;
    let mut invalid_utf8 = 0;
    for w in &words {
        if std::str::from_utf8(w).is_err() {
            invalid_utf8 += 1;
        }
        match tok.tokenize_word(&word(w)) {
            Ok(t) => {
                if tok.detokenize(&t.triplets()).ok().as_deref() != Some(&w[..]) {
                    failures += 1;
                }
            }
            Err(_) => errors += 1,
        }
    }
    outcome(
        failures == 0 && errors == 0,
        format!(
            "{} words ({invalid_utf8} with invalid UTF-8): {failures} round-trip mismatches, {errors} tokenization errors",
            words.len()
        ),
    )
}

// ---------------------------------------------------------------- A9

fn a9() -> Outcome {
    let vocab = fixture_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut negative = 0;
    let mut min_score = f64::INFINITY;
    for i in 0..100_000 {
        let e = vocab.entries().choose(&mut rng).unwrap();
        let sigma = [0.02, 0.5, 3.0][i % 3];
        let alpha = [0.0, 0.1][i % 2];
        let s = score(e, &ScoreParams::sampling(alpha, sigma), Some(&mut rng)).unwrap();
        min_score = min_score.min(s);
        if s < 0.0 {
            negative += 1;
        }
    }

    // "ab" whole vs "a" + "b" tie exactly under the deterministic score, so
    // only the length noise decides.
    let entry = |s: &str, bow, eow, i, lp| VocabularyEntry {
        subword: BoundedWord::new(s.as_bytes(), bow, eow).unwrap(),
        triplet: Triplet::from_flat_index(i, 4),
        logprob: lp,
        fallback: false,
    };
    let near_tie = Vocabulary::new(
        4,
        vec![
            entry("ab", true, true, 0, -1.0),
            entry("a", true, false, 1, -0.45),
            entry("b", false, true, 2, -0.45),
        ],
    )
    .unwrap();
    let tok = Tokenizer::new(near_tie, ScoreParams::sampling(0.1, 0.02)).unwrap();
    let sample = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        tok.sample_tokenizations(&word(b"ab"), &mut rng, 128).unwrap()
    };
    let a = sample(7);
    let distinct: HashSet<Vec<Triplet>> = a.iter().map(|t| t.triplets()).collect();
    let bits = |ts: &[factorizer::Tokenization]| -> Vec<u64> { ts.iter().map(|t| t.total_score.to_bits()).collect() };
    let reproducible = a == sample(7) && bits(&a) == bits(&sample(7));
    let piece_scores_ok = a.iter().flat_map(|t| &t.pieces).all(|p| p.score >= 0.0);
    outcome(
        negative == 0 && piece_scores_ok && distinct.len() >= 2 && reproducible,
        format!(
            "100000 sampled scores, {negative} negative (min {min_score:.3}); near tie gave {} distinct segmentations in 128 samples at σ=0.02; seeded rerun bit-identical: {reproducible}",
            distinct.len()
        ),
    )
}

// ---------------------------------------------------------------- A10

fn a10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let pool: Vec<char> = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZäöüßΩωж日本語🍉0123456789 .,".chars().collect();
    let text: String = (0..100_000).map(|_| *pool.choose(&mut rng).unwrap()).collect();
    let cfg = NoiseConfig::new(0.1, 10).unwrap();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (noisy, stats) = perturb(&text, &cfg, &mut noise_rng).unwrap();
    let valid = std::str::from_utf8(noisy.as_bytes()).is_ok();
    let rate = stats.rate();
    outcome(
        stats.chars == 100_000 && (rate - 0.1).abs() <= 0.01 && valid,
        format!(
            "{} characters, perturbation rate {rate:.4} (target 0.1 ± 0.01; {} deleted, {} case changed, {} repeated), valid UTF-8: {valid}",
            stats.chars, stats.deleted, stats.case_changed, stats.repeated
        ),
    )
}

// ---------------------------------------------------------------- A11

/// Step-by-step reference: apply each merge in table order, replacing
/// non-overlapping occurrences left to right.
fn naive_encode(table: &MergeTable, bytes: &[u8]) -> Vec<TokenId> {
    let mut seq: Vec<TokenId> = std::iter::once(BOW as TokenId)
        .chain(bytes.iter().map(|&b| TokenId::from(b)))
        .chain(std::iter::once(EOW as TokenId))
        .collect();
    for (rank, &(l, r)) in table.merges().iter().enumerate() {
        let t = table.result(rank);
        let mut out = Vec::with_capacity(seq.len());
        let mut i = 0;
        while i < seq.len() {
            if i + 1 < seq.len() && seq[i] == l && seq[i + 1] == r {
                out.push(t);
                i += 2;
            } else {
                out.push(seq[i]);
                i += 1;
            }
        }
        seq = out;
    }
    seq
}

fn a11() -> Outcome {
    let banana = WordFrequencyList::from_text(b"banana");
    let one = MergeTable::train(&banana, 257).unwrap();
    let an = vec![Symbol::from(b'a'), Symbol::from(b'n')];
    let first_ok = one.merges().len() == 1 && one.expansion(one.result(0)) == &an[..];
    let enc = one.encode::<ChaCha8Rng>(b"banana", 0.0, None).unwrap();
    let an_id = one.result(0);
    let want = vec![BOW as TokenId, b'b' as TokenId, an_id, an_id, b'a' as TokenId, EOW as TokenId];
    let banana_ok = first_ok && enc == want;

    let corpus = synthetic::frequency_list(2000, 11);
    let table = MergeTable::train(&corpus, 1500).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut raw_bad = 0;
    let mut naive_bad = 0;
    let mut words: Vec<Vec<u8>> = corpus.entries().iter().map(|(w, _)| w.clone()).collect();
    while words.len() < 10_000 {
        let len = rng.random_range(1..14);
        words.push((0..len).map(|_| b"abcdeilmnorstu"[rng.random_range(0..14)]).collect());
    }
    for w in &words {
        if table.encode(w, 0.0, Some(&mut rng)).unwrap() != naive_encode(&table, w) {
            naive_bad += 1;
        }
        let raw = table.encode(w, 1.0, Some(&mut rng)).unwrap();
        let bytes: Vec<TokenId> = std::iter::once(BOW as TokenId)
            .chain(w.iter().map(|&b| TokenId::from(b)))
            .chain(std::iter::once(EOW as TokenId))
            .collect();
        if raw != bytes {
            raw_bad += 1;
        }
    }
    outcome(
        banana_ok && raw_bad == 0 && naive_bad == 0,
        format!(
            "banana: first merge \"an\" and ␣·b·an·an·a·␣: {banana_ok}; dropout 1 raw bytes: {raw_bad} wrong; p=0 vs naive merges on {} words ({} merges): {naive_bad} wrong",
            words.len(),
            table.merges().len()
        ),
    )
}

// ---------------------------------------------------------------- A12

fn a12() -> Outcome {
    let mut max_rel = 0.0f64;
    for f in (1..=100_000u64).chain([1 << 20, 1 << 40, u64::MAX >> 11]) {
        let prod = sample_weight(f).unwrap() * loss_weight(f).unwrap();
        max_rel = max_rel.max((prod - f as f64).abs() / f as f64);
    }
    let e1 = std::f64::consts::E - 1.0;
    let closed_ok = (real::sample_weight(e1) - e1).abs() < 1e-12 && (real::loss_weight(e1) - 1.0).abs() < 1e-12;

    let counts = [("x", 1u64), ("y", 2), ("z", 7), ("w", 40)];
    let list = WordFrequencyList::from_counts(counts.iter().map(|(w, c)| (w.as_bytes().to_vec(), *c)).collect()).unwrap();
    let sampler = TrainingSampler::new(&list).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    let n = 1_000_000u64;
    let mut hits: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for _ in 0..n {
        let i = sampler.draw_index(&mut rng);
        *hits.entry(list.entries()[i].0.clone()).or_default() += 1;
    }
    // Oracle: f / ln(f + 1), normalized.
    let mass: Vec<f64> = counts.iter().map(|(_, f)| *f as f64 / (*f as f64 + 1.0).ln()).collect();
    let total: f64 = mass.iter().sum();
    let mut worst_sigma = 0.0f64;
    for ((w, _), m) in counts.iter().zip(&mass) {
        let p = m / total;
        let expected = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        let got = hits.get(w.as_bytes()).copied().unwrap_or(0) as f64;
        worst_sigma = worst_sigma.max((got - expected).abs() / sd);
    }
    outcome(
        max_rel < 1e-12 && closed_ok && worst_sigma <= 3.0,
        format!(
            "sample_weight·loss_weight = f max relative error {max_rel:.1e} (tol 1e-12); 1000000 draws, worst deviation {worst_sigma:.2}σ (limit 3σ)"
        ),
    )
}

fn main() {
    let wanted: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_uppercase())
        .collect();
    let run = |name: &str| wanted.is_empty() || wanted.iter().any(|w| w == name);
    let mut trained = None;
    let mut failed = Vec::new();
    let mut report = |name: &str, title: &str, o: Outcome| {
        println!("{name} {} {title}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(name.to_string());
        }
    };
    if run("A1") {
        report("A1", "optimal-search oracle", a1());
    }
    if run("A2") {
        report("A2", "DAWG oracle", a2());
    }
    if run("A3") {
        report("A3", "quantizer oracles", a3());
    }
    if run("A4") {
        report("A4", "gradient correctness", a4());
    }
    if run("A5") || run("A7") {
        let o = a5(&mut trained);
        if run("A5") {
            report("A5", "end-to-end training", o);
        }
    }
    if run("A6") {
        report("A6", "α_split monotonicity", a6());
    }
    if run("A7") {
        report("A7", "index distribution", a7(&trained));
    }
    if run("A8") {
        report("A8", "round trip", a8());
    }
    if run("A9") {
        report("A9", "sampling behavior", a9());
    }
    if run("A10") {
        report("A10", "noise generator", a10());
    }
    if run("A11") {
        report("A11", "BPE baseline", a11());
    }
    if run("A12") {
        report("A12", "sampling-distribution arithmetic", a12());
    }
    drop(report);
    if failed.is_empty() {
        println!("acceptance: all selected criteria pass");
    } else {
        println!("acceptance: failing {}", failed.join(", "));
        std::process::exit(1);
    }
}

