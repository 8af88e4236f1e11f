use std::ffi::CString;
use std::path::{Path, PathBuf};

use factorizer::symbols::split_words;
use factorizer::{BoundedWord, ScoreParams, Tokenizer, Vocabulary};
use factorizer_py::{piece_tuples, sample_text};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn fixture_vocab(dir: &Path) -> PathBuf {
    let tsv = std::fs::read(fixture("vocab.tsv")).unwrap();
    let learned = Vocabulary::read_tsv(16, &tsv[..]).unwrap().entries().to_vec();
    let v = Vocabulary::with_byte_fallbacks(16, learned).unwrap();
    let path = dir.join("fixture.fzv");
    v.save(&path).unwrap();
    path
}

/// Runs `code` with the module bound to `factorizer` and `vocab_path` set.
fn run_python(vocab: &Path, code: &str) {
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(factorizer_py::factorizer_module)(py);
        let globals = PyDict::new(py);
        globals.set_item("factorizer", m).unwrap();
        globals.set_item("vocab_path", vocab.to_str().unwrap()).unwrap();
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.display(py);
            panic!("python snippet failed: {e}");
        }
    });
}

#[test]
fn tokenize_detokenize_and_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = fixture_vocab(dir.path());
    let n = Vocabulary::load(&vocab).unwrap().len();
    run_python(
        &vocab,
        &format!(
            r#"
t = factorizer.load(vocab_path)
assert t.entry_count == {n} and len(t) == {n}
pieces = t.tokenize("melon-fixture-word")
assert pieces == [("␣melon", (1, 0, 0)), ("-fixture", (1, 5, 0)), ("-word␣", (1, 7, 0))], pieces
assert t.tokenize("") == []
text = "the cat über 日本語 🍉melon"
assert t.detokenize([p[1] for p in t.tokenize(text)]) == text
raw = b"a\xffb"
assert t.detokenize([p[1] for p in t.tokenize(raw)]) == raw
try:
    t.detokenize([(0, 0, 0), (15, 15, 15)])
    raise AssertionError("unknown triplet accepted")
except ValueError as e:
    assert "position 1" in str(e), e
t.close()
t.close()
assert t.closed
try:
    t.tokenize("x")
    raise AssertionError("closed tokenizer still works")
except ValueError:
    pass
with factorizer.load(vocab_path) as u:
    assert u.tokenize("the") == [("␣the␣", (2, 0, 0))]
assert u.closed
try:
    factorizer.load(vocab_path + ".missing")
    raise AssertionError("missing file loaded")
except FileNotFoundError as e:
    assert ".missing" in str(e)
assert factorizer.VOCAB_FORMAT_VERSION == 1
"#
        ),
    );
}

#[test]
fn bad_version_raises_value_error_naming_versions() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = fixture_vocab(dir.path());
    let mut bytes = std::fs::read(&vocab).unwrap();
    bytes[8] = 7;
    std::fs::write(&vocab, bytes).unwrap();
    run_python(
        &vocab,
        r#"
try:
    factorizer.load(vocab_path)
    raise AssertionError("bad version loaded")
except ValueError as e:
    assert "expected 1, found 7" in str(e), e
"#,
    );
}

#[test]
fn sampling_matches_word_major_generator_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = fixture_vocab(dir.path());
    let tok = Tokenizer::new(Vocabulary::load(&path).unwrap(), ScoreParams::sampling(0.1, 0.02)).unwrap();
    let text = "melon-fixture-word watermelons";
    // Oracle: one generator, words in order, n draws per word.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut per_word = Vec::new();
    for w in split_words(text.as_bytes()) {
        let word = BoundedWord::word(w).unwrap();
        per_word.push((0..8).map(|_| tok.sample_word(&word, &mut rng).unwrap()).collect::<Vec<_>>());
    }
    let got = sample_text(&tok, text.as_bytes(), 8, 7).unwrap();
    assert_eq!(got.len(), 8);
    for (s, sample) in got.iter().enumerate() {
        let want: Vec<_> = per_word.iter().flat_map(|w| piece_tuples(&w[s])).collect();
        assert_eq!(sample, &want);
    }
    run_python(
        &path,
        &format!(
            r#"
t = factorizer.load(vocab_path)
a = t.sample("{text}", 8, seed=7)
assert a == t.sample("{text}", 8, seed=7)
assert len(a) == 8
want = {want:?}
got = [[s + ":" + ",".join(map(str, rgb)) for s, rgb in sample] for sample in a]
assert got == want, (got, want)
"#,
            want = got
                .iter()
                .map(|s| s.iter().map(|(w, (r, g, b))| format!("{w}:{r},{g},{b}")).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        ),
    );
}

#[test]
fn bpe_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let merges = dir.path().join("merges.txt");
    run_python(
        dir.path(),
        &format!(
            r#"
b = factorizer.Bpe.train({{"banana": 1}}, 300)
ids = b.encode("banana")
assert len(ids) == 1 and b.token_bytes(ids[0]) == b"banana", ids
assert len(b.encode("banana", dropout=1.0)) == 8
b.save({merges:?})
c = factorizer.Bpe.load({merges:?})
assert c.num_merges == b.num_merges and c.encode("banana") == ids
"#,
            merges = merges.to_str().unwrap()
        ),
    );
}
