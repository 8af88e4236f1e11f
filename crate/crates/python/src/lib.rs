//! Python module `factorizer`: load a vocabulary, tokenize, detokenize and
//! sample; train and apply the BPE baseline. Training the autoencoder and
//! building vocabularies stay in the command-line tool.

use std::collections::HashMap;
use std::sync::RwLock;

use factorizer::bpe::MergeTable;
use factorizer::symbols::split_words;
use factorizer::tokenizer::{self as tok, Tokenization};
use factorizer::vocab::VOCAB_VERSION;
use factorizer::{Error, ScoreParams, Tokenizer as CoreTokenizer, Triplet, Vocabulary, WordFrequencyList};
use pyo3::exceptions::{PyFileNotFoundError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyString};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A piece as it crosses the boundary: rendered subword (the `subword`
/// half of the command-line `subword:r,g,b` form) and its triplet.
pub type PieceTuple = (String, (u16, u16, u16));

pub fn piece_tuples(t: &Tokenization) -> Vec<PieceTuple> {
    t.pieces
        .iter()
        .map(|p| (p.subword.to_string(), (p.triplet.r(), p.triplet.g(), p.triplet.b())))
        .collect()
}

/// Deterministic pieces of every word of `text`, concatenated.
pub fn tokenize_text(t: &CoreTokenizer, text: &[u8]) -> factorizer::Result<Vec<PieceTuple>> {
    Ok(t.tokenize_text(text)?.iter().flat_map(piece_tuples).collect())
}

/// `n` sampled tokenizations of `text`. The generator is consumed word by
/// word, `n` samples each, which is the order the command line uses for
/// `--samples n --seed seed`.
pub fn sample_text(t: &CoreTokenizer, text: &[u8], n: usize, seed: u64) -> factorizer::Result<Vec<Vec<PieceTuple>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_word = t.sample_text(text, &mut rng, n)?;
    Ok((0..n)
        .map(|s| per_word.iter().flat_map(|samples| piece_tuples(&samples[s])).collect())
        .collect())
}

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => PyFileNotFoundError::new_err(io.to_string()),
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

/// Text arguments accept `str` or `bytes`.
#[derive(FromPyObject)]
enum Text {
    Str(String),
    Bytes(Vec<u8>),
}

impl Text {
    fn into_bytes(self) -> Vec<u8> {
        match self {
            Text::Str(s) => s.into_bytes(),
            Text::Bytes(b) => b,
        }
    }
}

/// `str` when the bytes are valid UTF-8, `bytes` otherwise.
fn text_object(py: Python<'_>, bytes: Vec<u8>) -> Bound<'_, PyAny> {
    match String::from_utf8(bytes) {
        Ok(s) => PyString::new(py, &s).into_any(),
        Err(e) => PyBytes::new(py, e.as_bytes()).into_any(),
    }
}

/// Loaded vocabulary plus scoring parameters. Immutable once loaded, so one
/// instance may serve several threads; `close` releases the vocabulary.
#[pyclass(frozen, module = "factorizer")]
pub struct Tokenizer {
    inner: RwLock<Option<CoreTokenizer>>,
}

impl Tokenizer {
    fn with<T>(&self, f: impl FnOnce(&CoreTokenizer) -> factorizer::Result<T>) -> PyResult<T> {
        let guard = self.inner.read().expect("tokenizer lock poisoned");
        let t = guard
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("tokenizer is closed"))?;
        f(t).map_err(to_py)
    }
}

#[pymethods]
impl Tokenizer {
    /// Pieces of every word of `text` as `(subword, (r, g, b))`.
    fn tokenize(&self, py: Python<'_>, text: Text) -> PyResult<Vec<PieceTuple>> {
        let text = text.into_bytes();
        py.detach(|| self.with(|t| tokenize_text(t, &text)))
    }

    /// Text of a triplet sequence; a space goes between words.
    fn detokenize(&self, py: Python<'_>, triplets: Vec<(u16, u16, u16)>) -> PyResult<Py<PyAny>> {
        let ts: Vec<Triplet> = triplets.into_iter().map(|(r, g, b)| Triplet::new(r, g, b)).collect();
        let bytes = self.with(|t| tok::detokenize(&ts, t.vocab()))?;
        Ok(text_object(py, bytes).unbind())
    }

    /// `n` sampled tokenizations of `text`, reproducible under `seed`.
    #[pyo3(signature = (text, n, seed = 42))]
    fn sample(&self, py: Python<'_>, text: Text, n: usize, seed: u64) -> PyResult<Vec<Vec<PieceTuple>>> {
        let text = text.into_bytes();
        py.detach(|| self.with(|t| sample_text(t, &text, n, seed)))
    }

    /// Whitespace-separated words of `text` as the pretokenizer sees them.
    fn words(&self, py: Python<'_>, text: Text) -> Vec<Py<PyAny>> {
        let text = text.into_bytes();
        split_words(&text)
            .into_iter()
            .map(|w| text_object(py, w.to_vec()).unbind())
            .collect()
    }

    #[getter]
    fn entry_count(&self) -> PyResult<usize> {
        self.with(|t| Ok(t.vocab().len()))
    }

    #[getter]
    fn codebook_size(&self) -> PyResult<usize> {
        self.with(|t| Ok(t.vocab().codebook_size()))
    }

    #[getter]
    fn alpha_split(&self) -> PyResult<f64> {
        self.with(|t| Ok(t.params().alpha_split))
    }

    #[getter]
    fn sigma_sample(&self) -> PyResult<f64> {
        self.with(|t| Ok(t.params().sigma_sample))
    }

    #[getter]
    fn closed(&self) -> bool {
        self.inner.read().expect("tokenizer lock poisoned").is_none()
    }

    /// Drops the vocabulary. Closing twice is a no-op.
    fn close(&self) {
        self.inner.write().expect("tokenizer lock poisoned").take();
    }

    fn __len__(&self) -> PyResult<usize> {
        self.entry_count()
    }

    fn __enter__(slf: Py<Self>) -> Py<Self> {
        slf
    }

    #[pyo3(signature = (*_args))]
    fn __exit__(&self, _args: &Bound<'_, pyo3::types::PyTuple>) -> bool {
        self.close();
        false
    }
}

/// Loads a vocabulary file written by `factorizer build-vocab`.
#[pyfunction]
#[pyo3(signature = (path, alpha_split = tok::DEFAULT_ALPHA_SPLIT, sigma_sample = tok::DEFAULT_SIGMA_SAMPLE))]
fn load(path: std::path::PathBuf, alpha_split: f64, sigma_sample: f64) -> PyResult<Tokenizer> {
    let vocab = Vocabulary::load(&path).map_err(|e| match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            PyFileNotFoundError::new_err(format!("{}: {io}", path.display()))
        }
        e => to_py(e),
    })?;
    let params = ScoreParams {
        sigma_sample,
        ..ScoreParams::deterministic(alpha_split)
    };
    let t = CoreTokenizer::new(vocab, params).map_err(to_py)?;
    Ok(Tokenizer {
        inner: RwLock::new(Some(t)),
    })
}

/// Byte-level BPE merge table.
#[pyclass(frozen, module = "factorizer")]
pub struct Bpe {
    table: MergeTable,
}

#[pymethods]
impl Bpe {
    /// Trains on a `{word: count}` mapping.
    #[staticmethod]
    fn train(counts: HashMap<String, u64>, vocab_size: usize) -> PyResult<Self> {
        let counts = counts.into_iter().map(|(w, n)| (w.into_bytes(), n)).collect();
        let list = WordFrequencyList::from_counts(counts).map_err(to_py)?;
        let table = MergeTable::train(&list, vocab_size).map_err(to_py)?;
        Ok(Self { table })
    }

    /// Reads a merge file written by `save` or `factorizer bpe-train`.
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let f = std::fs::File::open(&path).map_err(|e| to_py(e.into()))?;
        let table = MergeTable::read(std::io::BufReader::new(f)).map_err(to_py)?;
        Ok(Self { table })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(&path).map_err(|e| to_py(e.into()))?;
        self.table.write(std::io::BufWriter::new(f)).map_err(to_py)
    }

    /// Token ids of one word. With `dropout > 0` every merge is skipped
    /// with that probability, drawn from a generator seeded by `seed`.
    #[pyo3(signature = (word, dropout = 0.0, seed = 42))]
    fn encode(&self, word: Text, dropout: f64, seed: u64) -> PyResult<Vec<u32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.table
            .encode(&word.into_bytes(), dropout, Some(&mut rng))
            .map_err(to_py)
    }

    /// Bytes a token stands for, markers dropped.
    fn token_bytes<'py>(&self, py: Python<'py>, token: u32) -> PyResult<Bound<'py, PyBytes>> {
        if token as usize >= self.table.num_tokens() {
            return Err(PyValueError::new_err(format!("unknown token id {token}")));
        }
        let bytes: Vec<u8> = self
            .table
            .expansion(token)
            .iter()
            .filter(|&&s| s < 256)
            .map(|&s| s as u8)
            .collect();
        Ok(PyBytes::new(py, &bytes))
    }

    #[getter]
    fn num_tokens(&self) -> usize {
        self.table.num_tokens()
    }

    #[getter]
    fn num_merges(&self) -> usize {
        self.table.merges().len()
    }
}

#[pymodule]
#[pyo3(name = "factorizer")]
pub fn factorizer_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tokenizer>()?;
    m.add_class::<Bpe>()?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    m.add("VOCAB_FORMAT_VERSION", VOCAB_VERSION)?;
    Ok(())
}
