//! Checkpoint container.
//!
//! Layout (all integers and floats little-endian, floats IEEE-754 binary64):
//!
//! ```text
//! magic "FZCKPT\0\0" | version u32
//! config: 16 u64/f64 fields in declaration order, optimizer u8
//! step u64 | total_resets u64
//! rng: seed [u8; 32] | stream u64 | word_pos u128
//! 4 parameter sets (live, EMA, Adam first moment, Adam second moment):
//!     tensor count u32, then per tensor rows u64 | cols u64 | data
//! 3 codebooks: vectors (tensor) | usage K×f64 | decay f64 | reset threshold f64
//! triplet usage: entry count u64, then (r u16, g u16, b u16, count u64) sorted
//! pending sample: flag u8 [symbol count u32 | symbols u16… | weight f64]
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::autoencoder::{
    tensor, Model, ModelConfig, OptimizerKind, OptimizerState, Params, Sample, NUM_CODEBOOKS,
};
use crate::binio::{read_header, Reader, Writer};
use crate::error::{Error, Result};
use crate::symbols::BoundedWord;
use crate::triplet::Triplet;
use crate::vq::Codebook;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FZCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializable position of the training generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Complete training state: enough to resume bit-exactly or to build a
/// vocabulary from the EMA parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Params,
    pub ema_params: Params,
    pub codebooks: [Codebook; NUM_CODEBOOKS],
    /// How often each triplet was assigned during training.
    pub usage: BTreeMap<Triplet, u64>,
    pub step: usize,
    pub optimizer: OptimizerState,
    pub rng: RngState,
    pub pending: Option<Sample>,
    pub total_resets: u64,
}

impl Checkpoint {
    /// Inference model (EMA parameters).
    pub fn model(&self) -> Result<Model> {
        Model::new(
            self.config.clone(),
            self.ema_params.clone(),
            self.codebooks.clone(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        self.write(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = BufReader::new(File::open(path)?);
        Self::read(f)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = Writer::new(out);
        w.bytes(CHECKPOINT_MAGIC)?;
        w.u32(CHECKPOINT_VERSION)?;
        write_config(&mut w, &self.config)?;
        w.u64(self.step as u64)?;
        w.u64(self.total_resets)?;
        w.bytes(&self.rng.seed)?;
        w.u64(self.rng.stream)?;
        w.u128(self.rng.word_pos)?;
        for set in [
            &self.params,
            &self.ema_params,
            &self.optimizer.first,
            &self.optimizer.second,
        ] {
            w.u32(set.tensors.len() as u32)?;
            for t in &set.tensors {
                w.matrix(t)?;
            }
        }
        for cb in &self.codebooks {
            let (vectors, usage, decay, threshold) = cb.parts();
            w.matrix(vectors)?;
            for &c in usage {
                w.f64(c)?;
            }
            w.f64(decay)?;
            w.f64(threshold)?;
        }
        w.u64(self.usage.len() as u64)?;
        for (t, &n) in &self.usage {
            for c in t.0 {
                w.u16(c)?;
            }
            w.u64(n)?;
        }
        match &self.pending {
            None => w.u8(0)?,
            Some(s) => {
                w.u8(1)?;
                w.u32(s.word.len() as u32)?;
                for &sym in s.word.symbols() {
                    w.u16(sym)?;
                }
                w.f64(s.weight)?;
            }
        }
        w.finish()?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader::new(input, "checkpoint");
        let version = read_header(&mut r, CHECKPOINT_MAGIC)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                what: "checkpoint",
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let config = read_config(&mut r)?;
        config.validate()?;
        let step = r.u64()? as usize;
        let total_resets = r.u64()?;
        let rng = RngState {
            seed: r.bytes()?,
            stream: r.u64()?,
            word_pos: r.u128()?,
        };
        let mut sets = Vec::with_capacity(4);
        for _ in 0..4 {
            let n = r.u32()? as usize;
            if n != tensor::COUNT {
                return Err(r.err(format!("expected {} tensors, found {n}", tensor::COUNT)));
            }
            let tensors = (0..n).map(|_| r.matrix()).collect::<Result<Vec<_>>>()?;
            let p = Params { tensors };
            p.check_shapes(&config)?;
            sets.push(p);
        }
        let second = sets.pop().unwrap();
        let first = sets.pop().unwrap();
        let ema_params = sets.pop().unwrap();
        let params = sets.pop().unwrap();

        let mut books = Vec::with_capacity(NUM_CODEBOOKS);
        for _ in 0..NUM_CODEBOOKS {
            let vectors = r.matrix()?;
            if vectors.dim() != (config.codebook_size, config.latent_dim) {
                return Err(r.err("codebook shape does not match the config"));
            }
            let usage = (0..vectors.nrows())
                .map(|_| r.f64())
                .collect::<Result<Vec<_>>>()?;
            let decay = r.f64()?;
            let threshold = r.f64()?;
            books.push(Codebook::with_usage(vectors, usage, decay, threshold)?);
        }
        let codebooks: [Codebook; NUM_CODEBOOKS] = books.try_into().expect("three codebooks");

        let n = r.len(1 << 40)?;
        let mut usage = BTreeMap::new();
        for _ in 0..n {
            let t = Triplet([r.u16()?, r.u16()?, r.u16()?]);
            if !t.in_range(config.codebook_size) {
                return Err(r.err(format!("usage triplet {t} outside the codebooks")));
            }
            usage.insert(t, r.u64()?);
        }
        let pending = match r.u8()? {
            0 => None,
            1 => {
                let len = r.u32()? as usize;
                if len > config.max_len {
                    return Err(r.err("pending sample longer than max_len"));
                }
                let syms = (0..len).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
                let word = BoundedWord::from_symbols(syms)?;
                Some(Sample {
                    word,
                    weight: r.f64()?,
                })
            }
            f => return Err(r.err(format!("bad pending flag {f}"))),
        };
        r.expect_eof()?;
        Ok(Self {
            config,
            params,
            ema_params,
            codebooks,
            usage,
            step,
            optimizer: OptimizerState { first, second },
            rng,
            pending,
            total_resets,
        })
    }
}

fn write_config<W: Write>(w: &mut Writer<W>, c: &ModelConfig) -> Result<()> {
    for v in [
        c.codebook_size,
        c.latent_dim,
        c.encoder_embed_dim,
        c.encoder_hidden_dim,
        c.decoder_embed_dim,
        c.decoder_hidden_dim,
        c.context_width,
        c.max_len,
    ] {
        w.u64(v as u64)?;
    }
    for v in [c.beta, c.codebook_decay, c.reset_threshold, c.weight_ema_decay] {
        w.f64(v)?;
    }
    w.u64(c.steps as u64)?;
    w.u64(c.batch_size as u64)?;
    w.f64(c.learning_rate)?;
    w.f64(c.final_learning_rate)?;
    w.u64(c.warmup_steps as u64)?;
    w.u64(c.beam_width as u64)?;
    w.u8(c.optimizer.code())
}

fn read_config<R: Read>(r: &mut Reader<R>) -> Result<ModelConfig> {
    let mut dims = [0usize; 8];
    for d in dims.iter_mut() {
        *d = r.len(1 << 20)?;
    }
    let [codebook_size, latent_dim, encoder_embed_dim, encoder_hidden_dim, decoder_embed_dim, decoder_hidden_dim, context_width, max_len] =
        dims;
    let beta = r.f64()?;
    let codebook_decay = r.f64()?;
    let reset_threshold = r.f64()?;
    let weight_ema_decay = r.f64()?;
    let steps = r.len(u32::MAX as u64)?;
    let batch_size = r.len(1 << 24)?;
    let learning_rate = r.f64()?;
    let final_learning_rate = r.f64()?;
    let warmup_steps = r.len(u32::MAX as u64)?;
    let beam_width = r.len(1 << 16)?;
    let optimizer = OptimizerKind::from_code(r.u8()?).ok_or_else(|| r.err("unknown optimizer"))?;
    Ok(ModelConfig {
        codebook_size,
        latent_dim,
        encoder_embed_dim,
        encoder_hidden_dim,
        decoder_embed_dim,
        decoder_hidden_dim,
        context_width,
        max_len,
        beta,
        codebook_decay,
        reset_threshold,
        weight_ema_decay,
        steps,
        batch_size,
        learning_rate,
        final_learning_rate,
        warmup_steps,
        optimizer,
        beam_width,
    })
}
