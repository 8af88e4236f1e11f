use ndarray::{s, Array1, Array2, ArrayView1};

use super::decode::{greedy_decode, Decoded, SubwordDecoder};
use super::network::{encoder_forward, history_window};
use super::{tensor, ModelConfig, Params, NUM_CODEBOOKS};
use crate::error::{Error, Result};
use crate::symbols::{BoundedWord, DECODER_CLASSES};
use crate::triplet::Triplet;
use crate::vq::Codebook;

/// Frozen network for inference, with the decoder's per-symbol and
/// per-position input projections precomputed.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: Params,
    codebooks: [Codebook; NUM_CODEBOOKS],
    slot_tables: Vec<Array2<f64>>,
    pos_table: Array2<f64>,
}

impl Model {
    pub fn new(config: ModelConfig, params: Params, codebooks: [Codebook; NUM_CODEBOOKS]) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        let d = config.latent_dim;
        let e = config.decoder_embed_dim;
        let c = config.context_width;
        let t = &params.tensors;
        let w1 = &t[tensor::DEC_W1];
        let base = NUM_CODEBOOKS * d;
        let slot_tables = (0..c)
            .map(|j| {
                let w = w1.slice(s![.., base + j * e..base + (j + 1) * e]);
                t[tensor::DEC_EMBED].dot(&w.t())
            })
            .collect();
        let w_pos = w1.slice(s![.., base + c * e..base + (c + 1) * e]);
        let pos_table = t[tensor::DEC_POS].dot(&w_pos.t());
        Ok(Self {
            config,
            params,
            codebooks,
            slot_tables,
            pos_table,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn codebooks(&self) -> &[Codebook; NUM_CODEBOOKS] {
        &self.codebooks
    }

    fn check_len(&self, word: &BoundedWord) -> Result<()> {
        if word.len() > self.config.max_len {
            return Err(Error::WordTooLong {
                len: word.len(),
                max: self.config.max_len,
            });
        }
        Ok(())
    }

    /// The three channel latents of a subword.
    pub fn encode(&self, word: &BoundedWord) -> Result<[Array1<f64>; NUM_CODEBOOKS]> {
        self.check_len(word)?;
        let pass = encoder_forward(&self.params, &self.config, &[word]);
        Ok(std::array::from_fn(|c| pass.latents[c].row(0).to_owned()))
    }

    pub fn triplet_of(&self, word: &BoundedWord) -> Result<Triplet> {
        let latents = self.encode(word)?;
        let mut out = [0u16; 3];
        for c in 0..NUM_CODEBOOKS {
            out[c] = self.codebooks[c].nearest(latents[c].view())? as u16;
        }
        Ok(Triplet(out))
    }

    pub fn triplet_vectors(&self, triplet: Triplet) -> [Array1<f64>; NUM_CODEBOOKS] {
        std::array::from_fn(|c| self.codebooks[c].vector(triplet.0[c] as usize).to_owned())
    }

    /// Decoder context for arbitrary channel vectors.
    pub fn context_from_vectors(&self, vectors: [ArrayView1<'_, f64>; NUM_CODEBOOKS]) -> Array1<f64> {
        let d = self.config.latent_dim;
        let t = &self.params.tensors;
        let mut z = Array1::zeros(NUM_CODEBOOKS * d);
        for c in 0..NUM_CODEBOOKS {
            z.slice_mut(s![c * d..(c + 1) * d]).assign(&vectors[c]);
        }
        let w_z = t[tensor::DEC_W1].slice(s![.., 0..NUM_CODEBOOKS * d]);
        w_z.dot(&z) + &t[tensor::DEC_B1].row(0)
    }

    /// `log p(w | z)` for explicit channel vectors.
    pub fn decode_logprob(&self, vectors: [ArrayView1<'_, f64>; NUM_CODEBOOKS], word: &BoundedWord) -> f64 {
        let ctx = self.context_from_vectors(vectors);
        super::decode::decode_logprob(self, &ctx, word)
    }

    /// Best subword for explicit channel vectors, using the configured beam width.
    pub fn greedy_decode(&self, vectors: [ArrayView1<'_, f64>; NUM_CODEBOOKS]) -> Decoded {
        let ctx = self.context_from_vectors(vectors);
        greedy_decode(self, &ctx, self.config.beam_width)
    }

    /// Round trip through the bottleneck: encode, quantize, decode.
    pub fn reconstruct(&self, word: &BoundedWord) -> Result<Decoded> {
        let t = self.triplet_of(word)?;
        let ctx = self.context(t);
        Ok(greedy_decode(self, &ctx, self.config.beam_width))
    }
}

impl SubwordDecoder for Model {
    type Context = Array1<f64>;

    fn codebook_size(&self) -> usize {
        self.config.codebook_size
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn context(&self, triplet: Triplet) -> Array1<f64> {
        let v = self.triplet_vectors(triplet);
        self.context_from_vectors([v[0].view(), v[1].view(), v[2].view()])
    }

    fn next_log_probs(&self, ctx: &Array1<f64>, prefix: &[usize], out: &mut [f64]) {
        let t = prefix.len();
        let mut pre = ctx + &self.pos_table.row(t);
        for (j, h) in history_window(prefix, t, self.config.context_width).enumerate() {
            pre += &self.slot_tables[j].row(h);
        }
        pre.mapv_inplace(f64::tanh);
        let p = &self.params.tensors;
        let logits = p[tensor::DEC_W2].dot(&pre) + &p[tensor::DEC_B2].row(0);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        debug_assert_eq!(out.len(), DECODER_CLASSES);
        for (o, l) in out.iter_mut().zip(logits.iter()) {
            *o = l - lse;
        }
    }
}
