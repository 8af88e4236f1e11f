//! Desk-scale VQ-VAE over boundary-marked byte sequences.
//!
//! The encoder maps a subword to three latent vectors (R, G, B channels),
//! each quantized against its own codebook. The decoder is autoregressive:
//! it reads the three quantized vectors plus a fixed window of previously
//! emitted symbols and predicts the next symbol (or END).
//!
//! Encoder: `u_t = tanh(embed[s_t] + pos[t])`, mean-pooled, one tanh hidden
//! layer, three linear heads.
//! Decoder: `[z_r | z_g | z_b | embed(history) | pos[t]]` → tanh hidden
//! layer → 259 logits.

mod decode;
mod model;
mod network;
mod train;

#[cfg(test)]
pub(crate) use decode::toy;
pub use decode::{beam_decode, decode_logprob, greedy_decode, Decoded, SubwordDecoder};
pub use model::Model;
pub use network::{
    decoder_nll, history_window, step_forward_backward, surrogate_loss, targets, Sample,
    StepOutput,
};
pub use train::{
    ema_parameters, learning_rate, OptimizerKind, OptimizerState, StepReport, Trainer,
};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::symbols::{ALPHABET_SIZE, DECODER_CLASSES};

pub const NUM_CODEBOOKS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub codebook_size: usize,
    pub latent_dim: usize,
    pub encoder_embed_dim: usize,
    pub encoder_hidden_dim: usize,
    pub decoder_embed_dim: usize,
    pub decoder_hidden_dim: usize,
    /// Number of previously emitted symbols the decoder sees.
    pub context_width: usize,
    /// Maximum subword length in symbols, markers included.
    pub max_len: usize,
    pub beta: f64,
    pub codebook_decay: f64,
    pub reset_threshold: f64,
    pub weight_ema_decay: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub final_learning_rate: f64,
    pub warmup_steps: usize,
    pub optimizer: OptimizerKind,
    pub beam_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            codebook_size: 16,
            latent_dim: 32,
            encoder_embed_dim: 128,
            encoder_hidden_dim: 256,
            decoder_embed_dim: 16,
            decoder_hidden_dim: 256,
            context_width: 8,
            max_len: 64,
            beta: 0.5,
            codebook_decay: 0.96,
            reset_threshold: crate::vq::DEFAULT_RESET_THRESHOLD,
            weight_ema_decay: 0.999,
            steps: 5_000,
            batch_size: 64,
            learning_rate: 1e-2,
            final_learning_rate: 1e-3,
            warmup_steps: 100,
            optimizer: OptimizerKind::Adam,
            beam_width: 8,
        }
    }
}

impl ModelConfig {
    /// Codebook size, step count and batch size of the full-scale recipe.
    pub fn full_scale() -> Self {
        Self {
            codebook_size: 256,
            steps: 50_000,
            batch_size: 4_096,
            learning_rate: 1e-3,
            final_learning_rate: 1e-4,
            warmup_steps: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.codebook_size < 2 || self.codebook_size > u16::MAX as usize + 1 {
            return bad("codebook size must be in [2, 65536]");
        }
        if self.latent_dim == 0
            || self.encoder_embed_dim == 0
            || self.encoder_hidden_dim == 0
            || self.decoder_embed_dim == 0
            || self.decoder_hidden_dim == 0
        {
            return bad("layer dimensions must be positive");
        }
        if self.max_len < 3 {
            return bad("max_len must allow at least BOW, one byte and EOW");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.beam_width == 0 {
            return bad("beam width must be positive");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        for (name, v) in [
            ("codebook decay", self.codebook_decay),
            ("weight EMA decay", self.weight_ema_decay),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.reset_threshold > 0.0) {
            return bad("reset threshold must be positive");
        }
        if !(self.learning_rate > 0.0 && self.final_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }

    pub fn decoder_input_dim(&self) -> usize {
        NUM_CODEBOOKS * self.latent_dim + (self.context_width + 1) * self.decoder_embed_dim
    }
}

/// Indices into [`Params::tensors`].
pub mod tensor {
    pub const ENC_EMBED: usize = 0;
    pub const ENC_POS: usize = 1;
    pub const ENC_W1: usize = 2;
    pub const ENC_B1: usize = 3;
    pub const HEAD_W: [usize; 3] = [4, 5, 6];
    pub const HEAD_B: [usize; 3] = [7, 8, 9];
    pub const DEC_EMBED: usize = 10;
    pub const DEC_POS: usize = 11;
    pub const DEC_W1: usize = 12;
    pub const DEC_B1: usize = 13;
    pub const DEC_W2: usize = 14;
    pub const DEC_B2: usize = 15;
    pub const COUNT: usize = 16;

    pub const NAMES: [&str; COUNT] = [
        "encoder.embed",
        "encoder.pos",
        "encoder.w1",
        "encoder.b1",
        "encoder.head_r.w",
        "encoder.head_g.w",
        "encoder.head_b.w",
        "encoder.head_r.b",
        "encoder.head_g.b",
        "encoder.head_b.b",
        "decoder.embed",
        "decoder.pos",
        "decoder.w1",
        "decoder.b1",
        "decoder.w2",
        "decoder.b2",
    ];
}

/// All trainable parameters, stored as 2-D tensors (biases are `1 × n`).
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tensors: Vec<Array2<f64>>,
}

impl Params {
    pub fn shapes(cfg: &ModelConfig) -> Vec<(usize, usize)> {
        let he = cfg.encoder_embed_dim;
        let h = cfg.encoder_hidden_dim;
        let d = cfg.latent_dim;
        let e = cfg.decoder_embed_dim;
        let hd = cfg.decoder_hidden_dim;
        vec![
            (ALPHABET_SIZE, he),
            (cfg.max_len, he),
            (h, he),
            (1, h),
            (d, h),
            (d, h),
            (d, h),
            (1, d),
            (1, d),
            (1, d),
            (DECODER_CLASSES, e),
            (cfg.max_len + 1, e),
            (hd, cfg.decoder_input_dim()),
            (1, hd),
            (DECODER_CLASSES, hd),
            (1, DECODER_CLASSES),
        ]
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            tensors: Self::shapes(cfg)
                .into_iter()
                .map(|s| Array2::zeros(s))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self.tensors.iter().map(|t| Array2::zeros(t.dim())).collect(),
        }
    }

    /// Gaussian initialization: embeddings with std 0.5, weight matrices
    /// with std `1/√fan_in`, zero biases.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        use tensor::*;
        let mut p = Self::zeros(cfg);
        for (i, t) in p.tensors.iter_mut().enumerate() {
            let std = match i {
                ENC_EMBED | ENC_POS | DEC_EMBED | DEC_POS => 0.5,
                ENC_B1 | DEC_B1 | DEC_B2 => continue,
                i if HEAD_B.contains(&i) => continue,
                _ => 1.0 / (t.ncols() as f64).sqrt(),
            };
            t.mapv_inplace(|_| {
                let n: f64 = StandardNormal.sample(rng);
                n * std
            });
        }
        p
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = Self::shapes(cfg);
        if self.tensors.len() != expected.len() {
            return Err(Error::format(
                "parameters",
                format!("expected {} tensors, found {}", expected.len(), self.tensors.len()),
            ));
        }
        for (i, (t, s)) in self.tensors.iter().zip(expected).enumerate() {
            if t.dim() != s {
                return Err(Error::format(
                    "parameters",
                    format!("{} has shape {:?}, expected {:?}", tensor::NAMES[i], t.dim(), s),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_match_config() {
        let cfg = ModelConfig::default();
        let p = Params::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        p.check_shapes(&cfg).unwrap();
        assert!(p.is_finite());
        assert_eq!(p.tensors[tensor::DEC_B2].dim(), (1, 259));
        assert!(p.tensors[tensor::ENC_B1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_scale_uses_large_sizes() {
        let cfg = ModelConfig::full_scale();
        assert_eq!(cfg.codebook_size, 256);
        assert_eq!((cfg.beta, cfg.codebook_decay, cfg.weight_ema_decay), (0.5, 0.96, 0.999));
        assert_eq!((cfg.steps, cfg.batch_size), (50_000, 4_096));
        cfg.validate().unwrap();
    }
}
