//! Factorized subword tokenization.
//!
//! A small VQ-VAE learns to map subwords to triplets of codebook indices.
//! Decoding every used triplet yields a static vocabulary of
//! `(subword, triplet, log p(subword | triplet))` entries, which is compiled
//! into a DAWG and used for optimal (shortest-path) or sampled segmentation.
//! A byte-level BPE baseline and the analysis helpers live alongside.

pub mod analysis;
pub mod autoencoder;
mod binio;
pub mod bpe;
pub mod checkpoint;
pub mod corpus;
pub mod dawg;
pub mod error;
pub mod symbols;
pub mod synthetic;
pub mod tokenizer;
pub mod triplet;
pub mod vocab;
pub mod vq;

pub use autoencoder::{Model, ModelConfig, Trainer};
pub use checkpoint::Checkpoint;
pub use corpus::WordFrequencyList;
pub use dawg::SubwordDawg;
pub use error::{Error, Result};
pub use symbols::{BoundedWord, Symbol, BOW, EOW};
pub use tokenizer::{ScoreMode, ScoreParams, Tokenization, Tokenizer};
pub use triplet::Triplet;
pub use vocab::{Vocabulary, VocabularyEntry};
