//! Contextual token representations: a small trainable Transformer encoder
//! and a fixture-backed provider of precomputed matrices.

mod fixture;
mod tokenizer;
mod transformer;

pub use fixture::FixtureEmbeddings;
pub use tokenizer::{tokenize, RawToken};
pub use transformer::{EncoderOutput, TransformerEncoder};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SarlError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub ffn_dim: usize,
}

impl EncoderConfig {
    /// Desk-scale defaults: d = 32, 2 layers, 4 heads, 64 positions.
    pub fn toy(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            model_dim: 32,
            layers: 2,
            heads: 4,
            max_seq_len: 64,
            dropout: 0.0,
            ffn_dim: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(SarlError::Contract(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.vocab_size < 2 || self.max_seq_len == 0 || self.ffn_dim == 0 {
            return Err(SarlError::Contract("vocab_size, max_seq_len and ffn_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SarlError::Contract(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Contextual representations of one sentence, `d x n` in the usual
/// notation. Stored token-major: `row(j)` is the vector of token `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMatrix {
    d: usize,
    n: usize,
    values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl ContextMatrix {
    /// `token_major` holds `n` consecutive vectors of length `d`.
    pub fn from_token_major(d: usize, n: usize, token_major: Vec<f64>) -> Result<Self> {
        if d == 0 || n == 0 || token_major.len() != d * n {
            return Err(SarlError::shape("context_matrix", &[d, n], &[token_major.len()]));
        }
        Ok(ContextMatrix {
            d,
            n,
            values: token_major,
            mask: vec![true; n],
        })
    }

    /// `(d, n)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.d, self.n)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn token(&self, j: usize) -> &[f64] {
        &self.values[j * self.d..(j + 1) * self.d]
    }

    /// Entry at dimension `i`, token `j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.d + i]
    }

    pub fn token_major(&self) -> &[f64] {
        &self.values
    }

    pub fn token_major_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}
