use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use crate::data::PAD_ID;
use crate::encoder::{ContextMatrix, EncoderConfig};
use crate::error::{Result, SarlError};
use crate::numerics::{Graph, GroupName, Linear, ParamId, ParamStore, Tensor, Var};

const LN_EPS: f64 = 1e-5;
const MASK_NEG: f64 = -1e30;

#[derive(Debug, Clone)]
struct LayerParams {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    ln1_gamma: ParamId,
    ln1_beta: ParamId,
    ffn_in: Linear,
    ffn_out: Linear,
    ln2_gamma: ParamId,
    ln2_beta: ParamId,
}

/// Post-layer-norm Transformer encoder with learned absolute positions.
/// Every tensor lives in the `ptm` group.
#[derive(Debug)]
pub struct TransformerEncoder {
    pub config: EncoderConfig,
    token_embedding: ParamId,
    position_embedding: ParamId,
    layers: Vec<LayerParams>,
    calls: AtomicUsize,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `n x d`, one row per token.
    pub hidden: Var,
    /// Attention probabilities per layer and head, each `n x n`.
    pub attention: Vec<Vec<Var>>,
    pub mask: Vec<bool>,
}

impl Clone for TransformerEncoder {
    fn clone(&self) -> Self {
        TransformerEncoder {
            config: self.config.clone(),
            token_embedding: self.token_embedding,
            position_embedding: self.position_embedding,
            layers: self.layers.clone(),
            calls: AtomicUsize::new(self.calls()),
        }
    }
}

impl TransformerEncoder {
    pub fn new<R: Rng>(config: EncoderConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let g = GroupName::Ptm;
        let token_embedding = store.add_init(g, "enc.token_embedding", config.vocab_size, d, rng);
        let position_embedding = store.add_init(g, "enc.position_embedding", config.max_seq_len, d, rng);
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("enc.layer{l}");
                LayerParams {
                    query: Linear::new(store, g, &format!("{p}.query"), d, d, rng),
                    key: Linear::new(store, g, &format!("{p}.key"), d, d, rng),
                    value: Linear::new(store, g, &format!("{p}.value"), d, d, rng),
                    output: Linear::new(store, g, &format!("{p}.attn_out"), d, d, rng),
                    ln1_gamma: store.add_filled(g, format!("{p}.ln1.gamma"), 1, d, 1.0),
                    ln1_beta: store.add_zeros(g, format!("{p}.ln1.beta"), 1, d),
                    ffn_in: Linear::new(store, g, &format!("{p}.ffn_in"), d, config.ffn_dim, rng),
                    ffn_out: Linear::new(store, g, &format!("{p}.ffn_out"), config.ffn_dim, d, rng),
                    ln2_gamma: store.add_filled(g, format!("{p}.ln2.gamma"), 1, d, 1.0),
                    ln2_beta: store.add_zeros(g, format!("{p}.ln2.beta"), 1, d),
                }
            })
            .collect();
        Ok(TransformerEncoder {
            config,
            token_embedding,
            position_embedding,
            layers,
            calls: AtomicUsize::new(0),
        })
    }

    /// Number of forward passes run so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Clips to `max_seq_len` (with a warning) and validates ids.
    pub fn prepare_tokens<'a>(&self, tokens: &'a [usize]) -> Result<&'a [usize]> {
        if tokens.is_empty() {
            return Err(SarlError::Contract("cannot encode an empty sentence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(SarlError::IndexOutOfRange {
                index: bad,
                len: self.config.vocab_size,
            });
        }
        if tokens.len() > self.config.max_seq_len {
            log::warn!(
                "sentence of {} tokens truncated to {}",
                tokens.len(),
                self.config.max_seq_len
            );
            return Ok(&tokens[..self.config.max_seq_len]);
        }
        Ok(tokens)
    }

    /// Builds the encoder graph. `PAD_ID` positions are masked out of every
    /// attention distribution. Dropout is applied only when `dropout_rng` is
    /// given and the configured rate is positive.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[usize],
        mut dropout_rng: Option<&mut R>,
    ) -> Result<EncoderOutput> {
        let tokens = self.prepare_tokens(tokens)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let n = tokens.len();
        let d = self.config.model_dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let mask: Vec<bool> = tokens.iter().map(|&t| t != PAD_ID).collect();

        let tok_table = g.param(store, self.token_embedding);
        let pos_table = g.param(store, self.position_embedding);
        let tok = g.gather_rows(tok_table, tokens)?;
        let pos = g.slice_rows(pos_table, 0, n)?;
        let mut x = g.add(tok, pos)?;

        let mask_bias = if mask.iter().all(|&m| m) {
            None
        } else {
            let row: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { MASK_NEG }).collect();
            let data: Vec<f64> = (0..n).flat_map(|_| row.iter().copied()).collect();
            Some(g.constant(Tensor::matrix(n, n, data)?))
        };

        let scale = 1.0 / (dh as f64).sqrt();
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let q = layer.query.forward(g, store, x)?;
            let k = layer.key.forward(g, store, x)?;
            let v = layer.value.forward(g, store, x)?;
            let mut head_outputs = Vec::with_capacity(heads);
            let mut maps = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = g.slice_cols(q, h * dh, dh)?;
                let kh = g.slice_cols(k, h * dh, dh)?;
                let vh = g.slice_cols(v, h * dh, dh)?;
                let kt = g.transpose(kh);
                let raw = g.matmul(qh, kt)?;
                let mut scores = g.scale(raw, scale);
                if let Some(mb) = mask_bias {
                    scores = g.add(scores, mb)?;
                }
                let probs = g.softmax_rows(scores);
                maps.push(probs);
                head_outputs.push(g.matmul(probs, vh)?);
            }
            attention.push(maps);
            let merged = g.concat_cols(&head_outputs)?;
            let mut attn_out = layer.output.forward(g, store, merged)?;
            attn_out = self.dropout(g, attn_out, dropout_rng.as_deref_mut())?;
            let res1 = g.add(x, attn_out)?;
            let (g1, b1) = (g.param(store, layer.ln1_gamma), g.param(store, layer.ln1_beta));
            let x1 = g.layer_norm(res1, g1, b1, LN_EPS)?;

            let hidden = layer.ffn_in.forward(g, store, x1)?;
            let act = g.gelu(hidden);
            let mut ffn = layer.ffn_out.forward(g, store, act)?;
            ffn = self.dropout(g, ffn, dropout_rng.as_deref_mut())?;
            let res2 = g.add(x1, ffn)?;
            let (g2, b2) = (g.param(store, layer.ln2_gamma), g.param(store, layer.ln2_beta));
            x = g.layer_norm(res2, g2, b2, LN_EPS)?;
        }
        Ok(EncoderOutput {
            hidden: x,
            attention,
            mask,
        })
    }

    fn dropout<R: Rng>(&self, g: &mut Graph, x: Var, rng: Option<&mut R>) -> Result<Var> {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let (m, n) = g.shape(x);
                let keep = 1.0 / (1.0 - p);
                let data = (0..m * n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
                let mask = g.constant(Tensor::matrix(m, n, data)?);
                g.mul(x, mask)
            }
            _ => Ok(x),
        }
    }

    /// Evaluation-mode encoding detached from any graph.
    pub fn encode_sentence(&self, store: &ParamStore, tokens: &[usize]) -> Result<ContextMatrix> {
        let mut g = Graph::new();
        let out = self.forward::<rand_chacha::ChaCha8Rng>(&mut g, store, tokens, None)?;
        let (n, d) = g.shape(out.hidden);
        let mut cm = ContextMatrix::from_token_major(d, n, g.value(out.hidden).data().to_vec())?;
        cm.mask = out.mask;
        Ok(cm)
    }

    pub fn token_embedding(&self) -> ParamId {
        self.token_embedding
    }

    pub fn position_embedding(&self) -> ParamId {
        self.position_embedding
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(layers: usize, d: usize) -> (TransformerEncoder, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::default();
        let cfg = EncoderConfig {
            layers,
            model_dim: d,
            heads: 4,
            ffn_dim: 2 * d,
            ..EncoderConfig::toy(20)
        };
        let enc = TransformerEncoder::new(cfg, &mut store, &mut rng).unwrap();
        (enc, store)
    }

    #[test]
    fn output_shape_is_d_by_n() {
        let (enc, store) = encoder(2, 16);
        let h = enc.encode_sentence(&store, &[2, 3, 4, 5, 6]).unwrap();
        assert_eq!(h.shape(), (16, 5));
    }

    #[test]
    fn zero_layers_is_embedding_sum() {
        let (enc, store) = encoder(0, 8);
        let toks = [3, 7, 2];
        let h = enc.encode_sentence(&store, &toks).unwrap();
        let te = store.value(enc.token_embedding());
        let pe = store.value(enc.position_embedding());
        for (j, &t) in toks.iter().enumerate() {
            for i in 0..8 {
                assert_eq!(h.get(i, j), te.get(t, i) + pe.get(j, i));
            }
        }
    }

    #[test]
    fn long_sentences_truncate_to_cap() {
        let (enc, store) = encoder(1, 8);
        let toks: Vec<usize> = (0..80).map(|i| 2 + i % 10).collect();
        let h = enc.encode_sentence(&store, &toks).unwrap();
        assert_eq!(h.len(), 64);
    }

    #[test]
    fn rejects_unknown_ids_and_empty() {
        let (enc, store) = encoder(1, 8);
        assert!(matches!(
            enc.encode_sentence(&store, &[2, 99]),
            Err(SarlError::IndexOutOfRange { index: 99, .. })
        ));
        assert!(enc.encode_sentence(&store, &[]).is_err());
    }

    #[test]
    fn attention_rows_sum_to_one_and_ignore_padding() {
        let (enc, store) = encoder(2, 8);
        let mut g = Graph::new();
        let toks = [4, 5, 6, PAD_ID, PAD_ID];
        let out = enc.forward::<ChaCha8Rng>(&mut g, &store, &toks, None).unwrap();
        for maps in &out.attention {
            for &m in maps {
                let t = g.value(m);
                for r in 0..t.rows() {
                    let row = t.row(r);
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    assert!(row[3] == 0.0 && row[4] == 0.0);
                }
            }
        }
        // unmasked outputs do not depend on how much padding follows
        let a = enc.encode_sentence(&store, &[4, 5, 6, PAD_ID]).unwrap();
        let b = enc.encode_sentence(&store, &toks).unwrap();
        for j in 0..3 {
            for (x, y) in a.token(j).iter().zip(b.token(j)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pure_function_of_tokens_and_params() {
        let (enc, store) = encoder(2, 8);
        let a = enc.encode_sentence(&store, &[2, 3, 4]).unwrap();
        let _ = enc.encode_sentence(&store, &[9, 9, 9, 9]).unwrap();
        let b = enc.encode_sentence(&store, &[2, 3, 4]).unwrap();
        assert_eq!(a, b);
        assert_eq!(enc.calls(), 3);
    }
}
