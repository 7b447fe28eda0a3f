use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the caption decoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    /// Width of token embeddings and every hidden state.
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    /// Longest input the position table covers (BOS included).
    pub max_len: usize,
    /// Width of one image region feature.
    pub feat_dim: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            vocab_size: 30_522,
            d_model: 512,
            n_heads: 8,
            n_layers: 1,
            ffn_dim: 2048,
            max_len: 20,
            feat_dim: 2048,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.max_len < 2 {
            return fail(format!("max_len {} must be at least 2", self.max_len));
        }
        if self.vocab_size < 4 {
            return fail(format!("vocab_size {} leaves no room for words", self.vocab_size));
        }
        if self.n_layers == 0 || self.ffn_dim == 0 || self.feat_dim == 0 {
            return fail("n_layers, ffn_dim and feat_dim must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Expected parameter names and shapes, sorted by name.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (v, d, f, h) = (self.vocab_size, self.d_model, self.feat_dim, self.ffn_dim);
        let mut out = vec![
            ("tok_emb".to_string(), vec![v, d]),
            ("pos_emb".to_string(), vec![self.max_len, d]),
            ("emb_ln.gain".to_string(), vec![d]),
            ("emb_ln.bias".to_string(), vec![d]),
            ("out.w".to_string(), vec![d, v]),
            ("out.b".to_string(), vec![v]),
        ];
        for l in 0..self.n_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            for (name, shape) in [
                ("self.wq", vec![d, d]),
                ("self.bq", vec![d]),
                ("self.wk", vec![d, d]),
                ("self.bk", vec![d]),
                ("self.wv", vec![d, d]),
                ("self.bv", vec![d]),
                ("self.wo", vec![d, d]),
                ("self.bo", vec![d]),
                ("self_ln.gain", vec![d]),
                ("self_ln.bias", vec![d]),
                ("cross.wq", vec![d, d]),
                ("cross.bq", vec![d]),
                ("cross.wk", vec![f, d]),
                ("cross.bk", vec![d]),
                ("cross.wv", vec![f, d]),
                ("cross.bv", vec![d]),
                ("cross.wo", vec![d, d]),
                ("cross.bo", vec![d]),
                ("cross_ln.gain", vec![d]),
                ("cross_ln.bias", vec![d]),
                ("ffn.w1", vec![d, h]),
                ("ffn.b1", vec![h]),
                ("ffn.w2", vec![h, d]),
                ("ffn.b2", vec![d]),
                ("ffn_ln.gain", vec![d]),
                ("ffn_ln.bias", vec![d]),
            ] {
                out.push((p(name), shape));
            }
        }
        out.sort();
        out
    }
}
