use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::DecoderConfig;
use super::types::{CausalMask, FeatureGrid, BOS, PAD};
use crate::error::{Error, Result};
use crate::numcore::{concat_cols, BoundParams, ModelParams, Tape, Tensor, Var, NEG_LARGE};

/// Standard deviation of the Gaussian used for weights and embeddings.
pub const INIT_STD: f64 = 0.02;

/// Output of an attention block together with the per-head attention
/// weights, kept for inspection.
pub struct Attended<'t> {
    pub out: Var<'t>,
    pub weights: Vec<Var<'t>>,
}

/// Transformer caption decoder: token and position embeddings, one or more
/// blocks of masked self-attention, cross-attention over region features and
/// a feed-forward layer, then a linear predictor over the vocabulary.
#[derive(Clone, Debug)]
pub struct Captioner {
    cfg: DecoderConfig,
}

impl Captioner {
    pub fn new(cfg: DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Captioner { cfg })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// Fresh parameters: weights and embeddings from N(0, 0.02^2), biases
    /// zero, layer-norm gains one.
    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = ModelParams::new();
        for (name, shape) in self.cfg.param_shapes() {
            let numel: usize = shape.iter().product();
            let is_bias = name.ends_with(".bias") || is_bias_name(&name);
            let data = if name.ends_with(".gain") {
                vec![1.0; numel]
            } else if is_bias {
                vec![0.0; numel]
            } else {
                (0..numel).map(|_| normal.sample(&mut rng)).collect()
            };
            params
                .insert(name, Tensor::new(shape, data).expect("shape from config"))
                .expect("unique names");
        }
        params
    }

    /// Checks that `params` has exactly the names and shapes this config
    /// expects.
    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        let expected = self.cfg.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, config expects {}",
                params.len(),
                expected.len()
            )));
        }
        for (name, shape) in expected {
            match params.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Config(format!(
                        "parameter `{name}` has shape {:?}, config expects {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Config(format!("checkpoint lacks `{name}`"))),
            }
        }
        Ok(())
    }

    /// Token plus position embedding followed by layer norm.
    pub fn embed<'t>(&self, p: &BoundParams<'t>, tokens: &[usize]) -> Result<Var<'t>> {
        if tokens.is_empty() {
            return Err(Error::shape("embed", "empty token sequence"));
        }
        if tokens.len() > self.cfg.max_len {
            return Err(Error::shape(
                "embed",
                format!("{} tokens exceed max_len {}", tokens.len(), self.cfg.max_len),
            ));
        }
        let words = p.get("tok_emb")?.embedding(tokens)?;
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let pos = p.get("pos_emb")?.embedding(&positions)?;
        words
            .add(pos)?
            .layer_norm(p.get("emb_ln.gain")?, p.get("emb_ln.bias")?)
    }

    fn linear<'t>(p: &BoundParams<'t>, x: Var<'t>, w: &str, b: &str) -> Result<Var<'t>> {
        x.matmul(p.get(w)?)?.add_row(p.get(b)?)
    }

    /// Multi-head attention of `queries` over `keys`/`values` (already
    /// projected), with an optional additive mask.
    fn heads<'t>(
        &self,
        q: Var<'t>,
        k: Var<'t>,
        v: Var<'t>,
        mask: Option<Var<'t>>,
    ) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        let dk = self.cfg.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.cfg.n_heads);
        let mut weights = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let qh = q.slice_cols(h * dk, dk)?;
            let kh = k.slice_cols(h * dk, dk)?;
            let vh = v.slice_cols(h * dk, dk)?;
            let mut scores = qh.matmul_t(kh)?.scale(scale)?;
            if let Some(m) = mask {
                scores = scores.add(m)?;
            }
            let w = scores.softmax()?;
            outs.push(w.matmul(vh)?);
            weights.push(w);
        }
        let joined = if outs.len() == 1 { outs[0] } else { concat_cols(&outs)? };
        Ok((joined, weights))
    }

    /// Causal multi-head self-attention with residual connection and layer
    /// norm.
    pub fn masked_self_attention<'t>(
        &self,
        p: &BoundParams<'t>,
        layer: usize,
        e: Var<'t>,
        mask: &CausalMask,
    ) -> Result<Attended<'t>> {
        let t = e.shape()[0];
        if mask.size() != t {
            return Err(Error::shape(
                "masked_self_attention",
                format!("mask of size {} for {t} positions", mask.size()),
            ));
        }
        let mask_var = e.tape().constant(mask.matrix().clone());
        self.self_attention_with(p, layer, e, mask_var)
    }

    fn self_attention_with<'t>(
        &self,
        p: &BoundParams<'t>,
        layer: usize,
        e: Var<'t>,
        mask: Var<'t>,
    ) -> Result<Attended<'t>> {
        let n = |s: &str| format!("layer{layer}.{s}");
        let q = Self::linear(p, e, &n("self.wq"), &n("self.bq"))?;
        let k = Self::linear(p, e, &n("self.wk"), &n("self.bk"))?;
        let v = Self::linear(p, e, &n("self.wv"), &n("self.bv"))?;
        let (joined, weights) = self.heads(q, k, v, Some(mask))?;
        let mixed = Self::linear(p, joined, &n("self.wo"), &n("self.bo"))?;
        let out = e
            .add(mixed)?
            .layer_norm(p.get(&n("self_ln.gain"))?, p.get(&n("self_ln.bias"))?)?;
        Ok(Attended { out, weights })
    }

    /// Cross-attention from text states to image regions, residual and layer
    /// norm, then the feed-forward sublayer with its own residual and norm.
    pub fn cross_attend_ffn<'t>(
        &self,
        p: &BoundParams<'t>,
        layer: usize,
        h_e: Var<'t>,
        features: Var<'t>,
    ) -> Result<Attended<'t>> {
        let fdim = features.shape()[1];
        if fdim != self.cfg.feat_dim {
            return Err(Error::shape(
                "cross_attend_ffn",
                format!("feature width {fdim}, model expects {}", self.cfg.feat_dim),
            ));
        }
        let n = |s: &str| format!("layer{layer}.{s}");
        let q = Self::linear(p, h_e, &n("cross.wq"), &n("cross.bq"))?;
        let k = Self::linear(p, features, &n("cross.wk"), &n("cross.bk"))?;
        let v = Self::linear(p, features, &n("cross.wv"), &n("cross.bv"))?;
        let (joined, weights) = self.heads(q, k, v, None)?;
        let fused = Self::linear(p, joined, &n("cross.wo"), &n("cross.bo"))?;
        let h_prime = h_e
            .add(fused)?
            .layer_norm(p.get(&n("cross_ln.gain"))?, p.get(&n("cross_ln.bias"))?)?;
        let hidden = Self::linear(p, h_prime, &n("ffn.w1"), &n("ffn.b1"))?.relu()?;
        let ffn = Self::linear(p, hidden, &n("ffn.w2"), &n("ffn.b2"))?;
        let out = h_prime
            .add(ffn)?
            .layer_norm(p.get(&n("ffn_ln.gain"))?, p.get(&n("ffn_ln.bias"))?)?;
        Ok(Attended { out, weights })
    }

    /// Next-token logits for every position, shape `T x vocab_size`. Row `t`
    /// conditions on `tokens[..=t]` and the image. PAD and BOS are suppressed
    /// so the model never predicts them.
    pub fn forward<'t>(
        &self,
        p: &BoundParams<'t>,
        tokens: &[usize],
        features: &FeatureGrid,
    ) -> Result<Var<'t>> {
        let tape = p.get("tok_emb")?.tape();
        let feats = tape.constant(features.values().clone());
        let mut h = self.embed(p, tokens)?;
        let mask = tape.constant(CausalMask::new(tokens.len()).matrix().clone());
        for layer in 0..self.cfg.n_layers {
            let h_e = self.self_attention_with(p, layer, h, mask)?.out;
            h = self.cross_attend_ffn(p, layer, h_e, feats)?.out;
        }
        let logits = Self::linear(p, h, "out.w", "out.b")?;
        let v = self.cfg.vocab_size;
        let suppress: Vec<bool> = (0..tokens.len() * v)
            .map(|i| matches!(i % v, PAD | BOS))
            .collect();
        logits.masked_fill(&suppress, NEG_LARGE)
    }

    /// Log-probabilities of `seq[1..]` under teacher forcing on `seq[..n-1]`,
    /// one entry per predicted token.
    pub fn token_logprobs<'t>(
        &self,
        p: &BoundParams<'t>,
        seq: &[usize],
        features: &FeatureGrid,
    ) -> Result<Var<'t>> {
        if seq.len() < 2 {
            return Err(Error::shape("token_logprobs", "sequence needs BOS and one token"));
        }
        let logits = self.forward(p, &seq[..seq.len() - 1], features)?;
        logits.log_softmax()?.pick(&seq[1..])
    }

    /// Logits without recording gradients.
    pub fn logits(&self, params: &ModelParams, tokens: &[usize], features: &FeatureGrid) -> Result<Tensor> {
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        Ok(self.forward(&p, tokens, features)?.value())
    }

    /// Log-probability row for the token following `prefix`.
    pub fn next_logprobs(
        &self,
        params: &ModelParams,
        prefix: &[usize],
        features: &FeatureGrid,
    ) -> Result<Vec<f64>> {
        let logits = self.logits(params, prefix, features)?;
        let last = logits.row(prefix.len() - 1);
        Ok(crate::numcore::log_softmax(last))
    }
}

fn is_bias_name(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    leaf.starts_with('b') && leaf.len() <= 2
}
