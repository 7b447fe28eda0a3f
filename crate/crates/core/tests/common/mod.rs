// Shared fixtures and independent oracles for the integration tests and the
// acceptance runner. Each test crate uses a different subset.
#![allow(dead_code)]

pub mod criteria;
pub mod oracle;

use caprl::captioner::{Captioner, DecoderConfig, FeatureGrid, TokenSeq, BOS, EOS};
use caprl::decoding::StepModel;
use caprl::numcore::{GradMap, ModelParams, Tape, Tensor};
use caprl::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// The gradient-check model: vocab 12, width 8, inputs of 4 tokens.
pub fn tiny_config() -> DecoderConfig {
    DecoderConfig {
        vocab_size: 12,
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        ffn_dim: 16,
        max_len: 5,
        feat_dim: 5,
    }
}

pub fn tiny_model() -> Captioner {
    Captioner::new(tiny_config()).unwrap()
}

/// Initial parameters pushed away from the small-init regime so every
/// nonlinearity sees inputs of order one.
pub fn spread_params(model: &Captioner, seed: u64, scale: f64) -> ModelParams {
    let mut params = model.init_params(seed);
    let mut r = rng(seed ^ 0x5eed);
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v += r.random_range(-scale..scale);
        }
    }
    params
}

pub fn features(rng: &mut impl Rng, regions: usize, dim: usize) -> FeatureGrid {
    let values = (0..regions * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureGrid::new(regions, dim, values).unwrap()
}

/// A caption of `words` uniformly drawn word ids (never special tokens).
pub fn random_caption(rng: &mut impl Rng, vocab: usize, words: usize) -> TokenSeq {
    let w: Vec<usize> = (0..words).map(|_| rng.random_range(4..vocab)).collect();
    TokenSeq::from_words(&w)
}

/// Pins a closure to the higher-ranked loss signature the helpers take.
pub fn loss_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&caprl::numcore::BoundParams<'t>) -> Result<caprl::numcore::Var<'t>>,
{
    f
}

/// Analytic parameter gradients of a scalar loss built by `f`.
pub fn analytic_grads(
    params: &ModelParams,
    f: impl for<'t> Fn(&caprl::numcore::BoundParams<'t>) -> Result<caprl::numcore::Var<'t>>,
) -> GradMap {
    let tape = Tape::new();
    let p = params.bind(&tape, true);
    let loss = f(&p).unwrap();
    let mut grads = tape.backward(loss).unwrap();
    p.gradients(&mut grads)
}

pub fn loss_value(
    params: &ModelParams,
    f: &impl for<'t> Fn(&caprl::numcore::BoundParams<'t>) -> Result<caprl::numcore::Var<'t>>,
) -> f64 {
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    f(&p).unwrap().item()
}

pub const FD_STEP: f64 = 1e-6;

/// Central differences over every scalar of every parameter.
pub fn numeric_grads(
    params: &ModelParams,
    f: impl for<'t> Fn(&caprl::numcore::BoundParams<'t>) -> Result<caprl::numcore::Var<'t>>,
) -> GradMap {
    let mut work = params.clone();
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let mut out = GradMap::new();
    for name in names {
        let t = params.get(&name).unwrap();
        let mut g = Tensor::zeros(t.shape());
        for i in 0..t.numel() {
            let orig = t.data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + FD_STEP;
            let up = loss_value(&work, &f);
            work.get_mut(&name).unwrap().data_mut()[i] = orig - FD_STEP;
            let down = loss_value(&work, &f);
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * FD_STEP);
        }
        out.insert(name, g);
    }
    out
}

/// `|a - n| / max(|a|, |n|)` in the Euclidean norm; 0 when both vanish.
pub fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Key biases shift every attention score of a query equally, so softmax
/// cancels them and their gradient is identically zero. Relative error is
/// meaningless there; they are checked against zero instead.
pub fn structurally_zero(name: &str) -> bool {
    name.ends_with(".bk")
}

/// Worst per-parameter relative error, with the offending name. A
/// structurally zero parameter scores 0 when its analytic gradient is below
/// 1e-12 and its difference quotient below 1e-8, and infinity otherwise.
pub fn worst_rel_error(a: &GradMap, n: &GradMap) -> (String, f64) {
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    a.iter()
        .map(|(name, g)| {
            let e = if structurally_zero(name) {
                if max_abs(g.data()) < 1e-12 && max_abs(n[name].data()) < 1e-8 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                rel_error(g.data(), n[name].data())
            };
            (name.clone(), e)
        })
        .fold((String::new(), 0.0), |acc, x| if x.1 > acc.1 { x } else { acc })
}

pub fn all_zero(g: &GradMap) -> bool {
    g.values().all(|t| t.data().iter().all(|&v| v == 0.0))
}

/// Next-token logits drawn afresh for every prefix from a seeded stream.
pub struct TableModel {
    pub vocab: usize,
    pub seed: u64,
    pub spread: f64,
}

impl StepModel for TableModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_logits(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let parts: Vec<u64> = prefix.iter().map(|&t| t as u64).collect();
        let mut r = caprl::seed::stream(self.seed, &parts);
        Ok((0..self.vocab)
            .map(|_| r.random_range(-self.spread..self.spread))
            .collect())
    }
}

/// Log-probabilities of the next token with PAD and BOS excluded, computed
/// directly over the allowed tokens.
pub fn allowed_logprobs(model: &impl StepModel, prefix: &[usize]) -> Vec<(usize, f64)> {
    let logits = model.next_logits(prefix).unwrap();
    let allowed: Vec<usize> = (0..logits.len()).filter(|&t| t > BOS).collect();
    let m = allowed.iter().map(|&t| logits[t]).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = allowed.iter().map(|&t| (logits[t] - m).exp()).sum();
    allowed
        .into_iter()
        .map(|t| (t, logits[t] - m - z.ln()))
        .collect()
}

/// Every caption a decoder can emit within `max_len` tokens, with its
/// log-probability.
pub fn enumerate_captions(model: &impl StepModel, max_len: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![(vec![BOS], 0.0)];
    while let Some((prefix, lp)) = stack.pop() {
        for (t, l) in allowed_logprobs(model, &prefix) {
            let mut next = prefix.clone();
            next.push(t);
            if t == EOS || next.len() - 1 == max_len {
                out.push((next, lp + l));
            } else {
                stack.push((next, lp + l));
            }
        }
    }
    out
}
