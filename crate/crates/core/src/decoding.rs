//! Caption generation: greedy argmax, temperature sampling and beam search.
//!
//! Decoders talk to a model through [`StepModel`], which returns next-token
//! logits for a prefix. The caption model implements it via
//! [`CaptionPolicy`]; tests plug in hand-built tables.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::captioner::{Captioner, FeatureGrid, TokenSeq, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::numcore::{log_softmax, ModelParams, NEG_LARGE};

/// Anything that scores the next token given a prefix starting with BOS.
pub trait StepModel {
    fn vocab_size(&self) -> usize;

    /// Unnormalized next-token scores after `prefix`.
    fn next_logits(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

/// The caption model bound to one parameter snapshot and one image.
pub struct CaptionPolicy<'a> {
    pub model: &'a Captioner,
    pub params: &'a ModelParams,
    pub features: &'a FeatureGrid,
}

impl StepModel for CaptionPolicy<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn next_logits(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let logits = self.model.logits(self.params, prefix, self.features)?;
        Ok(logits.row(prefix.len() - 1).to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Maximum number of generated tokens, EOS included.
    pub max_len: usize,
    pub temperature: f64,
    pub beam_size: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_len: 16,
            temperature: 1.0,
            beam_size: 3,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("decode max_len must be positive".into()));
        }
        Ok(())
    }
}

/// A sampled caption with the log-probability of each generated token.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampled {
    pub seq: TokenSeq,
    pub token_logprobs: Vec<f64>,
}

impl Sampled {
    /// `log p(x_1..x_T)`.
    pub fn logprob(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }
}

/// A finished beam-search hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub seq: TokenSeq,
    pub logprob: f64,
}

/// Next-token logits with PAD and BOS removed from play.
fn masked_logits(model: &impl StepModel, prefix: &[usize]) -> Result<Vec<f64>> {
    let mut logits = model.next_logits(prefix)?;
    if logits.len() != model.vocab_size() {
        return Err(Error::shape(
            "decode",
            format!("model returned {} logits for vocab {}", logits.len(), model.vocab_size()),
        ));
    }
    for special in [PAD, BOS] {
        if let Some(v) = logits.get_mut(special) {
            *v = NEG_LARGE;
        }
    }
    Ok(logits)
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Picks the highest-scoring token at every step until EOS or `max_len`.
pub fn greedy_decode(model: &impl StepModel, cfg: &DecodeConfig) -> Result<TokenSeq> {
    let mut ids = vec![BOS];
    for _ in 0..cfg.max_len {
        let tok = argmax(&masked_logits(model, &ids)?);
        ids.push(tok);
        if tok == EOS {
            break;
        }
    }
    Ok(TokenSeq::new(ids))
}

/// Draws each token from `softmax(logits / temperature)`.
///
/// The returned log-probabilities are those of the model distribution at
/// temperature 1, whatever temperature was used to draw.
pub fn sample_decode(
    model: &impl StepModel,
    cfg: &DecodeConfig,
    rng: &mut impl Rng,
) -> Result<Sampled> {
    cfg.validate()?;
    let mut ids = vec![BOS];
    let mut token_logprobs = Vec::new();
    for _ in 0..cfg.max_len {
        let logits = masked_logits(model, &ids)?;
        let scaled: Vec<f64> = logits.iter().map(|v| v / cfg.temperature).collect();
        let probs = crate::numcore::softmax(&scaled);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut tok = argmax(&probs);
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                tok = i;
                break;
            }
        }
        token_logprobs.push(log_softmax(&logits)[tok]);
        ids.push(tok);
        if tok == EOS {
            break;
        }
    }
    Ok(Sampled {
        seq: TokenSeq::new(ids),
        token_logprobs,
    })
}

/// Beam search over summed log-probabilities, without length normalization.
///
/// A hypothesis is finished when it emits EOS or reaches `max_len`
/// generated tokens. Search stops when no live hypothesis can still beat
/// the best finished one.
pub fn beam_decode(model: &impl StepModel, cfg: &DecodeConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let mut live = vec![Hypothesis {
        seq: TokenSeq::new(vec![BOS]),
        logprob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 0..cfg.max_len {
        let mut candidates = Vec::with_capacity(live.len() * model.vocab_size());
        for hyp in &live {
            let lp = log_softmax(&masked_logits(model, &hyp.seq.ids)?);
            for (tok, &l) in lp.iter().enumerate() {
                if tok == PAD || tok == BOS {
                    continue;
                }
                let mut ids = hyp.seq.ids.clone();
                ids.push(tok);
                candidates.push(Hypothesis {
                    seq: TokenSeq::new(ids),
                    logprob: hyp.logprob + l,
                });
            }
        }
        sort_hypotheses(&mut candidates);
        candidates.truncate(cfg.beam_size);
        live.clear();
        for c in candidates {
            if c.seq.ends_with_eos() || step + 1 == cfg.max_len {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
        sort_hypotheses(&mut finished);
        let best_done = finished.first().map(|h| h.logprob);
        match (best_done, live.first()) {
            (_, None) => break,
            // extending a hypothesis can only lower its score
            (Some(done), Some(l)) if done >= l.logprob => break,
            _ => {}
        }
    }
    finished
        .into_iter()
        .next()
        .ok_or_else(|| Error::Numeric("beam search finished no hypothesis".into()))
}

fn sort_hypotheses(h: &mut [Hypothesis]) {
    h.sort_by(|a, b| {
        b.logprob
            .total_cmp(&a.logprob)
            .then_with(|| a.seq.ids.cmp(&b.seq.ids))
    });
}

/// Log-probability of a complete sequence under `model`, recomputed
/// step by step (PAD and BOS masked as in the decoders).
pub fn sequence_logprob(model: &impl StepModel, seq: &TokenSeq) -> Result<f64> {
    let mut total = 0.0;
    for t in 1..seq.ids.len() {
        let lp = log_softmax(&masked_logits(model, &seq.ids[..t])?);
        total += lp[seq.ids[t]];
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Logits depend only on the previous token.
    struct Bigram {
        table: Vec<Vec<f64>>,
    }

    impl StepModel for Bigram {
        fn vocab_size(&self) -> usize {
            self.table[0].len()
        }
        fn next_logits(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            Ok(self.table[*prefix.last().unwrap()].clone())
        }
    }

    #[test]
    fn eos_peaked_model_gives_empty_caption() {
        let m = Bigram {
            table: vec![vec![0.0, 0.0, 5.0, 1.0]; 4],
        };
        let seq = greedy_decode(&m, &DecodeConfig::default()).unwrap();
        assert_eq!(seq.ids, vec![BOS, EOS]);
        assert!(seq.words().is_empty());
    }

    #[test]
    fn greedy_follows_argmax_and_truncates() {
        // 1 -> 3 -> 4 -> 3 -> ...
        let m = Bigram {
            table: vec![
                vec![0.0; 5],
                vec![0.0, 0.0, -1.0, 2.0, 1.0],
                vec![0.0; 5],
                vec![0.0, 0.0, -1.0, 0.0, 3.0],
                vec![0.0, 0.0, -1.0, 3.0, 0.0],
            ],
        };
        let cfg = DecodeConfig {
            max_len: 4,
            ..DecodeConfig::default()
        };
        let seq = greedy_decode(&m, &cfg).unwrap();
        assert_eq!(seq.ids, vec![BOS, 3, 4, 3, 4]);
        assert_eq!(greedy_decode(&m, &cfg).unwrap(), seq);
    }

    #[test]
    fn argmax_ties_go_to_lowest_id() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn sampled_logprobs_are_self_consistent() {
        let m = Bigram {
            table: vec![
                vec![0.0; 5],
                vec![0.0, 0.0, 0.1, 0.7, 0.3],
                vec![0.0; 5],
                vec![0.0, 0.0, 0.5, 0.2, 0.4],
                vec![0.0, 0.0, 0.9, 0.1, -0.3],
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let s = sample_decode(&m, &DecodeConfig::default(), &mut rng).unwrap();
            let again = sequence_logprob(&m, &s.seq).unwrap();
            assert!((s.logprob() - again).abs() < 1e-10);
            assert_eq!(s.token_logprobs.len(), s.seq.generated_len());
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = DecodeConfig::default();
        cfg.beam_size = 0;
        assert!(cfg.validate().is_err());
        cfg.beam_size = 1;
        cfg.temperature = 0.0;
        assert!(cfg.validate().is_err());
    }
}
