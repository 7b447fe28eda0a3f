use serde::{Deserialize, Serialize};

use super::reward::RewardFn;
use super::RlItem;
use crate::captioner::{Captioner, TokenSeq};
use crate::decoding::{greedy_decode, sample_decode, CaptionPolicy, DecodeConfig};
use crate::error::{Error, Result};
use crate::numcore::{AdamState, BoundParams, ModelParams, Tape, Var};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScstConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ScstConfig {
    fn default() -> Self {
        ScstConfig {
            epochs: 20,
            lr: 1e-5,
        }
    }
}

impl ScstConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("SCST needs at least one epoch".into()));
        }
        Ok(())
    }
}

/// One sampled caption with its self-critical advantage.
#[derive(Clone, Debug)]
pub struct ScstRollout {
    /// Position of the image in the batch.
    pub slot: usize,
    pub sample: TokenSeq,
    pub greedy: TokenSeq,
    pub sample_reward: f64,
    pub greedy_reward: f64,
}

impl ScstRollout {
    /// `r(sample) - r(greedy)`.
    pub fn advantage(&self) -> f64 {
        self.sample_reward - self.greedy_reward
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ScstStats {
    pub loss: f64,
    pub mean_reward: f64,
    pub mean_greedy_reward: f64,
    pub mean_advantage: f64,
    pub skipped: usize,
}

/// Greedy and sampled caption per image under the current policy, scored by
/// `reward`. Sampling for image `i` uses the stream `(seed, step, image)`.
pub fn scst_rollouts(
    model: &Captioner,
    params: &ModelParams,
    batch: &[RlItem<'_>],
    reward: &dyn RewardFn,
    decode: &DecodeConfig,
    seed_root: u64,
    step: u64,
) -> Result<Vec<ScstRollout>> {
    batch
        .iter()
        .enumerate()
        .map(|(slot, item)| {
            let policy = CaptionPolicy {
                model,
                params,
                features: item.features,
            };
            let greedy = greedy_decode(&policy, decode)?;
            let mut rng = seed::stream(seed_root, &[step, item.image as u64]);
            let sample = sample_decode(&policy, decode, &mut rng)?.seq;
            Ok(ScstRollout {
                slot,
                greedy_reward: reward.reward(item.image, &greedy)?,
                sample_reward: reward.reward(item.image, &sample)?,
                sample,
                greedy,
            })
        })
        .collect()
}

/// `-(1/B) * sum_i (r(x_s) - r(x_greedy)) * log p(x_s)`.
///
/// Samples with no words are left out of the sum (the mean still divides by
/// the full batch size). Returns `None` when nothing contributes.
pub fn scst_loss<'t>(
    model: &Captioner,
    p: &BoundParams<'t>,
    batch: &[RlItem<'_>],
    rollouts: &[ScstRollout],
) -> Result<Option<Var<'t>>> {
    let b = rollouts.len().max(1) as f64;
    let mut loss: Option<Var<'t>> = None;
    for r in rollouts {
        if r.sample.words().is_empty() {
            log::debug!("SCST sample for batch slot {} has no words; skipped", r.slot);
            continue;
        }
        let logp = model
            .token_logprobs(p, &r.sample.ids, batch[r.slot].features)?
            .sum()?;
        let term = logp.scale(-r.advantage() / b)?;
        loss = Some(match loss {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    Ok(loss)
}

/// Self-critical sequence training step: the greedy caption's reward is the
/// baseline for the sampled caption's REINFORCE gradient. One Adam update.
#[allow(clippy::too_many_arguments)]
pub fn scst_step(
    model: &Captioner,
    params: &mut ModelParams,
    opt: &mut AdamState,
    batch: &[RlItem<'_>],
    reward: &dyn RewardFn,
    decode: &DecodeConfig,
    seed_root: u64,
    step: u64,
    lr: f64,
) -> Result<ScstStats> {
    if batch.is_empty() {
        return Err(Error::Data("SCST step on an empty batch".into()));
    }
    let rollouts = scst_rollouts(model, params, batch, reward, decode, seed_root, step)?;
    let n = rollouts.len() as f64;
    let mut stats = ScstStats {
        mean_reward: rollouts.iter().map(|r| r.sample_reward).sum::<f64>() / n,
        mean_greedy_reward: rollouts.iter().map(|r| r.greedy_reward).sum::<f64>() / n,
        mean_advantage: rollouts.iter().map(ScstRollout::advantage).sum::<f64>() / n,
        skipped: rollouts.iter().filter(|r| r.sample.words().is_empty()).count(),
        loss: 0.0,
    };
    let tape = Tape::new();
    let p = params.bind(&tape, true);
    match scst_loss(model, &p, batch, &rollouts)? {
        Some(loss) => {
            stats.loss = loss.item();
            if !stats.loss.is_finite() {
                return Err(Error::Numeric(format!("SCST loss is {}", stats.loss)));
            }
            let mut grads = tape.backward(loss)?;
            let grads = p.gradients(&mut grads);
            opt.update(params, &grads, lr)?;
        }
        None => {
            let grads = Default::default();
            opt.update(params, &grads, lr)?;
        }
    }
    Ok(stats)
}
