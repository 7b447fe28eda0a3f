use serde::{Deserialize, Serialize};

use super::reward::RewardFn;
use super::RlItem;
use crate::captioner::{Captioner, FeatureGrid, TokenSeq};
use crate::decoding::{sample_decode, CaptionPolicy, DecodeConfig};
use crate::error::{Error, Result};
use crate::numcore::{AdamState, BoundParams, ModelParams, Tape, Tensor, Var};
use crate::seed;

/// Rewards whose population std falls below this give all-zero advantages.
pub const ADVANTAGE_STD_FLOOR: f64 = 1e-8;
/// The KL estimator caps its log-ratio here so `exp` cannot overflow.
pub const KL_LOG_RATIO_CAP: f64 = 50.0;

/// How per-token probability ratios are turned into the clipped objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioAgg {
    /// One ratio for the whole caption, `pi(o) / pi_old(o)`.
    Sequence,
    /// Clipped objective and KL per token, averaged over the caption.
    #[default]
    TokenMean,
}

/// When the sampling policy is refreshed from the trained one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    /// Copy the policy into the sampler every `update_steps` optimizer steps.
    #[default]
    Period,
    /// Sample once per batch, then take `update_steps` optimizer steps on it.
    InnerEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub update_steps: usize,
    pub epochs: usize,
    pub lr: f64,
    pub ratio_agg: RatioAgg,
    pub sync: SyncMode,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 5,
            clip_eps: 0.2,
            kl_beta: 0.01,
            update_steps: 20,
            epochs: 5,
            lr: 1e-5,
            ratio_agg: RatioAgg::TokenMean,
            sync: SyncMode::Period,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config(format!(
                "GRPO group_size must be at least 2, got {}",
                self.group_size
            )));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config(format!("clip_eps {} outside (0, 1)", self.clip_eps)));
        }
        if !(self.kl_beta >= 0.0) {
            return Err(Error::Config(format!("kl_beta {} must be >= 0", self.kl_beta)));
        }
        if self.update_steps == 0 || self.epochs == 0 {
            return Err(Error::Config("update_steps and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Standardizes rewards within a group: `(r - mean) / std`, population std.
///
/// ```
/// let a = caprl::rl::group_advantages(&[1.0, 2.0, 3.0]).unwrap();
/// assert!((a[2] - 1.224744871391589).abs() < 1e-12);
/// assert_eq!(caprl::rl::group_advantages(&[5.0; 4]).unwrap(), vec![0.0; 4]);
/// ```
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Config(format!(
            "advantages need a group of at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
    let std = var.sqrt();
    if !(std >= ADVANTAGE_STD_FLOOR) {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Unbiased KL estimate `rho - ln(rho) - 1` with `rho = pi_ref / pi_theta`,
/// computed from log-probabilities. Never negative.
pub fn kl_estimator(logp_theta: f64, logp_ref: f64) -> f64 {
    let d = (logp_ref - logp_theta).min(KL_LOG_RATIO_CAP);
    (d.exp_m1() - d).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyRole {
    Current,
    Old,
    Reference,
}

/// A frozen copy of the parameters in one of the three roles.
#[derive(Clone, Debug)]
pub struct PolicySnapshot {
    pub role: PolicyRole,
    pub params: ModelParams,
}

impl PolicySnapshot {
    pub fn of(role: PolicyRole, params: &ModelParams) -> Self {
        PolicySnapshot {
            role,
            params: params.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupMember {
    pub seq: TokenSeq,
    /// Per-token log-probabilities under the sampling policy.
    pub old_logprobs: Vec<f64>,
    /// Per-token log-probabilities under the reference policy.
    pub ref_logprobs: Vec<f64>,
    pub reward: f64,
    pub advantage: f64,
}

/// `G` captions sampled for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGroup {
    pub image: usize,
    pub members: Vec<GroupMember>,
}

impl SampleGroup {
    /// Recomputes every member's advantage from the group's rewards.
    pub fn assign_advantages(&mut self) -> Result<()> {
        let rewards: Vec<f64> = self.members.iter().map(|m| m.reward).collect();
        for (m, a) in self.members.iter_mut().zip(group_advantages(&rewards)?) {
            m.advantage = a;
        }
        Ok(())
    }
}

/// Per-token log-probabilities of `seq` without recording gradients.
pub fn token_logprob_values(
    model: &Captioner,
    params: &ModelParams,
    seq: &TokenSeq,
    features: &FeatureGrid,
) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    Ok(model.token_logprobs(&p, &seq.ids, features)?.value().into_data())
}

/// Samples `group_size` captions under `old`, scores them and fills in
/// advantages. Member `i` draws from the stream `(seed, rollout, image, i)`.
#[allow(clippy::too_many_arguments)]
pub fn rollout_group(
    model: &Captioner,
    old: &ModelParams,
    reference: &ModelParams,
    item: &RlItem<'_>,
    reward: &dyn RewardFn,
    cfg: &GrpoConfig,
    decode: &DecodeConfig,
    seed_root: u64,
    rollout: u64,
) -> Result<SampleGroup> {
    let policy = CaptionPolicy {
        model,
        params: old,
        features: item.features,
    };
    let mut members = Vec::with_capacity(cfg.group_size);
    for i in 0..cfg.group_size {
        let mut rng = seed::stream(seed_root, &[rollout, item.image as u64, i as u64]);
        let seq = sample_decode(&policy, decode, &mut rng)?.seq;
        let r = reward.reward(item.image, &seq).map_err(|e| {
            Error::Data(format!("reward failed for image {}: {e}", item.image))
        })?;
        members.push(GroupMember {
            old_logprobs: token_logprob_values(model, old, &seq, item.features)?,
            ref_logprobs: token_logprob_values(model, reference, &seq, item.features)?,
            seq,
            reward: r,
            advantage: 0.0,
        });
    }
    let mut group = SampleGroup {
        image: item.image,
        members,
    };
    group.assign_advantages()?;
    Ok(group)
}

/// The GRPO loss of one group plus diagnostics read off its forward values.
pub struct GrpoLoss<'t> {
    pub loss: Var<'t>,
    /// Mean KL estimate across members (token-averaged in token mode).
    pub mean_kl: f64,
    /// Ratio terms whose clipped branch was selected with zero gradient.
    pub clipped: usize,
    /// Total ratio terms (tokens in token mode, members in sequence mode).
    pub terms: usize,
}

/// `-(1/G) * sum_i [min(rho A, clip(rho, 1-eps, 1+eps) A) - beta * KL]`,
/// differentiable with respect to the parameters bound in `p` only.
pub fn grpo_loss<'t>(
    model: &Captioner,
    p: &BoundParams<'t>,
    group: &SampleGroup,
    features: &FeatureGrid,
    cfg: &GrpoConfig,
) -> Result<GrpoLoss<'t>> {
    if group.members.is_empty() {
        return Err(Error::Data(format!("image {}: empty sample group", group.image)));
    }
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let g = group.members.len() as f64;
    let mut total: Option<Var<'t>> = None;
    let mut kl_sum = 0.0;
    let mut clipped = 0;
    let mut terms = 0;
    for m in &group.members {
        let n = m.seq.generated_len();
        if m.old_logprobs.len() != n || m.ref_logprobs.len() != n {
            return Err(Error::shape(
                "grpo_loss",
                format!(
                    "{} tokens but {} old / {} ref log-probs",
                    n,
                    m.old_logprobs.len(),
                    m.ref_logprobs.len()
                ),
            ));
        }
        let tape = p_tape(p)?;
        let lp = model.token_logprobs(p, &m.seq.ids, features)?;
        let (lp, old, reference) = match cfg.ratio_agg {
            RatioAgg::TokenMean => (
                lp,
                tape.constant(Tensor::vector(m.old_logprobs.clone())),
                tape.constant(Tensor::vector(m.ref_logprobs.clone())),
            ),
            RatioAgg::Sequence => (
                lp.sum()?,
                tape.constant(Tensor::scalar(m.old_logprobs.iter().sum())),
                tape.constant(Tensor::scalar(m.ref_logprobs.iter().sum())),
            ),
        };
        let ratio = lp.sub(old)?.exp()?;
        let unclipped = ratio.scale(m.advantage)?;
        let clip = ratio.clamp(lo, hi)?.scale(m.advantage)?;
        let surrogate = unclipped.minimum(clip)?;

        let d = reference.sub(lp)?.clamp(f64::NEG_INFINITY, KL_LOG_RATIO_CAP)?;
        let kl = d.exp()?.sub(d)?.add_scalar(-1.0)?;
        let objective = surrogate.sub(kl.scale(cfg.kl_beta)?)?.mean()?;

        let (u, c) = (unclipped.value(), clip.value());
        for (uv, cv) in u.data().iter().zip(c.data()) {
            terms += 1;
            if cv < uv {
                clipped += 1;
            }
        }
        kl_sum += kl.value().data().iter().sum::<f64>() / kl.value().numel() as f64;

        let term = objective.scale(-1.0 / g)?;
        total = Some(match total {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    Ok(GrpoLoss {
        loss: total.expect("non-empty group"),
        mean_kl: kl_sum / g,
        clipped,
        terms,
    })
}

fn p_tape<'t>(p: &BoundParams<'t>) -> Result<&'t Tape> {
    Ok(p.get("tok_emb")?.tape())
}

/// Trained policy, sampling snapshot, frozen reference and optimizer.
#[derive(Clone, Debug)]
pub struct GrpoState {
    pub policy: ModelParams,
    pub old: PolicySnapshot,
    pub reference: PolicySnapshot,
    pub opt: AdamState,
    /// Optimizer steps taken so far.
    pub steps: u64,
    /// Sampling rounds so far; seeds the rollout streams.
    pub rollouts: u64,
}

impl GrpoState {
    /// Starts from `init`, which also becomes the sampling and reference
    /// policy.
    pub fn new(init: ModelParams) -> Self {
        GrpoState {
            old: PolicySnapshot::of(PolicyRole::Old, &init),
            reference: PolicySnapshot::of(PolicyRole::Reference, &init),
            policy: init,
            opt: AdamState::default(),
            steps: 0,
            rollouts: 0,
        }
    }

    pub fn sync_old(&mut self) {
        self.old = PolicySnapshot::of(PolicyRole::Old, &self.policy);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GrpoStats {
    pub loss: f64,
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    pub mean_kl: f64,
    pub clip_frac: f64,
    /// Optimizer steps taken by this call.
    pub updates: usize,
}

/// Samples a group per image under the old policy and applies GRPO
/// update(s) to the trained policy.
///
/// In [`SyncMode::Period`] the old policy is refreshed before sampling
/// whenever `state.steps` is a multiple of `update_steps`, and one optimizer
/// step is taken. In [`SyncMode::InnerEpochs`] it is refreshed every call and
/// `update_steps` optimizer steps are taken on the same samples.
#[allow(clippy::too_many_arguments)]
pub fn grpo_step(
    model: &Captioner,
    state: &mut GrpoState,
    batch: &[RlItem<'_>],
    reward: &dyn RewardFn,
    cfg: &GrpoConfig,
    decode: &DecodeConfig,
    seed_root: u64,
    lr: f64,
) -> Result<GrpoStats> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Data("GRPO step on an empty batch".into()));
    }
    let inner = match cfg.sync {
        SyncMode::Period => {
            if state.steps % cfg.update_steps as u64 == 0 {
                state.sync_old();
            }
            1
        }
        SyncMode::InnerEpochs => {
            state.sync_old();
            cfg.update_steps
        }
    };
    let groups = batch
        .iter()
        .map(|item| {
            rollout_group(
                model,
                &state.old.params,
                &state.reference.params,
                item,
                reward,
                cfg,
                decode,
                seed_root,
                state.rollouts,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    state.rollouts += 1;

    let members = groups.iter().map(|g| g.members.len()).sum::<usize>() as f64;
    let mut stats = GrpoStats {
        mean_reward: groups.iter().flat_map(|g| &g.members).map(|m| m.reward).sum::<f64>() / members,
        mean_abs_advantage: groups
            .iter()
            .flat_map(|g| &g.members)
            .map(|m| m.advantage.abs())
            .sum::<f64>()
            / members,
        ..GrpoStats::default()
    };
    let b = batch.len() as f64;
    for _ in 0..inner {
        let tape = Tape::new();
        let p = state.policy.bind(&tape, true);
        let mut total: Option<Var<'_>> = None;
        let (mut kl, mut clipped, mut terms) = (0.0, 0, 0);
        for (group, item) in groups.iter().zip(batch) {
            let gl = grpo_loss(model, &p, group, item.features, cfg)?;
            kl += gl.mean_kl / b;
            clipped += gl.clipped;
            terms += gl.terms;
            let term = gl.loss.scale(1.0 / b)?;
            total = Some(match total {
                Some(acc) => acc.add(term)?,
                None => term,
            });
        }
        let loss = total.expect("non-empty batch");
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("GRPO loss is {value}")));
        }
        let mut grads = tape.backward(loss)?;
        let grads = p.gradients(&mut grads);
        state.opt.update(&mut state.policy, &grads, lr)?;
        state.steps += 1;
        stats.loss += value / inner as f64;
        stats.mean_kl += kl / inner as f64;
        stats.clip_frac += clipped as f64 / terms.max(1) as f64 / inner as f64;
        stats.updates += 1;
    }
    Ok(stats)
}
