//! Training objectives: teacher-forced cross-entropy, self-critical sequence
//! training and group relative policy optimization.

mod ce;
mod grpo;
mod reward;
mod scst;

pub use ce::{ce_loss, ce_step, CeExample};
pub use grpo::{
    group_advantages, grpo_loss, grpo_step, kl_estimator, rollout_group, token_logprob_values,
    GroupMember, GrpoConfig, GrpoLoss, GrpoState, GrpoStats, PolicyRole, PolicySnapshot, RatioAgg,
    SampleGroup, SyncMode, ADVANTAGE_STD_FLOOR, KL_LOG_RATIO_CAP,
};
pub use reward::{CiderReward, RewardFn};
pub use scst::{scst_loss, scst_rollouts, scst_step, ScstConfig, ScstRollout, ScstStats};

use crate::captioner::FeatureGrid;

/// An image as seen by the RL stages: its index in the reward's reference
/// corpus and its features.
#[derive(Clone, Copy, Debug)]
pub struct RlItem<'a> {
    pub image: usize,
    pub features: &'a FeatureGrid,
}
