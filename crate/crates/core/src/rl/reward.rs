use crate::captioner::TokenSeq;
use crate::error::Result;
use crate::metrics::{CiderScorer, CiderVariant};

/// Sequence-level reward for a caption of a given image.
pub trait RewardFn {
    /// `image` indexes the reward's own reference corpus.
    fn reward(&self, image: usize, caption: &TokenSeq) -> Result<f64>;
}

impl<F> RewardFn for F
where
    F: Fn(usize, &TokenSeq) -> Result<f64>,
{
    fn reward(&self, image: usize, caption: &TokenSeq) -> Result<f64> {
        self(image, caption)
    }
}

/// Per-image CIDEr on the raw `0..=10` scale, computed over vocabulary ids.
#[derive(Clone, Debug)]
pub struct CiderReward {
    scorer: CiderScorer<usize>,
}

impl CiderReward {
    /// `references[i]` holds the tokenized reference captions of image `i`,
    /// without BOS/EOS.
    pub fn new(references: &[Vec<Vec<usize>>], variant: CiderVariant) -> Result<Self> {
        Ok(CiderReward {
            scorer: CiderScorer::new(references, variant)?,
        })
    }

    pub fn scorer(&self) -> &CiderScorer<usize> {
        &self.scorer
    }
}

impl RewardFn for CiderReward {
    fn reward(&self, image: usize, caption: &TokenSeq) -> Result<f64> {
        self.scorer.score(image, &caption.words())
    }
}
