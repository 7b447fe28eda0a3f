use crate::error::{Error, Result};
use crate::numcore::{Tensor, NEG_LARGE};

pub const PAD: usize = 0;
/// Start symbol prepended to every decoder input.
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

/// Region features for one image, `n_regions x feat_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    values: Tensor,
}

impl FeatureGrid {
    pub fn new(n_regions: usize, feat_dim: usize, values: Vec<f64>) -> Result<Self> {
        if n_regions == 0 || feat_dim == 0 {
            return Err(Error::Data("feature grid needs at least one region and one dim".into()));
        }
        let values = Tensor::matrix(n_regions, feat_dim, values)?;
        if !values.is_finite() {
            return Err(Error::Data("feature grid contains non-finite values".into()));
        }
        Ok(FeatureGrid { values })
    }

    pub fn n_regions(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn feat_dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }
}

/// Additive causal mask: zero where position `j <= i`, [`NEG_LARGE`]
/// elsewhere.
#[derive(Clone, Debug)]
pub struct CausalMask {
    matrix: Tensor,
}

impl CausalMask {
    pub fn new(size: usize) -> Self {
        let mut data = vec![0.0; size * size];
        for i in 0..size {
            for j in (i + 1)..size {
                data[i * size + j] = NEG_LARGE;
            }
        }
        CausalMask {
            matrix: Tensor::from_parts(vec![size, size], data),
        }
    }

    pub fn size(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    /// Whether query position `i` may attend to key position `j`.
    pub fn allows(&self, i: usize, j: usize) -> bool {
        j <= i
    }
}

/// A caption as vocabulary ids. Decoded captions start with [`BOS`] and,
/// unless truncated, end with [`EOS`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
}

impl TokenSeq {
    pub fn new(ids: Vec<usize>) -> Self {
        TokenSeq { ids }
    }

    /// `BOS word... EOS`.
    pub fn from_words(words: &[usize]) -> Self {
        let mut ids = Vec::with_capacity(words.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(words);
        ids.push(EOS);
        TokenSeq { ids }
    }

    /// Ids strictly between the leading BOS and the first EOS, with PAD
    /// dropped.
    pub fn words(&self) -> Vec<usize> {
        self.ids
            .iter()
            .skip_while(|&&t| t == BOS)
            .take_while(|&&t| t != EOS)
            .copied()
            .filter(|&t| t != PAD)
            .collect()
    }

    /// Number of predicted tokens (everything after BOS, EOS included).
    pub fn generated_len(&self) -> usize {
        self.ids.len().saturating_sub(1)
    }

    pub fn ends_with_eos(&self) -> bool {
        self.ids.last() == Some(&EOS)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}
