use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ngram::ngrams;
use crate::error::{Error, Result};

/// Highest n-gram order used by CIDEr.
pub const CIDER_MAX_N: usize = 4;
/// Scale applied to the averaged cosine similarity; an exact match scores 10.
pub const CIDER_SCALE: f64 = 10.0;
/// Length-penalty width of the CIDEr-D variant.
pub const CIDER_D_SIGMA: f64 = 6.0;

/// Document frequencies over reference sets.
///
/// An n-gram's document frequency is the number of images whose reference
/// set contains it at least once.
#[derive(Clone, Debug)]
pub struct CorpusStats<T: Ord> {
    df: BTreeMap<Vec<T>, usize>,
    num_images: usize,
}

impl<T: Ord + Clone> CorpusStats<T> {
    pub fn build(reference_sets: &[Vec<Vec<T>>]) -> Result<Self> {
        if reference_sets.is_empty() {
            return Err(Error::Data("CIDEr needs at least one reference set".into()));
        }
        let mut df = BTreeMap::new();
        for refs in reference_sets {
            let mut present = BTreeSet::new();
            for r in refs {
                for n in 1..=CIDER_MAX_N {
                    present.extend(ngrams(r, n).into_keys());
                }
            }
            for g in present {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        Ok(CorpusStats {
            df,
            num_images: reference_sets.len(),
        })
    }

    pub fn num_images(&self) -> usize {
        self.num_images
    }

    pub fn df(&self, ngram: &[T]) -> usize {
        self.df.get(ngram).copied().unwrap_or(0)
    }

    /// `ln(m / df)` with `df` floored at 1.
    pub fn idf(&self, ngram: &[T]) -> f64 {
        (self.num_images as f64 / self.df(ngram).max(1) as f64).ln()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiderVariant {
    /// TF-IDF cosine similarity, term frequency normalized by n-gram count.
    #[default]
    Plain,
    /// Clipped counts and a Gaussian length penalty (sigma = 6), matching the
    /// public COCO leaderboard metric.
    D,
}

/// TF-IDF weights of one sentence for every order.
#[derive(Clone, Debug)]
struct Weighted<T: Ord> {
    orders: Vec<BTreeMap<Vec<T>, f64>>,
    norms: Vec<f64>,
    len: usize,
}

fn weigh<T: Ord + Clone>(tokens: &[T], stats: &CorpusStats<T>, variant: CiderVariant) -> Weighted<T> {
    let mut orders = Vec::with_capacity(CIDER_MAX_N);
    let mut norms = Vec::with_capacity(CIDER_MAX_N);
    for n in 1..=CIDER_MAX_N {
        let counts = ngrams(tokens, n);
        let total: usize = counts.values().sum();
        let vec: BTreeMap<Vec<T>, f64> = counts
            .into_iter()
            .map(|(g, c)| {
                let tf = match variant {
                    CiderVariant::Plain => c as f64 / total as f64,
                    CiderVariant::D => c as f64,
                };
                let w = tf * stats.idf(&g);
                (g, w)
            })
            .collect();
        norms.push(vec.values().map(|v| v * v).sum::<f64>().sqrt());
        orders.push(vec);
    }
    Weighted {
        orders,
        norms,
        len: tokens.len(),
    }
}

fn similarity<T: Ord>(cand: &Weighted<T>, reference: &Weighted<T>, n: usize, variant: CiderVariant) -> f64 {
    let (c, r) = (&cand.orders[n], &reference.orders[n]);
    let denom = cand.norms[n] * reference.norms[n];
    if denom == 0.0 {
        return 0.0;
    }
    let dot: f64 = c
        .iter()
        .filter_map(|(g, &wc)| {
            r.get(g).map(|&wr| match variant {
                CiderVariant::Plain => wc * wr,
                CiderVariant::D => wc.min(wr) * wr,
            })
        })
        .sum();
    let sim = dot / denom;
    match variant {
        CiderVariant::Plain => sim,
        CiderVariant::D => {
            let delta = cand.len as f64 - reference.len as f64;
            sim * (-(delta * delta) / (2.0 * CIDER_D_SIGMA * CIDER_D_SIGMA)).exp()
        }
    }
}

fn combine<T: Ord>(cand: &Weighted<T>, refs: &[Weighted<T>], variant: CiderVariant) -> f64 {
    if refs.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for n in 0..CIDER_MAX_N {
        let mean = refs
            .iter()
            .map(|r| similarity(cand, r, n, variant))
            .sum::<f64>()
            / refs.len() as f64;
        total += mean;
    }
    CIDER_SCALE * total / CIDER_MAX_N as f64
}

/// CIDEr of one candidate against its references, on the 0..=10 scale.
pub fn cider<T: Ord + Clone>(
    candidate: &[T],
    references: &[Vec<T>],
    stats: &CorpusStats<T>,
    variant: CiderVariant,
) -> f64 {
    let cand = weigh(candidate, stats, variant);
    let refs: Vec<_> = references.iter().map(|r| weigh(r, stats, variant)).collect();
    combine(&cand, &refs, variant)
}

/// CIDEr against a fixed reference corpus, with reference vectors computed
/// once. This is what the RL reward calls in its inner loop.
#[derive(Clone, Debug)]
pub struct CiderScorer<T: Ord> {
    stats: CorpusStats<T>,
    refs: Vec<Vec<Weighted<T>>>,
    variant: CiderVariant,
}

impl<T: Ord + Clone> CiderScorer<T> {
    pub fn new(reference_sets: &[Vec<Vec<T>>], variant: CiderVariant) -> Result<Self> {
        let stats = CorpusStats::build(reference_sets)?;
        let refs = reference_sets
            .iter()
            .map(|set| set.iter().map(|r| weigh(r, &stats, variant)).collect())
            .collect();
        Ok(CiderScorer {
            stats,
            refs,
            variant,
        })
    }

    pub fn stats(&self) -> &CorpusStats<T> {
        &self.stats
    }

    pub fn num_images(&self) -> usize {
        self.refs.len()
    }

    /// Score of `candidate` for the image at `index` in the reference corpus.
    pub fn score(&self, index: usize, candidate: &[T]) -> Result<f64> {
        let refs = self.refs.get(index).ok_or_else(|| {
            Error::Data(format!(
                "image index {index} outside reference corpus of {}",
                self.refs.len()
            ))
        })?;
        let cand = weigh(candidate, &self.stats, self.variant);
        Ok(combine(&cand, refs, self.variant))
    }

    /// Mean score over a corpus of candidates aligned with the references.
    pub fn corpus_score(&self, candidates: &[Vec<T>]) -> Result<f64> {
        if candidates.len() != self.refs.len() {
            return Err(Error::Data(format!(
                "{} candidates for {} reference sets",
                candidates.len(),
                self.refs.len()
            )));
        }
        let mut total = 0.0;
        for (i, c) in candidates.iter().enumerate() {
            total += self.score(i, c)?;
        }
        Ok(total / candidates.len().max(1) as f64)
    }
}
