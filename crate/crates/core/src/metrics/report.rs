use serde::{Deserialize, Serialize};

use super::bleu::bleu;
use super::cider::{CiderScorer, CiderVariant};
use super::meteor::corpus_meteor;
use super::rouge::corpus_rouge_l;
use crate::error::{Error, Result};

/// Corpus metrics in reporting scale: BLEU, METEOR and ROUGE-L in
/// `[0, 100]`, CIDEr as 100x the raw `0..=10` score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "BLEU-1,BLEU-2,BLEU-3,BLEU-4,METEOR,ROUGE-L,CIDEr";

    pub fn values(&self) -> [f64; 7] {
        [
            self.bleu1,
            self.bleu2,
            self.bleu3,
            self.bleu4,
            self.meteor,
            self.rouge_l,
            self.cider,
        ]
    }

    /// One CSV row in [`Self::CSV_HEADER`] column order, four decimals.
    pub fn csv_row(&self) -> String {
        self.values()
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Scores a candidate corpus against per-image reference sets. Document
/// frequencies for CIDEr come from the same references.
pub fn score_corpus<T: Ord + Clone>(
    candidates: &[Vec<T>],
    references: &[Vec<Vec<T>>],
    variant: CiderVariant,
) -> Result<MetricReport> {
    if candidates.len() != references.len() {
        return Err(Error::Data(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Data("nothing to score".into()));
    }
    let b = bleu(candidates, references, 4)?;
    let cider = CiderScorer::new(references, variant)?.corpus_score(candidates)?;
    Ok(MetricReport {
        bleu1: 100.0 * b[0],
        bleu2: 100.0 * b[1],
        bleu3: 100.0 * b[2],
        bleu4: 100.0 * b[3],
        meteor: 100.0 * corpus_meteor(candidates, references),
        rouge_l: 100.0 * corpus_rouge_l(candidates, references),
        cider: 100.0 * cider,
    })
}
