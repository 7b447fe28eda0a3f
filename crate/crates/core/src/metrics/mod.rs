//! Caption metrics: BLEU, METEOR (exact-match), ROUGE-L/ROUGE-N and CIDEr.
//!
//! All functions are generic over the token type, so they run on word
//! strings for reporting and on vocabulary ids inside the RL reward.

mod bleu;
mod cider;
mod meteor;
mod ngram;
mod report;
mod rouge;
mod tokenize;

pub use bleu::bleu;
pub use cider::{
    cider, CiderScorer, CiderVariant, CorpusStats, CIDER_D_SIGMA, CIDER_MAX_N, CIDER_SCALE,
};
pub use meteor::{corpus_meteor, meteor_lite};
pub use ngram::{lcs_len, ngrams, NGramMultiset};
pub use report::{score_corpus, MetricReport};
pub use rouge::{corpus_rouge_l, rouge_l, rouge_n, ROUGE_L_BETA};
pub use tokenize::tokenize;
