use super::ngram::{lcs_len, ngrams};

/// Recall weight of the ROUGE-L F-measure, as used by the COCO caption
/// evaluation toolkit.
pub const ROUGE_L_BETA: f64 = 1.2;

/// ROUGE-L of one candidate: LCS-based F-measure, maximized over references.
pub fn rouge_l<T: PartialEq>(candidate: &[T], references: &[Vec<T>]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    references
        .iter()
        .map(|r| rouge_l_pair(candidate, r))
        .fold(0.0, f64::max)
}

fn rouge_l_pair<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_L_BETA * ROUGE_L_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// ROUGE-N recall: clipped n-gram overlap over the total reference n-gram
/// count, both summed across references.
pub fn rouge_n<T: Ord + Clone>(candidate: &[T], references: &[Vec<T>], n: usize) -> f64 {
    let cand = ngrams(candidate, n);
    let mut hit = 0usize;
    let mut total = 0usize;
    for r in references {
        for (g, &c) in &ngrams(r, n) {
            hit += c.min(cand.get(g).copied().unwrap_or(0));
            total += c;
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Mean per-image ROUGE-L.
pub fn corpus_rouge_l<T: PartialEq>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>]) -> f64 {
    if candidates.is_empty() {
        return 0.0;
    }
    candidates
        .iter()
        .zip(references)
        .map(|(c, r)| rouge_l(c, r))
        .sum::<f64>()
        / candidates.len() as f64
}
