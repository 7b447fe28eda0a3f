use super::ngram::ngrams;
use crate::error::{Error, Result};

/// Corpus-level BLEU-1..=BLEU-`max_n`, each in `[0, 1]`.
///
/// Clipped n-gram matches and candidate n-gram totals are summed over the
/// corpus before taking precisions. The brevity penalty uses, per sentence,
/// the reference length closest to the candidate (shorter wins ties). No
/// smoothing: a zero precision at any order up to `n` makes BLEU-n zero.
pub fn bleu<T: Ord + Clone>(
    candidates: &[Vec<T>],
    references: &[Vec<Vec<T>>],
    max_n: usize,
) -> Result<Vec<f64>> {
    if candidates.len() != references.len() {
        return Err(Error::Data(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, refs) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += closest_ref_len(cand.len(), refs);
        for n in 1..=max_n {
            let counts = ngrams(cand, n);
            let ref_counts: Vec<_> = refs.iter().map(|r| ngrams(r, n)).collect();
            for (g, &c) in &counts {
                let max_ref = ref_counts
                    .iter()
                    .map(|rc| rc.get(g).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                matches[n - 1] += c.min(max_ref);
                totals[n - 1] += c;
            }
        }
    }
    if cand_len == 0 {
        log::warn!("BLEU over an empty candidate corpus; scoring 0");
        return Ok(vec![0.0; max_n]);
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    let mut out = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut dead = false;
    for n in 1..=max_n {
        if matches[n - 1] == 0 || totals[n - 1] == 0 {
            dead = true;
        } else {
            log_sum += (matches[n - 1] as f64 / totals[n - 1] as f64).ln();
        }
        out.push(if dead {
            0.0
        } else {
            bp * (log_sum / n as f64).exp()
        });
    }
    Ok(out)
}

fn closest_ref_len<T>(cand_len: usize, refs: &[Vec<T>]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(cand_len), l))
        .unwrap_or(0)
}
