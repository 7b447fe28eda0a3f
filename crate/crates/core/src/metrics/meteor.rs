use std::collections::BTreeMap;

/// METEOR restricted to exact unigram matches.
///
/// The k-th occurrence of a word in the candidate aligns with its k-th
/// occurrence in the reference. `F_mean = 10PR / (R + 9P)` and the
/// fragmentation penalty is `0.5 * (chunks / matches)^3`, where a chunk is a
/// maximal run of matches adjacent in both sentences. The best reference
/// wins.
pub fn meteor_lite<T: Ord>(candidate: &[T], references: &[Vec<T>]) -> f64 {
    references
        .iter()
        .map(|r| meteor_pair(candidate, r))
        .fold(0.0, f64::max)
}

fn meteor_pair<T: Ord>(candidate: &[T], reference: &[T]) -> f64 {
    let mut positions: BTreeMap<&T, Vec<usize>> = BTreeMap::new();
    for (j, w) in reference.iter().enumerate() {
        positions.entry(w).or_default().push(j);
    }
    let mut used: BTreeMap<&T, usize> = BTreeMap::new();
    // aligned reference position per candidate position
    let mut aligned: Vec<Option<usize>> = Vec::with_capacity(candidate.len());
    for w in candidate {
        let k = used.entry(w).or_insert(0);
        let slot = positions.get(w).and_then(|p| p.get(*k)).copied();
        if slot.is_some() {
            *k += 1;
        }
        aligned.push(slot);
    }
    let matches = aligned.iter().flatten().count();
    if matches == 0 {
        return 0.0;
    }
    let mut chunks = 0;
    for i in 0..aligned.len() {
        if let Some(j) = aligned[i] {
            let continues = i > 0 && j > 0 && aligned[i - 1] == Some(j - 1);
            if !continues {
                chunks += 1;
            }
        }
    }
    let m = matches as f64;
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}

/// Mean per-image METEOR.
pub fn corpus_meteor<T: Ord>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>]) -> f64 {
    if candidates.is_empty() {
        return 0.0;
    }
    candidates
        .iter()
        .zip(references)
        .map(|(c, r)| meteor_lite(c, r))
        .sum::<f64>()
        / candidates.len() as f64
}
