use std::collections::BTreeMap;

/// Count of each n-gram of one order in a sentence.
pub type NGramMultiset<T> = BTreeMap<Vec<T>, usize>;

/// All n-grams of order `n` with their counts.
pub fn ngrams<T: Ord + Clone>(tokens: &[T], n: usize) -> NGramMultiset<T> {
    let mut out = NGramMultiset::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.to_vec()).or_insert(0) += 1;
    }
    out
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
