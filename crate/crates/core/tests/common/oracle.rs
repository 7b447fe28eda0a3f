// Deliberately naive reimplementations: linear scans over windows, full
// dynamic-programming tables, no shared helpers with the library.

type Tok = usize;

fn windows(s: &[Tok], n: usize) -> Vec<Vec<Tok>> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
}

fn count(list: &[Vec<Tok>], g: &[Tok]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<Tok>]) -> Vec<Vec<Tok>> {
    let mut out: Vec<Vec<Tok>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

/// Corpus BLEU-1..=4, no smoothing, closest reference length (shorter on
/// ties).
pub fn bleu(cands: &[Vec<Tok>], refs: &[Vec<Vec<Tok>>]) -> [f64; 4] {
    let mut hit = [0usize; 4];
    let mut tot = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, rs) in cands.iter().zip(refs) {
        c_len += c.len();
        let mut best = usize::MAX;
        let mut best_diff = usize::MAX;
        for r in rs {
            let d = (r.len() as i64 - c.len() as i64).unsigned_abs() as usize;
            if d < best_diff || (d == best_diff && r.len() < best) {
                best = r.len();
                best_diff = d;
            }
        }
        r_len += best;
        for n in 1..=4 {
            let cw = windows(c, n);
            for g in distinct(&cw) {
                let mut max_ref = 0;
                for r in rs {
                    max_ref = max_ref.max(count(&windows(r, n), &g));
                }
                hit[n - 1] += count(&cw, &g).min(max_ref);
            }
            tot[n - 1] += cw.len();
        }
    }
    let mut out = [0.0; 4];
    if c_len == 0 {
        return out;
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    for n in 1..=4 {
        let mut prod = 1.0f64;
        let mut ok = true;
        for k in 0..n {
            if hit[k] == 0 {
                ok = false;
            } else {
                prod *= hit[k] as f64 / tot[k] as f64;
            }
        }
        out[n - 1] = if ok { bp * prod.powf(1.0 / n as f64) } else { 0.0 };
    }
    out
}

fn lcs(a: &[Tok], b: &[Tok]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            t[i][j] = if a[i] == b[j] {
                1 + t[i + 1][j + 1]
            } else {
                t[i + 1][j].max(t[i][j + 1])
            };
        }
    }
    t[0][0]
}

/// LCS F-measure with recall weight beta = 1.2, best reference.
pub fn rouge_l(c: &[Tok], refs: &[Vec<Tok>]) -> f64 {
    let beta: f64 = 1.2;
    let mut best = 0.0f64;
    for r in refs {
        let l = lcs(c, r) as f64;
        if l == 0.0 || c.is_empty() {
            continue;
        }
        let p = l / c.len() as f64;
        let rec = l / r.len() as f64;
        let f = (1.0 + beta.powi(2)) * p * rec / (rec + beta.powi(2) * p);
        best = best.max(f);
    }
    best
}

/// Exact-match METEOR: the k-th occurrence of a word in the candidate pairs
/// with its k-th occurrence in the reference.
pub fn meteor(c: &[Tok], refs: &[Vec<Tok>]) -> f64 {
    let mut best = 0.0f64;
    for r in refs {
        let mut align: Vec<Option<usize>> = Vec::new();
        for i in 0..c.len() {
            let k = c[..i].iter().filter(|&&w| w == c[i]).count();
            let pos: Vec<usize> = (0..r.len()).filter(|&j| r[j] == c[i]).collect();
            align.push(pos.get(k).copied());
        }
        let m = align.iter().filter(|a| a.is_some()).count();
        if m == 0 {
            continue;
        }
        let mut chunks = 0;
        for i in 0..align.len() {
            if let Some(j) = align[i] {
                let glued = i > 0 && j > 0 && align[i - 1] == Some(j - 1);
                if !glued {
                    chunks += 1;
                }
            }
        }
        let p = m as f64 / c.len() as f64;
        let rec = m as f64 / r.len() as f64;
        let f = p * rec / (0.9 * p + 0.1 * rec);
        let frag = chunks as f64 / m as f64;
        best = best.max(f * (1.0 - 0.5 * frag * frag * frag));
    }
    best
}

/// CIDEr on the 0..=10 scale. `clipped` selects the CIDEr-D form.
pub fn cider(cand: &[Tok], image: usize, corpus: &[Vec<Vec<Tok>>], clipped: bool) -> f64 {
    let m = corpus.len() as f64;
    let idf = |g: &[Tok]| {
        let df = corpus
            .iter()
            .filter(|set| set.iter().any(|r| count(&windows(r, g.len()), g) > 0))
            .count();
        (m / df.max(1) as f64).ln()
    };
    let vector = |s: &[Tok], n: usize| -> Vec<(Vec<Tok>, f64)> {
        let w = windows(s, n);
        distinct(&w)
            .into_iter()
            .map(|g| {
                let c = count(&w, &g) as f64;
                let tf = if clipped { c } else { c / w.len() as f64 };
                let x = tf * idf(&g);
                (g, x)
            })
            .collect()
    };
    let norm = |v: &[(Vec<Tok>, f64)]| v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    let refs = &corpus[image];
    let mut total = 0.0;
    for n in 1..=4 {
        let vc = vector(cand, n);
        let mut acc = 0.0;
        for r in refs {
            let vr = vector(r, n);
            let denom = norm(&vc) * norm(&vr);
            if denom == 0.0 {
                continue;
            }
            let mut dot = 0.0;
            for (g, x) in &vc {
                for (h, y) in &vr {
                    if g == h {
                        dot += if clipped { x.min(*y) * y } else { x * y };
                    }
                }
            }
            let mut s = dot / denom;
            if clipped {
                let d = cand.len() as f64 - r.len() as f64;
                s *= (-d * d / 72.0).exp();
            }
            acc += s;
        }
        total += acc / refs.len() as f64;
    }
    10.0 * total / 4.0
}

/// `KL(p || q)` for categorical distributions given as probabilities.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum()
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
