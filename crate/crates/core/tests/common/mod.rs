//! Brute-force oracles and random instance generators shared by the
//! integration tests. Nothing here calls into the library's algorithms.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;

/// Sum over paths of probabilities in the log domain, written out directly.
pub fn log_sum(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Merges repeats, then drops blanks.
pub fn ctc_collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &u in path {
        if Some(u) != prev && u != blank {
            out.push(u);
        }
        prev = Some(u);
    }
    out
}

/// `P(labels | x)` by summing every length-T path over all units.
pub fn brute_force_ctc(probs: &[Vec<f64>], labels: &[usize], blank: usize) -> f64 {
    let t_len = probs.len();
    let u_len = probs[0].len();
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    loop {
        if ctc_collapse(&path, blank) == labels {
            total += path.iter().enumerate().map(|(t, &u)| probs[t][u]).product::<f64>();
        }
        let mut i = 0;
        loop {
            if i == t_len {
                return total;
            }
            path[i] += 1;
            if path[i] < u_len {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Textbook CTC forward recursion over the blank-extended label sequence.
pub fn ctc_alpha_recursion(probs: &[Vec<f64>], labels: &[usize], blank: usize) -> f64 {
    let mut ext = vec![blank];
    for &l in labels {
        ext.push(l);
        ext.push(blank);
    }
    let s_len = ext.len();
    let mut alpha = vec![0.0; s_len];
    alpha[0] = probs[0][blank];
    if s_len > 1 {
        alpha[1] = probs[0][ext[1]];
    }
    for row in probs.iter().skip(1) {
        let mut next = vec![0.0; s_len];
        for s in 0..s_len {
            let mut a = alpha[s];
            if s >= 1 {
                a += alpha[s - 1];
            }
            if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                a += alpha[s - 2];
            }
            next[s] = a * row[ext[s]];
        }
        alpha = next;
    }
    let mut p = alpha[s_len - 1];
    if s_len > 1 {
        p += alpha[s_len - 2];
    }
    p
}

/// Levenshtein distance by memoised recursion.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let sub = go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]);
        let del = go(a, b, i + 1, j, memo) + 1;
        let ins = go(a, b, i, j + 1, memo) + 1;
        let v = sub.min(del).min(ins);
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Random stochastic rows, bounded away from zero.
pub fn random_posteriors<R: Rng>(rng: &mut R, frames: usize, units: usize) -> Vec<Vec<f64>> {
    (0..frames)
        .map(|_| {
            let raw: Vec<f64> = (0..units).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect()
}

/// All index tuples of a Cartesian product with the given radices.
pub fn cartesian(radices: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &r in radices {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..r).map(move |i| {
                    let mut q = p.clone();
                    q.push(i);
                    q
                })
            })
            .collect();
    }
    out
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}
