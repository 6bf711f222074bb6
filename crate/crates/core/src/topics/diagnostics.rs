use std::collections::HashSet;

use super::LdaModel;
use crate::error::{Error, Result};

/// `exp(-Σ log p(w|d) / N)` with `θ` from fold-in and smoothed `φ`.
/// Out-of-vocabulary tokens are ignored.
pub fn perplexity(model: &LdaModel, docs: &[Vec<String>]) -> Result<f64> {
    let mut total = 0usize;
    let mut ll = 0.0;
    for doc in docs {
        let ids = model.vocab().encode(doc);
        if ids.is_empty() {
            continue;
        }
        let theta = model.fold_in_ids(&ids);
        for &w in &ids {
            let p: f64 = theta
                .iter()
                .enumerate()
                .map(|(k, t)| t * model.phi(k, w))
                .sum();
            ll += p.ln();
        }
        total += ids.len();
    }
    if total == 0 {
        return Err(Error::invalid("perplexity needs at least one in-vocabulary token"));
    }
    Ok((-ll / total as f64).exp())
}

/// UMass coherence averaged over topics. For each topic's `top_n` words
/// `w_1..w_n` (by count) it sums `log((D(w_i, w_j) + 1) / D(w_j))` over
/// `i < j`, with `D` counting documents. Pairs whose `D(w_j)` is zero are
/// skipped.
pub fn umass_coherence(model: &LdaModel, docs: &[Vec<String>], top_n: usize) -> Result<f64> {
    if top_n < 2 {
        return Err(Error::invalid("coherence needs top_n >= 2"));
    }
    let doc_sets: Vec<HashSet<usize>> = docs
        .iter()
        .map(|d| model.vocab().encode(d).into_iter().collect())
        .collect();
    let df = |w: usize| doc_sets.iter().filter(|s| s.contains(&w)).count() as f64;
    let co_df = |a: usize, b: usize| {
        doc_sets
            .iter()
            .filter(|s| s.contains(&a) && s.contains(&b))
            .count() as f64
    };
    let mut sum = 0.0;
    for k in 0..model.topics() {
        let top = model.top_words(k, top_n);
        let mut score = 0.0;
        for j in 1..top.len() {
            let dj = df(top[j]);
            if dj == 0.0 {
                continue;
            }
            for i in 0..j {
                score += ((co_df(top[i], top[j]) + 1.0) / dj).ln();
            }
        }
        sum += score;
    }
    Ok(sum / model.topics() as f64)
}
