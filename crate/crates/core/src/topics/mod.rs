//! Per-stance LDA topic models and the 3H-dimensional implicit topic
//! distribution of a text.

mod diagnostics;
mod gibbs;
mod io;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Stance, Vocabulary};
use crate::error::{Error, Result};

pub use diagnostics::{perplexity, umass_coherence};
pub use gibbs::GibbsSampler;
pub use io::{read_lda, top_words_json, write_lda};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    pub topics: usize,
    /// Doc–topic prior; `None` selects `50 / H`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub sweeps: usize,
    pub fold_in_sweeps: usize,
}

impl Default for LdaParams {
    fn default() -> Self {
        LdaParams {
            topics: 5,
            alpha: None,
            beta: 0.01,
            sweeps: 500,
            fold_in_sweeps: 50,
        }
    }
}

impl LdaParams {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics < 1 {
            return Err(Error::invalid("topic count must be at least 1"));
        }
        if self.sweeps < 1 {
            return Err(Error::invalid("at least one Gibbs sweep is required"));
        }
        let alpha = self.alpha();
        if !(alpha > 0.0 && alpha.is_finite()) || !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!(
                "Dirichlet priors must be positive (alpha = {alpha}, beta = {})",
                self.beta
            )));
        }
        Ok(())
    }
}

/// A trained topic model: topic–word counts plus everything fold-in needs.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    topics: usize,
    alpha: f64,
    beta: f64,
    /// Row-major `topics x |V|`.
    topic_word: Vec<u32>,
    topic_totals: Vec<u64>,
    vocab: Arc<Vocabulary>,
    trained_sweeps: usize,
    fold_in_sweeps: usize,
    seed: u64,
}

impl LdaModel {
    /// Assembles a model from explicit counts, recomputing topic totals.
    pub fn from_counts(
        vocab: Arc<Vocabulary>,
        counts: Vec<Vec<u32>>,
        alpha: f64,
        beta: f64,
        fold_in_sweeps: usize,
        seed: u64,
    ) -> Result<Self> {
        let topics = counts.len();
        if topics == 0 {
            return Err(Error::invalid("topic count must be at least 1"));
        }
        if counts.iter().any(|row| row.len() != vocab.len()) {
            return Err(Error::shape("LdaModel::from_counts", "count row length != |V|"));
        }
        if !alpha.is_finite() || alpha <= 0.0 || !beta.is_finite() || beta <= 0.0 {
            return Err(Error::invalid("Dirichlet priors must be positive"));
        }
        let topic_totals = counts.iter().map(|r| r.iter().map(|&c| c as u64).sum()).collect();
        Ok(LdaModel {
            topics,
            alpha,
            beta,
            topic_word: counts.into_iter().flatten().collect(),
            topic_totals,
            vocab,
            trained_sweeps: 0,
            fold_in_sweeps,
            seed,
        })
    }

    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn trained_sweeps(&self) -> usize {
        self.trained_sweeps
    }

    pub fn fold_in_sweeps(&self) -> usize {
        self.fold_in_sweeps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count(&self, topic: usize, word: usize) -> u32 {
        self.topic_word[topic * self.vocab.len() + word]
    }

    pub fn topic_counts(&self, topic: usize) -> &[u32] {
        let v = self.vocab.len();
        &self.topic_word[topic * v..(topic + 1) * v]
    }

    pub fn topic_totals(&self) -> &[u64] {
        &self.topic_totals
    }

    pub fn total_tokens(&self) -> u64 {
        self.topic_totals.iter().sum()
    }

    /// Smoothed `p(word | topic)`.
    pub fn phi(&self, topic: usize, word: usize) -> f64 {
        let v = self.vocab.len() as f64;
        (self.count(topic, word) as f64 + self.beta)
            / (self.topic_totals[topic] as f64 + v * self.beta)
    }

    /// Smoothed topic–word table, one row per topic.
    pub fn phi_table(&self) -> Vec<Vec<f64>> {
        (0..self.topics)
            .map(|k| (0..self.vocab.len()).map(|w| self.phi(k, w)).collect())
            .collect()
    }

    /// Word ids of a topic ordered by descending count (ties by id).
    pub fn top_words(&self, topic: usize, n: usize) -> Vec<usize> {
        let counts = self.topic_counts(topic);
        let mut ids: Vec<usize> = (0..counts.len()).collect();
        ids.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        ids.truncate(n);
        ids
    }

    /// Fold-in estimate of `θ` for an encoded document.
    pub fn fold_in_ids(&self, ids: &[usize]) -> Vec<f64> {
        let h = self.topics;
        let uniform = vec![1.0 / h as f64; h];
        if ids.is_empty() || self.total_tokens() == 0 {
            return uniform;
        }
        if h == 1 {
            return vec![1.0];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ doc_hash(ids));
        let mut z: Vec<usize> = ids.iter().map(|_| rng.random_range(0..h)).collect();
        let mut n_dk = vec![0u32; h];
        for &k in &z {
            n_dk[k] += 1;
        }
        let mut p = vec![0.0; h];
        for _ in 0..self.fold_in_sweeps {
            for (i, &w) in ids.iter().enumerate() {
                n_dk[z[i]] -= 1;
                let mut acc = 0.0;
                for (k, pk) in p.iter_mut().enumerate() {
                    acc += (n_dk[k] as f64 + self.alpha) * self.phi(k, w);
                    *pk = acc;
                }
                let u = rng.random::<f64>() * acc;
                let k = p.partition_point(|&c| c <= u).min(h - 1);
                z[i] = k;
                n_dk[k] += 1;
            }
        }
        let denom = ids.len() as f64 + h as f64 * self.alpha;
        n_dk.iter().map(|&n| (n as f64 + self.alpha) / denom).collect()
    }
}

/// FNV-1a over word ids; keys the per-document fold-in RNG so inference is
/// deterministic without shared mutable state.
fn doc_hash(ids: &[usize]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &id in ids {
        for b in (id as u64).to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

pub fn fit_lda(
    docs: &[Vec<String>],
    vocab: Arc<Vocabulary>,
    params: &LdaParams,
    seed: u64,
) -> Result<LdaModel> {
    let mut sampler = GibbsSampler::new(docs, vocab, params, seed)?;
    for _ in 0..params.sweeps {
        sampler.sweep();
    }
    Ok(sampler.into_model())
}

pub fn doc_topic_posterior(model: &LdaModel, tokens: &[String]) -> Vec<f64> {
    model.fold_in_ids(&model.vocab.encode(tokens))
}

/// Probability vector over the `3H` implicit topics, ordered favor, none,
/// against.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicDistribution(Vec<f64>);

impl TopicDistribution {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::invalid("topic distribution entries must be finite and >= 0"));
        }
        let s: f64 = values.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("topic distribution sums to {s}")));
        }
        Ok(TopicDistribution(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Favor, none and against models sharing topic count and vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModelTriple {
    pub favor: LdaModel,
    pub none: LdaModel,
    pub against: LdaModel,
}

impl TopicModelTriple {
    pub fn new(favor: LdaModel, none: LdaModel, against: LdaModel) -> Result<Self> {
        let same = |a: &LdaModel, b: &LdaModel| {
            a.topics == b.topics && (Arc::ptr_eq(&a.vocab, &b.vocab) || a.vocab == b.vocab)
        };
        if !same(&favor, &none) || !same(&favor, &against) {
            return Err(Error::invalid("triple members must share H and vocabulary"));
        }
        Ok(TopicModelTriple {
            favor,
            none,
            against,
        })
    }

    /// Fits one model per stance subset. Each subset gets its own seed
    /// derived from `seed`.
    pub fn fit(
        subsets: [&[Vec<String>]; 3],
        vocab: Arc<Vocabulary>,
        params: &LdaParams,
        seed: u64,
    ) -> Result<Self> {
        let fit = |i: usize| fit_lda(subsets[i], vocab.clone(), params, seed.wrapping_add(i as u64));
        TopicModelTriple::new(fit(0)?, fit(1)?, fit(2)?)
    }

    pub fn get(&self, stance: Stance) -> &LdaModel {
        match stance {
            Stance::Favor => &self.favor,
            Stance::None => &self.none,
            Stance::Against => &self.against,
        }
    }

    pub fn topics(&self) -> usize {
        self.favor.topics
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.favor.vocab
    }
}

pub fn dis_vector(triple: &TopicModelTriple, tokens: &[String]) -> TopicDistribution {
    let ids = triple.vocab().encode(tokens);
    let values = Stance::ALL
        .iter()
        .flat_map(|&s| triple.get(s).fold_in_ids(&ids))
        .map(|p| p / 3.0)
        .collect();
    TopicDistribution(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_token_single_topic() {
        let docs = vec![toks(&["a"])];
        let vocab = Arc::new(Vocabulary::from_docs(docs.iter()));
        let params = LdaParams {
            topics: 1,
            sweeps: 3,
            ..Default::default()
        };
        let m = fit_lda(&docs, vocab, &params, 0).unwrap();
        assert_eq!(m.topic_counts(0), [1]);
        assert_eq!(m.topic_totals(), [1]);
    }

    #[test]
    fn rejects_bad_params() {
        let vocab = Arc::new(Vocabulary::default());
        let bad_h = LdaParams {
            topics: 0,
            ..Default::default()
        };
        assert!(fit_lda(&[], vocab.clone(), &bad_h, 0).is_err());
        let bad_beta = LdaParams {
            beta: -0.1,
            ..Default::default()
        };
        assert!(fit_lda(&[], vocab.clone(), &bad_beta, 0).is_err());
        let bad_alpha = LdaParams {
            alpha: Some(-1.0),
            ..Default::default()
        };
        assert!(fit_lda(&[], vocab, &bad_alpha, 0).is_err());
    }

    #[test]
    fn empty_corpus_gives_prior_only_model() {
        let vocab = Arc::new(Vocabulary::from_docs([toks(&["x", "y"])].iter()));
        let m = fit_lda(&[], vocab, &LdaParams::default(), 0).unwrap();
        assert_eq!(m.total_tokens(), 0);
        let p = doc_topic_posterior(&m, &toks(&["x"]));
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    fn tiny_triple(h: usize) -> TopicModelTriple {
        let docs = [toks(&["apple", "pear"]), toks(&["stone", "rock"])];
        let vocab = Arc::new(Vocabulary::from_docs(docs.iter()));
        let params = LdaParams {
            topics: h,
            sweeps: 20,
            ..Default::default()
        };
        TopicModelTriple::fit([&docs[..1], &docs[1..], &[]], vocab, &params, 9).unwrap()
    }

    #[test]
    fn posterior_edge_cases() {
        let t = tiny_triple(3);
        let p = doc_topic_posterior(&t.favor, &[]);
        assert_eq!(p, vec![1.0 / 3.0; 3]);
        let oov = doc_topic_posterior(&t.favor, &toks(&["banana"]));
        assert_eq!(oov, vec![1.0 / 3.0; 3]);
        let t1 = tiny_triple(1);
        assert_eq!(doc_topic_posterior(&t1.none, &toks(&["apple", "rock"])), vec![1.0]);
    }

    #[test]
    fn dis_vector_edge_cases() {
        let t = tiny_triple(2);
        let d = dis_vector(&t, &[]);
        assert!(d.values().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
        let t1 = tiny_triple(1);
        assert_eq!(dis_vector(&t1, &toks(&["apple"])).values(), [1.0 / 3.0; 3]);
    }

    #[test]
    fn dis_vector_normalized_and_deterministic() {
        let t = tiny_triple(4);
        let doc = toks(&["apple", "pear", "rock", "apple"]);
        let a = dis_vector(&t, &doc);
        let b = dis_vector(&t, &doc);
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        TopicDistribution::new(a.values().to_vec()).unwrap();
    }
}
