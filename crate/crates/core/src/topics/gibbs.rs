use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LdaModel, LdaParams};
use crate::corpus::Vocabulary;
use crate::error::Result;

/// Collapsed Gibbs sampler state. Exposed so callers can observe the chain
/// between sweeps; [`super::fit_lda`] just runs it to completion.
pub struct GibbsSampler {
    topics: usize,
    alpha: f64,
    beta: f64,
    fold_in_sweeps: usize,
    seed: u64,
    vocab: Arc<Vocabulary>,
    docs: Vec<Vec<usize>>,
    assignments: Vec<Vec<usize>>,
    doc_topic: Vec<Vec<u32>>,
    topic_word: Vec<u32>,
    topic_totals: Vec<u64>,
    sweeps_done: usize,
    rng: ChaCha8Rng,
    scratch: Vec<f64>,
}

impl GibbsSampler {
    pub fn new(
        docs: &[Vec<String>],
        vocab: Arc<Vocabulary>,
        params: &LdaParams,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        let h = params.topics;
        let v = vocab.len();
        let docs: Vec<Vec<usize>> = docs.iter().map(|d| vocab.encode(d)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut topic_word = vec![0u32; h * v];
        let mut topic_totals = vec![0u64; h];
        let mut doc_topic = Vec::with_capacity(docs.len());
        let mut assignments = Vec::with_capacity(docs.len());
        for doc in &docs {
            let mut counts = vec![0u32; h];
            let z: Vec<usize> = doc
                .iter()
                .map(|&w| {
                    let k = rng.random_range(0..h);
                    counts[k] += 1;
                    topic_word[k * v + w] += 1;
                    topic_totals[k] += 1;
                    k
                })
                .collect();
            doc_topic.push(counts);
            assignments.push(z);
        }
        Ok(GibbsSampler {
            topics: h,
            alpha: params.alpha(),
            beta: params.beta,
            fold_in_sweeps: params.fold_in_sweeps,
            seed,
            vocab,
            docs,
            assignments,
            doc_topic,
            topic_word,
            topic_totals,
            sweeps_done: 0,
            rng,
            scratch: vec![0.0; h],
        })
    }

    pub fn sweep(&mut self) {
        let h = self.topics;
        let v = self.vocab.len();
        let vbeta = v as f64 * self.beta;
        for (d, doc) in self.docs.iter().enumerate() {
            let n_dk = &mut self.doc_topic[d];
            for (i, &w) in doc.iter().enumerate() {
                let old = self.assignments[d][i];
                n_dk[old] -= 1;
                self.topic_word[old * v + w] -= 1;
                self.topic_totals[old] -= 1;

                let mut acc = 0.0;
                for k in 0..h {
                    acc += (n_dk[k] as f64 + self.alpha)
                        * (self.topic_word[k * v + w] as f64 + self.beta)
                        / (self.topic_totals[k] as f64 + vbeta);
                    self.scratch[k] = acc;
                }
                let u = self.rng.random::<f64>() * acc;
                let new = self.scratch.partition_point(|&c| c <= u).min(h - 1);

                self.assignments[d][i] = new;
                n_dk[new] += 1;
                self.topic_word[new * v + w] += 1;
                self.topic_totals[new] += 1;
            }
        }
        self.sweeps_done += 1;
    }

    pub fn sweeps_done(&self) -> usize {
        self.sweeps_done
    }

    pub fn corpus_tokens(&self) -> u64 {
        self.docs.iter().map(|d| d.len() as u64).sum()
    }

    /// Checks every count table against the current assignments.
    pub fn counts_consistent(&self) -> bool {
        let v = self.vocab.len();
        let mut tw = vec![0u32; self.topic_word.len()];
        let mut tt = vec![0u64; self.topics];
        for (d, doc) in self.docs.iter().enumerate() {
            let mut dk = vec![0u32; self.topics];
            for (i, &w) in doc.iter().enumerate() {
                let k = self.assignments[d][i];
                dk[k] += 1;
                tw[k * v + w] += 1;
                tt[k] += 1;
            }
            if dk != self.doc_topic[d] {
                return false;
            }
        }
        let row_sums_match = (0..self.topics).all(|k| {
            self.topic_word[k * v..(k + 1) * v].iter().map(|&c| c as u64).sum::<u64>()
                == self.topic_totals[k]
        });
        tw == self.topic_word
            && tt == self.topic_totals
            && row_sums_match
            && self.topic_totals.iter().sum::<u64>() == self.corpus_tokens()
    }

    /// `Σ_d Σ_w log Σ_k θ̂_dk φ̂_kw` under the current point estimates.
    pub fn log_likelihood(&self) -> f64 {
        let h = self.topics;
        let v = self.vocab.len();
        let vbeta = v as f64 * self.beta;
        let mut ll = 0.0;
        for (d, doc) in self.docs.iter().enumerate() {
            let denom = doc.len() as f64 + h as f64 * self.alpha;
            for &w in doc {
                let p: f64 = (0..h)
                    .map(|k| {
                        (self.doc_topic[d][k] as f64 + self.alpha) / denom
                            * (self.topic_word[k * v + w] as f64 + self.beta)
                            / (self.topic_totals[k] as f64 + vbeta)
                    })
                    .sum();
                ll += p.ln();
            }
        }
        ll
    }

    pub fn model(&self) -> LdaModel {
        LdaModel {
            topics: self.topics,
            alpha: self.alpha,
            beta: self.beta,
            topic_word: self.topic_word.clone(),
            topic_totals: self.topic_totals.clone(),
            vocab: self.vocab.clone(),
            trained_sweeps: self.sweeps_done,
            fold_in_sweeps: self.fold_in_sweeps,
            seed: self.seed,
        }
    }

    pub fn into_model(self) -> LdaModel {
        LdaModel {
            topics: self.topics,
            alpha: self.alpha,
            beta: self.beta,
            topic_word: self.topic_word,
            topic_totals: self.topic_totals,
            vocab: self.vocab,
            trained_sweeps: self.sweeps_done,
            fold_in_sweeps: self.fold_in_sweeps,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<Vec<String>> {
        let a = ["sun", "beach", "sand", "wave"];
        let b = ["code", "rust", "bug", "test"];
        (0..40)
            .map(|i| {
                let src = if i % 2 == 0 { &a } else { &b };
                (0..8).map(|j| src[(i + j * 3) % 4].to_string()).collect()
            })
            .collect()
    }

    #[test]
    fn conservation_and_determinism() {
        let docs = corpus();
        let vocab = Arc::new(Vocabulary::from_docs(docs.iter()));
        let params = LdaParams {
            topics: 2,
            sweeps: 30,
            ..Default::default()
        };
        let mut s = GibbsSampler::new(&docs, vocab.clone(), &params, 5).unwrap();
        assert!(s.counts_consistent());
        for _ in 0..30 {
            s.sweep();
            assert!(s.counts_consistent());
        }
        let again = super::super::fit_lda(&docs, vocab, &params, 5).unwrap();
        assert_eq!(s.into_model(), again);
    }
}
