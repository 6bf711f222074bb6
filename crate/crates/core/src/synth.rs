//! Synthetic stance corpus with a known answer.
//!
//! Each stance owns `H` planted topics, each a disjoint set of invented
//! words. A text draws most of its words from one topic of its stance and
//! the rest from a shared background list. Encoder vectors are noisy copies
//! of per-stance prototypes with disjoint coordinate supports, so the
//! prototypes are orthogonal and a nearest-prototype rule recovers the
//! stance from the pooled vector.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::corpus::{Split, Stance};
use crate::error::{Error, Result};
use crate::run::write_text;
use crate::training::{label_key, save_embeddings, target_key, EncoderStore, ENCODER_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub targets: usize,
    pub topics_per_stance: usize,
    pub words_per_topic: usize,
    pub background_words: usize,
    /// Probability that a word comes from the text's topic rather than the
    /// background list.
    pub topic_word_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Per-coordinate standard deviation of pooled-vector noise.
    pub pooled_noise: f64,
    /// Per-coordinate standard deviation of token-vector noise.
    pub token_noise: f64,
    pub dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_train: 600,
            n_val: 150,
            n_test: 150,
            targets: 2,
            topics_per_stance: 5,
            words_per_topic: 8,
            background_words: 30,
            topic_word_rate: 0.8,
            min_len: 6,
            max_len: 12,
            pooled_noise: 0.05,
            token_noise: 0.05,
            dim: ENCODER_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthRow {
    pub id: String,
    pub target: String,
    pub text: String,
    pub stance: Stance,
    pub split: Split,
    /// Planted topic index within the stance block.
    pub topic: usize,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub rows: Vec<SynthRow>,
    /// Word lists indexed by `[stance][topic]`.
    pub topics: Vec<Vec<Vec<String>>>,
    pub background: Vec<String>,
    /// Unit-norm prototypes, Favor/None/Against rows.
    pub prototypes: Array2<f64>,
    pub store: EncoderStore,
}

pub fn target_name(i: usize) -> String {
    format!("Synthetic Target {}", (b'A' + (i % 26) as u8) as char)
}

/// Letters-only word for `n` so tokenization keeps it intact.
fn letters(mut n: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'a' + (n % 26) as u8);
        n /= 26;
        if n == 0 {
            break;
        }
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}

fn word(prefix: &str, group: usize, idx: usize) -> String {
    format!("{prefix}{}x{}", letters(group), letters(idx))
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.dim < 3 || cfg.targets == 0 || cfg.topics_per_stance == 0 || cfg.words_per_topic == 0 {
        return Err(Error::invalid("synthetic corpus dimensions must be positive"));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::invalid("text length range must satisfy 1 <= min <= max"));
    }
    if !(0.0..=1.0).contains(&cfg.topic_word_rate) || (cfg.background_words == 0 && cfg.topic_word_rate < 1.0) {
        return Err(Error::invalid("topic word rate must be in [0, 1] with a background list below 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = cfg.topics_per_stance;
    let prefixes = ["fav", "neu", "opp"];
    let topics: Vec<Vec<Vec<String>>> = (0..3)
        .map(|s| {
            (0..h)
                .map(|k| (0..cfg.words_per_topic).map(|w| word(prefixes[s], k, w)).collect())
                .collect()
        })
        .collect();
    let background: Vec<String> = (0..cfg.background_words).map(|w| word("bg", 0, w)).collect();

    // Disjoint coordinate blocks give orthogonal prototypes.
    let block = cfg.dim / 3;
    let mut prototypes = Array2::zeros((3, cfg.dim));
    for s in 0..3 {
        for j in s * block..(s + 1) * block {
            prototypes[[s, j]] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        let norm = (block as f64).sqrt();
        prototypes.row_mut(s).mapv_inplace(|v| v / norm);
    }

    let token_noise = Normal::new(0.0, cfg.token_noise).map_err(|e| Error::invalid(e.to_string()))?;
    let pooled_noise = Normal::new(0.0, cfg.pooled_noise).map_err(|e| Error::invalid(e.to_string()))?;
    let unit = Normal::new(0.0, 1.0 / (cfg.dim as f64).sqrt()).expect("positive sd");
    let noisy = |base: Array1<f64>, dist: &Normal<f64>, rng: &mut ChaCha8Rng| base.mapv(|v| v + dist.sample(rng));

    // One fixed vector per word; tokens add fresh noise on top.
    let mut word_vec = std::collections::HashMap::new();
    for (s, block_topics) in topics.iter().enumerate() {
        for w in block_topics.iter().flatten() {
            word_vec.insert(w.clone(), noisy(prototypes.row(s).to_owned(), &token_noise, &mut rng));
        }
    }
    for w in &background {
        word_vec.insert(w.clone(), Array1::from_shape_fn(cfg.dim, |_| unit.sample(&mut rng)));
    }

    let mut store = EncoderStore::new(cfg.dim);
    let to_f32 = |a: &Array2<f64>| a.mapv(|v| v as f32);
    for t in 0..cfg.targets {
        let v = Array2::from_shape_fn((1, cfg.dim), |_| unit.sample(&mut rng));
        store.insert(target_key(&target_name(t)), to_f32(&v))?;
    }
    for s in Stance::ALL {
        let v = Array2::from_shape_fn((1, cfg.dim), |_| unit.sample(&mut rng));
        store.insert(label_key(s), to_f32(&v))?;
    }

    let mut rows = Vec::new();
    let splits = [(Split::Train, cfg.n_train), (Split::Val, cfg.n_val), (Split::Test, cfg.n_test)];
    for (split, n) in splits {
        for i in 0..n {
            let stance = Stance::ALL[i % 3];
            let s = stance.index();
            let target = target_name((i / 3) % cfg.targets);
            let topic = rng.random_range(0..h);
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            let words: Vec<&String> = (0..len)
                .map(|_| {
                    if rng.random::<f64>() < cfg.topic_word_rate {
                        &topics[s][topic][rng.random_range(0..cfg.words_per_topic)]
                    } else {
                        &background[rng.random_range(0..background.len())]
                    }
                })
                .collect();
            let id = format!("{split}-{i:04}");
            let mut m = Array2::zeros((1 + len, cfg.dim));
            let pooled = noisy(prototypes.row(s).to_owned(), &pooled_noise, &mut rng);
            m.row_mut(0).assign(&pooled);
            for (r, w) in words.iter().enumerate() {
                let v = noisy(word_vec[*w].clone(), &token_noise, &mut rng);
                m.row_mut(r + 1).assign(&v);
            }
            store.insert(id.clone(), to_f32(&m))?;
            rows.push(SynthRow {
                id,
                target,
                text: words.iter().map(|w| w.as_str()).collect::<Vec<_>>().join(" "),
                stance,
                split,
                topic,
            });
        }
    }
    Ok(SynthCorpus {
        config: cfg.clone(),
        rows,
        topics,
        background,
        prototypes,
        store,
    })
}

/// Writes `synthetic.tsv`, `embeddings.emb1` and `truth.json` into `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tsv = String::from("ID\tTarget\tText\tStance\tSplit\n");
    for r in &corpus.rows {
        tsv.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.id, r.target, r.text, r.stance, r.split));
    }
    write_text(&dir.join("synthetic.tsv"), &tsv)?;
    save_embeddings(&corpus.store, &dir.join("embeddings.emb1"))?;

    #[derive(Serialize)]
    struct Truth<'a> {
        seed: u64,
        topics_per_stance: usize,
        topics: Vec<TopicTruth<'a>>,
        background: &'a [String],
        texts: Vec<TextTruth<'a>>,
    }
    #[derive(Serialize)]
    struct TopicTruth<'a> {
        stance: &'static str,
        topic: usize,
        words: &'a [String],
    }
    #[derive(Serialize)]
    struct TextTruth<'a> {
        id: &'a str,
        stance: &'static str,
        topic: usize,
    }
    let truth = Truth {
        seed: corpus.config.seed,
        topics_per_stance: corpus.config.topics_per_stance,
        topics: Stance::ALL
            .iter()
            .flat_map(|&s| {
                corpus.topics[s.index()].iter().enumerate().map(move |(k, words)| TopicTruth {
                    stance: s.key(),
                    topic: k,
                    words,
                })
            })
            .collect(),
        background: &corpus.background,
        texts: corpus
            .rows
            .iter()
            .map(|r| TextTruth {
                id: &r.id,
                stance: r.stance.key(),
                topic: r.topic,
            })
            .collect(),
    };
    write_text(&dir.join("truth.json"), &serde_json::to_string_pretty(&truth)?)
}

/// Stance of the closest prototype by Euclidean distance.
pub fn nearest_prototype(prototypes: &Array2<f64>, v: ndarray::ArrayView1<'_, f64>) -> Stance {
    let mut best = (f64::INFINITY, Stance::Favor);
    for s in Stance::ALL {
        let d: f64 = (&prototypes.row(s.index()) - &v).mapv(|x| x * x).sum();
        if d < best.0 {
            best = (d, s);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_generic, tokenize, DatasetKind};

    fn small() -> SynthConfig {
        SynthConfig {
            n_train: 60,
            n_val: 15,
            n_test: 15,
            dim: 30,
            ..Default::default()
        }
    }

    #[test]
    fn default_split_sizes() {
        let c = generate(&SynthConfig::default()).unwrap();
        let count = |s: Split| c.rows.iter().filter(|r| r.split == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (600, 150, 150));
        assert_eq!(c.store.dim(), 768);
    }

    #[test]
    fn prototypes_orthonormal() {
        let c = generate(&SynthConfig::default()).unwrap();
        let gram = c.prototypes.dot(&c.prototypes.t());
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nearest_prototype_accuracy() {
        let c = generate(&SynthConfig::default()).unwrap();
        let correct = c
            .rows
            .iter()
            .filter(|r| nearest_prototype(&c.prototypes, c.store.pooled(&r.id).unwrap().view()) == r.stance)
            .count();
        assert!(correct as f64 / c.rows.len() as f64 >= 0.95);
    }

    #[test]
    fn words_survive_tokenization() {
        let c = generate(&small()).unwrap();
        for r in &c.rows {
            let toks = tokenize(&r.text);
            assert_eq!(toks.len(), r.text.split(' ').count(), "{}", r.text);
            assert_eq!(c.store.record(&r.id).unwrap().nrows(), toks.len() + 1);
        }
    }

    #[test]
    fn written_corpus_loads_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate(&small()).unwrap();
        write_corpus(&c, dir.path()).unwrap();
        let ds = load_generic(&dir.path().join("synthetic.tsv"), DatasetKind::Synthetic).unwrap();
        assert_eq!(ds.examples.len(), 90);
        assert_eq!(ds.targets.len(), 2);
        let store = crate::training::load_embeddings(&dir.path().join("embeddings.emb1"), 30).unwrap();
        store.check_coverage(&ds).unwrap();

        let again = generate(&small()).unwrap();
        assert_eq!(again.rows, c.rows);
        assert_eq!(again.store, c.store);
        let other = generate(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(other.rows, c.rows);
    }
}
