//! Hybrid scoring of unseen texts, nearest-neighbor retrieval over trained
//! text representations, and attention export.
//!
//! The semantic score compares a text's attended encoder vector with the
//! trained label embeddings. The distributed score mixes trained topic
//! embeddings by the text's topic distribution, passes the mix and every
//! topic through the graph-free hop transform, and takes, per stance block,
//! the best-matching topic.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Stance};
use crate::cpa::CpaModel;
use crate::error::{Error, Result};
use crate::topics::{dis_vector, TopicDistribution, TopicModelTriple};
use crate::training::{semantic_rep, EncoderStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    NoSem,
    NoDis,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Full, Mode::NoSem, Mode::NoDis];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::NoSem => "no_sem",
            Mode::NoDis => "no_dis",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(Mode::Full),
            "no_sem" => Ok(Mode::NoSem),
            "no_dis" => Ok(Mode::NoDis),
            other => Err(Error::invalid(format!("unknown mode {other:?} (full, no_sem, no_dis)"))),
        }
    }
}

/// How the two score triples are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreNorm {
    /// Plain sum.
    #[default]
    Raw,
    /// Each triple standardized to zero mean and unit deviation first.
    ZScore,
}

impl fmt::Display for ScoreNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreNorm::Raw => "raw",
            ScoreNorm::ZScore => "zscore",
        })
    }
}

impl FromStr for ScoreNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raw" | "none" => Ok(ScoreNorm::Raw),
            "zscore" => Ok(ScoreNorm::ZScore),
            other => Err(Error::invalid(format!("unknown score norm {other:?} (raw, zscore)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBundle {
    pub sem: [f64; 3],
    pub dis: [f64; 3],
    pub total: [f64; 3],
    pub predicted: Stance,
}

impl ScoreBundle {
    pub fn combine(sem: [f64; 3], dis: [f64; 3], mode: Mode, norm: ScoreNorm) -> Self {
        let sem = if mode == Mode::NoSem { [0.0; 3] } else { sem };
        let dis = if mode == Mode::NoDis { [0.0; 3] } else { dis };
        let (a, b) = match norm {
            ScoreNorm::Raw => (sem, dis),
            ScoreNorm::ZScore => (zscore(sem), zscore(dis)),
        };
        let total = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
        ScoreBundle {
            sem,
            dis,
            total,
            predicted: argmax_stance(total),
        }
    }
}

fn zscore(x: [f64; 3]) -> [f64; 3] {
    let mean = x.iter().sum::<f64>() / 3.0;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    if sd == 0.0 {
        [0.0; 3]
    } else {
        x.map(|v| (v - mean) / sd)
    }
}

/// Index of the largest score; ties go to the earlier label
/// (Favor, then None, then Against).
pub fn argmax_stance(total: [f64; 3]) -> Stance {
    let mut best = 0;
    for k in 1..3 {
        if total[k] > total[best] {
            best = k;
        }
    }
    Stance::ALL[best]
}

pub fn semantic_score(e_sem: ArrayView1<'_, f64>, z: ArrayView2<'_, f64>) -> Result<[f64; 3]> {
    if z.dim() != (3, e_sem.len()) {
        return Err(Error::shape(
            "semantic_score",
            format!("label table {:?}, vector {}", z.dim(), e_sem.len()),
        ));
    }
    let s = z.dot(&e_sem);
    Ok([s[0], s[1], s[2]])
}

/// Topic embeddings mixed by the distribution.
pub fn distributed_rep(dis: &[f64], u: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if dis.len() != u.nrows() {
        return Err(Error::shape(
            "distributed_rep",
            format!("{} weights for {} topics", dis.len(), u.nrows()),
        ));
    }
    Ok(ArrayView1::from(dis).dot(&u))
}

/// Per stance block, the largest inner product between `e` and that
/// block's topic rows.
pub fn block_max_scores(e: ArrayView1<'_, f64>, topics: ArrayView2<'_, f64>) -> Result<[f64; 3]> {
    if topics.nrows() == 0 || !topics.nrows().is_multiple_of(3) || topics.ncols() != e.len() {
        return Err(Error::shape(
            "block_max_scores",
            format!("topic table {:?}, vector {}", topics.dim(), e.len()),
        ));
    }
    let h = topics.nrows() / 3;
    let dots = topics.dot(&e);
    let mut out = [f64::NEG_INFINITY; 3];
    for (k, &d) in dots.iter().enumerate() {
        out[k / h] = out[k / h].max(d);
    }
    Ok(out)
}

pub fn distributed_score(dis: &[f64], model: &CpaModel) -> Result<[f64; 3]> {
    let u = model.topic_block();
    let e_dis = distributed_rep(dis, u)?;
    let e_t = model.infer_transform(e_dis.view().insert_axis(Axis(0)))?;
    let u_t = model.infer_transform(u)?;
    block_max_scores(e_t.row(0), u_t.view())
}

/// Encoder and topic features of one text that do not depend on the
/// trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatures {
    pub sem: Array1<f64>,
    pub pooled: Array1<f64>,
    pub dis: TopicDistribution,
}

pub fn text_features(ex: &Example, store: &EncoderStore, triple: &TopicModelTriple) -> Result<TextFeatures> {
    let tokens = store.token_matrix(&ex.id)?;
    let target = store.target(&ex.target)?;
    let (sem, _) = semantic_rep(tokens.view(), target.view())?;
    Ok(TextFeatures {
        sem,
        pooled: tokens.row(0).to_owned(),
        dis: dis_vector(triple, &ex.tokens),
    })
}

/// A frozen model with its transformed topic table cached.
pub struct Predictor<'m> {
    model: &'m CpaModel,
    u_tilde: Array2<f64>,
}

impl<'m> Predictor<'m> {
    pub fn new(model: &'m CpaModel) -> Result<Self> {
        let u_tilde = model.infer_transform(model.topic_block())?;
        Ok(Predictor { model, u_tilde })
    }

    pub fn model(&self) -> &CpaModel {
        self.model
    }

    pub fn score(&self, f: &TextFeatures, mode: Mode, norm: ScoreNorm) -> Result<ScoreBundle> {
        let sem = if mode == Mode::NoSem {
            [0.0; 3]
        } else {
            semantic_score(f.sem.view(), self.model.label_block())?
        };
        let dis = if mode == Mode::NoDis {
            [0.0; 3]
        } else {
            let e_dis = distributed_rep(f.dis.values(), self.model.topic_block())?;
            let e_t = self.model.infer_transform(e_dis.view().insert_axis(Axis(0)))?;
            block_max_scores(e_t.row(0), self.u_tilde.view())?
        };
        Ok(ScoreBundle::combine(sem, dis, mode, norm))
    }
}

pub fn predict(
    ex: &Example,
    store: &EncoderStore,
    triple: &TopicModelTriple,
    model: &CpaModel,
    mode: Mode,
    norm: ScoreNorm,
) -> Result<ScoreBundle> {
    let features = text_features(ex, store, triple)?;
    Predictor::new(model)?.score(&features, mode, norm)
}

/// Cosine-nearest rows of `reps`, best first, skipping `exclude`.
pub fn top_k_similar(
    query: ArrayView1<'_, f64>,
    reps: ArrayView2<'_, f64>,
    ids: &[String],
    exclude: Option<&str>,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if ids.len() != reps.nrows() || reps.ncols() != query.len() {
        return Err(Error::shape(
            "top_k_similar",
            format!("{} ids, reps {:?}, query {}", ids.len(), reps.dim(), query.len()),
        ));
    }
    let candidates = ids.iter().filter(|id| Some(id.as_str()) != exclude).count();
    if k > candidates {
        return Err(Error::invalid(format!("k = {k} exceeds the {candidates} training texts")));
    }
    let qn = query.dot(&query).sqrt();
    let mut scored: Vec<(String, f64)> = ids
        .iter()
        .zip(reps.rows())
        .filter(|(id, _)| Some(id.as_str()) != exclude)
        .map(|(id, row)| {
            let denom = qn * row.dot(&row).sqrt();
            let sim = if denom == 0.0 { 0.0 } else { row.dot(&query) / denom };
            (id.clone(), sim)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Token labels for an embedding record with `rows` vectors.
pub fn token_labels(ex: &Example, rows: usize) -> Vec<String> {
    let words = &ex.tokens;
    if rows == words.len() + 1 {
        std::iter::once("[CLS]".to_string()).chain(words.iter().cloned()).collect()
    } else if rows == words.len() {
        words.clone()
    } else {
        (0..rows).map(|i| format!("#{i}")).collect()
    }
}

/// Writes `token,attention_weight` rows for one text.
pub fn export_attention(ex: &Example, store: &EncoderStore, path: &Path) -> Result<()> {
    let tokens = store.token_matrix(&ex.id)?;
    let target = store.target(&ex.target)?;
    let (_, weights) = semantic_rep(tokens.view(), target.view())?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["token", "attention_weight"]).map_err(|e| csv_error(path, e))?;
    for (label, weight) in token_labels(ex, tokens.nrows()).iter().zip(weights.iter()) {
        w.write_record([label.as_str(), &weight.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}
