//! Encoder-vector ingestion, the training losses and the optimization loop
//! for one group of targets.
//!
//! Every step propagates over the full (dropout-perturbed) graph and scores
//! only the batch's text rows. The loss is the contrastive term between a
//! text's final representation and its gold versus the other two label
//! representations, plus `1 - cos` between the text's trainable embedding
//! and its frozen attended encoder vector.

mod embeddings;
mod loss;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use embeddings::{
    label_key, load_embeddings, read_embeddings, save_embeddings, target_key, write_embeddings,
    EncoderStore, ENCODER_DIM,
};
pub use loss::{attention_weights, loss_contrastive, loss_cosine, neg_log_sigmoid, semantic_rep};

use crate::corpus::{Example, Stance};
use crate::cpa::{final_reps, propagate, CpaModel};
use crate::error::{Error, Result};
use crate::eval::score_targets;
use crate::graph::{dropout_graph, HeteroTopicGraph, SparseMatrix};
use crate::inference::{Mode, Predictor, ScoreNorm, TextFeatures};
use crate::numerics::{adam_step, AdamState, Tape, Var, DEFAULT_LEAKY_SLOPE};
use crate::topics::LdaParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning rate of the hop weights.
    pub lr_cpa: f64,
    /// Learning rate of the node embedding table.
    pub lr_embed: f64,
    /// Node and edge dropout rate.
    pub dropout: f64,
    pub hops: usize,
    pub hidden_dim: usize,
    pub leaky_slope: f64,
    pub seed: u64,
    pub trials: usize,
    /// One model over all targets instead of one per target.
    pub joint: bool,
    pub score_norm: ScoreNorm,
    pub parallel_trials: bool,
    pub lda: LdaParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 50,
            lr_cpa: 1e-5,
            lr_embed: 1e-4,
            dropout: 0.1,
            hops: 3,
            hidden_dim: 64,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            seed: 42,
            trials: 3,
            joint: false,
            score_norm: ScoreNorm::Raw,
            parallel_trials: false,
            lda: LdaParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("hidden_dim", self.hidden_dim),
            ("trials", self.trials),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        for (name, lr) in [("lr_cpa", self.lr_cpa), ("lr_embed", self.lr_embed)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::invalid(format!("leaky slope {} not in [0, 1)", self.leaky_slope)));
        }
        self.lda.validate()
    }

    /// Seed of trial `t` (0-based).
    pub fn trial_seed(&self, t: usize) -> u64 {
        mix_seed(self.seed, 0x7472_6961_6c00 + t as u64)
    }
}

/// SplitMix64 finalizer over `seed + stream`.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Text rows of one step with their gold labels and attended vectors.
#[derive(Debug, Clone)]
pub struct Batch {
    pub rows: Vec<usize>,
    pub labels: Vec<Stance>,
    pub sem: Array2<f64>,
}

impl Batch {
    pub fn gather(rows: &[usize], labels: &[Stance], features: &[TextFeatures]) -> Self {
        let views: Vec<_> = rows.iter().map(|&r| features[r].sem.view()).collect();
        Batch {
            rows: rows.to_vec(),
            labels: rows.iter().map(|&r| labels[r]).collect(),
            sem: ndarray::stack(Axis(0), &views).expect("uniform encoder width"),
        }
    }
}

/// Loss terms recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub contrastive: Var,
    pub cosine: Var,
}

/// Records the batch loss for `model` propagated over `lap`.
pub fn batch_loss<'a>(
    tape: &Tape<'a>,
    model: &CpaModel,
    lap: &'a SparseMatrix,
    batch: &Batch,
) -> Result<LossVars> {
    if batch.rows.is_empty() || batch.rows.len() != batch.labels.len() {
        return Err(Error::invalid("batch must have one label per row"));
    }
    let (e0, ws) = model.leaves(tape)?;
    let layers = propagate(tape, e0, lap, &ws, model.leaky_slope)?;
    let reps = final_reps(tape, e0, &layers)?;

    let v = tape.gather_rows(reps, &batch.rows)?;
    let label_start = model.dims.n_texts + model.dims.n_topics();
    let label_rows: Vec<usize> = (label_start..label_start + 3).collect();
    let z = tape.gather_rows(reps, &label_rows)?;
    let zt = tape.transpose(z)?;
    let scores = tape.matmul(v, zt)?;

    let mut pos = Vec::with_capacity(2 * batch.rows.len());
    let mut neg = Vec::with_capacity(2 * batch.rows.len());
    for (i, &y) in batch.labels.iter().enumerate() {
        for other in Stance::ALL.iter().filter(|&&s| s != y) {
            pos.push((i, y.index()));
            neg.push((i, other.index()));
        }
    }
    let pos = tape.gather_elems(scores, &pos)?;
    let neg = tape.gather_elems(scores, &neg)?;
    let gap = tape.sub(pos, neg)?;
    let ls = tape.logsigmoid(gap)?;
    let mean_ls = tape.mean(ls)?;
    let contrastive = tape.affine(mean_ls, -1.0, 0.0)?;

    let v0 = tape.gather_rows(e0, &batch.rows)?;
    let sem = tape.constant(batch.sem.clone())?;
    let cos = tape.cosine_sim(v0, sem)?;
    let mean_cos = tape.mean(cos)?;
    let cosine = tape.affine(mean_cos, -1.0, 1.0)?;

    let total = tape.add(contrastive, cosine)?;
    Ok(LossVars {
        total,
        contrastive,
        cosine,
    })
}

/// Everything a group's trials share: texts, features and the graph.
pub struct GroupInputs<'d> {
    pub train: Vec<&'d Example>,
    pub train_features: Vec<TextFeatures>,
    pub val: Vec<&'d Example>,
    pub val_features: Vec<TextFeatures>,
    pub graph: HeteroTopicGraph,
    /// Encoder vectors of the three labels, Favor/None/Against rows.
    pub label_init: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub contrastive: f64,
    pub cosine: f64,
    pub val_macro: Option<f64>,
    pub val_micro: Option<f64>,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,loss,contrastive,cosine,val_macf,val_micf";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{:.8},{:.8},{:.8},{},{}",
            self.epoch,
            self.loss,
            self.contrastive,
            self.cosine,
            opt(self.val_macro),
            opt(self.val_micro)
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub seed: u64,
    /// Weights of the best validation epoch (the last epoch without a
    /// validation split).
    pub model: CpaModel,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Macro and micro F over a labelled set using the full scorer.
pub fn validation_scores(
    model: &CpaModel,
    examples: &[&Example],
    features: &[TextFeatures],
    norm: ScoreNorm,
) -> Result<Option<(f64, f64)>> {
    if examples.is_empty() {
        return Ok(None);
    }
    let predictor = Predictor::new(model)?;
    let mut preds = Vec::with_capacity(examples.len());
    let mut golds = Vec::with_capacity(examples.len());
    let mut targets = Vec::with_capacity(examples.len());
    for (ex, f) in examples.iter().zip(features) {
        let gold = ex
            .stance
            .ok_or_else(|| Error::invalid(format!("validation example {} has no stance", ex.id)))?;
        preds.push(predictor.score(f, Mode::Full, norm)?.predicted);
        golds.push(gold);
        targets.push(ex.target.as_str());
    }
    let s = score_targets(&preds, &golds, &targets, None)?;
    Ok(Some((s.macro_f, s.micro_f)))
}

/// Trains one model from `seed`, keeping the epoch with the best
/// validation MicF (earliest on ties).
pub fn train_trial(inputs: &GroupInputs<'_>, cfg: &TrainConfig, seed: u64) -> Result<TrialOutcome> {
    cfg.validate()?;
    let n = inputs.train.len();
    if n == 0 {
        return Err(Error::invalid("no training texts"));
    }
    let labels: Vec<Stance> = inputs
        .train
        .iter()
        .map(|e| e.stance.ok_or_else(|| Error::invalid(format!("training example {} has no stance", e.id))))
        .collect::<Result<_>>()?;
    let pooled: Vec<_> = inputs.train_features.iter().map(|f| f.pooled.view()).collect();
    let text_init = ndarray::stack(Axis(0), &pooled).expect("uniform encoder width");
    let mut model = CpaModel::new(
        text_init.view(),
        inputs.label_init.view(),
        inputs.graph.n_topics / 3,
        cfg.hidden_dim,
        cfg.hops,
        cfg.leaky_slope,
        seed,
    )?;
    let mut adam_embed = AdamState::new(cfg.lr_embed, model.embed_params(), &model.params);
    let mut adam_cpa = AdamState::new(cfg.lr_cpa, model.weight_params(), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, CpaModel)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut sum_con, mut sum_cos) = (0.0, 0.0, 0.0);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = Batch::gather(chunk, &labels, &inputs.train_features);
            let lap = dropout_graph(&inputs.graph.lap, cfg.dropout, cfg.dropout, &mut rng)?;
            let tape = Tape::new();
            let vars = batch_loss(&tape, &model, &lap, &batch)
                .map_err(|e| diverged(epoch, step, e))?;
            tape.backward(vars.total, &mut model.params)
                .map_err(|e| diverged(epoch, step, e))?;
            let w = chunk.len() as f64;
            sum += tape.scalar(vars.total) * w;
            sum_con += tape.scalar(vars.contrastive) * w;
            sum_cos += tape.scalar(vars.cosine) * w;
            drop(tape);
            adam_step(&mut adam_embed, &mut model.params)?;
            adam_step(&mut adam_cpa, &mut model.params)?;
        }
        let val = validation_scores(&model, &inputs.val, &inputs.val_features, cfg.score_norm)?;
        log.push(EpochLog {
            epoch,
            loss: sum / n as f64,
            contrastive: sum_con / n as f64,
            cosine: sum_cos / n as f64,
            val_macro: val.map(|v| v.0),
            val_micro: val.map(|v| v.1),
        });
        let score = val.map(|v| v.1).unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => val.is_none() || score > *b,
        };
        if improved {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrialOutcome {
        seed,
        model,
        best_epoch,
        log,
    })
}

fn diverged(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(op) => Error::Diverged(format!(
            "non-finite value in {op} at epoch {epoch}, step {step}; try a lower learning rate"
        )),
        other => other,
    }
}
