//! Collaboration propagation aggregation over the topic graph.
//!
//! With `E` the stacked node table and `L` the normalized bipartite
//! adjacency, every hop computes
//!
//! ```text
//! E' = LReLU((I + L) E W1 + (E ⊙ L E) W2)
//! ```
//!
//! which is the matrix form of summing, for each node `e` and neighbor
//! `e_i`, the message `(W1 e_i + W2 (e ⊙ e_i)) / sqrt(|N_e| |N_e_i|)` on top
//! of the self term `W1 e`. The final representation of a node concatenates
//! its embedding with every hop's output.

mod checkpoint;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::graph::{SparseMatrix, N_LABELS};
use crate::numerics::{leaky_relu, xavier_init, ParamId, Params, Tape, Tensor, Var};

pub use checkpoint::{read_checkpoint, write_checkpoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpaDims {
    /// Embedding width `d0`.
    pub embed_dim: usize,
    /// Hop output width `d1`.
    pub hidden_dim: usize,
    pub hops: usize,
    /// Topics per stance subset (`H`); the table holds `3H` topic rows.
    pub topics_per_stance: usize,
    pub n_texts: usize,
}

impl CpaDims {
    pub fn n_topics(&self) -> usize {
        3 * self.topics_per_stance
    }

    pub fn n_nodes(&self) -> usize {
        self.n_texts + self.n_topics() + N_LABELS
    }

    /// `d0 + hops * d1`.
    pub fn final_dim(&self) -> usize {
        self.embed_dim + self.hops * self.hidden_dim
    }

    /// Input and output widths of hop `k` (0-based).
    pub fn layer_shape(&self, k: usize) -> (usize, usize) {
        let input = if k == 0 { self.embed_dim } else { self.hidden_dim };
        (input, self.hidden_dim)
    }
}

/// Trainable embedding table `[V; U; Z]` plus per-hop `W1`, `W2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpaModel {
    pub dims: CpaDims,
    pub params: Params,
    pub embedding: ParamId,
    pub w1: Vec<ParamId>,
    pub w2: Vec<ParamId>,
    pub leaky_slope: f64,
}

impl CpaModel {
    /// Text and label rows come from the encoder; topic rows and all hop
    /// weights are Xavier-initialized from `seed`.
    pub fn new(
        text_init: ArrayView2<'_, f64>,
        label_init: ArrayView2<'_, f64>,
        topics_per_stance: usize,
        hidden_dim: usize,
        hops: usize,
        leaky_slope: f64,
        seed: u64,
    ) -> Result<Self> {
        let embed_dim = text_init.ncols();
        if label_init.dim() != (N_LABELS, embed_dim) {
            return Err(Error::shape(
                "CpaModel::new",
                format!("label table {:?}, expected (3, {embed_dim})", label_init.dim()),
            ));
        }
        if topics_per_stance == 0 || hidden_dim == 0 || embed_dim == 0 {
            return Err(Error::invalid("CPA dimensions must be positive"));
        }
        let dims = CpaDims {
            embed_dim,
            hidden_dim,
            hops,
            topics_per_stance,
            n_texts: text_init.nrows(),
        };
        let topics = xavier_init(dims.n_topics(), embed_dim, seed)?;
        let table = ndarray::concatenate(
            ndarray::Axis(0),
            &[text_init, topics.data.view(), label_init],
        )
        .expect("column counts checked");
        let mut params = Params::new();
        let embedding = params.add("embedding", Tensor::trainable(table));
        let mut w1 = Vec::with_capacity(hops);
        let mut w2 = Vec::with_capacity(hops);
        for k in 0..hops {
            let (r, c) = dims.layer_shape(k);
            let s = seed.wrapping_add(1 + 2 * k as u64);
            w1.push(params.add(format!("w1[{}]", k + 1), xavier_init(r, c, s)?));
            w2.push(params.add(format!("w2[{}]", k + 1), xavier_init(r, c, s.wrapping_add(1))?));
        }
        Ok(CpaModel {
            dims,
            params,
            embedding,
            w1,
            w2,
            leaky_slope,
        })
    }

    /// Reassembles a model from stored arrays.
    pub fn from_parts(
        dims: CpaDims,
        table: Array2<f64>,
        w1: Vec<Array2<f64>>,
        w2: Vec<Array2<f64>>,
        leaky_slope: f64,
    ) -> Result<Self> {
        if table.dim() != (dims.n_nodes(), dims.embed_dim) {
            return Err(Error::shape(
                "CpaModel::from_parts",
                format!("table {:?} for {:?}", table.dim(), dims),
            ));
        }
        if w1.len() != dims.hops || w2.len() != dims.hops {
            return Err(Error::shape("CpaModel::from_parts", "hop count"));
        }
        let mut params = Params::new();
        let embedding = params.add("embedding", Tensor::trainable(table));
        let mut ids1 = Vec::with_capacity(dims.hops);
        let mut ids2 = Vec::with_capacity(dims.hops);
        for (k, (a, b)) in w1.into_iter().zip(w2).enumerate() {
            if a.dim() != dims.layer_shape(k) || b.dim() != dims.layer_shape(k) {
                return Err(Error::shape("CpaModel::from_parts", format!("hop {k} weights")));
            }
            ids1.push(params.add(format!("w1[{}]", k + 1), Tensor::trainable(a)));
            ids2.push(params.add(format!("w2[{}]", k + 1), Tensor::trainable(b)));
        }
        Ok(CpaModel {
            dims,
            params,
            embedding,
            w1: ids1,
            w2: ids2,
            leaky_slope,
        })
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.params.get(self.embedding).data
    }

    pub fn text_block(&self) -> ArrayView2<'_, f64> {
        self.table().slice(s![..self.dims.n_texts, ..])
    }

    pub fn topic_block(&self) -> ArrayView2<'_, f64> {
        let start = self.dims.n_texts;
        self.table().slice(s![start..start + self.dims.n_topics(), ..])
    }

    pub fn label_block(&self) -> ArrayView2<'_, f64> {
        let start = self.dims.n_texts + self.dims.n_topics();
        self.table().slice(s![start.., ..])
    }

    pub fn weights(&self) -> Vec<(&Array2<f64>, &Array2<f64>)> {
        self.w1
            .iter()
            .zip(&self.w2)
            .map(|(a, b)| (&self.params.get(*a).data, &self.params.get(*b).data))
            .collect()
    }

    pub fn embed_params(&self) -> Vec<ParamId> {
        vec![self.embedding]
    }

    pub fn weight_params(&self) -> Vec<ParamId> {
        self.w1.iter().chain(&self.w2).copied().collect()
    }

    /// Records the table and hop weights on `tape`.
    pub fn leaves(&self, tape: &Tape<'_>) -> Result<(Var, Vec<(Var, Var)>)> {
        let e0 = tape.param(&self.params, self.embedding)?;
        let ws = self
            .w1
            .iter()
            .zip(&self.w2)
            .map(|(a, b)| Ok((tape.param(&self.params, *a)?, tape.param(&self.params, *b)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok((e0, ws))
    }

    /// Final `[e0 | e1 | ... | el]` rows for every node with a fixed graph.
    pub fn final_reps_frozen(&self, lap: &SparseMatrix) -> Result<Array2<f64>> {
        let tape = Tape::new();
        let (e0, ws) = self.leaves(&tape)?;
        let layers = propagate(&tape, e0, lap, &ws, self.leaky_slope)?;
        let out = final_reps(&tape, e0, &layers)?;
        let value = tape.value(out).clone();
        Ok(value)
    }

    /// Graph-free transform of encoder-space rows.
    pub fn infer_transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        infer_transform(x, &self.weights(), self.leaky_slope)
    }
}

/// One propagation output per hop.
pub fn propagate<'a>(
    tape: &Tape<'a>,
    e0: Var,
    lap: &'a SparseMatrix,
    weights: &[(Var, Var)],
    slope: f64,
) -> Result<Vec<Var>> {
    let n = tape.shape(e0).0;
    if lap.shape() != (n, n) {
        return Err(Error::shape(
            "propagate",
            format!("laplacian {:?} for {n} nodes", lap.shape()),
        ));
    }
    let mut layers = Vec::with_capacity(weights.len());
    let mut prev = e0;
    for &(w1, w2) in weights {
        let ew1 = tape.matmul(prev, w1)?;
        let l_ew1 = tape.spmm(lap, ew1)?;
        let le = tape.spmm(lap, prev)?;
        let inter = tape.elemwise_mul(prev, le)?;
        let iw2 = tape.matmul(inter, w2)?;
        let self_and_msg = tape.add(ew1, l_ew1)?;
        let pre = tape.add(self_and_msg, iw2)?;
        prev = tape.leaky_relu(pre, slope)?;
        layers.push(prev);
    }
    Ok(layers)
}

pub fn final_reps(tape: &Tape<'_>, e0: Var, layers: &[Var]) -> Result<Var> {
    let n = tape.shape(e0).0;
    if let Some(bad) = layers.iter().find(|&&l| tape.shape(l).0 != n) {
        return Err(Error::shape(
            "final_reps",
            format!("layer with {} rows, table has {n}", tape.shape(*bad).0),
        ));
    }
    let mut parts = Vec::with_capacity(layers.len() + 1);
    parts.push(e0);
    parts.extend_from_slice(layers);
    tape.concat_cols(&parts)
}

/// `(W1 e_i + W2 (e ⊙ e_i)) / sqrt(deg_e * deg_ei)` in row-vector form.
pub fn one_hop_message(
    e: ArrayView1<'_, f64>,
    e_i: ArrayView1<'_, f64>,
    deg_e: f64,
    deg_ei: f64,
    w1: &Array2<f64>,
    w2: &Array2<f64>,
) -> Result<Array1<f64>> {
    if deg_e <= 0.0 || deg_ei <= 0.0 {
        return Err(Error::invalid("one_hop_message: degrees must be positive"));
    }
    if e.len() != e_i.len() || w1.nrows() != e.len() || w2.dim() != w1.dim() {
        return Err(Error::shape("one_hop_message", "operand widths disagree"));
    }
    let inter = &e * &e_i;
    let msg = e_i.dot(w1) + inter.dot(w2);
    Ok(msg / (deg_e * deg_ei).sqrt())
}

/// Applies `e ↦ LReLU(W1 e + W2 e)` hop by hop (no graph term) and
/// concatenates `[x | e1 | ... | el]`.
pub fn infer_transform(
    x: ArrayView2<'_, f64>,
    weights: &[(&Array2<f64>, &Array2<f64>)],
    slope: f64,
) -> Result<Array2<f64>> {
    let mut blocks = vec![x.to_owned()];
    let mut prev = x.to_owned();
    for (k, (w1, w2)) in weights.iter().enumerate() {
        if prev.ncols() != w1.nrows() || w1.dim() != w2.dim() {
            return Err(Error::shape(
                "infer_transform",
                format!("hop {k}: input width {} vs weight {:?}", prev.ncols(), w1.dim()),
            ));
        }
        let mut next = prev.dot(*w1) + prev.dot(*w2);
        next.mapv_inplace(|v| leaky_relu(v, slope));
        blocks.push(next.clone());
        prev = next;
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    Ok(ndarray::concatenate(ndarray::Axis(1), &views).expect("row counts match"))
}

#[cfg(test)]
mod node_form_tests;
