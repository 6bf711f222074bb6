//! Heterogeneous topic graph: text–topic and text–label adjacency, the
//! bipartite collaborative matrix and its symmetric normalization.

mod sparse;

use std::collections::HashMap;

use rand::Rng;

pub use sparse::SparseMatrix;

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::topics::TopicDistribution;

/// Text–topic weights below this are dropped from `m1`.
pub const PRUNE_THRESHOLD: f64 = 1e-6;

pub const N_LABELS: usize = 3;

#[derive(Debug, Clone)]
pub struct Adjacency {
    /// `n_tr x 3H` text–topic weights.
    pub m1: SparseMatrix,
    /// `n_tr x 3` one-hot text–label edges.
    pub m2: SparseMatrix,
    /// `[m1 | m2]`.
    pub m: SparseMatrix,
}

/// Node layout is texts, then topics, then labels.
#[derive(Debug, Clone)]
pub struct HeteroTopicGraph {
    pub m1: SparseMatrix,
    pub m2: SparseMatrix,
    pub m: SparseMatrix,
    pub lap: SparseMatrix,
    pub n_texts: usize,
    pub n_topics: usize,
}

impl HeteroTopicGraph {
    pub fn build(train: &[&Example], dis: &[TopicDistribution]) -> Result<Self> {
        let adj = build_adjacency(train, dis)?;
        let lap = laplacian(&adj.m)?;
        Ok(HeteroTopicGraph {
            n_texts: adj.m1.rows(),
            n_topics: adj.m1.cols(),
            m1: adj.m1,
            m2: adj.m2,
            m: adj.m,
            lap,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_texts + self.n_topics + N_LABELS
    }

    pub fn topic_node(&self, k: usize) -> usize {
        self.n_texts + k
    }

    pub fn label_node(&self, j: usize) -> usize {
        self.n_texts + self.n_topics + j
    }
}

pub fn build_adjacency(train: &[&Example], dis: &[TopicDistribution]) -> Result<Adjacency> {
    if train.len() != dis.len() {
        return Err(Error::shape(
            "build_adjacency",
            format!("{} examples but {} distributions", train.len(), dis.len()),
        ));
    }
    let n_topics = dis.first().map_or(0, |d| d.len());
    let mut m1 = Vec::new();
    let mut m2 = Vec::with_capacity(train.len());
    for (i, (ex, d)) in train.iter().zip(dis).enumerate() {
        if d.len() != n_topics {
            return Err(Error::shape(
                "build_adjacency",
                format!("distribution {i} has {} entries, expected {n_topics}", d.len()),
            ));
        }
        let stance = ex
            .stance
            .ok_or_else(|| Error::invalid(format!("training example {} has no stance", ex.id)))?;
        let kept: f64 = d.values().iter().filter(|&&w| w >= PRUNE_THRESHOLD).sum();
        for (k, &w) in d.values().iter().enumerate() {
            if w >= PRUNE_THRESHOLD {
                m1.push((i, k, w / kept));
            }
        }
        m2.push((i, stance.index(), 1.0));
    }
    let m = m1
        .iter()
        .copied()
        .chain(m2.iter().map(|&(i, j, w)| (i, n_topics + j, w)))
        .collect();
    Ok(Adjacency {
        m1: SparseMatrix::from_triplets(train.len(), n_topics, m1)?,
        m2: SparseMatrix::from_triplets(train.len(), N_LABELS, m2)?,
        m: SparseMatrix::from_triplets(train.len(), n_topics + N_LABELS, m)?,
    })
}

/// `D^{-1/2} [[0, M], [Mᵀ, 0]] D^{-1/2}` over `rows + cols` nodes.
/// Zero-degree nodes end up with empty rows and columns.
pub fn laplacian(m: &SparseMatrix) -> Result<SparseMatrix> {
    if let Some((r, c, w)) = m.iter().find(|&(_, _, w)| w < 0.0) {
        return Err(Error::invalid(format!("negative weight {w} at ({r}, {c})")));
    }
    let (n_left, n_right) = m.shape();
    let n = n_left + n_right;
    let mut degree = vec![0.0; n];
    for (r, c, w) in m.iter() {
        degree[r] += w;
        degree[n_left + c] += w;
    }
    let mut entries = Vec::with_capacity(2 * m.nnz());
    for (r, c, w) in m.iter() {
        if w == 0.0 {
            continue;
        }
        let j = n_left + c;
        let v = w / (degree[r] * degree[j]).sqrt();
        entries.push((r, j, v));
        entries.push((j, r, v));
    }
    SparseMatrix::from_triplets(n, n, entries)
}

/// Training-time node and edge dropout on a square operator. Each
/// undirected edge `{r, c}` is kept or dropped once, so a symmetric input
/// stays symmetric; survivors are rescaled by `1 / (1 - edge_rate)`.
/// Dropped nodes lose their whole row and column.
pub fn dropout_graph<R: Rng + ?Sized>(
    lap: &SparseMatrix,
    node_rate: f64,
    edge_rate: f64,
    rng: &mut R,
) -> Result<SparseMatrix> {
    for (name, rate) in [("node", node_rate), ("edge", edge_rate)] {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("{name} dropout rate {rate} not in [0, 1)")));
        }
    }
    if lap.rows() != lap.cols() {
        return Err(Error::shape("dropout_graph", format!("{:?} is not square", lap.shape())));
    }
    if node_rate == 0.0 && edge_rate == 0.0 {
        return Ok(lap.clone());
    }
    let dropped: Vec<bool> = if node_rate > 0.0 {
        (0..lap.rows()).map(|_| rng.random::<f64>() < node_rate).collect()
    } else {
        vec![false; lap.rows()]
    };
    let scale = 1.0 / (1.0 - edge_rate);
    let mut decided: HashMap<(usize, usize), bool> = HashMap::new();
    Ok(lap.filter_map(|r, c, w| {
        let keep_edge = edge_rate == 0.0
            || *decided
                .entry((r.min(c), r.max(c)))
                .or_insert_with(|| rng.random::<f64>() >= edge_rate);
        if dropped[r] || dropped[c] || !keep_edge {
            None
        } else if edge_rate > 0.0 {
            Some(w * scale)
        } else {
            Some(w)
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, Stance};
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ex(i: usize, stance: Stance) -> Example {
        Example {
            id: i.to_string(),
            text: String::new(),
            target: "t".into(),
            stance: Some(stance),
            split: Split::Train,
            tokens: vec![],
        }
    }

    fn dist(v: &[f64]) -> TopicDistribution {
        TopicDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn adjacency_direct_placement() {
        let a = ex(0, Stance::Favor);
        let b = ex(1, Stance::Against);
        let adj = build_adjacency(&[&a, &b], &[dist(&[1.0, 0.0, 0.0]), dist(&[0.0, 0.0, 1.0])])
            .unwrap();
        assert_eq!(
            adj.m1.to_dense(),
            ndarray::array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]
        );
        assert_eq!(adj.m2.to_dense().row(1).to_vec(), [0.0, 0.0, 1.0]);
        assert_eq!(adj.m.shape(), (2, 6));
        assert_eq!(adj.m.get(1, 5), 1.0);
    }

    #[test]
    fn adjacency_length_mismatch() {
        let a = ex(0, Stance::Favor);
        assert!(build_adjacency(&[&a], &[]).is_err());
    }

    #[test]
    fn pruned_rows_still_sum_to_one() {
        let a = ex(0, Stance::None);
        let d = dist(&[0.5 - 1e-7, 1e-7, 0.5]);
        let adj = build_adjacency(&[&a], &[d]).unwrap();
        assert_eq!(adj.m1.nnz(), 2);
        assert!((adj.m1.row_sums()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn laplacian_two_node_example() {
        let m = SparseMatrix::from_triplets(1, 1, vec![(0, 0, 2.0)]).unwrap();
        let lap = laplacian(&m).unwrap();
        assert_eq!(lap.to_dense(), ndarray::array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn laplacian_isolated_node_and_negative_weight() {
        let m = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0)]).unwrap();
        let lap = laplacian(&m).unwrap().to_dense();
        assert!(lap.row(1).iter().all(|&v| v == 0.0));
        assert!(lap.column(3).iter().all(|&v| v == 0.0));
        let neg = SparseMatrix::from_triplets(1, 1, vec![(0, 0, -1.0)]).unwrap();
        assert!(laplacian(&neg).is_err());
    }

    fn dense_oracle(m: &Array2<f64>) -> Array2<f64> {
        let (a, b) = m.dim();
        let n = a + b;
        let mut adj = Array2::zeros((n, n));
        for i in 0..a {
            for j in 0..b {
                adj[[i, a + j]] = m[[i, j]];
                adj[[a + j, i]] = m[[i, j]];
            }
        }
        let d: Vec<f64> = (0..n).map(|i| adj.row(i).sum()).collect();
        let mut out = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if adj[[i, j]] != 0.0 {
                    out[[i, j]] = adj[[i, j]] / (d[i] * d[j]).sqrt();
                }
            }
        }
        out
    }

    fn power_iteration_radius(lap: &Array2<f64>) -> f64 {
        let n = lap.nrows();
        let mut x = ndarray::Array1::from_iter((0..n).map(|i| 1.0 + (i as f64 * 0.37).sin()));
        let mut est = 0.0;
        for _ in 0..500 {
            // Iterate on L² so the bipartite ±λ pair does not oscillate.
            let y = lap.dot(&lap.dot(&x));
            let norm = y.dot(&y).sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            est = (x.dot(&y) / x.dot(&x)).sqrt();
            x = y / norm;
        }
        est
    }

    proptest! {
        #[test]
        fn laplacian_matches_dense_oracle(
            a in 1usize..8,
            b in 1usize..8,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Array2::from_shape_fn((a, b), |_| {
                if rng.random::<f64>() < 0.4 { 0.0 } else { rng.random::<f64>() * 3.0 }
            });
            let lap = laplacian(&SparseMatrix::from_dense(m.view()).unwrap()).unwrap();
            prop_assert!(lap.is_symmetric());
            let oracle = dense_oracle(&m);
            let dense = lap.to_dense();
            for (x, y) in dense.iter().zip(oracle.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
            prop_assert!(power_iteration_radius(&dense) <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn dropout_identity_at_zero_rates() {
        let m = SparseMatrix::from_triplets(2, 3, vec![(0, 1, 0.5), (1, 2, 2.0)]).unwrap();
        let lap = laplacian(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(dropout_graph(&lap, 0.0, 0.0, &mut rng).unwrap(), lap);
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let lap = SparseMatrix::zeros(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dropout_graph(&lap, 1.0, 0.0, &mut rng).is_err());
        assert!(dropout_graph(&lap, 0.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn edge_dropout_binomial_bounds() {
        // 1000 entries, p = 0.5: the survivor count is Binomial(1000, 0.5),
        // sd ≈ 15.8, so [400, 600] is a > 6σ window.
        let entries = (0..50)
            .flat_map(|r| (r + 1..50).map(move |c| (r, c)))
            .take(1000)
            .enumerate()
            .map(|(i, (r, c))| (r, c, 1.0 + i as f64))
            .collect();
        let m = SparseMatrix::from_triplets(50, 50, entries).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = dropout_graph(&m, 0.0, 0.5, &mut rng).unwrap();
            assert!((400..=600).contains(&d.nnz()), "seed {seed}: {}", d.nnz());
            for (r, c, w) in d.iter() {
                assert_eq!(w, 2.0 * m.get(r, c));
            }
        }
    }

    #[test]
    fn edge_dropout_keeps_symmetry() {
        let m = SparseMatrix::from_dense(Array2::from_elem((5, 7), 1.0).view()).unwrap();
        let lap = laplacian(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = dropout_graph(&lap, 0.0, 0.5, &mut rng).unwrap();
        assert!(d.is_symmetric());
        assert!(d.nnz() < lap.nnz());
        assert!(dropout_graph(&m, 0.1, 0.1, &mut rng).is_err());
    }

    #[test]
    fn node_dropout_clears_rows_and_columns() {
        let m = SparseMatrix::from_dense(Array2::from_elem((6, 6), 1.0).view()).unwrap();
        let lap = laplacian(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = dropout_graph(&lap, 0.5, 0.0, &mut rng).unwrap();
        let dense = d.to_dense();
        for i in 0..12 {
            let row_empty = dense.row(i).iter().all(|&v| v == 0.0);
            let col_empty = dense.column(i).iter().all(|&v| v == 0.0);
            assert_eq!(row_empty, col_empty);
        }
        assert!(d.nnz() < lap.nnz());
        assert!(d.is_symmetric());
    }
}
