//! Matrix-form propagation checked against a per-node reference that sums
//! weighted neighbor messages directly.

use ndarray::{concatenate, Array1, Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{one_hop_message, propagate, CpaModel};
use crate::graph::{laplacian, SparseMatrix};
use crate::numerics::{leaky_relu, Tape};

/// Per-node propagation over the bipartite graph with weights `m`
/// (texts × right-side nodes). Each node sums weighted neighbor messages
/// directly instead of going through the normalized operator.
fn node_form_layers(
    m: &Array2<f64>,
    table: &Array2<f64>,
    weights: &[(Array2<f64>, Array2<f64>)],
    slope: f64,
) -> Vec<Array2<f64>> {
    let (left, right) = m.dim();
    let n = left + right;
    assert_eq!(table.nrows(), n);
    let mut neighbors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..left {
        for j in 0..right {
            let w = m[[i, j]];
            if w != 0.0 {
                neighbors[i].push((left + j, w));
                neighbors[left + j].push((i, w));
            }
        }
    }
    let degree: Vec<f64> = neighbors.iter().map(|ns| ns.iter().map(|p| p.1).sum()).collect();

    let mut layers = Vec::new();
    let mut prev = table.clone();
    for (w1, w2) in weights {
        let mut rows: Vec<Array1<f64>> = Vec::with_capacity(n);
        for u in 0..n {
            let mut acc = prev.row(u).dot(w1);
            for &(v, w) in &neighbors[u] {
                let msg =
                    one_hop_message(prev.row(u), prev.row(v), degree[u], degree[v], w1, w2).unwrap();
                acc = acc + msg * w;
            }
            rows.push(acc.mapv(|x| leaky_relu(x, slope)));
        }
        let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
        let next = concatenate(Axis(0), &views).unwrap();
        layers.push(next.clone());
        prev = next;
    }
    layers
}

fn max_rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

/// Builds a random model whose graph has `texts` texts, `h` topics per
/// stance and the three labels, with some zero weights.
fn setup(texts: usize, h: usize, hops: usize, seed: u64) -> (CpaModel, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d0 = 6;
    let text_init = Array2::from_shape_simple_fn((texts, d0), || rng.random_range(-1.0..1.0));
    let label_init = Array2::from_shape_simple_fn((3, d0), || rng.random_range(-1.0..1.0));
    let model = CpaModel::new(text_init.view(), label_init.view(), h, 4, hops, 0.01, seed).unwrap();
    let m = Array2::from_shape_simple_fn((texts, 3 * h + 3), || {
        if rng.random::<f64>() < 0.35 {
            0.0
        } else {
            rng.random_range(0.05..1.0)
        }
    });
    (model, m)
}

fn matrix_layers(model: &CpaModel, lap: &SparseMatrix) -> Vec<Array2<f64>> {
    let tape = Tape::new();
    let (e0, ws) = model.leaves(&tape).unwrap();
    let layers = propagate(&tape, e0, lap, &ws, model.leaky_slope).unwrap();
    layers.iter().map(|&v| tape.value(v).clone()).collect()
}

fn node_layers(model: &CpaModel, m: &Array2<f64>) -> Vec<Array2<f64>> {
    let weights: Vec<_> = model
        .weights()
        .into_iter()
        .map(|(a, b)| (a.clone(), b.clone()))
        .collect();
    node_form_layers(m, model.table(), &weights, model.leaky_slope)
}

#[test]
fn matrix_form_matches_per_node_sum() {
    // 3 texts + 3 topics + 3 labels = 9 nodes.
    for seed in 0..5 {
        let (model, m) = setup(3, 1, 2, seed);
        let lap = laplacian(&SparseMatrix::from_dense(m.view()).unwrap()).unwrap();
        for (a, b) in matrix_layers(&model, &lap).iter().zip(node_layers(&model, &m)) {
            assert!(max_rel_err(a, &b) < 1e-6, "seed {seed}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matrix_form_matches_node_form(texts in 1usize..=6, hops in 1usize..=3, seed in 0u64..1000) {
        let (model, m) = setup(texts, 1, hops, seed);
        let lap = laplacian(&SparseMatrix::from_dense(m.view()).unwrap()).unwrap();
        for (a, b) in matrix_layers(&model, &lap).iter().zip(node_layers(&model, &m)) {
            prop_assert!(max_rel_err(a, &b) < 1e-6);
        }
    }

    #[test]
    fn propagation_commutes_with_text_permutation(texts in 2usize..=6, seed in 0u64..1000) {
        let (model, m) = setup(texts, 1, 2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let mut perm: Vec<usize> = (0..texts).collect();
        for i in (1..texts).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let n = model.dims.n_nodes();
        let node_perm: Vec<usize> = perm.iter().copied().chain(texts..n).collect();

        let m_p = m.select(Axis(0), &perm);
        let table_p = model.table().select(Axis(0), &node_perm);
        let dims = model.dims;
        let (w1, w2): (Vec<_>, Vec<_>) =
            model.weights().into_iter().map(|(a, b)| (a.clone(), b.clone())).unzip();
        let permuted = CpaModel::from_parts(dims, table_p, w1, w2, model.leaky_slope).unwrap();

        let lap = laplacian(&SparseMatrix::from_dense(m.view()).unwrap()).unwrap();
        let lap_p = laplacian(&SparseMatrix::from_dense(m_p.view()).unwrap()).unwrap();
        for (a, b) in matrix_layers(&model, &lap).iter().zip(matrix_layers(&permuted, &lap_p)) {
            let a_p = a.select(Axis(0), &node_perm);
            prop_assert!(max_rel_err(&a_p, &b) < 1e-12);
        }
    }
}
