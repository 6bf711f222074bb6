//! Test-side reference implementations.
#![allow(dead_code)]

use cosd::cpa::one_hop_message;
use cosd::numerics::leaky_relu;
use ndarray::{concatenate, Array1, Array2, Axis};

/// Per-node propagation over the bipartite graph with weights `m`
/// (texts × right-side nodes). Each node sums weighted neighbor messages
/// directly instead of going through the normalized operator.
pub fn node_form_layers(
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

pub fn max_rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}
