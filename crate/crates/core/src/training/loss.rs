//! Target-attended semantic representation and the two training losses.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Softmax over tokens of `target · token / sqrt(dim)`.
pub fn attention_weights(tokens: ArrayView2<'_, f64>, target: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if tokens.nrows() == 0 {
        return Err(Error::invalid("semantic representation needs at least one token"));
    }
    if tokens.ncols() != target.len() {
        return Err(Error::shape(
            "attention_weights",
            format!("tokens {:?}, target {}", tokens.dim(), target.len()),
        ));
    }
    let scale = (target.len() as f64).sqrt();
    let logits = tokens.dot(&target) / scale;
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let total = exp.sum();
    Ok(exp / total)
}

/// Attention-weighted sum of token vectors; returns the weights too.
pub fn semantic_rep(
    tokens: ArrayView2<'_, f64>,
    target: ArrayView1<'_, f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let weights = attention_weights(tokens, target)?;
    let rep = weights.dot(&tokens);
    Ok((rep, weights))
}

/// `-ln σ(x)` without overflow.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Mean over negatives of `-ln σ(v·z_pos - v·z_neg)`.
pub fn loss_contrastive(
    v: ArrayView1<'_, f64>,
    pos: ArrayView1<'_, f64>,
    negs: &[ArrayView1<'_, f64>],
) -> Result<f64> {
    if negs.is_empty() {
        return Err(Error::invalid("contrastive loss needs at least one negative"));
    }
    if pos.len() != v.len() || negs.iter().any(|n| n.len() != v.len()) {
        return Err(Error::shape("loss_contrastive", "vector widths differ"));
    }
    let p = v.dot(&pos);
    let total: f64 = negs.iter().map(|n| neg_log_sigmoid(p - v.dot(n))).sum();
    Ok(total / negs.len() as f64)
}

/// `1 - cos(a, b)`.
pub fn loss_cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("loss_cosine", format!("{} vs {}", a.len(), b.len())));
    }
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine loss of a zero vector"));
    }
    Ok(1.0 - a.dot(&b) / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn single_token_passes_through() {
        let t = array![[0.3, -1.0, 2.0]];
        let (rep, w) = semantic_rep(t.view(), array![5.0, 1.0, 0.0].view()).unwrap();
        assert_eq!(rep, t.row(0));
        assert_eq!(w, array![1.0]);
        assert!(semantic_rep(Array2::zeros((0, 3)).view(), array![1.0, 0.0, 0.0].view()).is_err());
    }

    #[test]
    fn orthonormal_weight_ratio() {
        let d = 768;
        let mut t = Array2::zeros((2, d));
        t[[0, 0]] = 1.0;
        t[[1, 1]] = 1.0;
        let target = t.row(0).to_owned();
        let w = attention_weights(t.view(), target.view()).unwrap();
        let expect = (1.0 / (d as f64).sqrt()).exp();
        assert!((w[0] / w[1] - expect).abs() < 1e-12);
        assert!((w.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contrastive_closed_forms() {
        let v = array![1.0, 0.0];
        let same = array![0.5, 3.0];
        let l = loss_contrastive(v.view(), same.view(), &[same.view(), same.view()]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);

        let pos = array![20.0, 0.0];
        let neg = array![0.0, 0.0];
        assert!(loss_contrastive(v.view(), pos.view(), &[neg.view()]).unwrap() < 1e-8);

        let pos = array![1.0, 0.0];
        let l = loss_contrastive(v.view(), pos.view(), &[neg.view()]).unwrap();
        let expect = -(1.0 / (1.0 + (-1.0f64).exp())).ln();
        assert!((l - expect).abs() < 1e-15);
        assert!((l - 0.313262).abs() < 1e-6);

        assert!(loss_contrastive(v.view(), array![1.0].view(), &[neg.view()]).is_err());
    }

    #[test]
    fn cosine_cases() {
        let a = array![1.0, 2.0];
        assert!(loss_cosine(a.view(), a.view()).unwrap().abs() < 1e-15);
        assert!((loss_cosine(a.view(), array![-2.0, 1.0].view()).unwrap() - 1.0).abs() < 1e-15);
        assert!((loss_cosine(a.view(), (-&a).view()).unwrap() - 2.0).abs() < 1e-15);
        assert!(loss_cosine(a.view(), array![0.0, 0.0].view()).is_err());
    }

    proptest! {
        #[test]
        fn rep_lies_in_convex_hull(
            vals in proptest::collection::vec(-3.0f64..3.0, 4 * 5),
            target in proptest::collection::vec(-3.0f64..3.0, 5),
        ) {
            let t = Array2::from_shape_vec((4, 5), vals).unwrap();
            let (rep, w) = semantic_rep(t.view(), Array1::from(target).view()).unwrap();
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.sum() - 1.0).abs() < 1e-12);
            for j in 0..5 {
                let col = t.column(j);
                let lo = col.fold(f64::INFINITY, |m, &v| m.min(v));
                let hi = col.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                prop_assert!(rep[j] >= lo - 1e-12 && rep[j] <= hi + 1e-12);
            }
        }

        #[test]
        fn contrastive_positive_and_decreasing(gap in -30.0f64..30.0, step in 0.01f64..5.0) {
            let v = array![1.0];
            let neg = array![0.0];
            let a = loss_contrastive(v.view(), array![gap].view(), &[neg.view()]).unwrap();
            let b = loss_contrastive(v.view(), array![gap + step].view(), &[neg.view()]).unwrap();
            prop_assert!(a > 0.0);
            prop_assert!(b < a);
        }

        #[test]
        fn cosine_in_range(a in proptest::collection::vec(-5.0f64..5.0, 3), b in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let (a, b) = (Array1::from(a), Array1::from(b));
            prop_assume!(a.dot(&a) > 1e-6 && b.dot(&b) > 1e-6);
            let l = loss_cosine(a.view(), b.view()).unwrap();
            prop_assert!((-1e-12..=2.0 + 1e-12).contains(&l));
        }
    }
}
