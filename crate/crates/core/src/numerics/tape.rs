//! Reverse-mode differentiation over a fixed set of matrix ops.
//!
//! A [`Tape`] records every op in execution order, so reverse iteration is a
//! valid topological order for the backward pass. Leaves created with
//! [`Tape::param`] route their gradients back into a [`Params`] store.

use std::cell::{Ref, RefCell};

use ndarray::{s, Array2, Axis, Zip};

use super::{ParamId, Params};
use crate::error::{Error, Result};
use crate::graph::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<'a> {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    Transpose(Var),
    SpMM(&'a SparseMatrix, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    GatherElems(Var, Vec<(usize, usize)>),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    CosineRows(Var, Var),
    LogSigmoid(Var),
    Mean(Var),
    Sum(Var),
}

struct Node<'a> {
    value: Array2<f64>,
    op: Op<'a>,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: RefCell<Vec<Node<'a>>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, name: &'static str, value: Array2<f64>, op: Op<'a>) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Ok(Var(nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> Ref<'_, Array2<f64>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value[[0, 0]]
    }

    pub fn constant(&self, value: Array2<f64>) -> Result<Var> {
        self.push("constant", value, Op::Leaf(None))
    }

    /// Snapshot of a stored parameter; gradients flow back to it when it
    /// requires them.
    pub fn param(&self, params: &Params, id: ParamId) -> Result<Var> {
        let t = params.get(id);
        let route = t.requires_grad.then_some(id);
        self.push("param", t.data.clone(), Op::Leaf(route))
    }

    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            if va.ncols() != vb.nrows() {
                return Err(Error::shape("matmul", format!("{:?} x {:?}", va.dim(), vb.dim())));
            }
            va.dot(&*vb)
        };
        self.push("matmul", value, Op::MatMul(a, b))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let value = self.value(a).t().to_owned();
        self.push("transpose", value, Op::Transpose(a))
    }

    /// Constant sparse matrix times a tracked dense matrix.
    pub fn spmm(&self, lhs: &'a SparseMatrix, rhs: Var) -> Result<Var> {
        let value = lhs.mul_dense(self.value(rhs).view())?;
        self.push("spmm", value, Op::SpMM(lhs, rhs))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let value = &*self.value(a) + &*self.value(b);
        self.push("add", value, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let value = &*self.value(a) - &*self.value(b);
        self.push("sub", value, Op::Sub(a, b))
    }

    pub fn elemwise_mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("elemwise_mul", a, b)?;
        let value = &*self.value(a) * &*self.value(b);
        self.push("elemwise_mul", value, Op::Mul(a, b))
    }

    /// `scale * x + shift`.
    pub fn affine(&self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let value = self.value(x).mapv(|v| scale * v + shift);
        self.push("affine", value, Op::Affine(x, scale))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let value = {
            let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
            let rows = views[0].nrows();
            if views.iter().any(|v| v.nrows() != rows) {
                let dims: Vec<_> = views.iter().map(|v| v.dim()).collect();
                return Err(Error::shape("concat_cols", format!("{dims:?}")));
            }
            let vs: Vec<_> = views.iter().map(|v| v.view()).collect();
            ndarray::concatenate(Axis(1), &vs).expect("row counts checked")
        };
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn gather_rows(&self, x: Var, rows: &[usize]) -> Result<Var> {
        let value = {
            let v = self.value(x);
            if let Some(&r) = rows.iter().find(|&&r| r >= v.nrows()) {
                return Err(Error::shape("gather_rows", format!("row {r} of {}", v.nrows())));
            }
            v.select(Axis(0), rows)
        };
        self.push("gather_rows", value, Op::GatherRows(x, rows.to_vec()))
    }

    /// Picks single entries into a column vector.
    pub fn gather_elems(&self, x: Var, idx: &[(usize, usize)]) -> Result<Var> {
        let value = {
            let v = self.value(x);
            let (r, c) = v.dim();
            if let Some(&(i, j)) = idx.iter().find(|&&(i, j)| i >= r || j >= c) {
                return Err(Error::shape("gather_elems", format!("({i}, {j}) of ({r}, {c})")));
            }
            Array2::from_shape_fn((idx.len(), 1), |(k, _)| v[idx[k]])
        };
        self.push("gather_elems", value, Op::GatherElems(x, idx.to_vec()))
    }

    pub fn leaky_relu(&self, x: Var, slope: f64) -> Result<Var> {
        let value = self.value(x).mapv(|v| super::leaky_relu(v, slope));
        self.push("leaky_relu", value, Op::LeakyRelu(x, slope))
    }

    pub fn softmax_rows(&self, x: Var) -> Result<Var> {
        let mut value = self.value(x).to_owned();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        self.push("softmax_rows", value, Op::SoftmaxRows(x))
    }

    /// Row-wise cosine similarity, shape `n x 1`. Zero-norm rows are an error.
    pub fn cosine_sim(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("cosine_sim", a, b)?;
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            let mut out = Array2::zeros((va.nrows(), 1));
            for (i, (ra, rb)) in va.rows().into_iter().zip(vb.rows()).enumerate() {
                let (na, nb) = (ra.dot(&ra).sqrt(), rb.dot(&rb).sqrt());
                if na == 0.0 || nb == 0.0 {
                    return Err(Error::invalid(format!("cosine_sim: zero-norm row {i}")));
                }
                out[[i, 0]] = ra.dot(&rb) / (na * nb);
            }
            out
        };
        self.push("cosine_sim", value, Op::CosineRows(a, b))
    }

    /// Numerically stable `ln σ(x)`.
    pub fn logsigmoid(&self, x: Var) -> Result<Var> {
        let value = self.value(x).mapv(log_sigmoid);
        self.push("logsigmoid", value, Op::LogSigmoid(x))
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let value = {
            let v = self.value(x);
            if v.is_empty() {
                return Err(Error::shape("mean", "empty input"));
            }
            Array2::from_elem((1, 1), v.sum() / v.len() as f64)
        };
        self.push("mean", value, Op::Mean(x))
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let value = Array2::from_elem((1, 1), self.value(x).sum());
        self.push("sum", value, Op::Sum(x))
    }

    /// Accumulates `d loss / d param` into every trainable leaf's `grad`.
    /// Gradients add onto whatever is already stored.
    pub fn backward(&self, loss: Var, params: &mut Params) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.dim() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", nodes[loss.0].value.dim()),
            ));
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let mut send = |v: Var, delta: Array2<f64>| match &mut grads[v.0] {
                Some(acc) => *acc += &delta,
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Leaf(Some(pid)) => params.get_mut(*pid).accumulate(&g),
                Op::Leaf(None) => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    send(*a, g.dot(&vb.t()));
                    send(*b, va.t().dot(&g));
                }
                Op::Transpose(a) => send(*a, g.t().to_owned()),
                Op::SpMM(lhs, rhs) => send(*rhs, lhs.t_mul_dense(g.view())?),
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone());
                    send(*b, -g);
                }
                Op::Mul(a, b) => {
                    send(*a, &g * &nodes[b.0].value);
                    send(*b, &g * &nodes[a.0].value);
                }
                Op::Affine(x, scale) => send(*x, g * *scale),
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = nodes[p.0].value.ncols();
                        send(*p, g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::GatherRows(x, rows) => {
                    let mut dx = Array2::zeros(nodes[x.0].value.dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = dx.row_mut(r);
                        dst += &g.row(k);
                    }
                    send(*x, dx);
                }
                Op::GatherElems(x, idx) => {
                    let mut dx = Array2::zeros(nodes[x.0].value.dim());
                    for (k, &ij) in idx.iter().enumerate() {
                        dx[ij] += g[[k, 0]];
                    }
                    send(*x, dx);
                }
                Op::LeakyRelu(x, slope) => {
                    let mut dx = g;
                    Zip::from(&mut dx)
                        .and(&nodes[x.0].value)
                        .for_each(|d, &v| {
                            if v <= 0.0 {
                                *d *= slope;
                            }
                        });
                    send(*x, dx);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut dx = &g * y;
                    for (mut row, yrow) in dx.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        row.zip_mut_with(&yrow, |d, &yv| *d -= yv * dot);
                    }
                    send(*x, dx);
                }
                Op::CosineRows(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let mut da = Array2::zeros(va.dim());
                    let mut db = Array2::zeros(vb.dim());
                    for i in 0..va.nrows() {
                        let (ra, rb) = (va.row(i), vb.row(i));
                        let (na, nb) = (ra.dot(&ra).sqrt(), rb.dot(&rb).sqrt());
                        let c = node.value[[i, 0]];
                        let gi = g[[i, 0]];
                        let inv = 1.0 / (na * nb);
                        Zip::from(da.row_mut(i)).and(&ra).and(&rb).for_each(|d, &x, &y| {
                            *d = gi * (y * inv - c * x / (na * na));
                        });
                        Zip::from(db.row_mut(i)).and(&ra).and(&rb).for_each(|d, &x, &y| {
                            *d = gi * (x * inv - c * y / (nb * nb));
                        });
                    }
                    send(*a, da);
                    send(*b, db);
                }
                Op::LogSigmoid(x) => {
                    let mut dx = g;
                    Zip::from(&mut dx)
                        .and(&nodes[x.0].value)
                        .for_each(|d, &v| *d *= sigmoid(-v));
                    send(*x, dx);
                }
                Op::Mean(x) => {
                    let dim = nodes[x.0].value.dim();
                    let n = (dim.0 * dim.1) as f64;
                    send(*x, Array2::from_elem(dim, g[[0, 0]] / n));
                }
                Op::Sum(x) => {
                    let dim = nodes[x.0].value.dim();
                    send(*x, Array2::from_elem(dim, g[[0, 0]]));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.5..1.5))
    }

    /// Central-difference check of `d f / d params[id]` against the tape.
    fn check_grad<'s, F>(params: &mut Params, f: F)
    where
        F: Fn(&Tape<'s>, &Params) -> Result<Var>,
    {
        params.zero_grad();
        let tape = Tape::new();
        let loss = f(&tape, params).unwrap();
        tape.backward(loss, params).unwrap();
        let h = 1e-5;
        for id in params.ids().collect::<Vec<_>>() {
            let (r, c) = params.get(id).shape();
            let analytic = params.get(id).grad.clone().unwrap_or_else(|| Array2::zeros((r, c)));
            for i in 0..r {
                for j in 0..c {
                    let orig = params.get(id).data[[i, j]];
                    let eval = |p: &mut Params, x: f64| {
                        p.get_mut(id).data[[i, j]] = x;
                        let t = Tape::new();
                        let l = f(&t, p).unwrap();
                        t.scalar(l)
                    };
                    let plus = eval(params, orig + h);
                    let minus = eval(params, orig - h);
                    params.get_mut(id).data[[i, j]] = orig;
                    let numeric = (plus - minus) / (2.0 * h);
                    let a = analytic[[i, j]];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    assert!(rel < 1e-4, "{} [{i},{j}]: analytic {a} numeric {numeric}", params.name(id));
                }
            }
        }
    }

    fn two_params(seed: u64, sa: (usize, usize), sb: (usize, usize)) -> Params {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::new();
        p.add("a", Tensor::trainable(random(sa.0, sa.1, &mut rng)));
        p.add("b", Tensor::trainable(random(sb.0, sb.1, &mut rng)));
        p
    }

    // Each per-op check reduces the op output to a scalar through a fixed
    // random weighting so every output entry contributes.
    fn weighted_sum(t: &Tape<'_>, x: Var, seed: u64) -> Result<Var> {
        let (r, c) = t.shape(x);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = t.constant(random(r, c, &mut rng))?;
        let prod = t.elemwise_mul(x, w)?;
        t.sum(prod)
    }

    const A: ParamId = ParamId(0);
    const B: ParamId = ParamId(1);

    #[test]
    fn grad_matmul_transpose() {
        let mut p = two_params(1, (3, 4), (3, 4));
        check_grad(&mut p, |t, p| {
            let a = t.param(p, A)?;
            let b = t.param(p, B)?;
            let bt = t.transpose(b)?;
            let m = t.matmul(a, bt)?;
            weighted_sum(t, m, 9)
        });
    }

    #[test]
    fn grad_spmm_add_sub_mul_affine() {
        let mut p = two_params(2, (5, 3), (5, 3));
        let sp = SparseMatrix::from_triplets(
            4,
            5,
            vec![(0, 0, 0.5), (0, 4, -1.0), (2, 1, 2.0), (3, 3, 0.25), (3, 0, 1.5)],
        )
        .unwrap();
        check_grad(&mut p, |t, p| {
            let a = t.param(p, A)?;
            let b = t.param(p, B)?;
            let s1 = t.add(a, b)?;
            let s2 = t.sub(a, b)?;
            let prod = t.elemwise_mul(s1, s2)?;
            let aff = t.affine(prod, -0.7, 0.3)?;
            let y = t.spmm(&sp, aff)?;
            weighted_sum(t, y, 3)
        });
    }

    #[test]
    fn grad_concat_gather() {
        let mut p = two_params(3, (4, 2), (4, 3));
        check_grad(&mut p, |t, p| {
            let a = t.param(p, A)?;
            let b = t.param(p, B)?;
            let c = t.concat_cols(&[a, b, a])?;
            let g = t.gather_rows(c, &[3, 0, 3, 1])?;
            let e = t.gather_elems(g, &[(0, 0), (1, 6), (2, 3), (0, 0)])?;
            let s = weighted_sum(t, g, 4)?;
            let se = weighted_sum(t, e, 5)?;
            t.add(s, se)
        });
    }

    #[test]
    fn grad_leaky_relu_away_from_kink() {
        let mut p = two_params(4, (6, 5), (1, 1));
        for v in p.get_mut(A).data.iter_mut() {
            if v.abs() < 1e-2 {
                *v = 0.1;
            }
        }
        check_grad(&mut p, |t, p| {
            let a = t.param(p, A)?;
            let y = t.leaky_relu(a, 0.01)?;
            weighted_sum(t, y, 6)
        });
    }

    #[test]
    fn grad_softmax_cosine_logsigmoid_mean() {
        let mut p = two_params(5, (4, 6), (4, 6));
        check_grad(&mut p, |t, p| {
            let a = t.param(p, A)?;
            let b = t.param(p, B)?;
            let sm = t.softmax_rows(a)?;
            let s1 = weighted_sum(t, sm, 7)?;
            let cs = t.cosine_sim(a, b)?;
            let ls = t.logsigmoid(cs)?;
            let m = t.mean(ls)?;
            let raw = t.logsigmoid(b)?;
            let s2 = weighted_sum(t, raw, 8)?;
            let tot = t.add(s1, m)?;
            t.add(tot, s2)
        });
    }

    #[test]
    fn spec_examples() {
        let mut p = Params::new();
        let x = p.add("x", Tensor::trainable(array![[1.0, 2.0], [3.0, 4.0]]));
        let t = Tape::new();
        let xv = t.param(&p, x).unwrap();
        assert_eq!(*t.value(t.leaky_relu(xv, 0.01).unwrap()), p.get(x).data);

        let zeros = t.constant(Array2::zeros((2, 2))).unwrap();
        let prod = t.elemwise_mul(xv, zeros).unwrap();
        assert!(t.value(prod).iter().all(|&v| v == 0.0));
        let l = t.sum(prod).unwrap();
        t.backward(l, &mut p).unwrap();
        assert!(p.get(x).grad.as_ref().unwrap().iter().all(|&v| v == 0.0));

        p.zero_grad();
        let t = Tape::new();
        let xv = t.param(&p, x).unwrap();
        let l = t.sum(xv).unwrap();
        t.backward(l, &mut p).unwrap();
        assert_eq!(p.get(x).grad.clone().unwrap(), Array2::<f64>::ones((2, 2)));
        t.backward(l, &mut p).unwrap();
        assert_eq!(p.get(x).grad.clone().unwrap(), Array2::from_elem((2, 2), 2.0));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut p = Params::new();
        let x = p.add("x", Tensor::trainable(Array2::ones((2, 2))));
        let t = Tape::new();
        let xv = t.param(&p, x).unwrap();
        assert!(t.backward(xv, &mut p).is_err());
    }

    #[test]
    fn shape_mismatch_reported() {
        let t = Tape::new();
        let a = t.constant(Array2::ones((2, 3))).unwrap();
        let b = t.constant(Array2::ones((2, 3))).unwrap();
        assert!(matches!(t.matmul(a, b), Err(Error::ShapeMismatch { .. })));
        let c = t.constant(Array2::ones((3, 2))).unwrap();
        assert!(t.add(a, c).is_err());
    }

    #[test]
    fn spmm_matches_dense_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let dense = Array2::from_shape_simple_fn((10, 10), || {
            if rng.random::<f64>() < 0.5 { 0.0 } else { rng.random_range(-2.0..2.0) }
        });
        let rhs = random(10, 10, &mut rng);
        let sp = SparseMatrix::from_dense(dense.view()).unwrap();
        let t = Tape::new();
        let r = t.constant(rhs.clone()).unwrap();
        let y = t.spmm(&sp, r).unwrap();
        let expect = dense.dot(&rhs);
        for (a, b) in t.value(y).iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_stay_finite() {
        let t = Tape::new();
        let x = t.constant(array![[1000.0, -1000.0, 3.0], [0.0, 0.0, 0.0]]).unwrap();
        let y = t.softmax_rows(x).unwrap();
        for row in t.value(y).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let ls = t.logsigmoid(x).unwrap();
        assert!(t.value(ls).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cosine_zero_norm_rejected() {
        let t = Tape::new();
        let a = t.constant(Array2::zeros((1, 3))).unwrap();
        let b = t.constant(Array2::ones((1, 3))).unwrap();
        assert!(t.cosine_sim(a, b).is_err());
    }

    #[test]
    fn stable_log_sigmoid() {
        assert!((log_sigmoid(0.0) - (0.5f64).ln()).abs() < 1e-15);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
    }
}
