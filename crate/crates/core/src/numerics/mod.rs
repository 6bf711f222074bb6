//! Dense tensors, a small reverse-mode tape, Adam and Xavier init.

mod adam;
mod tape;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamState};
pub use tape::{Tape, Var};

/// Negative-side slope of LReLU unless configured otherwise.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub data: Array2<f64>,
    pub grad: Option<Array2<f64>>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn constant(data: Array2<f64>) -> Self {
        Tensor {
            data,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn trainable(data: Array2<f64>) -> Self {
        Tensor {
            data,
            grad: None,
            requires_grad: true,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(0.0);
        }
    }

    pub(crate) fn accumulate(&mut self, delta: &Array2<f64>) {
        match &mut self.grad {
            Some(g) => *g += delta,
            None => self.grad = Some(delta.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Owning store of named tensors; tapes reference entries by [`ParamId`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    tensors: Vec<Tensor>,
    names: Vec<String>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.tensors.push(tensor);
        self.names.push(name.into());
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }
}

/// Uniform on `±sqrt(6 / (rows + cols))`.
pub fn xavier_init(rows: usize, cols: usize, seed: u64) -> Result<Tensor> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!("xavier_init needs positive dims, got {rows}x{cols}")));
    }
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array2::from_shape_simple_fn((rows, cols), || dist.sample(&mut rng));
    Ok(Tensor::trainable(data))
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_support_and_determinism() {
        let t = xavier_init(30, 50, 11).unwrap();
        let bound = (6.0f64 / 80.0).sqrt();
        assert!(t.data.iter().all(|v| v.abs() <= bound));
        assert_eq!(t, xavier_init(30, 50, 11).unwrap());
        assert_ne!(t, xavier_init(30, 50, 12).unwrap());
        assert!(t.requires_grad);
    }

    #[test]
    fn xavier_mean_within_three_sigma() {
        let (r, c) = (200, 500);
        let t = xavier_init(r, c, 3).unwrap();
        let bound = (6.0 / (r + c) as f64).sqrt();
        let n = (r * c) as f64;
        // Uniform(-b, b) has variance b²/3; the sample mean has sd b/sqrt(3n).
        let sigma = bound / (3.0 * n).sqrt();
        let mean = t.data.sum() / n;
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} sigma {sigma}");
    }

    #[test]
    fn xavier_zero_dims() {
        assert!(xavier_init(0, 3, 0).is_err());
    }
}
