use ndarray::Array2;

use super::{ParamId, Params};
use crate::error::{Error, Result};

/// Adam moments for a group of parameters sharing one learning rate.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    members: Vec<ParamId>,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, members: Vec<ParamId>, params: &Params) -> Self {
        let zeros = |id: &ParamId| Array2::zeros(params.get(*id).shape());
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: members.iter().map(zeros).collect(),
            second: members.iter().map(zeros).collect(),
            members,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn members(&self) -> &[ParamId] {
        &self.members
    }
}

/// One bias-corrected Adam update over the state's members; their
/// gradients are zeroed afterwards.
pub fn adam_step(state: &mut AdamState, params: &mut Params) -> Result<()> {
    if let Some(id) = state
        .members
        .iter()
        .find(|id| params.get(**id).grad.is_none())
    {
        return Err(Error::MissingGrad(id.0));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (i, id) in state.members.iter().enumerate() {
        let tensor = params.get_mut(*id);
        let grad = tensor.grad.as_mut().expect("checked above");
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        ndarray::Zip::from(&mut tensor.data)
            .and(&mut *grad)
            .and(m)
            .and(v)
            .for_each(|p, g, m, v| {
                *m = b1 * *m + (1.0 - b1) * *g;
                *v = b2 * *v + (1.0 - b2) * *g * *g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
                *g = 0.0;
            });
    }
    Ok(())
}
