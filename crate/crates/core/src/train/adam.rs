use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::ParamStore;

/// Adam moment estimates for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: IndexMap<String, Vec<f64>>,
    second: IndexMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(k, t)| (k.to_string(), vec![0.0; t.numel()])).collect();
        OptimizerState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.first.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.second.get(name).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam update from the gradients held in `params`,
/// which are zeroed afterwards. A non-finite gradient aborts before any
/// parameter moves.
pub fn adam_step(params: &mut ParamStore, state: &mut OptimizerState, lr: f64) -> Result<()> {
    for (name, t) in params.iter() {
        let g = t
            .grad()
            .ok_or_else(|| Error::Contract(format!("parameter `{name}` has no gradient buffer")))?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in `{name}`")));
        }
        if state.first.get(name).map(Vec::len) != Some(t.numel()) {
            return Err(Error::Contract(format!("optimizer state does not match parameter `{name}`")));
        }
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (name, t) in params.iter_mut() {
        let m = state.first.get_mut(name).expect("checked above");
        let v = state.second.get_mut(name).expect("checked above");
        let g = t.grad().expect("checked above").to_vec();
        let data = t.data_mut();
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        t.zero_grad();
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for (_, t) in params.iter_mut() {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}
