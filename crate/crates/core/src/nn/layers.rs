//! Dense layers and LSTM cells as handles into a [`ParamStore`].

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    pub(crate) fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `y = act(W x + b)` with `W` stored row-major as `[outputs, inputs]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl DenseLayer {
    pub fn create(store: &mut ParamStore, prefix: &str, inputs: usize, outputs: usize) -> Result<Self> {
        let weight = store.add_uniform(&format!("{prefix}.weight"), &[outputs, inputs], inputs)?;
        let bias = store.add_uniform(&format!("{prefix}.bias"), &[outputs], inputs)?;
        Ok(DenseLayer { weight, bias, inputs, outputs })
    }

    pub fn bind(store: &ParamStore, prefix: &str, inputs: usize, outputs: usize) -> Result<Self> {
        let weight = store.require(&format!("{prefix}.weight"), &[outputs, inputs])?;
        let bias = store.require(&format!("{prefix}.bias"), &[outputs])?;
        Ok(DenseLayer { weight, bias, inputs, outputs })
    }

    pub fn forward(&self, store: &ParamStore, input: &[f64], act: Activation) -> Result<Vec<f64>> {
        if input.len() != self.inputs {
            return Err(Error::Config(format!("dense layer expects {} inputs, got {}", self.inputs, input.len())));
        }
        let w = store.values(self.weight);
        let b = store.values(self.bias);
        Ok((0..self.outputs)
            .map(|o| {
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                act.apply(b[o] + dot(row, input))
            })
            .collect())
    }
}

/// Single LSTM cell, no peepholes. Gate rows are stacked in the order
/// input, forget, candidate, output; one bias vector per gate row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(size: usize) -> Self {
        LstmState { hidden: vec![0.0; size], cell: vec![0.0; size] }
    }
}

/// Activated gate values and the new state of one LSTM step.
#[derive(Clone, Debug)]
pub(crate) struct LstmStepCache {
    /// `[i; f; g; o]`, each of length `hidden`.
    pub gates: Vec<f64>,
    pub tanh_cell: Vec<f64>,
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmCell {
    pub fn create(store: &mut ParamStore, prefix: &str, inputs: usize, hidden: usize) -> Result<Self> {
        let fan_in = inputs + hidden;
        let w_ih = store.add_uniform(&format!("{prefix}.w_ih"), &[4 * hidden, inputs], fan_in)?;
        let w_hh = store.add_uniform(&format!("{prefix}.w_hh"), &[4 * hidden, hidden], fan_in)?;
        let bias = store.add_uniform(&format!("{prefix}.bias"), &[4 * hidden], fan_in)?;
        Ok(LstmCell { w_ih, w_hh, bias, inputs, hidden })
    }

    pub fn bind(store: &ParamStore, prefix: &str, inputs: usize, hidden: usize) -> Result<Self> {
        let w_ih = store.require(&format!("{prefix}.w_ih"), &[4 * hidden, inputs])?;
        let w_hh = store.require(&format!("{prefix}.w_hh"), &[4 * hidden, hidden])?;
        let bias = store.require(&format!("{prefix}.bias"), &[4 * hidden])?;
        Ok(LstmCell { w_ih, w_hh, bias, inputs, hidden })
    }

    pub(crate) fn step_cached(&self, store: &ParamStore, x: &[f64], h: &[f64], c: &[f64]) -> LstmStepCache {
        let hs = self.hidden;
        let w_ih = store.values(self.w_ih);
        let w_hh = store.values(self.w_hh);
        let b = store.values(self.bias);
        let mut gates: Vec<f64> = (0..4 * hs)
            .map(|r| b[r] + dot(&w_ih[r * self.inputs..(r + 1) * self.inputs], x) + dot(&w_hh[r * hs..(r + 1) * hs], h))
            .collect();
        for (r, a) in gates.iter_mut().enumerate() {
            *a = if (2 * hs..3 * hs).contains(&r) { a.tanh() } else { logistic(*a) };
        }
        let mut cell = vec![0.0; hs];
        let mut tanh_cell = vec![0.0; hs];
        let mut hidden = vec![0.0; hs];
        for k in 0..hs {
            let (i, f, g, o) = (gates[k], gates[hs + k], gates[2 * hs + k], gates[3 * hs + k]);
            cell[k] = f * c[k] + i * g;
            tanh_cell[k] = cell[k].tanh();
            hidden[k] = o * tanh_cell[k];
        }
        LstmStepCache { gates, tanh_cell, hidden, cell }
    }

    pub fn step(&self, store: &ParamStore, x: &[f64], state: &LstmState) -> LstmState {
        let cache = self.step_cached(store, x, &state.hidden, &state.cell);
        LstmState { hidden: cache.hidden, cell: cache.cell }
    }

    /// Runs the cell over `sequence` (rows are time steps). Returns every
    /// hidden output and the final state.
    pub fn run(
        &self,
        store: &ParamStore,
        sequence: &[Vec<f64>],
        initial: LstmState,
    ) -> Result<(Vec<Vec<f64>>, LstmState)> {
        if sequence.is_empty() {
            return Err(Error::Config("lstm sequence must have at least one step".into()));
        }
        let mut state = initial;
        let mut outputs = Vec::with_capacity(sequence.len());
        for (t, x) in sequence.iter().enumerate() {
            if x.len() != self.inputs {
                return Err(Error::Config(format!("lstm expects {} inputs, step {t} has {}", self.inputs, x.len())));
            }
            if x.iter().any(|v| v.is_nan()) {
                return Err(Error::Data(format!("NaN in lstm input at step {t}")));
            }
            state = self.step(store, x, &state);
            outputs.push(state.hidden.clone());
        }
        Ok((outputs, state))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Overflow-free logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
