//! Reverse-mode gradient tape.
//!
//! Every value produced during a forward pass is a node holding a vector.
//! Nodes are appended in execution order, so replaying them backwards visits
//! each operation after all of its consumers.

use super::layers::{Activation, DenseLayer, LstmCell, LstmStepCache};
use super::params::ParamStore;
use crate::data::TimeGrid;
use crate::decoder::{decode, decoder_gradients};
use crate::error::{Error, Result};
use crate::losses::{kl_from_logvar, mse};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Constant,
    Dense {
        layer: DenseLayer,
        input: Var,
        act: Activation,
    },
    /// Output is `[h'; c']`.
    LstmStep {
        cell: LstmCell,
        x: Var,
        h: Var,
        c: Var,
        gates: Vec<f64>,
        tanh_cell: Vec<f64>,
    },
    Slice {
        src: Var,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
    },
    /// `z = mean + exp(0.5 * logvar) * eps`
    Reparam {
        mean: Var,
        logvar: Var,
        eps: Vec<f64>,
    },
    /// Output is `[x_1..x_P, y_1..y_P]`.
    Descriptive {
        z: Var,
        grid: TimeGrid,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    Kl {
        mean: Var,
        logvar: Var,
    },
    WeightedSum {
        terms: Vec<(Var, f64)>,
    },
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn dense(&mut self, store: &ParamStore, layer: DenseLayer, input: Var, act: Activation) -> Result<Var> {
        let out = layer.forward(store, self.value(input), act)?;
        Ok(self.push(out, Op::Dense { layer, input, act }))
    }

    /// One LSTM step. Returns `(h', c')`.
    pub fn lstm_step(&mut self, store: &ParamStore, cell: LstmCell, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        if self.value(x).len() != cell.inputs {
            return Err(Error::Config(format!("lstm expects {} inputs, got {}", cell.inputs, self.value(x).len())));
        }
        let LstmStepCache { gates, tanh_cell, hidden, cell: c_new } =
            cell.step_cached(store, self.value(x), self.value(h), self.value(c));
        let mut out = hidden;
        out.extend_from_slice(&c_new);
        let joint = self.push(out, Op::LstmStep { cell, x, h, c, gates, tanh_cell });
        let hs = cell.hidden;
        Ok((self.slice(joint, 0, hs), self.slice(joint, hs, hs)))
    }

    /// Unrolls `cell` over constant input rows from a zero state; returns the final hidden state.
    pub fn lstm_sequence(&mut self, store: &ParamStore, cell: LstmCell, rows: Vec<Vec<f64>>) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Config("lstm sequence must have at least one step".into()));
        }
        let mut h = self.constant(vec![0.0; cell.hidden]);
        let mut c = self.constant(vec![0.0; cell.hidden]);
        for (t, row) in rows.into_iter().enumerate() {
            if row.iter().any(|v| v.is_nan()) {
                return Err(Error::Data(format!("NaN in lstm input at step {t}")));
            }
            let x = self.constant(row);
            (h, c) = self.lstm_step(store, cell, x, h, c)?;
        }
        Ok(h)
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Var {
        let value = self.value(src)[start..start + len].to_vec();
        self.push(value, Op::Slice { src, start })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let value = parts.iter().flat_map(|p| self.value(*p).iter().copied()).collect();
        self.push(value, Op::Concat { parts: parts.to_vec() })
    }

    pub fn reparameterize(&mut self, mean: Var, logvar: Var, eps: &[f64]) -> Var {
        let value = self
            .value(mean)
            .iter()
            .zip(self.value(logvar))
            .zip(eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
        self.push(value, Op::Reparam { mean, logvar, eps: eps.to_vec() })
    }

    /// Descriptive decoder applied to a 3-vector latent node.
    pub fn descriptive_decode(&mut self, z: Var, v0x: f64, grid: TimeGrid) -> Result<Var> {
        let zv = self.value(z);
        if zv.len() != 3 {
            return Err(Error::Config(format!("descriptive decoder needs 3 latents, got {}", zv.len())));
        }
        let value = decode([zv[0], zv[1], zv[2]], v0x, &grid).flatten();
        Ok(self.push(value, Op::Descriptive { z, grid }))
    }

    pub fn mse(&mut self, pred: Var, target: Vec<f64>) -> Result<Var> {
        let value = mse(self.value(pred), &target)?;
        Ok(self.push(vec![value], Op::Mse { pred, target }))
    }

    pub fn kl(&mut self, mean: Var, logvar: Var) -> Var {
        let value = kl_from_logvar(self.value(mean), self.value(logvar));
        self.push(vec![value], Op::Kl { mean, logvar })
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let value = terms.iter().map(|(v, w)| w * self.scalar(*v)).sum();
        self.push(vec![value], Op::WeightedSum { terms: terms.to_vec() })
    }

    /// Propagates `seed * d(loss)` back through the tape, accumulating into
    /// the gradients of `store`. Gradients are added, never overwritten.
    pub fn backward(&self, loss: Var, seed: f64, store: &mut ParamStore) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage("backward called before a forward pass was recorded".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage("backward needs a scalar loss node".into()));
        }
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, Vec::new);
        grads[loss.0] = vec![seed];

        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut grads[i]);
            if g.is_empty() {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Dense { layer, input, act } => {
                    let x = self.value(*input);
                    let delta: Vec<f64> =
                        g.iter().zip(&node.value).map(|(g, y)| g * act.derivative_from_output(*y)).collect();
                    {
                        let wg = store.grads_mut(layer.weight);
                        for (o, d) in delta.iter().enumerate() {
                            for (w, xi) in wg[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(x) {
                                *w += d * xi;
                            }
                        }
                    }
                    for (b, d) in store.grads_mut(layer.bias).iter_mut().zip(&delta) {
                        *b += d;
                    }
                    let w = store.values(layer.weight);
                    let mut dx = vec![0.0; layer.inputs];
                    for (o, d) in delta.iter().enumerate() {
                        for (acc, wv) in dx.iter_mut().zip(&w[o * layer.inputs..(o + 1) * layer.inputs]) {
                            *acc += d * wv;
                        }
                    }
                    accumulate(&mut grads, *input, &dx);
                }
                Op::LstmStep { cell, x, h, c, gates, tanh_cell } => {
                    let hs = cell.hidden;
                    let (dh_new, dc_new) = g.split_at(hs);
                    let c_prev = self.value(*c);
                    let mut da = vec![0.0; 4 * hs];
                    let mut dc_prev = vec![0.0; hs];
                    for k in 0..hs {
                        let (ig, fg, gg, og) = (gates[k], gates[hs + k], gates[2 * hs + k], gates[3 * hs + k]);
                        let tc = tanh_cell[k];
                        let dc = dc_new[k] + dh_new[k] * og * (1.0 - tc * tc);
                        let d_o = dh_new[k] * tc;
                        da[k] = dc * gg * ig * (1.0 - ig);
                        da[hs + k] = dc * c_prev[k] * fg * (1.0 - fg);
                        da[2 * hs + k] = dc * ig * (1.0 - gg * gg);
                        da[3 * hs + k] = d_o * og * (1.0 - og);
                        dc_prev[k] = dc * fg;
                    }
                    let xv = self.value(*x);
                    let hv = self.value(*h);
                    outer_accumulate(store.grads_mut(cell.w_ih), &da, xv);
                    outer_accumulate(store.grads_mut(cell.w_hh), &da, hv);
                    for (b, d) in store.grads_mut(cell.bias).iter_mut().zip(&da) {
                        *b += d;
                    }
                    if !matches!(self.nodes[x.0].op, Op::Constant) {
                        let dx = transpose_mul(store.values(cell.w_ih), &da, cell.inputs);
                        accumulate(&mut grads, *x, &dx);
                    }
                    if !matches!(self.nodes[h.0].op, Op::Constant) {
                        let dh = transpose_mul(store.values(cell.w_hh), &da, hs);
                        accumulate(&mut grads, *h, &dh);
                    }
                    accumulate(&mut grads, *c, &dc_prev);
                }
                Op::Slice { src, start } => {
                    let n = self.value(*src).len();
                    let buf = &mut grads[src.0];
                    if buf.is_empty() {
                        buf.resize(n, 0.0);
                    }
                    for (k, gv) in g.iter().enumerate() {
                        buf[start + k] += gv;
                    }
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        accumulate(&mut grads, *p, &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Reparam { mean, logvar, eps } => {
                    let lv = self.value(*logvar);
                    let dlv: Vec<f64> =
                        g.iter().zip(lv).zip(eps).map(|((gv, l), e)| gv * e * 0.5 * (0.5 * l).exp()).collect();
                    accumulate(&mut grads, *mean, &g);
                    accumulate(&mut grads, *logvar, &dlv);
                }
                Op::Descriptive { z, grid } => {
                    let zv = self.value(*z);
                    let rows = decoder_gradients([zv[0], zv[1], zv[2]], grid);
                    let p = rows.len();
                    let mut dz = [0.0; 3];
                    for (i, r) in rows.iter().enumerate() {
                        dz[0] += g[i] * r.dx_dz1;
                        dz[1] += g[p + i] * r.dy_dz2;
                        dz[2] += g[p + i] * r.dy_dz3;
                    }
                    accumulate(&mut grads, *z, &dz);
                }
                Op::Mse { pred, target } => {
                    let pv = self.value(*pred);
                    let scale = 2.0 * g[0] / pv.len() as f64;
                    let d: Vec<f64> = pv.iter().zip(target).map(|(p, t)| scale * (p - t)).collect();
                    accumulate(&mut grads, *pred, &d);
                }
                Op::Kl { mean, logvar } => {
                    let dm: Vec<f64> = self.value(*mean).iter().map(|m| g[0] * m).collect();
                    let dlv: Vec<f64> = self.value(*logvar).iter().map(|l| g[0] * 0.5 * (l.exp() - 1.0)).collect();
                    accumulate(&mut grads, *mean, &dm);
                    accumulate(&mut grads, *logvar, &dlv);
                }
                Op::WeightedSum { terms } => {
                    for (v, w) in terms {
                        accumulate(&mut grads, *v, &[g[0] * w]);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Vec<f64>], v: Var, d: &[f64]) {
    let buf = &mut grads[v.0];
    if buf.is_empty() {
        *buf = d.to_vec();
    } else {
        for (a, b) in buf.iter_mut().zip(d) {
            *a += b;
        }
    }
}

/// `out[r, :] += a[r] * b`
fn outer_accumulate(out: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (r, av) in a.iter().enumerate() {
        if *av == 0.0 {
            continue;
        }
        for (o, bv) in out[r * cols..(r + 1) * cols].iter_mut().zip(b) {
            *o += av * bv;
        }
    }
}

/// `W^T a` for row-major `W` with `cols` columns.
fn transpose_mul(w: &[f64], a: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (r, av) in a.iter().enumerate() {
        for (o, wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += av * wv;
        }
    }
    out
}
