//! Learned decoder of the conventional VAE baseline.
//!
//! `z -> 16 -> 64` (tanh), then one LSTM head per axis whose final hidden
//! state is mapped by a linear layer to the `P` points of that axis.

use crate::decoder::Trajectory;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, LstmCell, ParamStore, Tape, Var};

/// How the expanded latent is fed to the LSTM heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unroll {
    /// One LSTM step on the expanded vector.
    Single,
    /// The expanded vector repeated for this many steps.
    Repeat(usize),
}

impl Unroll {
    pub fn steps(self) -> usize {
        match self {
            Unroll::Single => 1,
            Unroll::Repeat(n) => n,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnedDecoderConfig {
    /// Widths after the latent input, e.g. `[16, 64]`.
    pub expansion: Vec<usize>,
    pub lstm_hidden: usize,
    pub unroll: Unroll,
}

impl Default for LearnedDecoderConfig {
    fn default() -> Self {
        LearnedDecoderConfig { expansion: vec![16, 64], lstm_hidden: 125, unroll: Unroll::Single }
    }
}

#[derive(Clone, Debug)]
pub struct LearnedDecoder {
    pub config: LearnedDecoderConfig,
    pub outputs: usize,
    expand: Vec<DenseLayer>,
    lstm: [LstmCell; 2],
    out: [DenseLayer; 2],
}

const AXES: [&str; 2] = ["x", "y"];

impl LearnedDecoder {
    fn layer_dims(config: &LearnedDecoderConfig) -> Result<Vec<(usize, usize)>> {
        if config.expansion.is_empty() || config.unroll.steps() == 0 || config.lstm_hidden == 0 {
            return Err(Error::Config(
                "learned decoder needs an expansion layer, a hidden size and at least one step".into(),
            ));
        }
        let mut dims = Vec::new();
        let mut prev = 3;
        for &w in &config.expansion {
            dims.push((prev, w));
            prev = w;
        }
        Ok(dims)
    }

    /// Registers fresh parameters; `outputs` is the number of predicted points.
    pub fn create(store: &mut ParamStore, config: LearnedDecoderConfig, outputs: usize) -> Result<Self> {
        let dims = Self::layer_dims(&config)?;
        let expand = dims
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| DenseLayer::create(store, &format!("decoder.expand.{i}"), a, b))
            .collect::<Result<Vec<_>>>()?;
        let width = dims.last().expect("nonempty").1;
        let h = config.lstm_hidden;
        let lstm = [
            LstmCell::create(store, "decoder.lstm_x", width, h)?,
            LstmCell::create(store, "decoder.lstm_y", width, h)?,
        ];
        let out = [
            DenseLayer::create(store, "decoder.out_x", h, outputs)?,
            DenseLayer::create(store, "decoder.out_y", h, outputs)?,
        ];
        Ok(LearnedDecoder { config, outputs, expand, lstm, out })
    }

    pub fn bind(store: &ParamStore, config: LearnedDecoderConfig, outputs: usize) -> Result<Self> {
        let dims = Self::layer_dims(&config)?;
        let expand = dims
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| DenseLayer::bind(store, &format!("decoder.expand.{i}"), a, b))
            .collect::<Result<Vec<_>>>()?;
        let width = dims.last().expect("nonempty").1;
        let h = config.lstm_hidden;
        let lstm = [
            LstmCell::bind(store, &format!("decoder.lstm_{}", AXES[0]), width, h)?,
            LstmCell::bind(store, &format!("decoder.lstm_{}", AXES[1]), width, h)?,
        ];
        let out = [
            DenseLayer::bind(store, &format!("decoder.out_{}", AXES[0]), h, outputs)?,
            DenseLayer::bind(store, &format!("decoder.out_{}", AXES[1]), h, outputs)?,
        ];
        Ok(LearnedDecoder { config, outputs, expand, lstm, out })
    }

    /// Decodes a 3-vector on the tape into `[x_1..x_P, y_1..y_P]`.
    pub fn decode_on_tape(&self, store: &ParamStore, tape: &mut Tape, z: Var) -> Result<Var> {
        if tape.value(z).len() != 3 {
            return Err(Error::Config(format!("learned decoder expects a 3-vector, got {}", tape.value(z).len())));
        }
        let mut e = z;
        for layer in &self.expand {
            e = tape.dense(store, *layer, e, Activation::Tanh)?;
        }
        let h0 = self.config.lstm_hidden;
        let mut axes = Vec::with_capacity(2);
        for (cell, out) in self.lstm.iter().zip(&self.out) {
            let mut h = tape.constant(vec![0.0; h0]);
            let mut c = tape.constant(vec![0.0; h0]);
            for _ in 0..self.config.unroll.steps() {
                (h, c) = tape.lstm_step(store, *cell, e, h, c)?;
            }
            axes.push(tape.dense(store, *out, h, Activation::Identity)?);
        }
        Ok(tape.concat(&axes))
    }

    pub fn decode_learned(&self, store: &ParamStore, z: [f64; 3]) -> Result<Trajectory> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.to_vec());
        let out = self.decode_on_tape(store, &mut tape, zv)?;
        Ok(Trajectory::from_flat(tape.value(out)))
    }
}
