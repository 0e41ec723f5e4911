//! Cooperative-context encoder.
//!
//! The target's velocity history runs through one LSTM, each neighbor slot
//! through a neighbor LSTM; the final hidden states are concatenated and
//! passed through a tanh FNN and a linear head that emits either
//! `(mean, log-variance)` or, for the deterministic variant, the mean only.

use crate::data::{Scenario, NEIGHBOR_SLOTS};
use crate::error::{Error, Result};
use crate::losses::LatentGaussian;
use crate::nn::{Activation, DenseLayer, LstmCell, ParamStore, Tape, Var};

pub const LATENT_DIM: usize = 3;

/// Fixed affine input normalization `(value - offset) / scale`, per channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputScaling {
    pub target: [(f64, f64); 2],
    pub neighbor: [(f64, f64); 4],
}

impl Default for InputScaling {
    fn default() -> Self {
        InputScaling { target: [(30.0, 10.0), (0.0, 0.1)], neighbor: [(0.0, 50.0), (0.0, 4.0), (0.0, 5.0), (0.0, 0.5)] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub target_hidden: usize,
    pub neighbor_hidden: usize,
    /// One neighbor LSTM unrolled for every slot, or one LSTM per slot.
    pub shared_neighbor_lstm: bool,
    /// FNN widths, first entry is the concatenated hidden size.
    pub fnn: Vec<usize>,
    /// Emit `(mean, logvar)` instead of the mean alone.
    pub sampling_head: bool,
    /// Offset added to the log-variance half of the head bias at creation.
    pub initial_logvar: f64,
    /// Offset added to the forget-gate biases of the encoder LSTMs at creation.
    pub forget_bias: f64,
    pub scaling: InputScaling,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            target_hidden: 8,
            neighbor_hidden: 16,
            shared_neighbor_lstm: true,
            fnn: vec![136, 64, 64, 18],
            sampling_head: true,
            initial_logvar: -6.0,
            forget_bias: 3.0,
            scaling: InputScaling::default(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let concat = self.target_hidden + NEIGHBOR_SLOTS * self.neighbor_hidden;
        if self.fnn.first() != Some(&concat) {
            return Err(Error::Config(format!(
                "fnn input must equal concatenated hidden size {concat}, got {:?}",
                self.fnn.first()
            )));
        }
        if self.fnn.len() < 2 {
            return Err(Error::Config("fnn needs at least an input and an output width".into()));
        }
        Ok(())
    }

    pub fn head_outputs(&self) -> usize {
        if self.sampling_head {
            2 * LATENT_DIM
        } else {
            LATENT_DIM
        }
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    target: LstmCell,
    neighbors: Vec<LstmCell>,
    fnn: Vec<DenseLayer>,
    head: DenseLayer,
}

/// Encoder result on a tape.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub mean: Var,
    pub logvar: Option<Var>,
}

/// Encoder result as plain numbers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncodedLatent {
    pub mean: [f64; 3],
    pub std: Option<[f64; 3]>,
}

impl EncodedLatent {
    pub fn gaussian(&self) -> Option<LatentGaussian> {
        self.std.map(|std| LatentGaussian { mean: self.mean, std })
    }
}

fn neighbor_prefix(shared: bool, slot: usize) -> String {
    if shared {
        "encoder.neighbor_lstm".to_string()
    } else {
        format!("encoder.neighbor_lstm.{slot}")
    }
}

impl Encoder {
    /// Registers fresh parameters in `store`.
    pub fn create(store: &mut ParamStore, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let target = LstmCell::create(store, "encoder.target_lstm", 2, config.target_hidden)?;
        let neighbors = if config.shared_neighbor_lstm {
            vec![LstmCell::create(store, &neighbor_prefix(true, 0), 4, config.neighbor_hidden)?; NEIGHBOR_SLOTS]
        } else {
            (0..NEIGHBOR_SLOTS)
                .map(|j| LstmCell::create(store, &neighbor_prefix(false, j), 4, config.neighbor_hidden))
                .collect::<Result<_>>()?
        };
        let fnn = config
            .fnn
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::create(store, &format!("encoder.fnn.{i}"), w[0], w[1]))
            .collect::<Result<_>>()?;
        let last = *config.fnn.last().expect("validated");
        let head = DenseLayer::create(store, "encoder.head", last, config.head_outputs())?;
        let mut cells = vec![target];
        cells.extend(if config.shared_neighbor_lstm { &neighbors[..1] } else { &neighbors[..] });
        for cell in cells {
            let h = cell.hidden;
            store.entry_mut(cell.bias).values[h..2 * h].iter_mut().for_each(|b| *b += config.forget_bias);
        }
        if config.sampling_head {
            let bias = &mut store.entry_mut(head.bias).values;
            bias[LATENT_DIM..].iter_mut().for_each(|b| *b += config.initial_logvar);
        }
        Ok(Encoder { config, target, neighbors, fnn, head })
    }

    /// Resolves handles to parameters already present in `store`.
    pub fn bind(store: &ParamStore, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let target = LstmCell::bind(store, "encoder.target_lstm", 2, config.target_hidden)?;
        let neighbors = (0..NEIGHBOR_SLOTS)
            .map(|j| LstmCell::bind(store, &neighbor_prefix(config.shared_neighbor_lstm, j), 4, config.neighbor_hidden))
            .collect::<Result<_>>()?;
        let fnn = config
            .fnn
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::bind(store, &format!("encoder.fnn.{i}"), w[0], w[1]))
            .collect::<Result<_>>()?;
        let last = *config.fnn.last().expect("validated");
        let head = DenseLayer::bind(store, "encoder.head", last, config.head_outputs())?;
        Ok(Encoder { config, target, neighbors, fnn, head })
    }

    pub fn encode_on_tape(&self, store: &ParamStore, tape: &mut Tape, scenario: &Scenario) -> Result<EncoderVars> {
        if scenario.neighbor_obs.len() != NEIGHBOR_SLOTS {
            return Err(Error::Config(format!(
                "encoder expects {NEIGHBOR_SLOTS} neighbor slots, scenario {} has {}",
                scenario.id,
                scenario.neighbor_obs.len()
            )));
        }
        let sc = &self.config.scaling;
        let target_rows = scenario
            .target_obs
            .iter()
            .map(|r| (0..2).map(|c| (r[c] - sc.target[c].0) / sc.target[c].1).collect())
            .collect();
        let mut hidden = vec![tape.lstm_sequence(store, self.target, target_rows)?];
        for (cell, slot) in self.neighbors.iter().zip(&scenario.neighbor_obs) {
            let rows =
                slot.iter().map(|r| (0..4).map(|c| (r[c] - sc.neighbor[c].0) / sc.neighbor[c].1).collect()).collect();
            hidden.push(tape.lstm_sequence(store, *cell, rows)?);
        }
        let mut h = tape.concat(&hidden);
        for layer in &self.fnn {
            h = tape.dense(store, *layer, h, Activation::Tanh)?;
        }
        let out = tape.dense(store, self.head, h, Activation::Identity)?;
        if self.config.sampling_head {
            Ok(EncoderVars {
                mean: tape.slice(out, 0, LATENT_DIM),
                logvar: Some(tape.slice(out, LATENT_DIM, LATENT_DIM)),
            })
        } else {
            Ok(EncoderVars { mean: out, logvar: None })
        }
    }

    pub fn encode(&self, store: &ParamStore, scenario: &Scenario) -> Result<EncodedLatent> {
        let mut tape = Tape::new();
        let vars = self.encode_on_tape(store, &mut tape, scenario)?;
        let mean = to_array(tape.value(vars.mean));
        let std = vars.logvar.map(|lv| {
            let lv = to_array(tape.value(lv));
            [(0.5 * lv[0]).exp(), (0.5 * lv[1]).exp(), (0.5 * lv[2]).exp()]
        });
        Ok(EncodedLatent { mean, std })
    }
}

pub(crate) fn to_array(v: &[f64]) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

/// `z = mean + std * eps`.
pub fn reparameterize(g: &LatentGaussian, eps: [f64; 3]) -> [f64; 3] {
    [g.mean[0] + g.std[0] * eps[0], g.mean[1] + g.std[1] * eps[1], g.mean[2] + g.std[2] * eps[2]]
}
