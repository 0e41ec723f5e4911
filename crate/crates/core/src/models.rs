//! The four compared predictors behind one interface: the descriptive VAE,
//! a VAE with a learned decoder, the deterministic descriptive autoencoder
//! and constant-velocity extrapolation.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::KeyValues;
use crate::data::{Dataset, Scenario, TimeGrid};
use crate::decoder::{decode, LatentParams, Trajectory};
use crate::encoder::{reparameterize, EncodedLatent, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::learned_decoder::{LearnedDecoder, LearnedDecoderConfig, Unroll};
use crate::losses::LatentGaussian;
use crate::nn::{sgd_step, ParamStore, Tape, Var};

/// Mixed into the run seed for the shuffle/sampling stream, so parameter
/// initialization and training noise do not share a generator.
const TRAIN_STREAM: u64 = 0x7261_696e_5f73_7472;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Dvae,
    Vae,
    Deae,
    Cv,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Dvae, ModelKind::Vae, ModelKind::Deae, ModelKind::Cv];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dvae => "dvae",
            ModelKind::Vae => "vae",
            ModelKind::Deae => "deae",
            ModelKind::Cv => "cv",
        }
    }

    /// Samples latents during training and carries a KL term.
    pub fn is_variational(self) -> bool {
        matches!(self, ModelKind::Dvae | ModelKind::Vae)
    }

    /// Latents follow the descriptive decoder's semantics.
    pub fn is_descriptive(self) -> bool {
        matches!(self, ModelKind::Dvae | ModelKind::Deae)
    }

    pub fn is_trainable(self) -> bool {
        self != ModelKind::Cv
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dvae" => Ok(ModelKind::Dvae),
            "vae" => Ok(ModelKind::Vae),
            "deae" => Ok(ModelKind::Deae),
            "cv" => Ok(ModelKind::Cv),
            _ => Err(Error::Usage(format!("unknown model {s:?}; expected dvae, vae, deae or cv"))),
        }
    }
}

/// Network shapes shared by all kinds. The encoder's sampling head is set
/// from the kind, not from here.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Architecture {
    pub encoder: EncoderConfig,
    pub learned: LearnedDecoderConfig,
}

impl Architecture {
    fn encoder_for(&self, kind: ModelKind) -> EncoderConfig {
        EncoderConfig { sampling_head: kind.is_variational(), ..self.encoder.clone() }
    }

    fn meta(&self, grid: &TimeGrid) -> String {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        format!(
            "dt={} obs_steps={} pred_steps={} target_hidden={} neighbor_hidden={} shared_neighbor={} fnn={} expansion={} lstm_hidden={} unroll={}",
            grid.dt,
            grid.obs_steps,
            grid.pred_steps,
            self.encoder.target_hidden,
            self.encoder.neighbor_hidden,
            self.encoder.shared_neighbor_lstm,
            list(&self.encoder.fnn),
            list(&self.learned.expansion),
            self.learned.lstm_hidden,
            self.learned.unroll.steps(),
        )
    }

    fn from_meta(meta: &str) -> Result<(Self, TimeGrid)> {
        let mut kv = KeyValues::default();
        for pair in meta.split_whitespace() {
            let (k, v) =
                pair.split_once('=').ok_or_else(|| Error::Data(format!("checkpoint meta: bad pair {pair:?}")))?;
            kv.set(k, v);
        }
        let need = |k: &str| kv.get(k).ok_or_else(|| Error::Data(format!("checkpoint meta lacks {k}")));
        let num = |k: &str| -> Result<usize> {
            need(k)?.parse().map_err(|_| Error::Data(format!("checkpoint meta: bad {k}")))
        };
        let list = |k: &str| -> Result<Vec<usize>> {
            need(k)?
                .split(',')
                .map(|x| x.parse().map_err(|_| Error::Data(format!("checkpoint meta: bad {k}"))))
                .collect()
        };
        let dt: f64 = need("dt")?.parse().map_err(|_| Error::Data("checkpoint meta: bad dt".into()))?;
        let grid = TimeGrid::from_steps(dt, num("obs_steps")?, num("pred_steps")?)?;
        let steps = num("unroll")?;
        let arch = Architecture {
            encoder: EncoderConfig {
                target_hidden: num("target_hidden")?,
                neighbor_hidden: num("neighbor_hidden")?,
                shared_neighbor_lstm: need("shared_neighbor")? == "true",
                fnn: list("fnn")?,
                ..EncoderConfig::default()
            },
            learned: LearnedDecoderConfig {
                expansion: list("expansion")?,
                lstm_hidden: num("lstm_hidden")?,
                unroll: if steps == 1 { Unroll::Single } else { Unroll::Repeat(steps) },
            },
        };
        Ok((arch, grid))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub kl_weight: f64,
    pub seed: u64,
    /// Elementwise gradient clipping bound, if any.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 0.001, epochs: 5, batch_size: 1, kl_weight: 1e-3, seed: 0, grad_clip: Some(10.0) }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Config(format!("kl_weight must be nonnegative, got {}", self.kl_weight)));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Running means over one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

pub fn write_loss_csv<W: Write>(log: &[EpochLoss], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Data(format!("writing loss log: {e}"));
    w.write_record(["epoch", "mean_total", "mean_recon", "mean_kl"]).map_err(err)?;
    for l in log {
        w.write_record([l.epoch.to_string(), l.total.to_string(), l.reconstruction.to_string(), l.kl.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<loss log>", e))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PredictMode {
    /// Use the latent mean.
    Eval,
    /// Draw `z = mean + std * eps` with the given standard-normal draw.
    Sample([f64; 3]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub trajectory: Trajectory,
    /// Interpreted latent for descriptive models.
    pub latent: Option<LatentParams>,
    /// Raw latent the trajectory was decoded from; `None` for CV.
    pub z: Option<[f64; 3]>,
    pub gaussian: Option<LatentGaussian>,
}

pub fn cv_predict(v0: [f64; 2], grid: &TimeGrid) -> Trajectory {
    Trajectory {
        xs: (0..grid.pred_steps).map(|i| v0[0] * grid.time(i)).collect(),
        ys: (0..grid.pred_steps).map(|i| v0[1] * grid.time(i)).collect(),
    }
}

/// One standard-normal 3-vector.
pub fn standard_normal_eps<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

#[derive(Clone, Debug)]
pub struct Model {
    pub kind: ModelKind,
    pub grid: TimeGrid,
    pub arch: Architecture,
    pub store: ParamStore,
    encoder: Option<Encoder>,
    learned: Option<LearnedDecoder>,
}

/// Loss nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub reconstruction: Var,
    pub kl: Option<Var>,
}

impl Model {
    /// Fresh, seeded parameters.
    pub fn new(kind: ModelKind, grid: TimeGrid, arch: Architecture, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(seed);
        let (encoder, learned) = if kind == ModelKind::Cv {
            (None, None)
        } else {
            let enc = Encoder::create(&mut store, arch.encoder_for(kind))?;
            let dec = if kind == ModelKind::Vae {
                Some(LearnedDecoder::create(&mut store, arch.learned.clone(), grid.pred_steps)?)
            } else {
                None
            };
            (Some(enc), dec)
        };
        Ok(Model { kind, grid, arch, store, encoder, learned })
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        self.store.checkpoint_bytes(self.kind.as_str(), &self.arch.meta(&self.grid))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let ck = ParamStore::read_checkpoint(&mut &bytes[..])?;
        let kind: ModelKind =
            ck.kind.parse().map_err(|_| Error::Data(format!("checkpoint: unknown kind {:?}", ck.kind)))?;
        let (arch, grid) = Architecture::from_meta(&ck.meta)?;
        // The layout a fresh model of this kind would have must match exactly.
        let fresh = Model::new(kind, grid, arch.clone(), 0)?;
        let layout = |s: &ParamStore| s.entries().iter().map(|e| (e.name.clone(), e.shape.clone())).collect::<Vec<_>>();
        if layout(&fresh.store) != layout(&ck.store) {
            return Err(Error::Config(format!("checkpoint parameters do not match a {kind} model")));
        }
        Self::bind(kind, grid, arch, ck.store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }

    /// Wraps an existing store; fails if the store lacks the kind's layers.
    pub fn bind(kind: ModelKind, grid: TimeGrid, arch: Architecture, store: ParamStore) -> Result<Self> {
        let (encoder, learned) = if kind == ModelKind::Cv {
            if !store.is_empty() {
                return Err(Error::Config("cv takes no parameters".into()));
            }
            (None, None)
        } else {
            let enc = Encoder::bind(&store, arch.encoder_for(kind))?;
            let dec = if kind == ModelKind::Vae {
                Some(LearnedDecoder::bind(&store, arch.learned.clone(), grid.pred_steps)?)
            } else {
                None
            };
            (Some(enc), dec)
        };
        Ok(Model { kind, grid, arch, store, encoder, learned })
    }

    /// Checks a scenario against the grid the model was built with.
    pub fn check_scenario(&self, s: &Scenario) -> Result<()> {
        s.validate(&self.grid).map_err(|e| match e {
            Error::Data(m) => Error::Config(format!("scenario does not match model grid: {m}")),
            other => other,
        })
    }

    fn encoder(&self) -> Result<&Encoder> {
        self.encoder.as_ref().ok_or_else(|| Error::Usage(format!("{} has no encoder", self.kind)))
    }

    /// Records the training objective for one scenario on `tape`.
    /// `eps` is used only by variational kinds.
    pub fn loss_on_tape(&self, tape: &mut Tape, s: &Scenario, eps: [f64; 3], kl_weight: f64) -> Result<LossVars> {
        self.check_scenario(s)?;
        let store = &self.store;
        let enc = self.encoder()?.encode_on_tape(store, tape, s)?;
        let z = match enc.logvar {
            Some(lv) => tape.reparameterize(enc.mean, lv, &eps),
            None => enc.mean,
        };
        let pred = match self.kind {
            ModelKind::Vae => self.learned.as_ref().expect("vae has a decoder").decode_on_tape(store, tape, z)?,
            _ => tape.descriptive_decode(z, s.v0()[0], self.grid)?,
        };
        let target: Vec<f64> =
            s.target_future.iter().map(|p| p[0]).chain(s.target_future.iter().map(|p| p[1])).collect();
        let reconstruction = tape.mse(pred, target)?;
        let kl = match enc.logvar {
            Some(lv) if kl_weight > 0.0 => Some(tape.kl(enc.mean, lv)),
            _ => None,
        };
        let total = match kl {
            Some(k) => tape.weighted_sum(&[(reconstruction, 1.0), (k, kl_weight)]),
            None => reconstruction,
        };
        Ok(LossVars { total, reconstruction, kl })
    }

    pub fn encode(&self, s: &Scenario) -> Result<EncodedLatent> {
        self.check_scenario(s)?;
        self.encoder()?.encode(&self.store, s)
    }

    pub fn predict(&self, s: &Scenario, mode: PredictMode) -> Result<Prediction> {
        self.check_scenario(s)?;
        if self.kind == ModelKind::Cv {
            return Ok(Prediction {
                trajectory: cv_predict(s.v0(), &self.grid),
                latent: None,
                z: None,
                gaussian: None,
            });
        }
        let enc = self.encoder()?.encode(&self.store, s)?;
        let gaussian = enc.gaussian();
        let z = match (mode, gaussian) {
            (PredictMode::Sample(eps), Some(g)) => reparameterize(&g, eps),
            _ => enc.mean,
        };
        let (trajectory, latent) = match self.kind {
            ModelKind::Vae => {
                let dec = self.learned.as_ref().expect("vae has a decoder");
                (dec.decode_learned(&self.store, z)?, None)
            }
            _ => (decode(z, s.v0()[0], &self.grid), Some(LatentParams::from_latent(z))),
        };
        Ok(Prediction { trajectory, latent, z: Some(z), gaussian })
    }

    /// Eval-mode predictions for many scenarios, in input order.
    pub fn predict_all(&self, scenarios: &[Scenario]) -> Result<Vec<Prediction>> {
        scenarios.par_iter().map(|s| self.predict(s, PredictMode::Eval)).collect()
    }
}

/// Trains a fresh model of `kind` on `ds`.
pub fn train(kind: ModelKind, ds: &Dataset, arch: Architecture, cfg: &TrainConfig) -> Result<(Model, Vec<EpochLoss>)> {
    train_with_progress(kind, ds, arch, cfg, |_| {})
}

pub fn train_with_progress<F: FnMut(&EpochLoss)>(
    kind: ModelKind,
    ds: &Dataset,
    arch: Architecture,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(Model, Vec<EpochLoss>)> {
    if !kind.is_trainable() {
        return Err(Error::Usage("CV has no training".into()));
    }
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut model = Model::new(kind, ds.grid, arch, cfg.seed)?;
    for s in &ds.scenarios {
        model.check_scenario(s)?;
    }
    let kl_weight = if kind.is_variational() { cfg.kl_weight } else { 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_STREAM);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum_total, mut sum_recon, mut sum_kl) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            model.store.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &ds.scenarios[i];
                let eps = if kind.is_variational() { standard_normal_eps(&mut rng) } else { [0.0; 3] };
                let mut tape = Tape::new();
                let vars = model.loss_on_tape(&mut tape, s, eps, kl_weight)?;
                let total = tape.scalar(vars.total);
                if !total.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, scenario {} ({})", i, s.id)));
                }
                sum_total += total;
                sum_recon += tape.scalar(vars.reconstruction);
                sum_kl += vars.kl.map_or(0.0, |k| tape.scalar(k));
                tape.backward(vars.total, scale, &mut model.store)?;
            }
            if let Some(c) = cfg.grad_clip {
                model.store.clip_grads(c);
            }
            sgd_step(&mut model.store, cfg.lr).map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;
        }
        let n = ds.len() as f64;
        let entry = EpochLoss { epoch, total: sum_total / n, reconstruction: sum_recon / n, kl: sum_kl / n };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok((model, log))
}
