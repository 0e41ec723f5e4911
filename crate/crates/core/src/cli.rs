//! Command line front end.
//!
//! Every subcommand turns its flags into a `key=value` map, lays the file
//! given with `--config` over it (file entries win) and works only from the
//! resolved map, which is written next to the outputs.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::data::{
    adapt_tracks_csv, generate_synthetic, load_canonical, split_dataset, write_canonical_file, ColumnMap, Dataset,
    GeneratorConfig, ManeuverClass, Scenario, TimeGrid,
};
use crate::decoder::LatentParams;
use crate::error::{Error, Result};
use crate::evaluation::{axis_error, confusion, ecdf, lambda_error_stats, Axis, ErrorMode};
use crate::latent::{
    classify, fit_dataset, histograms_of, validate, write_histograms_csv, ClassifierThresholds, Verdict,
    WatchdogRuleSet,
};
use crate::models::{
    standard_normal_eps, train_with_progress, Architecture, Model, ModelKind, PredictMode, TrainConfig,
};
use crate::nn::{grad_check, Tape};

#[derive(Debug, Parser)]
#[command(name = "dvae", version, about = "Interpretable trajectory prediction with a descriptive VAE")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario file.
    Gen(GenArgs),
    /// Train one model on the train split.
    Train(TrainArgs),
    /// Evaluate models on the test split.
    Eval(EvalArgs),
    /// Write predicted trajectories and latents.
    Predict(PredictArgs),
    /// Curve-fit reference parameters to ground-truth futures.
    Fit(FitArgs),
    /// Classify maneuvers from latent parameters.
    Classify(LatentArgs),
    /// Check latent parameters against watchdog rules.
    Validate(LatentArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// key=value file; its entries override flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_obs: Option<f64>,
    #[arg(long)]
    t_pred: Option<f64>,
}

#[derive(Debug, Default, Args)]
pub struct SourceArgs {
    /// Canonical scenario file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Per-frame tracks CSV, read through the column map.
    #[arg(long)]
    tracks: Option<PathBuf>,
    /// Column map for --tracks.
    #[arg(long)]
    columns: Option<PathBuf>,
    /// Generate this many synthetic scenarios in place of a data file.
    #[arg(long)]
    synthetic_count: Option<usize>,
    #[arg(long)]
    synthetic_seed: Option<u64>,
    #[arg(long)]
    synthetic_noise: Option<f64>,
    #[arg(long)]
    synthetic_mix: Option<String>,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Train share of the split, e.g. 2/3.
    #[arg(long)]
    train_fraction: Option<String>,
    /// all, train or test.
    #[arg(long)]
    subset: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    count: Option<usize>,
    /// Class proportions LL,KL,LR, e.g. 1/3,1/3,1/3.
    #[arg(long)]
    mix: Option<String>,
    /// Position noise standard deviation in meters.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    kl_weight: Option<f64>,
    /// Elementwise gradient clip; 0 disables clipping.
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    source: SourceArgs,
    /// Comma-separated model list.
    #[arg(long)]
    models: Option<String>,
    /// Directory holding <model>.ckpt files; defaults to --out.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// final, mean or max.
    #[arg(long)]
    error_mode: Option<String>,
    /// lateral or longitudinal.
    #[arg(long)]
    axis: Option<String>,
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use cv instead of a checkpoint.
    #[arg(long)]
    model: Option<String>,
    /// eval or sample.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    source: SourceArgs,
    /// Also write histograms of the fitted parameters to this file.
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LatentArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    source: SourceArgs,
    /// CSV with a_x, lambda, mu and optional id, label columns.
    #[arg(long)]
    latents: Option<PathBuf>,
    /// Take latents from this model instead of curve fits.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long)]
    max_per_block: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Classify(a) => cmd_classify(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

// ---- resolution helpers ----

fn put<T: ToString>(kv: &mut KeyValues, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        kv.set(key, v.to_string());
    }
}

fn put_path(kv: &mut KeyValues, key: &str, v: &Option<PathBuf>) {
    if let Some(p) = v {
        kv.set(key, p.display());
    }
}

fn base_flags(common: &CommonArgs, source: Option<&SourceArgs>) -> KeyValues {
    let mut kv = KeyValues::default();
    put(&mut kv, "dt", &common.dt);
    put(&mut kv, "t_obs", &common.t_obs);
    put(&mut kv, "t_pred", &common.t_pred);
    if let Some(s) = source {
        put_path(&mut kv, "data", &s.data);
        put_path(&mut kv, "tracks", &s.tracks);
        put_path(&mut kv, "columns", &s.columns);
        put(&mut kv, "synthetic_count", &s.synthetic_count);
        put(&mut kv, "synthetic_seed", &s.synthetic_seed);
        put(&mut kv, "synthetic_noise", &s.synthetic_noise);
        put(&mut kv, "synthetic_mix", &s.synthetic_mix);
        put(&mut kv, "split_seed", &s.split_seed);
        put(&mut kv, "train_fraction", &s.train_fraction);
        put(&mut kv, "subset", &s.subset);
    }
    kv
}

fn resolve(mut flags: KeyValues, config: &Option<PathBuf>) -> Result<KeyValues> {
    if let Some(path) = config {
        flags.merge(&KeyValues::load(path)?);
    }
    Ok(flags)
}

fn get<T: FromStr>(kv: &KeyValues, key: &str, default: T) -> Result<T> {
    Ok(kv.parse_value(key)?.unwrap_or(default))
}

fn require<T: FromStr>(kv: &KeyValues, key: &str) -> Result<T> {
    kv.parse_value(key)?.ok_or_else(|| Error::Usage(format!("--{} is required", key.replace('_', "-"))))
}

/// Accepts `0.25` or `1/4`.
pub fn parse_fraction(text: &str) -> Result<f64> {
    let t = text.trim();
    let v = match t.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (
                a.trim().parse().map_err(|_| Error::Usage(format!("bad fraction {t:?}")))?,
                b.trim().parse().map_err(|_| Error::Usage(format!("bad fraction {t:?}")))?,
            );
            a / b
        }
        None => t.parse().map_err(|_| Error::Usage(format!("bad fraction {t:?}")))?,
    };
    if !v.is_finite() {
        return Err(Error::Usage(format!("bad fraction {t:?}")));
    }
    Ok(v)
}

fn parse_mix(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text.split(',').map(parse_fraction).collect::<Result<_>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| Error::Usage(format!("--mix needs three proportions, got {text:?}")))
}

fn grid_of(kv: &KeyValues) -> Result<Option<TimeGrid>> {
    if ["dt", "t_obs", "t_pred"].iter().all(|k| kv.get(k).is_none()) {
        return Ok(None);
    }
    let d = TimeGrid::default();
    TimeGrid::new(get(kv, "dt", d.dt)?, get(kv, "t_obs", d.t_obs)?, get(kv, "t_pred", d.t_pred)?).map(Some)
}

fn load_source(kv: &KeyValues) -> Result<Dataset> {
    let grid = grid_of(kv)?;
    let synthetic = kv.get("synthetic_count").is_some();
    let mut ds = match (kv.get("data"), kv.get("tracks")) {
        (Some(_), _) | (_, Some(_)) if synthetic => {
            return Err(Error::Usage("give one data source: --data, --tracks or --synthetic-count".into()))
        }
        (None, None) if synthetic => {
            let cfg = GeneratorConfig {
                count: require(kv, "synthetic_count")?,
                class_mix: kv.get("synthetic_mix").map_or(Ok([1.0 / 3.0; 3]), parse_mix)?,
                noise_sigma: get(kv, "synthetic_noise", 0.0)?,
                seed: get(kv, "synthetic_seed", 0)?,
                ..GeneratorConfig::default()
            };
            generate_synthetic(&cfg, grid.unwrap_or_default())?
        }
        (Some(path), None) => load_canonical(Path::new(path), grid)?,
        (None, Some(path)) => {
            let map = match kv.get("columns") {
                Some(c) => ColumnMap::load(Path::new(c))?,
                None => ColumnMap::default(),
            };
            adapt_tracks_csv(Path::new(path), &map, &grid.unwrap_or_default())?
        }
        (Some(_), Some(_)) => return Err(Error::Usage("give either --data or --tracks, not both".into())),
        (None, None) => return Err(Error::Usage("--data, --tracks or --synthetic-count is required".into())),
    };
    ds.split_seed = get(kv, "split_seed", 0)?;
    Ok(ds)
}

fn train_fraction(kv: &KeyValues) -> Result<f64> {
    kv.get("train_fraction").map_or(Ok(2.0 / 3.0), parse_fraction)
}

fn subset(kv: &KeyValues, ds: Dataset, default: &str) -> Result<Dataset> {
    let which = kv.get("subset").unwrap_or(default);
    if which == "all" {
        return Ok(ds);
    }
    let (train, test) = split_dataset(&ds, train_fraction(kv)?)?;
    match which {
        "train" => Ok(train),
        "test" => Ok(test),
        other => Err(Error::Usage(format!("--subset must be all, train or test, got {other:?}"))),
    }
}

fn thresholds_of(kv: &KeyValues) -> Result<ClassifierThresholds> {
    let mut merged = kv.clone();
    if let Some(p) = kv.get("thresholds") {
        merged.merge(&KeyValues::load(Path::new(p))?);
    }
    ClassifierThresholds::from_key_values(&merged)
}

fn rules_of(kv: &KeyValues) -> Result<WatchdogRuleSet> {
    let mut merged = kv.clone();
    if let Some(p) = kv.get("rules") {
        merged.merge(&KeyValues::load(Path::new(p))?);
    }
    WatchdogRuleSet::from_key_values(&merged)
}

fn architecture_of(kv: &KeyValues) -> Result<Architecture> {
    let mut arch = Architecture::default();
    arch.encoder.shared_neighbor_lstm = get(kv, "shared_neighbor", arch.encoder.shared_neighbor_lstm)?;
    arch.encoder.forget_bias = get(kv, "forget_bias", arch.encoder.forget_bias)?;
    arch.encoder.initial_logvar = get(kv, "initial_logvar", arch.encoder.initial_logvar)?;
    Ok(arch)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

fn finish<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner().map_err(|e| Error::Data(format!("csv: {e}")))?.flush().map_err(|e| Error::io("<csv>", e))
}

fn load_model(path: &Path, expected: Option<ModelKind>) -> Result<Model> {
    let m = Model::load(path)?;
    if let Some(k) = expected {
        if m.kind != k {
            return Err(Error::Config(format!("{} holds a {} model, expected {k}", path.display(), m.kind)));
        }
    }
    Ok(m)
}

// ---- commands ----

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let mut flags = base_flags(&a.common, None);
    put(&mut flags, "count", &a.count);
    put(&mut flags, "mix", &a.mix);
    put(&mut flags, "noise", &a.noise);
    put(&mut flags, "seed", &a.seed);
    put_path(&mut flags, "out", &a.out);
    let kv = resolve(flags, &a.common.config)?;

    let seed: u64 = require(&kv, "seed")?;
    let out: PathBuf = require(&kv, "out")?;
    let cfg = GeneratorConfig {
        count: get(&kv, "count", 1000)?,
        class_mix: kv.get("mix").map_or(Ok([1.0 / 3.0; 3]), parse_mix)?,
        noise_sigma: get(&kv, "noise", 0.0)?,
        seed,
        ..GeneratorConfig::default()
    };
    let ds = generate_synthetic(&cfg, grid_of(&kv)?.unwrap_or_default()).map_err(|e| match e {
        Error::Config(m) => Error::Usage(m),
        other => other,
    })?;
    write_canonical_file(&ds, &out)?;
    write_text(&config_path_for(&out), &kv.render())?;
    let c = ds.label_counts();
    println!("wrote {} scenarios to {} (LL {}, KL {}, LR {})", ds.len(), out.display(), c[0], c[1], c[2]);
    Ok(())
}

fn config_path_for(file: &Path) -> PathBuf {
    let mut s = file.as_os_str().to_owned();
    s.push(".config.txt");
    PathBuf::from(s)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut flags = base_flags(&a.common, Some(&a.source));
    put(&mut flags, "model", &a.model);
    put(&mut flags, "seed", &a.seed);
    put(&mut flags, "epochs", &a.epochs);
    put(&mut flags, "lr", &a.lr);
    put(&mut flags, "batch_size", &a.batch_size);
    put(&mut flags, "kl_weight", &a.kl_weight);
    put(&mut flags, "grad_clip", &a.grad_clip);
    put_path(&mut flags, "out", &a.out);
    let kv = resolve(flags, &a.common.config)?;

    let kind: ModelKind = kv.get("model").unwrap_or("dvae").parse()?;
    if !kind.is_trainable() {
        return Err(Error::Usage("CV has no training".into()));
    }
    let seed: u64 = require(&kv, "seed")?;
    let out: PathBuf = require(&kv, "out")?;
    let d = TrainConfig::default();
    let clip: f64 = get(&kv, "grad_clip", d.grad_clip.unwrap_or(0.0))?;
    let cfg = TrainConfig {
        lr: get(&kv, "lr", d.lr)?,
        epochs: get(&kv, "epochs", d.epochs)?,
        batch_size: get(&kv, "batch_size", d.batch_size)?,
        kl_weight: get(&kv, "kl_weight", d.kl_weight)?,
        seed,
        grad_clip: (clip > 0.0).then_some(clip),
    };
    let arch = architecture_of(&kv)?;
    let ds = load_source(&kv)?;
    let (train, _) = split_dataset(&ds, train_fraction(&kv)?)?;

    create_dir(&out)?;
    let (model, log) = train_with_progress(kind, &train, arch, &cfg, |l| {
        eprintln!("epoch {} total {:.6} recon {:.6} kl {:.6}", l.epoch, l.total, l.reconstruction, l.kl);
    })?;
    model.save(&out.join(format!("{kind}.ckpt")))?;
    crate::models::write_loss_csv(&log, create(&out.join(format!("{kind}_loss.csv")))?)?;
    write_text(&out.join(format!("{kind}_config.txt")), &kv.render())?;
    println!("trained {kind} on {} scenarios, {} parameters", train.len(), model.store.parameter_count());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut flags = base_flags(&a.common, Some(&a.source));
    put(&mut flags, "models", &a.models);
    put_path(&mut flags, "checkpoints", &a.checkpoints);
    put(&mut flags, "error_mode", &a.error_mode);
    put(&mut flags, "axis", &a.axis);
    put_path(&mut flags, "thresholds", &a.thresholds);
    put_path(&mut flags, "rules", &a.rules);
    put_path(&mut flags, "out", &a.out);
    let kv = resolve(flags, &a.common.config)?;

    let out: PathBuf = require(&kv, "out")?;
    let ckpt_dir = kv.get("checkpoints").map(PathBuf::from).unwrap_or_else(|| out.clone());
    let kinds: Vec<ModelKind> =
        kv.get("models").unwrap_or("dvae,vae,deae,cv").split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?;
    let mode: ErrorMode = kv.get("error_mode").unwrap_or("final").parse()?;
    let axis = match kv.get("axis").unwrap_or("lateral") {
        "lateral" => Axis::Lateral,
        "longitudinal" => Axis::Longitudinal,
        other => return Err(Error::Usage(format!("--axis must be lateral or longitudinal, got {other:?}"))),
    };
    let th = thresholds_of(&kv)?;
    let rules = rules_of(&kv)?;
    let ds = load_source(&kv)?;
    let (_, test) = split_dataset(&ds, train_fraction(&kv)?)?;
    if test.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    create_dir(&out)?;

    let labels: Option<Vec<ManeuverClass>> = test.scenarios.iter().map(|s| s.label).collect();
    let fits = fit_dataset(&test)?;
    if let Some(labels) = &labels {
        let predicted: Vec<ManeuverClass> = fits.iter().map(|f| classify(&f.params, &th)).collect();
        let m = confusion(labels, &predicted)?;
        m.write_csv(create(&out.join("confusion_reference.csv"))?)?;
        println!("reference fits: macro accuracy {:.4}", m.macro_accuracy());
    }

    let mut summary = csv::Writer::from_writer(create(&out.join("summary.csv"))?);
    summary
        .write_record(["model", "count", "p50", "p95", "mean", "max", "macro_accuracy", "accepted", "rejected"])
        .map_err(csv_err)?;
    let mut watchdog = csv::Writer::from_writer(create(&out.join("watchdog.csv"))?);
    watchdog
        .write_record(["model", "accepted", "rejected", "lambda_abs_max", "stretch_range", "a_x_range"])
        .map_err(csv_err)?;

    for kind in kinds {
        let model = if kind == ModelKind::Cv {
            Model::new(ModelKind::Cv, test.grid, Architecture::default(), 0)?
        } else {
            load_model(&ckpt_dir.join(format!("{kind}.ckpt")), Some(kind))?
        };
        let preds = model.predict_all(&test.scenarios)?;
        let errors: Vec<f64> = preds
            .iter()
            .zip(&test.scenarios)
            .map(|(p, s)| axis_error(&p.trajectory, &s.target_future, axis, mode))
            .collect::<Result<_>>()?;
        let curve = ecdf(&errors)?;
        curve.write_csv(create(&out.join(format!("ecdf_{kind}.csv")))?)?;
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let (p50, p95) = (curve.percentile(0.5)?, curve.percentile(0.95)?);
        let max = *curve.values().last().expect("nonempty");

        let mut macro_acc = String::new();
        let (mut accepted, mut rejected) = (String::new(), String::new());
        if kind.is_descriptive() {
            let latents: Vec<LatentParams> = preds.iter().map(|p| p.latent.expect("descriptive")).collect();
            if let Some(labels) = &labels {
                let predicted: Vec<ManeuverClass> = latents.iter().map(|lp| classify(lp, &th)).collect();
                let m = confusion(labels, &predicted)?;
                m.write_csv(create(&out.join(format!("confusion_{kind}.csv")))?)?;
                macro_acc = m.macro_accuracy().to_string();
            }
            let pred_l: Vec<f64> = latents.iter().map(|lp| lp.lambda).collect();
            let ref_l: Vec<f64> = fits.iter().map(|f| f.params.lambda).collect();
            lambda_error_stats(&pred_l, &ref_l)?.write_csv(create(&out.join(format!("lambda_errors_{kind}.csv")))?)?;

            let verdicts: Vec<Verdict> = latents.iter().map(|lp| validate(lp, &rules)).collect();
            let count =
                |rule: &str| verdicts.iter().filter(|v| matches!(v, Verdict::Rejected(r) if r.contains(&rule))).count();
            let ok = verdicts.iter().filter(|v| v.is_accepted()).count();
            watchdog
                .write_record([
                    kind.to_string(),
                    ok.to_string(),
                    (verdicts.len() - ok).to_string(),
                    count(crate::latent::RULE_LAMBDA).to_string(),
                    count(crate::latent::RULE_STRETCH).to_string(),
                    count(crate::latent::RULE_ACCEL).to_string(),
                ])
                .map_err(csv_err)?;
            accepted = ok.to_string();
            rejected = (verdicts.len() - ok).to_string();
        }
        summary
            .write_record([
                kind.to_string(),
                errors.len().to_string(),
                p50.to_string(),
                p95.to_string(),
                mean.to_string(),
                max.to_string(),
                macro_acc.clone(),
                accepted,
                rejected,
            ])
            .map_err(csv_err)?;
        println!(
            "{kind}: p95 {p95:.4} m, mean {mean:.4} m over {} scenarios{}",
            errors.len(),
            if macro_acc.is_empty() { String::new() } else { format!(", macro accuracy {macro_acc:.6}") }
        );
    }
    finish(summary)?;
    finish(watchdog)?;
    write_text(&out.join("eval_config.txt"), &kv.render())?;
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let mut flags = base_flags(&a.common, Some(&a.source));
    put_path(&mut flags, "checkpoint", &a.checkpoint);
    put(&mut flags, "model", &a.model);
    put(&mut flags, "mode", &a.mode);
    put(&mut flags, "seed", &a.seed);
    put_path(&mut flags, "out", &a.out);
    let kv = resolve(flags, &a.common.config)?;

    let out: PathBuf = require(&kv, "out")?;
    let ds = subset(&kv, load_source(&kv)?, "all")?;
    let model = match (kv.get("checkpoint"), kv.get("model")) {
        (Some(p), m) => load_model(Path::new(p), m.map(str::parse).transpose()?)?,
        (None, Some("cv")) => Model::new(ModelKind::Cv, ds.grid, Architecture::default(), 0)?,
        _ => return Err(Error::Usage("--checkpoint is required unless --model cv".into())),
    };
    let sample = match kv.get("mode").unwrap_or("eval") {
        "eval" => false,
        "sample" => true,
        other => return Err(Error::Usage(format!("--mode must be eval or sample, got {other:?}"))),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(get(&kv, "seed", 0)?);

    create_dir(&out)?;
    let mut traj = csv::Writer::from_writer(create(&out.join("trajectories.csv"))?);
    traj.write_record(["id", "step", "t", "x", "y"]).map_err(csv_err)?;
    let mut lat = csv::Writer::from_writer(create(&out.join("latents.csv"))?);
    lat.write_record(["id", "label", "z1", "z2", "z3", "a_x", "lambda", "mu"]).map_err(csv_err)?;
    for s in &ds.scenarios {
        let mode = if sample { PredictMode::Sample(standard_normal_eps(&mut rng)) } else { PredictMode::Eval };
        let p = model.predict(s, mode)?;
        for i in 0..p.trajectory.len() {
            traj.write_record([
                s.id.clone(),
                (i + 1).to_string(),
                ds.grid.time(i).to_string(),
                p.trajectory.xs[i].to_string(),
                p.trajectory.ys[i].to_string(),
            ])
            .map_err(csv_err)?;
        }
        if let Some(z) = p.z {
            let mut rec = vec![s.id.clone(), label_str(s)];
            rec.extend(z.iter().map(f64::to_string));
            match p.latent {
                Some(lp) => rec.extend([lp.a_x, lp.lambda, lp.stretch].iter().map(f64::to_string)),
                None => rec.extend([String::new(), String::new(), String::new()]),
            }
            lat.write_record(&rec).map_err(csv_err)?;
        }
    }
    finish(traj)?;
    finish(lat)?;
    write_text(&out.join("predict_config.txt"), &kv.render())?;
    println!("predicted {} scenarios with {}", ds.len(), model.kind);
    Ok(())
}

fn label_str(s: &Scenario) -> String {
    s.label.map_or("?".to_string(), |l| l.to_string())
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let mut flags = base_flags(&a.common, Some(&a.source));
    put_path(&mut flags, "histogram", &a.histogram);
    put(&mut flags, "bins", &a.bins);
    put_path(&mut flags, "out", &a.out);
    let kv = resolve(flags, &a.common.config)?;

    let out: PathBuf = require(&kv, "out")?;
    let ds = subset(&kv, load_source(&kv)?, "all")?;
    let fits = fit_dataset(&ds)?;
    let mut w = csv::Writer::from_writer(create(&out)?);
    w.write_record(["id", "label", "a_x", "lambda", "mu", "residual_x", "residual_y", "degenerate"])
        .map_err(csv_err)?;
    for (s, f) in ds.scenarios.iter().zip(&fits) {
        w.write_record([
            s.id.clone(),
            label_str(s),
            f.params.a_x.to_string(),
            f.params.lambda.to_string(),
            f.params.stretch.to_string(),
            f.residual_x.to_string(),
            f.residual_y.to_string(),
            f.degenerate.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)?;
    if let Some(h) = kv.get("histogram") {
        let hists = histograms_of(&fits, get(&kv, "bins", 40)?)?;
        write_histograms_csv(&hists, create(Path::new(h))?)?;
    }
    write_text(&config_path_for(&out), &kv.render())?;
    println!("fitted {} scenarios", fits.len());
    Ok(())
}

/// One latent row for classify/validate.
struct LatentRow {
    id: String,
    label: Option<ManeuverClass>,
    params: LatentParams,
}

fn read_latents_csv(path: &Path) -> Result<Vec<LatentRow>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::Data(format!("{}: missing column {name}", path.display())));
    let (ca, cl, cm) = (need("a_x")?, need("lambda")?, need("mu")?);
    let (cid, clabel) = (col("id"), col("label"));
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let num = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse().map_err(|_| Error::Data(format!("{} line {}: bad number {raw:?}", path.display(), n + 2)))
        };
        let label = match clabel.and_then(|c| rec.get(c)) {
            None | Some("") | Some("?") => None,
            Some(l) => Some(l.parse()?),
        };
        rows.push(LatentRow {
            id: cid.and_then(|c| rec.get(c)).map_or_else(|| (n + 1).to_string(), str::to_string),
            label,
            params: LatentParams { a_x: num(ca)?, lambda: num(cl)?, stretch: num(cm)? },
        });
    }
    Ok(rows)
}

fn latent_rows(kv: &KeyValues) -> Result<Vec<LatentRow>> {
    if let Some(p) = kv.get("latents") {
        return read_latents_csv(Path::new(p));
    }
    let ds = subset(kv, load_source(kv)?, "all")?;
    let params: Vec<LatentParams> = match kv.get("checkpoint") {
        Some(p) => {
            let model = load_model(Path::new(p), None)?;
            if !model.kind.is_descriptive() {
                return Err(Error::Config(format!("{} latents carry no interpretation", model.kind)));
            }
            model.predict_all(&ds.scenarios)?.into_iter().map(|p| p.latent.expect("descriptive")).collect()
        }
        None => fit_dataset(&ds)?.into_iter().map(|f| f.params).collect(),
    };
    Ok(ds
        .scenarios
        .iter()
        .zip(params)
        .map(|(s, params)| LatentRow { id: s.id.clone(), label: s.label, params })
        .collect())
}

fn latent_flags(a: &LatentArgs) -> Result<KeyValues> {
    let mut flags = base_flags(&a.common, Some(&a.source));
    put_path(&mut flags, "latents", &a.latents);
    put_path(&mut flags, "checkpoint", &a.checkpoint);
    put_path(&mut flags, "thresholds", &a.thresholds);
    put_path(&mut flags, "rules", &a.rules);
    put_path(&mut flags, "out", &a.out);
    resolve(flags, &a.common.config)
}

fn cmd_classify(a: &LatentArgs) -> Result<()> {
    let kv = latent_flags(a)?;
    let out: PathBuf = require(&kv, "out")?;
    let th = thresholds_of(&kv)?;
    let rows = latent_rows(&kv)?;
    let mut w = csv::Writer::from_writer(create(&out)?);
    w.write_record(["id", "label", "predicted", "lambda", "mu"]).map_err(csv_err)?;
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    for r in &rows {
        let c = classify(&r.params, &th);
        if let Some(l) = r.label {
            truth.push(l);
            pred.push(c);
        }
        w.write_record([
            r.id.clone(),
            r.label.map_or("?".into(), |l| l.to_string()),
            c.to_string(),
            r.params.lambda.to_string(),
            r.params.stretch.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)?;
    write_text(&config_path_for(&out), &kv.render())?;
    if truth.is_empty() {
        println!("classified {} rows", rows.len());
    } else {
        let m = confusion(&truth, &pred)?;
        println!(
            "classified {} rows, macro accuracy {:.4} over {} labeled",
            rows.len(),
            m.macro_accuracy(),
            truth.len()
        );
    }
    Ok(())
}

fn cmd_validate(a: &LatentArgs) -> Result<()> {
    let kv = latent_flags(a)?;
    let out: PathBuf = require(&kv, "out")?;
    let rules = rules_of(&kv)?;
    let rows = latent_rows(&kv)?;
    let mut w = csv::Writer::from_writer(create(&out)?);
    w.write_record(["id", "a_x", "lambda", "mu", "verdict", "rules"]).map_err(csv_err)?;
    let mut rejected = 0;
    for r in &rows {
        let v = validate(&r.params, &rules);
        if !v.is_accepted() {
            rejected += 1;
        }
        w.write_record([
            r.id.clone(),
            r.params.a_x.to_string(),
            r.params.lambda.to_string(),
            r.params.stretch.to_string(),
            if v.is_accepted() { "accepted" } else { "rejected" }.to_string(),
            v.rules(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)?;
    write_text(&config_path_for(&out), &kv.render())?;
    println!("validated {} rows: {} accepted, {rejected} rejected", rows.len(), rows.len() - rejected);
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let mut flags = base_flags(&a.common, Some(&a.source));
    put(&mut flags, "model", &a.model);
    put_path(&mut flags, "checkpoint", &a.checkpoint);
    put(&mut flags, "seed", &a.seed);
    put(&mut flags, "scenarios", &a.scenarios);
    put(&mut flags, "max_per_block", &a.max_per_block);
    put(&mut flags, "tolerance", &a.tolerance);
    let kv = resolve(flags, &a.common.config)?;

    let ds = load_source(&kv)?;
    let seed: u64 = get(&kv, "seed", 0)?;
    let model = match kv.get("checkpoint") {
        Some(p) => load_model(Path::new(p), None)?,
        None => {
            let kind: ModelKind = kv.get("model").unwrap_or("dvae").parse()?;
            Model::new(kind, ds.grid, architecture_of(&kv)?, seed)?
        }
    };
    if !model.kind.is_trainable() {
        return Err(Error::Usage("CV has no gradients".into()));
    }
    let n: usize = get(&kv, "scenarios", 5)?;
    let per_block: usize = get(&kv, "max_per_block", 20)?;
    let tol: f64 = get(&kv, "tolerance", 1e-4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for s in ds.scenarios.iter().take(n) {
        let eps = standard_normal_eps(&mut rng);
        let mut store = model.store.clone();
        let report = grad_check(
            |st, tape: &mut Tape| {
                let m = Model::bind(model.kind, model.grid, model.arch.clone(), st.clone())?;
                Ok(m.loss_on_tape(tape, s, eps, 0.5)?.total)
            },
            &mut store,
            1e-5,
            Some(per_block),
        )?;
        for b in &report.blocks {
            println!("{} {} {:.3e} ({} checked)", s.id, b.name, b.worst, b.checked);
        }
        worst = worst.max(report.worst());
    }
    println!("worst relative error {worst:.3e} (tolerance {tol:e})");
    if worst > tol {
        return Err(Error::Numeric(format!("gradient check failed: {worst:e} > {tol:e}")));
    }
    Ok(())
}
