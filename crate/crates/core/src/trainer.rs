//! Unsupervised pretext training: tuple sampling, rotation-source
//! randomization, loss assembly, optimization, checkpoints and metrics.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use autodiff::nn::apply_updates;
use autodiff::optim::{Adam, AdamConfig};
use autodiff::{Ctx, Scalar, Tape, Var};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{make_training_tuple, MultiViewDataset, TrainingTuple};
use crate::error::{Error, Result};
use crate::geometry::{pixel_shift_to_feature_shift, rigid_transform};
use crate::image::{batch_tensor, Image};
use crate::losses::{
    equivariance_loss, reconstruction_loss_1, reconstruction_loss_2, total_loss, view_invariant_loss, LossBreakdown,
    LossToggles, LossWeights,
};
use crate::model::{Autoencoder, ModelConfig};
use crate::rng;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const FINAL_CHECKPOINT: &str = "pretext.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretextConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    pub loss_toggles: LossToggles,
    pub seed: u64,
    /// Training tuples drawn per scene and view pair in each epoch.
    pub tuples_per_scene: usize,
}

impl Default for PretextConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            batch_size: 5,
            epochs: 20,
            weights: LossWeights::default(),
            loss_toggles: LossToggles::default(),
            seed: 0,
            tuples_per_scene: 1,
        }
    }
}

impl PretextConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.tuples_per_scene == 0 {
            return Err(Error::invalid("batch size, epochs and tuples per scene must be positive"));
        }
        self.weights.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, ..AdamConfig::default() }
    }
}

/// Which frame supplies each view's rotation: the current frame `k`, or the
/// random frame `m` (view v) / `n` (view w).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationChoice {
    pub v_from_k: bool,
    pub w_from_k: bool,
}

impl RotationChoice {
    pub fn from_draws(r_v: f64, r_w: f64) -> Self {
        Self { v_from_k: r_v < 0.5, w_from_k: r_w < 0.5 }
    }

    /// Two independent `U(0, 1)` draws, view v first.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let r_v: f64 = rng.random();
        let r_w: f64 = rng.random();
        Self::from_draws(r_v, r_w)
    }
}

/// Rotations `(R^v, R^w)` for a tuple in evaluation mode, with the choice
/// that produced them. Translations always come from frame `k`.
pub fn select_rotations<T: Scalar, R: Rng + ?Sized>(
    model: &Autoencoder<T>,
    tuple: &TrainingTuple,
    rng: &mut R,
) -> Result<([f64; 3], [f64; 3], RotationChoice)> {
    let choice = RotationChoice::draw(rng);
    let src_v = if choice.v_from_k { &tuple.iv_k } else { &tuple.iv_m };
    let src_w = if choice.w_from_k { &tuple.iw_k } else { &tuple.iw_n };
    let vp = model.encode_viewpoints(&[src_v, src_w])?;
    Ok((vp[0].rotation, vp[1].rotation, choice))
}

/// Loss variables of one forward pass. Disabled terms are `None`.
pub struct PretextLosses<'t, T: Scalar> {
    pub invar: Option<Var<'t, T>>,
    pub equiv: Option<Var<'t, T>>,
    pub rec1: Var<'t, T>,
    pub rec2: Var<'t, T>,
    pub total: Var<'t, T>,
}

impl<T: Scalar> PretextLosses<'_, T> {
    /// Component values; disabled terms read as 0.
    pub fn breakdown(&self) -> LossBreakdown {
        let v = |x: Option<Var<'_, T>>| x.map_or(0.0, |x| x.item().as_f64());
        LossBreakdown {
            invar: v(self.invar),
            equiv: v(self.equiv),
            rec1: self.rec1.item().as_f64(),
            rec2: self.rec2.item().as_f64(),
            total: self.total.item().as_f64(),
        }
    }
}

/// Builds every loss for a batch on `ctx`'s tape.
///
/// Forward passes run per role group: the simultaneous frames `[I^v_k; I^w_k]`,
/// the shifted frames, and the rotation-source frames actually selected.
pub fn pretext_losses<'t, T: Scalar>(
    model: &Autoencoder<T>,
    ctx: &Ctx<'t, T>,
    batch: &[TrainingTuple],
    choices: &[RotationChoice],
    weights: &LossWeights,
    toggles: LossToggles,
) -> Result<PretextLosses<'t, T>> {
    let b = batch.len();
    if b == 0 || choices.len() != b {
        return Err(Error::invalid(format!("batch of {b} tuples with {} rotation choices", choices.len())));
    }
    let tape = ctx.tape;
    let group = |pick: &dyn Fn(&TrainingTuple) -> [&Image; 2]| -> Result<Var<'t, T>> {
        let mut ims: Vec<&Image> = batch.iter().map(|t| pick(t)[0]).collect();
        ims.extend(batch.iter().map(|t| pick(t)[1]));
        model.check_images(&ims)?;
        Ok(tape.constant(batch_tensor(&ims)?))
    };
    let half = |x: Var<'t, T>, i: usize| x.narrow(0, i * b, b);

    let x_k = group(&|t| [&t.iv_k, &t.iw_k])?;
    let x_a = group(&|t| [&t.aug_v, &t.aug_w])?;
    let p_k = model.pose_var(ctx, x_k)?;
    let (r_k, t_k) = model.view_var(ctx, x_k)?;
    let p_a = model.pose_var(ctx, x_a)?;
    let (_, t_a) = model.view_var(ctx, x_a)?;

    // Rows 0..b are view v, b..2b view w.
    let mut sources: Vec<&Image> = Vec::new();
    let mut rows = Vec::with_capacity(2 * b);
    for phi in 0..2 {
        for (t, c) in batch.iter().zip(choices) {
            let from_k = if phi == 0 { c.v_from_k } else { c.w_from_k };
            if from_k {
                rows.push(None);
            } else {
                rows.push(Some(sources.len()));
                sources.push(if phi == 0 { &t.iv_m } else { &t.iw_n });
            }
        }
    }
    let r_sel = if sources.is_empty() {
        r_k
    } else {
        let (r_src, _) = model.view_var(ctx, tape.constant(batch_tensor(&sources)?))?;
        let parts = rows
            .iter()
            .enumerate()
            .map(|(i, src)| match src {
                None => r_k.narrow(0, i, 1),
                Some(j) => r_src.narrow(0, *j, 1),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        tape.concat(&parts, 0)?
    };

    let pst_k = rigid_transform(r_sel, t_k, p_k)?;
    let rec_k = model.decode_var(ctx, pst_k)?;
    let rec1 = reconstruction_loss_1(half(x_k, 0)?, half(x_k, 1)?, half(rec_k, 0)?, half(rec_k, 1)?)?;

    let pst_a = rigid_transform(r_sel, t_a, p_a)?;
    let rec_a = model.decode_var(ctx, pst_a)?;
    let rec2 = reconstruction_loss_2(half(x_a, 0)?, half(x_a, 1)?, half(rec_a, 0)?, half(rec_a, 1)?)?;

    let equiv = if toggles.equiv {
        let res = model.config().resolution;
        let shifts = |pick: fn(&TrainingTuple) -> crate::geometry::ShiftVector| {
            batch.iter().map(|t| pixel_shift_to_feature_shift(pick(t), res, res)).collect::<Result<Vec<_>>>()
        };
        let (dv, dw) = (shifts(|t| t.c1)?, shifts(|t| t.c2)?);
        Some(equivariance_loss(half(pst_k, 0)?, half(pst_k, 1)?, half(pst_a, 0)?, half(pst_a, 1)?, &dv, &dw)?)
    } else {
        None
    };

    let invar = if toggles.invar {
        Some(view_invariant_loss(
            model,
            ctx,
            half(x_k, 0)?,
            half(x_k, 1)?,
            (half(r_sel, 0)?, half(r_sel, 1)?),
            (half(t_k, 0)?, half(t_k, 1)?),
            (half(p_k, 0)?, half(p_k, 1)?),
        )?)
    } else {
        None
    };

    let mut total = rec1.add(rec2)?.scale(T::of(weights.gamma));
    if let Some(l) = invar {
        total = total.add(l.scale(T::of(weights.alpha)))?;
    }
    if let Some(l) = equiv {
        total = total.add(l.scale(T::of(weights.beta)))?;
    }
    Ok(PretextLosses { invar, equiv, rec1, rec2, total })
}

/// One logged optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based optimizer step.
    pub step: u64,
    /// 0-based epoch index.
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    /// Seconds spent in the step; kept out of `metrics.jsonl`.
    #[serde(skip)]
    pub wall_time: f64,
}

/// Owns the model weights and optimizer state during pretext training.
pub struct PretextTrainer {
    model: Autoencoder<f32>,
    optimizer: Adam<f32>,
    config: PretextConfig,
    step: u64,
    epoch: usize,
}

impl PretextTrainer {
    /// Fresh weights from the `model-init` stream of `config.seed`.
    pub fn new(model_config: ModelConfig, config: PretextConfig) -> Result<Self> {
        config.validate()?;
        let model = Autoencoder::new(model_config, config.seed)?;
        Ok(Self { optimizer: Adam::new(config.adam()), model, config, step: 0, epoch: 0 })
    }

    pub fn from_model(model: Autoencoder<f32>, config: PretextConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { optimizer: Adam::new(config.adam()), model, config, step: 0, epoch: 0 })
    }

    pub fn from_checkpoint(ck: Checkpoint<f32>, config: PretextConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = match ck.optimizer {
            Some(state) => Adam::import(config.adam(), state, ck.model.store())?,
            None => Adam::new(config.adam()),
        };
        Ok(Self { model: ck.model, optimizer, config, step: ck.step, epoch: ck.epoch })
    }

    pub fn model(&self) -> &Autoencoder<f32> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Autoencoder<f32> {
        &mut self.model
    }

    pub fn into_model(self) -> Autoencoder<f32> {
        self.model
    }

    pub fn config(&self) -> &PretextConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint<f32> {
        Checkpoint {
            model: self.model.clone(),
            epoch: self.epoch,
            step: self.step,
            optimizer: Some(self.optimizer.export(self.model.store())),
            extra: serde_json::json!({ "pretext": self.config }),
        }
    }

    /// Forward, backward and one Adam update on `batch`.
    pub fn training_step(
        &mut self,
        batch: &[TrainingTuple],
        choices: &[RotationChoice],
        dropout_rng: &mut dyn RngCore,
    ) -> Result<StepMetrics> {
        let start = Instant::now();
        let step = self.step + 1;
        let tape = Tape::new();
        let (grads, updates, losses) = {
            let ctx = Ctx::train(&tape, self.model.store(), dropout_rng);
            let l = pretext_losses(&self.model, &ctx, batch, choices, &self.config.weights, self.config.loss_toggles)?;
            let losses = l.breakdown();
            if let Some(component) = losses.first_non_finite() {
                return Err(Error::NonFinite { component, step });
            }
            let grads = tape.backward(l.total)?;
            if !grads.all_finite() {
                return Err(Error::NonFinite { component: "gradient", step });
            }
            (grads.take_params(), ctx.into_updates(), losses)
        };
        self.optimizer.step(self.model.store_mut(), &grads)?;
        apply_updates(self.model.store_mut(), updates)?;
        self.step = step;
        Ok(StepMetrics { step, epoch: self.epoch, losses, wall_time: start.elapsed().as_secs_f64() })
    }

    /// Runs one pass over every (scene, view pair), `tuples_per_scene` times.
    pub fn run_epoch(&mut self, dataset: &MultiViewDataset, on_step: &mut dyn FnMut(&StepMetrics)) -> Result<Vec<StepMetrics>> {
        let seed = self.config.seed;
        let epoch = self.epoch as u64;
        let mut data_rng = rng::stream_at(seed, "pretext-data", epoch);
        let mut dropout_rng = rng::stream_at(seed, "pretext-dropout", epoch);
        let mut items = epoch_items(dataset, self.config.tuples_per_scene);
        items.shuffle(&mut data_rng);
        let mut out = Vec::new();
        for chunk in items.chunks(self.config.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            let mut choices = Vec::with_capacity(chunk.len());
            for &(scene, v, w) in chunk {
                let pair = dataset.pair(scene, v, w)?;
                let k = data_rng.random_range(0..pair.len());
                batch.push(make_training_tuple(&pair, k, &mut data_rng)?);
                choices.push(RotationChoice::draw(&mut data_rng));
            }
            let m = self.training_step(&batch, &choices, &mut dropout_rng)?;
            on_step(&m);
            out.push(m);
        }
        self.epoch += 1;
        Ok(out)
    }
}

fn epoch_items(dataset: &MultiViewDataset, repeats: usize) -> Vec<(usize, usize, usize)> {
    let pairs = dataset.view_pairs();
    let mut items = Vec::with_capacity(dataset.len() * pairs.len() * repeats);
    for scene in 0..dataset.len() {
        for &(v, w) in &pairs {
            for _ in 0..repeats {
                items.push((scene, v, w));
            }
        }
    }
    items
}

/// Where a training run left its artifacts.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    /// Steps run by this call; a resumed run omits the earlier ones.
    pub metrics: Vec<StepMetrics>,
}

pub fn epoch_checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("epoch-{epoch:03}.ckpt"))
}

/// Full pretext training. Writes `checkpoints/epoch-NNN.ckpt` after every
/// epoch, appends step records to `metrics.jsonl` (losses) and
/// `timings.jsonl` (wall time), and copies the last checkpoint to
/// `pretext.ckpt`.
///
/// With `resume`, training continues from that checkpoint's epoch; metric
/// records from later epochs already present in `out_dir` are discarded.
pub fn train(
    dataset: &MultiViewDataset,
    model_config: &ModelConfig,
    config: &PretextConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    train_with_progress(dataset, model_config, config, out_dir, resume, &mut |_| {})
}

pub fn train_with_progress(
    dataset: &MultiViewDataset,
    model_config: &ModelConfig,
    config: &PretextConfig,
    out_dir: &Path,
    resume: Option<&Path>,
    on_step: &mut dyn FnMut(&StepMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.views_per_scene < 2 || dataset.is_empty() {
        return Err(Error::invalid("pretext training needs a non-empty dataset with at least two views"));
    }
    if dataset.resolution != model_config.resolution {
        return Err(Error::invalid(format!(
            "dataset resolution {} differs from model resolution {}",
            dataset.resolution, model_config.resolution
        )));
    }
    let dataset = dataset.materialized()?;
    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.model.config() != model_config {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    message: "model configuration differs from the requested one".into(),
                });
            }
            PretextTrainer::from_checkpoint(ck, config.clone())?
        }
        None => PretextTrainer::new(model_config.clone(), config.clone())?,
    };
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let timings_path = out_dir.join(TIMINGS_FILE);
    let start_step = trainer.steps();
    truncate_records(&metrics_path, start_step)?;
    truncate_records(&timings_path, start_step)?;
    let mut metrics_file = append(&metrics_path)?;
    let mut timings_file = append(&timings_path)?;

    let mut all = Vec::new();
    let mut final_path = None;
    while trainer.epochs_done() < config.epochs {
        let mut write_err = None;
        let steps = trainer.run_epoch(&dataset, &mut |m| {
            if write_err.is_none() {
                write_err = write_step(&mut metrics_file, &mut timings_file, m, &metrics_path).err();
            }
            on_step(m);
        })?;
        if let Some(e) = write_err {
            return Err(e);
        }
        all.extend(steps);
        let path = epoch_checkpoint_path(out_dir, trainer.epochs_done());
        trainer.checkpoint().save(&path)?;
        final_path = Some(path);
    }
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    match final_path {
        Some(p) => {
            fs::copy(&p, &final_checkpoint).map_err(Error::io(&final_checkpoint))?;
        }
        None => trainer.checkpoint().save(&final_checkpoint)?,
    }
    Ok(TrainOutcome { final_checkpoint, metrics_path, metrics: all })
}

fn append(path: &Path) -> Result<File> {
    OpenOptions::new().create(true).append(true).open(path).map_err(Error::io(path))
}

fn write_step(metrics: &mut File, timings: &mut File, m: &StepMetrics, path: &Path) -> Result<()> {
    let line = serde_json::to_string(m).expect("metrics serialize");
    writeln!(metrics, "{line}").map_err(Error::io(path))?;
    let t = serde_json::json!({ "step": m.step, "wall_time": m.wall_time });
    writeln!(timings, "{t}").map_err(Error::io(path))
}

/// Keeps only records with `step <= last_step`.
fn truncate_records(path: &Path, last_step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let reader = BufReader::new(File::open(path).map_err(Error::io(path))?);
    let mut kept = String::new();
    for line in reader.lines() {
        let line = line.map_err(Error::io(path))?;
        let v: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::Load { context: path.display().to_string(), message: e.to_string() })?;
        if v["step"].as_u64().is_some_and(|s| s <= last_step) {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(Error::io(path))
}

/// Reads a `metrics.jsonl` file.
pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Load { context: path.display().to_string(), message: e.to_string() })
        })
        .collect()
}

/// Mean evaluation-mode losses over a fixed, seeded set of tuples: one per
/// scene and view pair.
pub fn evaluate_objective<T: Scalar>(
    model: &Autoencoder<T>,
    dataset: &MultiViewDataset,
    config: &PretextConfig,
    seed: u64,
) -> Result<LossBreakdown> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot evaluate the objective on an empty dataset"));
    }
    let mut rng = rng::stream(seed, "objective-eval");
    let items = epoch_items(dataset, 1);
    let mut sum = LossBreakdown::default();
    let mut count = 0usize;
    for chunk in items.chunks(config.batch_size) {
        let mut batch = Vec::with_capacity(chunk.len());
        let mut choices = Vec::with_capacity(chunk.len());
        for &(scene, v, w) in chunk {
            let pair = dataset.pair(scene, v, w)?;
            let k = rng.random_range(0..pair.len());
            batch.push(make_training_tuple(&pair, k, &mut rng)?);
            choices.push(RotationChoice::draw(&mut rng));
        }
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, model.store());
        let b = pretext_losses(model, &ctx, &batch, &choices, &config.weights, config.loss_toggles)?.breakdown();
        let n = chunk.len() as f64;
        sum.invar += b.invar * n;
        sum.equiv += b.equiv * n;
        sum.rec1 += b.rec1 * n;
        sum.rec2 += b.rec2 * n;
        count += chunk.len();
    }
    let c = count as f64;
    total_loss(sum.invar / c, sum.equiv / c, sum.rec1 / c, sum.rec2 / c, &config.weights)
}

/// Mean validation objective per latent size, laid out like a one-row table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub sizes: Vec<usize>,
    pub folds: usize,
    /// `per_fold[i][f]` is the validation total of size `i` on fold `f`.
    pub per_fold: Vec<Vec<f64>>,
    pub mean_total: Vec<f64>,
    pub argmin: usize,
}

impl SweepReport {
    /// Text table: one header row of sizes, one row of mean totals.
    pub fn table(&self) -> String {
        let mut head = format!("{:<10}", "N");
        let mut row = format!("{:<10}", "L_total");
        for (n, l) in self.sizes.iter().zip(&self.mean_total) {
            head.push_str(&format!(" | {n:>10}"));
            row.push_str(&format!(" | {l:>10.6}"));
        }
        format!("{head}\n{row}\nargmin N = {}\n", self.argmin)
    }
}

/// Scene indices held out for validation in `fold` of `folds`. A single
/// fold holds out every fifth scene.
pub fn validation_scenes(n_scenes: usize, fold: usize, folds: usize) -> Vec<usize> {
    if folds <= 1 {
        (0..n_scenes).filter(|i| i % 5 == 4).collect()
    } else {
        (0..n_scenes).filter(|i| i % folds == fold).collect()
    }
}

/// Trains one model per (size, fold) and reports the mean validation
/// objective per size. Artifacts go to `out_dir/n{N}/fold{f}`.
pub fn sweep_latent_size(
    dataset: &MultiViewDataset,
    base: &ModelConfig,
    config: &PretextConfig,
    sizes: &[usize],
    folds: usize,
    out_dir: &Path,
) -> Result<SweepReport> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::invalid("latent sizes must be a non-empty list of positive integers"));
    }
    if folds == 0 {
        return Err(Error::invalid("need at least one fold"));
    }
    let mut per_fold = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut totals = Vec::with_capacity(folds);
        for fold in 0..folds {
            let held = validation_scenes(dataset.len(), fold, folds);
            let (train_set, val_set) = split_scenes(dataset, &held);
            if train_set.is_empty() || val_set.is_empty() {
                return Err(Error::invalid(format!("fold {fold} leaves an empty training or validation split")));
            }
            let model_config = ModelConfig { n_features: n, ..base.clone() };
            let dir = out_dir.join(format!("n{n}")).join(format!("fold{fold}"));
            let outcome = train(&train_set, &model_config, config, &dir, None)?;
            let model = Checkpoint::<f32>::load(&outcome.final_checkpoint)?.model;
            totals.push(evaluate_objective(&model, &val_set, config, config.seed)?.total);
        }
        per_fold.push(totals);
    }
    let mean_total: Vec<f64> = per_fold.iter().map(|t| t.iter().sum::<f64>() / t.len() as f64).collect();
    let best = mean_total
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty sizes");
    Ok(SweepReport { sizes: sizes.to_vec(), folds, per_fold, mean_total, argmin: sizes[best] })
}

fn split_scenes(dataset: &MultiViewDataset, held: &[usize]) -> (MultiViewDataset, MultiViewDataset) {
    let ids: Vec<&str> = held.iter().map(|&i| dataset.sequences[i].scene_id.as_str()).collect();
    let val = dataset.filter(|s| ids.contains(&s.scene_id.as_str()));
    let train = dataset.filter(|s| !ids.contains(&s.scene_id.as_str()));
    (train, val)
}
