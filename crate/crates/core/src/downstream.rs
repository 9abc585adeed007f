//! Sequence heads over canonical poses: action classification and
//! movement-quality scoring with a two-layer bidirectional GRU.

use std::path::Path;

use autodiff::nn::{apply_updates, Linear};
use autodiff::optim::{Adam, AdamConfig};
use autodiff::ops::loss::softmax_rows;
use autodiff::{Ctx, ParamKind, ParamStore, Scalar, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{file_sha256, read_container, split_records, store_records, write_container, Checkpoint, HEAD_HEADER};
use crate::data::{clip_split_16, subsample_16, SequenceSample, CLIP_LEN};
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::image::{batch_tensor, Image};
use crate::model::{Autoencoder, ModelConfig, PoseEncoder, POSE_PREFIX};
use crate::rng;

pub const HEAD_PREFIX: &str = "head.";

/// How the pose encoder takes part in downstream training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Pretrained encoder, weights fixed.
    Frozen,
    /// Pretrained encoder, trained jointly with the head.
    FineTune,
    /// Randomly initialized encoder, trained jointly with the head.
    Scratch,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(TrainMode::Frozen),
            "fine-tune" => Ok(TrainMode::FineTune),
            "scratch" => Ok(TrainMode::Scratch),
            _ => Err(Error::invalid(format!("unknown mode {s:?}, expected frozen, fine-tune or scratch"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// GRU hidden units per direction.
    pub hidden: usize,
    /// Action classes, or maximum score + 1 for quality scoring.
    pub n_classes: usize,
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { hidden: 512, n_classes: 4, mode: TrainMode::Frozen, epochs: 30, batch_size: 8, learning_rate: 1e-3, seed: 0 }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::invalid(format!("need at least two classes, got {}", self.n_classes)));
        }
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::invalid("hidden size and batch size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// One GRU cell with separate input and hidden projections, gate order
/// (reset, update, new).
#[derive(Clone, Debug)]
struct GruCell {
    input: Linear,
    hidden: Linear,
    size: usize,
}

impl GruCell {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore<f32>, name: &str, fan_in: usize, size: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / (size as f64).sqrt();
        let mut uniform = |shape: &[usize]| -> Tensor<f32> {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect()).expect("shape")
        };
        let mut linear = |suffix: &str, fin: usize| -> Result<Linear> {
            let weight = store.add(format!("{name}.{suffix}.weight"), ParamKind::Trainable, uniform(&[3 * size, fin]))?;
            let bias = store.add(format!("{name}.{suffix}.bias"), ParamKind::Trainable, uniform(&[3 * size]))?;
            Ok(Linear { weight, bias })
        };
        Ok(Self { input: linear("ih", fan_in)?, hidden: linear("hh", size)?, size })
    }

    fn step<'a>(&self, ctx: &Ctx<'a, f32>, x: Var<'a, f32>, h: Var<'a, f32>) -> Result<Var<'a, f32>> {
        let s = self.size;
        let gi = self.input.forward(ctx, x)?;
        let gh = self.hidden.forward(ctx, h)?;
        let r = gi.narrow(1, 0, s)?.add(gh.narrow(1, 0, s)?)?.sigmoid();
        let z = gi.narrow(1, s, s)?.add(gh.narrow(1, s, s)?)?.sigmoid();
        let n = gi.narrow(1, 2 * s, s)?.add(r.mul(gh.narrow(1, 2 * s, s)?)?)?.tanh();
        // h' = (1 - z) * n + z * h
        Ok(n.add(z.mul(h.sub(n)?)?)?)
    }
}

/// Two bidirectional GRU layers and one fully-connected output layer.
#[derive(Clone, Debug)]
struct GruHead {
    layers: [[GruCell; 2]; 2],
    out: Linear,
    hidden: usize,
}

impl GruHead {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore<f32>, input: usize, hidden: usize, classes: usize, rng: &mut R) -> Result<Self> {
        let mut cell = |name: &str, fin: usize| GruCell::new(store, &format!("{HEAD_PREFIX}gru.{name}"), fin, hidden, rng);
        let layers = [[cell("l0.fwd", input)?, cell("l0.bwd", input)?], [cell("l1.fwd", 2 * hidden)?, cell("l1.bwd", 2 * hidden)?]];
        let out = Linear::new(store, &format!("{HEAD_PREFIX}fc"), 2 * hidden, classes, rng)?;
        Ok(Self { layers, out, hidden })
    }

    /// `steps[t]` is `(B, D)`; returns `(B, classes)` logits.
    fn forward<'a>(&self, ctx: &Ctx<'a, f32>, steps: &[Var<'a, f32>]) -> Result<Var<'a, f32>> {
        let batch = steps[0].shape()[0];
        let zero = || ctx.tape.constant(Tensor::zeros(&[batch, self.hidden]));
        let mut seq = steps.to_vec();
        let mut last = (zero(), zero());
        for [fwd, bwd] in &self.layers {
            let mut hf = zero();
            let mut outs_f = Vec::with_capacity(seq.len());
            for &x in &seq {
                hf = fwd.step(ctx, x, hf)?;
                outs_f.push(hf);
            }
            let mut hb = zero();
            let mut outs_b = vec![hb; seq.len()];
            for t in (0..seq.len()).rev() {
                hb = bwd.step(ctx, seq[t], hb)?;
                outs_b[t] = hb;
            }
            seq = outs_f.iter().zip(&outs_b).map(|(&f, &b)| ctx.tape.concat(&[f, b], 1)).collect::<std::result::Result<_, _>>()?;
            last = (hf, hb);
        }
        let features = ctx.tape.concat(&[last.0, last.1], 1)?;
        Ok(self.out.forward(ctx, features)?)
    }
}

/// Pose encoder plus recurrent head, sharing one parameter store.
#[derive(Clone, Debug)]
pub struct DownstreamModel {
    config: HeadConfig,
    model_config: ModelConfig,
    store: ParamStore<f32>,
    encoder: PoseEncoder,
    head: GruHead,
    encoder_hash: Option<String>,
}

/// Where the pose encoder's initial weights come from.
pub enum EncoderInit<'a> {
    /// A pretext-trained autoencoder and the hash of its checkpoint file.
    Pretrained { model: &'a Autoencoder<f32>, hash: String },
    /// Random weights for this configuration.
    Random(ModelConfig),
}

impl<'a> EncoderInit<'a> {
    fn model_config(&self) -> &ModelConfig {
        match self {
            EncoderInit::Pretrained { model, .. } => model.config(),
            EncoderInit::Random(c) => c,
        }
    }
}

/// Loads a pretext checkpoint and hashes its file.
pub fn load_encoder(path: &Path) -> Result<(Autoencoder<f32>, String)> {
    let ck = Checkpoint::<f32>::load(path)?;
    Ok((ck.model, file_sha256(path)?))
}

impl DownstreamModel {
    pub fn new(config: HeadConfig, init: &EncoderInit<'_>) -> Result<Self> {
        config.validate()?;
        let model_config = init.model_config().clone();
        model_config.validate()?;
        let mut rng = rng::stream(config.seed, "downstream-init");
        let mut store = ParamStore::new();
        let encoder = PoseEncoder::new(&mut store, &model_config, &mut rng)?;
        let head = GruHead::new(&mut store, 3 * model_config.n_features, config.hidden, config.n_classes, &mut rng)?;
        let mut encoder_hash = None;
        match (init, config.mode) {
            (EncoderInit::Pretrained { model, hash }, TrainMode::Frozen | TrainMode::FineTune) => {
                store.load_matching(model.store(), POSE_PREFIX)?;
                encoder_hash = Some(hash.clone());
            }
            (EncoderInit::Random(_), TrainMode::Frozen | TrainMode::FineTune) => {
                return Err(Error::invalid("frozen and fine-tune modes need a pretrained encoder checkpoint"));
            }
            (_, TrainMode::Scratch) => {}
        }
        Ok(Self { config, model_config, store, encoder, head, encoder_hash })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_config
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub fn encoder_hash(&self) -> Option<&str> {
        self.encoder_hash.as_deref()
    }

    fn features_per_frame(&self) -> usize {
        3 * self.model_config.n_features
    }

    /// Evaluation-mode canonical poses, flattened, one row per image.
    pub fn frame_features(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let tape = Tape::new();
            let ctx = Ctx::eval(&tape, &self.store);
            let p = self.encoder.forward(&ctx, tape.constant(batch_tensor(chunk)?))?;
            out.extend(p.value().data().chunks(self.features_per_frame()).map(<[f32]>::to_vec));
        }
        Ok(out)
    }

    /// Head logits for `(B, T, 3N)` features laid out sample-major.
    fn head_logits<'a>(&self, ctx: &Ctx<'a, f32>, feats: Var<'a, f32>, batch: usize) -> Result<Var<'a, f32>> {
        let d = self.features_per_frame();
        let flat = feats.reshape(&[batch, CLIP_LEN * d])?;
        let steps = (0..CLIP_LEN).map(|t| flat.narrow(1, t * d, d)).collect::<std::result::Result<Vec<_>, _>>()?;
        self.head.forward(ctx, &steps)
    }

    fn logits_from_features(&self, clips: &[Vec<f32>]) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &self.store);
        let data: Vec<f32> = clips.iter().flatten().copied().collect();
        let feats = tape.constant(Tensor::new(&[clips.len(), CLIP_LEN * self.features_per_frame()], data)?);
        let logits = self.head_logits(&ctx, feats, clips.len())?;
        Ok(logits.value().data().chunks(self.config.n_classes).map(|r| r.iter().map(|&v| v as f64).collect()).collect())
    }

    fn clip_logits(&self, frames: &[&Image]) -> Result<Vec<f64>> {
        let feats = self.frame_features(frames)?;
        Ok(self.logits_from_features(&[feats.concat()])?.remove(0))
    }

    /// Class probabilities for exactly 16 frames.
    pub fn classify_sequence(&self, frames: &[&Image]) -> Result<Vec<f64>> {
        if frames.len() != CLIP_LEN {
            return Err(Error::invalid(format!("classification needs exactly {CLIP_LEN} frames, got {}", frames.len())));
        }
        Ok(softmax(&self.clip_logits(frames)?))
    }

    /// Final-layer outputs averaged over all non-overlapping 16-frame clips.
    pub fn averaged_logits(&self, frames: &[&Image]) -> Result<Vec<f64>> {
        let clips = clip_split_16(frames.len())?;
        let feats = self.frame_features(frames)?;
        let clip_feats: Vec<Vec<f32>> = clips.iter().map(|r| feats[r.clone()].concat()).collect();
        let logits = self.logits_from_features(&clip_feats)?;
        let mut mean = vec![0.0; self.config.n_classes];
        for l in &logits {
            for (m, v) in mean.iter_mut().zip(l) {
                *m += v / logits.len() as f64;
            }
        }
        Ok(mean)
    }

    /// Expected score `Σ s·p(s)` under the softmax of the clip-averaged
    /// outputs.
    pub fn score_sequence(&self, frames: &[&Image]) -> Result<f64> {
        let p = softmax(&self.averaged_logits(frames)?);
        Ok(p.iter().enumerate().map(|(s, p)| s as f64 * p).sum())
    }

    /// Most probable class per sample, using 16 evenly spread frames
    /// (the segment midpoints) of each sequence.
    pub fn predict(&self, samples: &[SequenceSample]) -> Result<Vec<usize>> {
        samples
            .iter()
            .map(|s| {
                let frames: Vec<&Image> = eval_indices(s.frames.len())?.into_iter().map(|i| &*s.frames[i]).collect();
                Ok(argmax(&self.clip_logits(&frames)?))
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = HeadBody {
            head: self.config.clone(),
            model: self.model_config.clone(),
            encoder_sha256: self.encoder_hash.clone(),
        };
        write_container(path, HEAD_HEADER, &body, &store_records(&self.store))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (body, records): (HeadBody, _) = read_container(path, HEAD_HEADER)?;
        let (store, _) = split_records(path, records)?;
        let init = EncoderInit::Random(body.model.clone());
        let mut model = Self::new(HeadConfig { mode: TrainMode::Scratch, ..body.head.clone() }, &init)?;
        if store.len() != model.store.len() {
            return Err(Error::Checkpoint { path: path.to_path_buf(), message: "tensor count does not match head layout".into() });
        }
        for ((_, a), (_, b)) in model.store.entries().zip(store.entries()) {
            if a.name != b.name || a.value().shape() != b.value().shape() {
                return Err(Error::Checkpoint { path: path.to_path_buf(), message: format!("unexpected tensor {}", b.name) });
            }
        }
        model.store = store;
        model.config = body.head;
        model.encoder_hash = body.encoder_sha256;
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeadBody {
    head: HeadConfig,
    model: ModelConfig,
    encoder_sha256: Option<String>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let t = Tensor::<f64>::new(&[1, logits.len()], logits.to_vec()).expect("row");
    softmax_rows(&t).into_data()
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i)
}

/// Deterministic 16-frame selection: the middle frame of each segment.
pub fn eval_indices(len: usize) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::invalid("empty sequence"));
    }
    Ok((0..CLIP_LEN).map(|i| ((2 * i + 1) * len / (2 * CLIP_LEN)).min(len - 1)).collect())
}

/// Per-epoch training log entry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

pub struct DownstreamRun {
    pub model: DownstreamModel,
    pub history: Vec<EpochLog>,
}

/// Trains the head (and, unless frozen, the encoder) with cross-entropy on
/// one random 16-frame subsample per sequence per epoch.
pub fn train_downstream(
    train: &[SequenceSample],
    val: Option<&[SequenceSample]>,
    init: &EncoderInit<'_>,
    config: &HeadConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<DownstreamRun> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("downstream training needs at least one sample"));
    }
    for s in train.iter().chain(val.unwrap_or(&[])) {
        if s.label >= config.n_classes {
            return Err(Error::invalid(format!("label {} out of range for {} classes", s.label, config.n_classes)));
        }
        if s.frames.is_empty() {
            return Err(Error::invalid("empty sequence"));
        }
    }
    let mut model = DownstreamModel::new(config.clone(), init)?;
    let frozen = config.mode == TrainMode::Frozen;
    // Frozen encoders run once per frame; their features are reused.
    let cache: Option<Vec<Vec<Vec<f32>>>> = if frozen {
        Some(train.iter().map(|s| model.frame_features(&s.frames.iter().map(|f| &**f).collect::<Vec<_>>())).collect::<Result<_>>()?)
    } else {
        None
    };
    let mut opt = Adam::new(AdamConfig { lr: config.learning_rate, ..AdamConfig::default() });
    let d = model.features_per_frame();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut g = rng::stream_at(config.seed, "downstream-epoch", epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut g);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let picks: Vec<Vec<usize>> =
                chunk.iter().map(|&i| subsample_16(train[i].frames.len(), &mut g)).collect::<Result<_>>()?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label).collect();
            let tape = Tape::new();
            let (grads, updates, loss, logits) = {
                let mut drop_rng = rng::stream_at(config.seed, "downstream-dropout", epoch as u64);
                let ctx = if frozen {
                    Ctx::eval(&tape, &model.store).freeze(POSE_PREFIX)
                } else {
                    Ctx::train(&tape, &model.store, &mut drop_rng)
                };
                let feats = match &cache {
                    Some(cache) => {
                        let mut data = Vec::with_capacity(chunk.len() * CLIP_LEN * d);
                        for (&i, idx) in chunk.iter().zip(&picks) {
                            for &f in idx {
                                data.extend_from_slice(&cache[i][f]);
                            }
                        }
                        tape.constant(Tensor::new(&[chunk.len(), CLIP_LEN * d], data)?)
                    }
                    None => {
                        let ims: Vec<&Image> =
                            chunk.iter().zip(&picks).flat_map(|(&i, idx)| idx.iter().map(move |&f| &*train[i].frames[f])).collect();
                        model.encoder.forward(&ctx, tape.constant(batch_tensor(&ims)?))?
                    }
                };
                let logits = model.head_logits(&ctx, feats, chunk.len())?;
                let loss = logits.cross_entropy(&labels)?;
                let value = loss.item() as f64;
                if !value.is_finite() {
                    return Err(Error::NonFinite { component: "cross-entropy", step: epoch as u64 });
                }
                let grads = tape.backward(loss)?;
                (grads.take_params(), ctx.into_updates(), value, logits.value())
            };
            opt.step(&mut model.store, &grads)?;
            apply_updates(&mut model.store, updates)?;
            loss_sum += loss * chunk.len() as f64;
            for (row, &l) in logits.data().chunks(config.n_classes).zip(&labels) {
                let row: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                hits += (argmax(&row) == l) as usize;
            }
        }
        let val_accuracy = match val {
            Some(v) if !v.is_empty() => {
                let labels: Vec<usize> = v.iter().map(|s| s.label).collect();
                Some(accuracy(&model.predict(v)?, &labels)?)
            }
            _ => None,
        };
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            val_accuracy,
        };
        on_epoch(&log);
        history.push(log);
    }
    Ok(DownstreamRun { model, history })
}

/// Sanity: encoder weights of `a` and `b` are bit-identical.
pub fn encoder_weights_equal(a: &ParamStore<f32>, b: &ParamStore<f32>) -> bool {
    a.with_prefix(POSE_PREFIX).zip(b.with_prefix(POSE_PREFIX)).all(|(x, y)| a.get(x) == b.get(y))
        && a.with_prefix(POSE_PREFIX).count() == b.with_prefix(POSE_PREFIX).count()
}

impl<T: Scalar> Autoencoder<T> {
    /// Pose-encoder parameters only, for comparing against a downstream model.
    pub fn pose_store(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for id in self.store().with_prefix(POSE_PREFIX) {
            let e = self.store().entry(id);
            out.add(e.name.clone(), e.kind, e.value().clone()).expect("unique names");
        }
        out
    }
}
