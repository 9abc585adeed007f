//! Pose encoder, viewpoint encoder and decoder.
//!
//! The three networks share one [`ParamStore`] inside [`Autoencoder`], with
//! parameter names prefixed `pose.`, `view.` and `decoder.`. Tape-level
//! methods (`*_var`) are used by the losses and trainers; the image-level
//! methods run in evaluation mode and return plain geometry types.

use autodiff::nn::{BatchNorm, Conv2d, ConvTranspose2d, Linear};
use autodiff::{Ctx, ParamKind, ParamStore, Scalar, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, CanonicalPose, ViewSpecificPose, Viewpoint, DEFAULT_FEATURES};
use crate::image::{batch_tensor, images_from_tensor, Image};
use crate::rng;

pub const POSE_PREFIX: &str = "pose.";
pub const VIEW_PREFIX: &str = "view.";
pub const DECODER_PREFIX: &str = "decoder.";

/// Channel widths of every layer group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerWidths {
    /// Conv widths of the pose encoder's four stages.
    pub pose_conv: [usize; 4],
    pub pose_fc: [usize; 2],
    pub view_conv: [usize; 2],
    pub view_fc: usize,
    /// Channels of the decoder's reshaped bottleneck.
    pub decoder_bottleneck: usize,
    pub decoder_conv: usize,
    pub decoder_up: [usize; 2],
}

impl Default for LayerWidths {
    fn default() -> Self {
        Self {
            pose_conv: [64, 128, 256, 512],
            pose_fc: [1024, 512],
            view_conv: [128, 256],
            view_fc: 512,
            decoder_bottleneck: 512,
            decoder_conv: 256,
            decoder_up: [128, 64],
        }
    }
}

impl LayerWidths {
    /// Every width divided by `divisor`, never below one channel.
    pub fn scaled(divisor: usize) -> Self {
        let d = |w: usize| (w / divisor.max(1)).max(1);
        let full = Self::default();
        Self {
            pose_conv: full.pose_conv.map(d),
            pose_fc: full.pose_fc.map(d),
            view_conv: full.view_conv.map(d),
            view_fc: d(full.view_fc),
            decoder_bottleneck: d(full.decoder_bottleneck),
            decoder_conv: d(full.decoder_conv),
            decoder_up: full.decoder_up.map(d),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_features: usize,
    pub resolution: usize,
    pub dropout_rate: f64,
    pub widths: LayerWidths,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { n_features: DEFAULT_FEATURES, resolution: 128, dropout_rate: 0.5, widths: LayerWidths::default() }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 {
            return Err(Error::invalid("n_features must be positive"));
        }
        if self.resolution < 16 || self.resolution % 8 != 0 {
            return Err(Error::invalid(format!(
                "resolution must be a multiple of 8 and at least 16, got {}",
                self.resolution
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        let w = &self.widths;
        let all = w.pose_conv.iter().chain(&w.pose_fc).chain(&w.view_conv).chain(&w.decoder_up);
        if all.chain([&w.view_fc, &w.decoder_bottleneck, &w.decoder_conv]).any(|&c| c == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }

    /// Spatial side of the grid entering the pose encoder's first FC layer
    /// and leaving the decoder's FC layer.
    pub fn bottleneck_side(&self) -> usize {
        self.resolution / 8
    }

    /// Closed-form count of trainable scalars (buffers excluded).
    pub fn parameter_count(&self) -> usize {
        let w = &self.widths;
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
        let fc = |i: usize, o: usize| i * o + o;
        let bn = |c: usize| 2 * c;
        let s = self.bottleneck_side();
        let [p0, p1, p2, p3] = w.pose_conv;
        let pose = conv(3, p0, 3) + conv(p0, p0, 3) + 2 * bn(p0)
            + conv(p0, p1, 3) + conv(p1, p1, 3) + 2 * bn(p1)
            + conv(p1, p2, 3) + conv(p2, p2, 3) + 2 * bn(p2)
            + conv(p2, p3, 3) + bn(p3) + conv(p3, p3, 3)
            + fc(p3 * s * s, w.pose_fc[0]) + fc(w.pose_fc[0], w.pose_fc[1]) + fc(w.pose_fc[1], 3 * self.n_features);
        let [v0, v1] = w.view_conv;
        let view = conv(3, v0, 5) + conv(v0, v0, 5) + 2 * bn(v0) + conv(v0, v1, 5) + conv(v1, v1, 5) + 2 * bn(v1)
            + fc(v1, w.view_fc) + fc(w.view_fc, 6);
        let [u0, u1] = w.decoder_up;
        let (b, c) = (w.decoder_bottleneck, w.decoder_conv);
        let decoder = fc(3 * self.n_features, b * s * s)
            + conv(b, c, 3) + conv(c, c, 3) + 2 * bn(c)
            + conv(c, u0, 3) + conv(u0, u0, 3) + 2 * bn(u0)
            + conv(u0, u1, 3) + conv(u1, u1, 3) + 2 * bn(u1)
            + conv(u1, 3, 3) + bn(3) + conv(3, 3, 3);
        pose + view + decoder
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Conv { conv: Conv2d, bn: Option<BatchNorm>, relu: bool },
    ConvT { conv: ConvTranspose2d, bn: Option<BatchNorm>, relu: bool },
    Pool(usize),
}

struct Builder<'s, T: Scalar, R: Rng + ?Sized> {
    store: &'s mut ParamStore<T>,
    rng: &'s mut R,
    prefix: &'static str,
    count: usize,
}

impl<T: Scalar, R: Rng + ?Sized> Builder<'_, T, R> {
    fn next_name(&mut self, kind: &str) -> String {
        self.count += 1;
        format!("{}{kind}{}", self.prefix, self.count)
    }

    fn conv(&mut self, cin: usize, cout: usize, k: usize, bn: bool, relu: bool) -> Result<Layer> {
        let name = self.next_name("conv");
        let conv = Conv2d::new(self.store, &name, cin, cout, k, 1, k / 2, self.rng)?;
        let bn = if bn { Some(BatchNorm::new(self.store, &format!("{name}.bn"), cout)?) } else { None };
        Ok(Layer::Conv { conv, bn, relu })
    }

    fn conv_t(&mut self, cin: usize, cout: usize, stride: usize, bn: bool, relu: bool) -> Result<Layer> {
        let name = self.next_name("convt");
        let out_pad = stride - 1;
        let conv = ConvTranspose2d::new(self.store, &name, cin, cout, 3, stride, 1, out_pad, self.rng)?;
        let bn = if bn { Some(BatchNorm::new(self.store, &format!("{name}.bn"), cout)?) } else { None };
        Ok(Layer::ConvT { conv, bn, relu })
    }

    fn linear(&mut self, fan_in: usize, fan_out: usize) -> Result<Linear> {
        let name = self.next_name("fc");
        Ok(Linear::new(self.store, &name, fan_in, fan_out, self.rng)?)
    }
}

fn run<'a, T: Scalar>(layers: &[Layer], ctx: &Ctx<'a, T>, mut x: Var<'a, T>) -> Result<Var<'a, T>> {
    for layer in layers {
        x = match layer {
            Layer::Conv { conv, bn, relu } => finish(ctx, conv.forward(ctx, x)?, bn, *relu)?,
            Layer::ConvT { conv, bn, relu } => finish(ctx, conv.forward(ctx, x)?, bn, *relu)?,
            Layer::Pool(k) => x.max_pool2d(*k)?,
        };
    }
    Ok(x)
}

fn finish<'a, T: Scalar>(ctx: &Ctx<'a, T>, x: Var<'a, T>, bn: &Option<BatchNorm>, relu: bool) -> Result<Var<'a, T>> {
    let x = match bn {
        Some(bn) => bn.forward(ctx, x)?,
        None => x,
    };
    Ok(if relu { x.relu() } else { x })
}

/// Image to canonical pose, `(B, 3, H, W) -> (B, 3, N)`.
#[derive(Clone, Debug)]
pub struct PoseEncoder {
    convs: Vec<Layer>,
    fc: [Linear; 3],
    n_features: usize,
}

impl PoseEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut b = Builder { store, rng, prefix: POSE_PREFIX, count: 0 };
        let [p0, p1, p2, p3] = config.widths.pose_conv;
        let convs = vec![
            b.conv(3, p0, 3, true, true)?,
            b.conv(p0, p0, 3, true, true)?,
            Layer::Pool(2),
            b.conv(p0, p1, 3, true, true)?,
            b.conv(p1, p1, 3, true, true)?,
            Layer::Pool(2),
            b.conv(p1, p2, 3, true, true)?,
            b.conv(p2, p2, 3, true, true)?,
            Layer::Pool(2),
            b.conv(p2, p3, 3, true, true)?,
            b.conv(p3, p3, 3, false, true)?,
        ];
        let s = config.bottleneck_side();
        let [f0, f1] = config.widths.pose_fc;
        let fc = [b.linear(p3 * s * s, f0)?, b.linear(f0, f1)?, b.linear(f1, 3 * config.n_features)?];
        Ok(Self { convs, fc, n_features: config.n_features })
    }

    pub fn forward<'a, T: Scalar>(&self, ctx: &Ctx<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        let batch = x.shape()[0];
        let h = run(&self.convs, ctx, x)?;
        let flat: usize = h.shape()[1..].iter().product();
        let h = h.reshape(&[batch, flat])?;
        let h = self.fc[0].forward(ctx, h)?.relu();
        let h = self.fc[1].forward(ctx, h)?.relu();
        Ok(self.fc[2].forward(ctx, h)?.reshape(&[batch, 3, self.n_features])?)
    }
}

/// Image to rotation and translation, each `(B, 3)`.
#[derive(Clone, Debug)]
pub struct ViewpointEncoder {
    convs: Vec<Layer>,
    fc: [Linear; 2],
    dropout: f64,
}

impl ViewpointEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut b = Builder { store, rng, prefix: VIEW_PREFIX, count: 0 };
        let [v0, v1] = config.widths.view_conv;
        let convs = vec![
            b.conv(3, v0, 5, true, true)?,
            b.conv(v0, v0, 5, true, true)?,
            Layer::Pool(7),
            b.conv(v0, v1, 5, true, true)?,
            b.conv(v1, v1, 5, true, true)?,
        ];
        let fc = [b.linear(v1, config.widths.view_fc)?, b.linear(config.widths.view_fc, 6)?];
        Ok(Self { convs, fc, dropout: config.dropout_rate })
    }

    pub fn forward<'a, T: Scalar>(&self, ctx: &Ctx<'a, T>, x: Var<'a, T>) -> Result<(Var<'a, T>, Var<'a, T>)> {
        let h = run(&self.convs, ctx, x)?.global_avg_pool()?;
        let h = ctx.dropout(self.fc[0].forward(ctx, h)?.relu(), self.dropout)?;
        let out = self.fc[1].forward(ctx, h)?;
        Ok((out.narrow(1, 0, 3)?, out.narrow(1, 3, 3)?))
    }
}

/// View-specific pose to image, `(B, 3, N) -> (B, 3, H, W)`.
#[derive(Clone, Debug)]
pub struct Decoder {
    fc: Linear,
    layers: Vec<Layer>,
    bottleneck: usize,
    side: usize,
    dropout: f64,
}

impl Decoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut b = Builder { store, rng, prefix: DECODER_PREFIX, count: 0 };
        let w = &config.widths;
        let side = config.bottleneck_side();
        let fc = b.linear(3 * config.n_features, w.decoder_bottleneck * side * side)?;
        let [u0, u1] = w.decoder_up;
        let c = w.decoder_conv;
        let layers = vec![
            b.conv(w.decoder_bottleneck, c, 3, true, true)?,
            b.conv(c, c, 3, true, true)?,
            b.conv_t(c, u0, 2, true, true)?,
            b.conv_t(u0, u0, 1, true, true)?,
            b.conv_t(u0, u1, 2, true, true)?,
            b.conv_t(u1, u1, 1, true, true)?,
            b.conv_t(u1, 3, 2, true, true)?,
            b.conv_t(3, 3, 1, false, false)?,
        ];
        Ok(Self { fc, layers, bottleneck: w.decoder_bottleneck, side, dropout: config.dropout_rate })
    }

    pub fn forward<'a, T: Scalar>(&self, ctx: &Ctx<'a, T>, pose: Var<'a, T>) -> Result<Var<'a, T>> {
        let s = pose.shape();
        let batch = s[0];
        let flat = pose.reshape(&[batch, s[1..].iter().product()])?;
        let h = ctx.dropout(self.fc.forward(ctx, flat)?.relu(), self.dropout)?;
        let h = h.reshape(&[batch, self.bottleneck, self.side, self.side])?;
        Ok(run(&self.layers, ctx, h)?.tanh())
    }
}

/// The full auto-encoder and its parameters.
#[derive(Clone, Debug)]
pub struct Autoencoder<T: Scalar> {
    config: ModelConfig,
    store: ParamStore<T>,
    pose: PoseEncoder,
    view: ViewpointEncoder,
    decoder: Decoder,
}

impl<T: Scalar> Autoencoder<T> {
    /// Fresh weights drawn from the `model-init` stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, "model-init");
        let mut store = ParamStore::new();
        let pose = PoseEncoder::new(&mut store, &config, &mut rng)?;
        let view = ViewpointEncoder::new(&mut store, &config, &mut rng)?;
        let decoder = Decoder::new(&mut store, &config, &mut rng)?;
        Ok(Self { config, store, pose, view, decoder })
    }

    /// Rebuilds the layer structure for `config` around existing weights.
    pub fn from_store(config: ModelConfig, store: ParamStore<T>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if store.len() != model.store.len() {
            return Err(Error::Shape(format!(
                "weights hold {} tensors, model needs {}",
                store.len(),
                model.store.len()
            )));
        }
        for ((_, a), (_, b)) in model.store.entries().zip(store.entries()) {
            if a.name != b.name || a.value().shape() != b.value().shape() || a.kind != b.kind {
                return Err(Error::Shape(format!("weight {} does not match model layout", b.name)));
            }
        }
        model.store = store;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn pose_encoder(&self) -> &PoseEncoder {
        &self.pose
    }

    pub fn trainable_count(&self) -> usize {
        self.store
            .entries()
            .filter(|(_, e)| e.kind == ParamKind::Trainable)
            .map(|(_, e)| e.value().numel())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> Autoencoder<U> {
        Autoencoder {
            config: self.config.clone(),
            store: self.store.cast(),
            pose: self.pose.clone(),
            view: self.view.clone(),
            decoder: self.decoder.clone(),
        }
    }

    pub fn pose_var<'a>(&self, ctx: &Ctx<'a, T>, images: Var<'a, T>) -> Result<Var<'a, T>> {
        self.pose.forward(ctx, images)
    }

    pub fn view_var<'a>(&self, ctx: &Ctx<'a, T>, images: Var<'a, T>) -> Result<(Var<'a, T>, Var<'a, T>)> {
        self.view.forward(ctx, images)
    }

    pub fn decode_var<'a>(&self, ctx: &Ctx<'a, T>, pose: Var<'a, T>) -> Result<Var<'a, T>> {
        self.decoder.forward(ctx, pose)
    }

    pub fn check_images(&self, images: &[&Image]) -> Result<()> {
        let r = self.config.resolution;
        if images.is_empty() {
            return Err(Error::invalid("empty image batch"));
        }
        for im in images {
            if im.width() != r || im.height() != r {
                return Err(Error::invalid(format!(
                    "image is {}x{}, model expects {r}x{r}",
                    im.width(),
                    im.height()
                )));
            }
        }
        Ok(())
    }

    /// Evaluation-mode canonical poses for a batch of images.
    pub fn encode_poses(&self, images: &[&Image]) -> Result<Vec<CanonicalPose>> {
        self.check_images(images)?;
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &self.store);
        let p = self.pose_var(&ctx, tape.constant(batch_tensor(images)?))?;
        let n = self.config.n_features;
        let v = p.value();
        v.data()
            .chunks(3 * n)
            .map(|c| CanonicalPose::from_row_major(n, &c.iter().map(|x| x.as_f64()).collect::<Vec<_>>()))
            .collect()
    }

    pub fn encode_pose(&self, image: &Image) -> Result<CanonicalPose> {
        Ok(self.encode_poses(&[image])?.remove(0))
    }

    /// Evaluation-mode viewpoints for a batch of images.
    pub fn encode_viewpoints(&self, images: &[&Image]) -> Result<Vec<Viewpoint>> {
        self.check_images(images)?;
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &self.store);
        let (r, t) = self.view_var(&ctx, tape.constant(batch_tensor(images)?))?;
        let (r, t) = (r.value(), t.value());
        (0..images.len())
            .map(|i| {
                let row = |x: &Tensor<T>| [0, 1, 2].map(|j| x.data()[i * 3 + j].as_f64());
                Viewpoint::new(row(&r), row(&t))
            })
            .collect()
    }

    pub fn encode_viewpoint(&self, image: &Image) -> Result<Viewpoint> {
        Ok(self.encode_viewpoints(&[image])?.remove(0))
    }

    pub fn decode_batch(&self, poses: &[&ViewSpecificPose]) -> Result<Vec<Image>> {
        let n = self.config.n_features;
        let mut data = Vec::with_capacity(poses.len() * 3 * n);
        for p in poses {
            if p.n_features() != n {
                return Err(Error::Shape(format!("pose has {} features, decoder expects {n}", p.n_features())));
            }
            data.extend(p.to_row_major().into_iter().map(T::of));
        }
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &self.store);
        let x = tape.constant(Tensor::new(&[poses.len(), 3, n], data)?);
        images_from_tensor(&self.decode_var(&ctx, x)?.value())
    }

    pub fn decode(&self, pose: &ViewSpecificPose) -> Result<Image> {
        Ok(self.decode_batch(&[pose])?.remove(0))
    }

    /// `D(R(rotation_source) · E_pose(image) + T(image))`.
    pub fn reconstruct(&self, image: &Image, rotation_source: &Image) -> Result<Image> {
        let pose = self.encode_pose(image)?;
        let own = self.encode_viewpoint(image)?;
        let rot = self.encode_viewpoint(rotation_source)?;
        let view = Viewpoint::new(rot.rotation, own.translation)?;
        self.decode(&geometry::apply_viewpoint(&pose, &view)?)
    }
}

/// Builds a `(B, 3, N)` tensor from canonical poses.
pub fn pose_tensor<T: Scalar>(poses: &[CanonicalPose]) -> Result<Tensor<T>> {
    let n = poses.first().ok_or_else(|| Error::invalid("empty pose batch"))?.n_features();
    let mut data = Vec::with_capacity(poses.len() * 3 * n);
    for p in poses {
        if p.n_features() != n {
            return Err(Error::Shape("mixed feature counts in pose batch".into()));
        }
        data.extend(p.to_row_major().into_iter().map(T::of));
    }
    Ok(Tensor::new(&[poses.len(), 3, n], data)?)
}
