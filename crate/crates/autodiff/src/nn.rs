//! Parameterized layers and the forward context that binds them to a tape.

use std::cell::RefCell;

use rand::{Rng, RngCore};

use crate::ops::norm::BatchStats;
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, active dropout, running-stat updates.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

/// Binds a parameter store to a tape for one forward pass.
///
/// Running-statistic updates produced in training mode are collected and
/// applied with [`Ctx::into_updates`] once the store can be borrowed mutably.
pub struct Ctx<'a, T: Scalar> {
    pub tape: &'a Tape<T>,
    pub store: &'a ParamStore<T>,
    pub mode: Mode,
    frozen: Vec<String>,
    rng: Option<RefCell<&'a mut dyn RngCore>>,
    updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn eval(tape: &'a Tape<T>, store: &'a ParamStore<T>) -> Self {
        Self { tape, store, mode: Mode::Eval, frozen: vec![], rng: None, updates: RefCell::new(vec![]) }
    }

    pub fn train(tape: &'a Tape<T>, store: &'a ParamStore<T>, rng: &'a mut dyn RngCore) -> Self {
        Self {
            tape,
            store,
            mode: Mode::Train,
            frozen: vec![],
            rng: Some(RefCell::new(rng)),
            updates: RefCell::new(vec![]),
        }
    }

    /// Parameters whose names start with `prefix` get no gradient.
    pub fn freeze(mut self, prefix: impl Into<String>) -> Self {
        self.frozen.push(prefix.into());
        self
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        let e = self.store.entry(id);
        e.kind == ParamKind::Buffer || self.frozen.iter().any(|p| e.name.starts_with(p.as_str()))
    }

    pub fn param(&self, id: ParamId) -> Var<'a, T> {
        self.tape.param(self.store, id, !self.is_frozen(id))
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn dropout(&self, x: Var<'a, T>, rate: f64) -> Result<Var<'a, T>> {
        match (&self.rng, self.mode) {
            (Some(rng), Mode::Train) => x.dropout(rate, &mut **rng.borrow_mut()),
            _ => Ok(x),
        }
    }

    /// Latest value of a buffer, including updates pending in this context,
    /// so repeated calls through one layer compound their statistics.
    fn buffer(&self, id: ParamId) -> Tensor<T> {
        let pending = self.updates.borrow();
        match pending.iter().rev().find(|(i, _)| *i == id) {
            Some((_, v)) => v.clone(),
            None => self.store.get(id).clone(),
        }
    }

    fn push_update(&self, id: ParamId, value: Tensor<T>) {
        self.updates.borrow_mut().push((id, value));
    }

    pub fn into_updates(self) -> Vec<(ParamId, Tensor<T>)> {
        self.updates.into_inner()
    }
}

/// Applies buffer updates collected by a [`Ctx`].
pub fn apply_updates<T: Scalar>(store: &mut ParamStore<T>, updates: Vec<(ParamId, Tensor<T>)>) -> Result<()> {
    for (id, v) in updates {
        store.set(id, v)?;
    }
    Ok(())
}

/// He-uniform bound: keeps activation variance constant through ReLU layers.
fn he_bound(fan_in: f64) -> f64 {
    (6.0 / fan_in).sqrt()
}

fn uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect();
    Tensor::new(shape, data).expect("init shape")
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight =
            store.add(format!("{name}.weight"), ParamKind::Trainable, uniform(&[fan_out, fan_in], he_bound(fan_in as f64), rng))?;
        let bias = store.add(format!("{name}.bias"), ParamKind::Trainable, uniform(&[fan_out], bound, rng))?;
        Ok(Self { weight, bias })
    }

    pub fn forward<'a, T: Scalar>(&self, ctx: &Ctx<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        x.linear(ctx.param(self.weight), Some(ctx.param(self.bias)))
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = (cin * k * k) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let weight = store.add(format!("{name}.weight"), ParamKind::Trainable, uniform(&[cout, cin, k, k], he_bound(fan_in), rng))?;
        let bias = store.add(format!("{name}.bias"), ParamKind::Trainable, uniform(&[cout], bound, rng))?;
        Ok(Self { weight, bias, stride, pad })
    }

    pub fn forward<'a, T: Scalar>(&self, ctx: &Ctx<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        x.conv2d(ctx.param(self.weight), Some(ctx.param(self.bias)), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        // Each output pixel of a strided transposed conv sees about
        // cin * (k / stride)^2 inputs.
        let fan_in = (cin * k * k) as f64 / (stride * stride) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let weight = store.add(format!("{name}.weight"), ParamKind::Trainable, uniform(&[cin, cout, k, k], he_bound(fan_in), rng))?;
        let bias = store.add(format!("{name}.bias"), ParamKind::Trainable, uniform(&[cout], bound, rng))?;
        Ok(Self { weight, bias, stride, pad, output_pad })
    }

    pub fn forward<'a, T: Scalar>(&self, ctx: &Ctx<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        x.conv_transpose2d(
            ctx.param(self.weight),
            Some(ctx.param(self.bias)),
            self.stride,
            self.pad,
            self.output_pad,
        )
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.weight"), ParamKind::Trainable, Tensor::ones(&[channels]))?,
            beta: store.add(format!("{name}.bias"), ParamKind::Trainable, Tensor::zeros(&[channels]))?,
            running_mean: store.add(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros(&[channels]))?,
            running_var: store.add(format!("{name}.running_var"), ParamKind::Buffer, Tensor::ones(&[channels]))?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward<'a, T: Scalar>(&self, ctx: &Ctx<'a, T>, x: Var<'a, T>) -> Result<Var<'a, T>> {
        let (g, b) = (ctx.param(self.gamma), ctx.param(self.beta));
        match ctx.mode {
            Mode::Train => {
                let (y, BatchStats { mean, var }) = x.batch_norm_train(g, b, self.eps)?;
                let m = T::of(self.momentum);
                let keep = T::one() - m;
                let rm = ctx.buffer(self.running_mean).zip_map(&mean, |r, s| keep * r + m * s);
                let rv = ctx.buffer(self.running_var).zip_map(&var, |r, s| keep * r + m * s);
                ctx.push_update(self.running_mean, rm);
                ctx.push_update(self.running_var, rv);
                Ok(y)
            }
            Mode::Eval => x.batch_norm_eval(
                g,
                b,
                ctx.store.get(self.running_mean),
                ctx.store.get(self.running_var),
                self.eps,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn frozen_prefix_blocks_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let a = Linear::new(&mut store, "enc.fc", 3, 2, &mut rng).unwrap();
        let b = Linear::new(&mut store, "head.fc", 2, 1, &mut rng).unwrap();
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store).freeze("enc.");
        let x = tape.constant(Tensor::ones(&[1, 3]));
        let y = b.forward(&ctx, a.forward(&ctx, x).unwrap()).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert!(g.param(a.weight).is_none());
        assert!(g.param(b.weight).is_some());
    }

    #[test]
    fn train_mode_batch_norm_updates_running_stats() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let tape = Tape::new();
        let ctx = Ctx::train(&tape, &store, &mut rng);
        let x = tape.constant(Tensor::from_f64(&[4, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        bn.forward(&ctx, x).unwrap();
        let updates = ctx.into_updates();
        drop(tape);
        apply_updates(&mut store, updates).unwrap();
        assert!((store.get(bn.running_mean).item() - 0.25).abs() < 1e-12);
    }
}
