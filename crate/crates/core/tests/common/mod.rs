//! Central differences against reverse-mode gradients of the geometry op
//! and of each pretext loss, in double precision on a tiny model.
#![allow(dead_code)]

use autodiff::{Ctx, ParamId, Tape, Tensor};
use rand::Rng;
use viewpose::data::{generate_synthetic, make_training_tuple, SyntheticSceneSpec, TrainingTuple};
use viewpose::geometry::rigid_transform;
use viewpose::losses::{LossToggles, LossWeights};
use viewpose::model::{Autoencoder, LayerWidths, ModelConfig};
use viewpose::rng;
use viewpose::trainer::{pretext_losses, RotationChoice};

pub const H: f64 = 1e-5;
// ReLU and max-pool kinks sit within 1e-5 of some probes on the network.
pub const H_NET: f64 = 1e-6;
pub const TOL: f64 = 1e-3;

pub struct Probe {
    pub label: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn rel_err(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(1e-6)
    }
}

pub fn rigid_transform_probes() -> Vec<Probe> {
    let mut g = rng::stream(3, "gradcheck");
    let mut rand_t = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::<f64>::new(shape, (0..n).map(|_| g.random_range(-1.5..1.5)).collect()).unwrap()
    };
    let inputs = [rand_t(&[2, 3]), rand_t(&[2, 3]), rand_t(&[2, 3, 5])];
    let weights = rand_t(&[2, 3, 5]);
    let f = |ins: &[Tensor<f64>]| -> (f64, Vec<Tensor<f64>>) {
        let tape = Tape::new();
        let v: Vec<_> = ins.iter().map(|t| tape.leaf(t.clone())).collect();
        let y = rigid_transform(v[0], v[1], v[2]).unwrap();
        let loss = y.mul(tape.constant(weights.clone())).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        (loss.item(), v.iter().map(|&x| grads.wrt(x).unwrap().clone()).collect())
    };
    let (_, analytic) = f(&inputs);
    let mut out = Vec::new();
    for (i, name) in ["rotation", "translation", "pose"].iter().enumerate() {
        for j in 0..inputs[i].numel() {
            let bump = |d: f64| {
                let mut ins = inputs.clone();
                ins[i].data_mut()[j] += d;
                f(&ins).0
            };
            let numeric = (bump(H) - bump(-H)) / (2.0 * H);
            out.push(Probe { label: format!("{name}[{j}]"), analytic: analytic[i].data()[j], numeric });
        }
    }
    out
}

fn tiny() -> (Autoencoder<f64>, Vec<TrainingTuple>) {
    let config = ModelConfig { n_features: 4, resolution: 16, dropout_rate: 0.5, widths: LayerWidths::scaled(32) };
    let model = Autoencoder::<f64>::new(config, 5).unwrap();
    let spec = SyntheticSceneSpec { resolution: 16, seed: 2, ..Default::default() };
    let data = generate_synthetic(&spec, 2, 4).unwrap();
    let mut g = rng::stream(9, "tuples");
    let batch = (0..2).map(|s| make_training_tuple(&data.pair(s, 0, 1).unwrap(), s + 1, &mut g).unwrap()).collect();
    (model, batch)
}

#[derive(Clone, Copy, Debug)]
pub enum Term {
    Invar,
    Equiv,
    Rec1,
    Rec2,
}

pub const TERMS: [Term; 4] = [Term::Invar, Term::Equiv, Term::Rec1, Term::Rec2];

fn term_value(model: &Autoencoder<f64>, batch: &[TrainingTuple], term: Term) -> (f64, Vec<(ParamId, Tensor<f64>)>) {
    let choices = [RotationChoice::from_draws(0.2, 0.7), RotationChoice::from_draws(0.9, 0.1)];
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, model.store());
    let l = pretext_losses(model, &ctx, batch, &choices, &LossWeights::default(), LossToggles::default()).unwrap();
    let var = match term {
        Term::Invar => l.invar.unwrap(),
        Term::Equiv => l.equiv.unwrap(),
        Term::Rec1 => l.rec1,
        Term::Rec2 => l.rec2,
    };
    let grads = tape.backward(var).unwrap();
    (var.item(), grads.params().map(|(id, t)| (id, t.clone())).collect())
}

/// A few elements from the first and last tensor of each network, per term.
pub fn pretext_loss_probes() -> Vec<(Term, Vec<Probe>)> {
    let (model, batch) = tiny();
    let probes: Vec<(ParamId, usize)> = ["pose.", "view.", "decoder."]
        .iter()
        .flat_map(|p| {
            let ids: Vec<ParamId> = model.store().with_prefix(p).collect();
            let first = ids[0];
            let last = *ids.last().unwrap();
            let nf = model.store().get(first).numel();
            let nl = model.store().get(last).numel();
            [(first, 0), (first, nf / 2), (last, 0), (last, nl - 1)]
        })
        .collect();
    TERMS
        .iter()
        .map(|&term| {
            let (_, grads) = term_value(&model, &batch, term);
            let checked = probes
                .iter()
                .map(|&(id, j)| {
                    let analytic = grads.iter().find(|(g, _)| *g == id).map_or(0.0, |(_, t)| t.data()[j]);
                    let bump = |d: f64| {
                        let mut m = model.clone();
                        m.store_mut().value_mut(id).data_mut()[j] += d;
                        term_value(&m, &batch, term).0
                    };
                    let numeric = (bump(H_NET) - bump(-H_NET)) / (2.0 * H_NET);
                    Probe { label: format!("{}[{j}]", model.store().entry(id).name), analytic, numeric }
                })
                .collect();
            (term, checked)
        })
        .collect()
}
