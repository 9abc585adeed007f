use std::fs;

use autodiff::{Ctx, Tape};
use viewpose::checkpoint::Checkpoint;
use viewpose::data::{generate_synthetic, make_training_tuple, MultiViewDataset, SyntheticSceneSpec, TrainingTuple};
use viewpose::losses::{LossPreset, LossToggles, LossWeights};
use viewpose::model::{Autoencoder, LayerWidths, ModelConfig};
use viewpose::trainer::{
    pretext_losses, read_metrics, train, PretextConfig, PretextTrainer, RotationChoice, METRICS_FILE,
};
use viewpose::{rng, Error};

fn tiny_model() -> ModelConfig {
    ModelConfig { n_features: 4, resolution: 16, dropout_rate: 0.5, widths: LayerWidths::scaled(32) }
}

fn tiny_data(n: usize) -> MultiViewDataset {
    generate_synthetic(&SyntheticSceneSpec { resolution: 16, seed: 8, ..Default::default() }, n, 4).unwrap()
}

fn batch(ds: &MultiViewDataset) -> Vec<TrainingTuple> {
    let mut g = rng::stream(1, "batch");
    (0..ds.len()).map(|s| make_training_tuple(&ds.pair(s, 0, 1).unwrap(), s % 4, &mut g).unwrap()).collect()
}

#[test]
fn disabled_terms_match_zero_weights() {
    let model = Autoencoder::<f64>::new(tiny_model(), 2).unwrap();
    let b = batch(&tiny_data(3));
    let choices: Vec<_> = [(0.1, 0.8), (0.6, 0.3), (0.9, 0.9)].map(|(v, w)| RotationChoice::from_draws(v, w)).to_vec();
    let grads = |weights: LossWeights, toggles: LossToggles| {
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, model.store());
        let l = pretext_losses(&model, &ctx, &b, &choices, &weights, toggles).unwrap();
        let total = l.total.item();
        let g = tape.backward(l.total).unwrap();
        let mut out: Vec<_> = g.params().map(|(id, t)| (id, t.data().to_vec())).collect();
        out.sort_by_key(|(id, _)| *id);
        (total, out)
    };
    let off = grads(LossWeights::default(), LossPreset::RecOnly.toggles());
    let zero = grads(LossWeights { alpha: 0.0, beta: 0.0, gamma: 1.0 }, LossToggles::default());
    assert_eq!(off.0, zero.0);
    assert_eq!(off.1.len(), zero.1.len());
    for ((ia, a), (ib, b)) in off.1.iter().zip(&zero.1) {
        assert_eq!(ia, ib);
        assert_eq!(a, b);
    }
}

#[test]
fn fifty_steps_reduce_the_loss() {
    let ds = tiny_data(10).materialized().unwrap();
    let config = PretextConfig { epochs: 25, batch_size: 5, learning_rate: 1e-3, ..Default::default() };
    let mut t = PretextTrainer::new(tiny_model(), config).unwrap();
    let mut totals = Vec::new();
    while totals.len() < 50 {
        totals.extend(t.run_epoch(&ds, &mut |_| {}).unwrap().iter().map(|m| m.losses.total));
    }
    let head: f64 = totals[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = totals[45..50].iter().sum::<f64>() / 5.0;
    assert!(tail < 0.9 * head, "first five {head}, last five {tail}");
}

#[test]
fn resuming_reproduces_an_uninterrupted_run() {
    let ds = tiny_data(4);
    let config = PretextConfig { epochs: 2, batch_size: 2, ..Default::default() };
    let full = tempfile::tempdir().unwrap();
    let a = train(&ds, &tiny_model(), &config, full.path(), None).unwrap();

    let split = tempfile::tempdir().unwrap();
    let first = train(&ds, &tiny_model(), &PretextConfig { epochs: 1, ..config.clone() }, split.path(), None).unwrap();
    let b = train(&ds, &tiny_model(), &config, split.path(), Some(&first.final_checkpoint)).unwrap();

    let ca = Checkpoint::<f32>::load(&a.final_checkpoint).unwrap();
    let cb = Checkpoint::<f32>::load(&b.final_checkpoint).unwrap();
    assert_eq!((ca.epoch, ca.step), (cb.epoch, cb.step));
    assert!(ca.model.store().entries().zip(cb.model.store().entries()).all(|((_, x), (_, y))| x.value() == y.value()));
    assert_eq!(
        fs::read_to_string(full.path().join(METRICS_FILE)).unwrap(),
        fs::read_to_string(split.path().join(METRICS_FILE)).unwrap()
    );
    let m = read_metrics(&full.path().join(METRICS_FILE)).unwrap();
    assert_eq!(m.len(), 4);
    assert!(m.windows(2).all(|w| w[1].step == w[0].step + 1));
}

#[test]
fn metrics_records_carry_every_component() {
    let ds = tiny_data(2);
    let dir = tempfile::tempdir().unwrap();
    train(&ds, &tiny_model(), &PretextConfig { epochs: 1, ..Default::default() }, dir.path(), None).unwrap();
    let text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["step", "epoch", "invar", "equiv", "rec1", "rec2", "total"] {
        assert!(v.get(key).is_some(), "missing {key} in {v}");
    }
}

#[test]
fn nan_weights_abort_with_the_component_name() {
    let ds = tiny_data(2).materialized().unwrap();
    let mut model = Autoencoder::<f32>::new(tiny_model(), 0).unwrap();
    let id = model.store().with_prefix("decoder.").next().unwrap();
    model.store_mut().value_mut(id).data_mut()[0] = f32::NAN;
    let mut t = PretextTrainer::from_model(model, PretextConfig::default()).unwrap();
    match t.run_epoch(&ds, &mut |_| {}) {
        Err(Error::NonFinite { component, step }) => {
            assert!(["invar", "equiv", "rec1", "rec2", "total", "gradient"].contains(&component), "{component}");
            assert_eq!(step, 1);
        }
        other => panic!("expected a non-finite error, got {:?}", other.map(|m| m.len())),
    }
}
