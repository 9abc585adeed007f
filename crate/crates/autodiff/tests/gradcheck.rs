//! Central finite differences against the reverse-mode gradients of every op.

use autodiff::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks d f / d inputs against central differences with step `h`.
fn check<F>(inputs: Vec<Tensor<f64>>, f: F, tol: f64)
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out).unwrap();
    let h = 1e-5;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for j in 0..input.numel() {
            let eval = |delta: f64| {
                let tape = Tape::new();
                let vars: Vec<_> = inputs
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        let mut t = t.clone();
                        if k == i {
                            t.data_mut()[j] += delta;
                        }
                        tape.leaf(t)
                    })
                    .collect();
                f(&tape, &vars).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-3));
            assert!(err < tol, "input {i} elem {j}: analytic {a} numeric {numeric}");
        }
    }
}

/// Weighted sum so every output element influences the loss differently.
fn project<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>) -> Var<'t, f64> {
    let shape = y.shape();
    let n: usize = shape.iter().product();
    let w = Tensor::new(&shape, (0..n).map(|i| ((i as f64) * 0.37).sin()).collect()).unwrap();
    y.mul(tape.constant(w)).unwrap().sum()
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(s, p, k) in &[(1, 1, 3), (2, 1, 3), (1, 2, 5)] {
        let inputs = vec![random(&[2, 2, 6, 5], &mut rng), random(&[3, 2, k, k], &mut rng), random(&[3], &mut rng)];
        check(inputs, |t, v| project(t, v[0].conv2d(v[1], Some(v[2]), s, p).unwrap()), 1e-6);
    }
}

#[test]
fn conv_transpose2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for &(s, p, op) in &[(2, 1, 1), (1, 1, 0)] {
        let inputs = vec![random(&[2, 3, 4, 4], &mut rng), random(&[3, 2, 3, 3], &mut rng), random(&[2], &mut rng)];
        check(inputs, |t, v| project(t, v[0].conv_transpose2d(v[1], Some(v[2]), s, p, op).unwrap()), 1e-6);
    }
}

#[test]
fn batch_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![random(&[3, 2, 3, 3], &mut rng), random(&[2], &mut rng), random(&[2], &mut rng)];
    check(inputs.clone(), |t, v| project(t, v[0].batch_norm_train(v[1], v[2], 1e-5).unwrap().0), 1e-5);
    let rm = Tensor::from_f64(&[2], &[0.1, -0.2]).unwrap();
    let rv = Tensor::from_f64(&[2], &[0.5, 2.0]).unwrap();
    check(inputs, move |t, v| project(t, v[0].batch_norm_eval(v[1], v[2], &rm, &rv, 1e-5).unwrap()), 1e-6);
}

#[test]
fn pooling_and_activation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    check(vec![random(&[2, 2, 7, 7], &mut rng)], |t, v| project(t, v[0].max_pool2d(3).unwrap()), 1e-6);
    check(vec![random(&[2, 3, 4, 4], &mut rng)], |t, v| project(t, v[0].global_avg_pool().unwrap()), 1e-6);
    check(vec![random(&[5, 4], &mut rng)], |t, v| project(t, v[0].tanh()), 1e-6);
    check(vec![random(&[5, 4], &mut rng)], |t, v| project(t, v[0].sigmoid()), 1e-6);
    check(vec![random(&[5, 4], &mut rng)], |t, v| project(t, v[0].relu()), 1e-6);
}

#[test]
fn linear_and_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![random(&[3, 4], &mut rng), random(&[5, 4], &mut rng), random(&[5], &mut rng)];
    check(inputs, |t, v| project(t, v[0].linear(v[1], Some(v[2])).unwrap()), 1e-6);
    check(vec![random(&[3, 4], &mut rng), random(&[3, 4], &mut rng)], |_, v| v[0].mse(v[1]).unwrap(), 1e-6);
    check(vec![random(&[3, 5], &mut rng)], |_, v| v[0].cross_entropy(&[0, 4, 2]).unwrap(), 1e-6);
}

#[test]
fn shape_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs = vec![random(&[2, 3, 2], &mut rng), random(&[2, 1, 2], &mut rng)];
    check(
        inputs,
        |t, v| {
            let c = t.concat(&[v[0], v[1]], 1).unwrap();
            let n = c.narrow(1, 1, 3).unwrap().reshape(&[6, 2]).unwrap();
            project(t, n.square())
        },
        1e-6,
    );
}
