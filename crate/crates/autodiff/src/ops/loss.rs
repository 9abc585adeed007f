use rand::Rng;

use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Row-wise softmax of a `(batch, classes)` tensor.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let c = *logits.shape().last().expect("softmax of a scalar");
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Mean negative log-likelihood of `labels` under `softmax(self)`.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let (b, c) = match shape[..] {
            [b, c] => (b, c),
            _ => return Err(Error::Shape(format!("cross_entropy: expected (batch, classes), got {shape:?}"))),
        };
        if labels.len() != b {
            return Err(Error::Shape(format!("cross_entropy: {} labels for batch {b}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Shape(format!("cross_entropy: label {bad} out of {c} classes")));
        }
        let probs = softmax_rows(&self.value());
        let bf = T::of(b as f64);
        let nll: T = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -probs.data()[i * c + l].max(T::min_positive_value()).ln())
            .sum::<T>()
            / bf;
        let labels = labels.to_vec();
        Ok(self.tape().op(&[self], Tensor::scalar(nll), move |g, _| {
            let k = g.item() / bf;
            let mut d = probs.clone();
            for (i, &l) in labels.iter().enumerate() {
                d.data_mut()[i * c + l] -= T::one();
            }
            vec![Some(d.map(|v| v * k))]
        }))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// rescales survivors by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(self, rate: f64, rng: &mut R) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Shape(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(self);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let shape = self.shape();
        let numel = shape.iter().product();
        let mask: Vec<T> =
            (0..numel).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect();
        self.mul_const(&Tensor::new(&shape, mask)?)
    }
}
