use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Per-channel batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Tensor<T>,
    /// Unbiased variance, the quantity tracked by running estimates.
    pub var: Tensor<T>,
}

fn check<T: Scalar>(x: &[usize], gamma: &Var<'_, T>, beta: &Var<'_, T>) -> Result<(usize, usize, usize)> {
    let (b, c, plane) = match x {
        &[b, c, h, w] => (b, c, h * w),
        &[b, c] => (b, c, 1),
        _ => return Err(Error::Shape(format!("batch_norm: expected (b, c[, h, w]), got {x:?}"))),
    };
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::Shape(format!("batch_norm: affine params for {c} channels")));
    }
    Ok((b, c, plane))
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Normalizes with statistics of the current batch.
    pub fn batch_norm_train(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        eps: f64,
    ) -> Result<(Var<'t, T>, BatchStats<T>)> {
        let shape = self.shape();
        let (b, c, plane) = check(&shape, &gamma, &beta)?;
        let m = b * plane;
        if m < 2 {
            return Err(Error::Shape("batch_norm_train needs at least two values per channel".into()));
        }
        let x = self.value();
        let xd = x.data();
        let (gv, bv) = (gamma.value(), beta.value());
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let mf = T::of(m as f64);
        for ch in 0..c {
            let mut s = T::zero();
            for n in 0..b {
                let base = (n * c + ch) * plane;
                s += xd[base..base + plane].iter().copied().sum::<T>();
            }
            let mu = s / mf;
            let mut v = T::zero();
            for n in 0..b {
                let base = (n * c + ch) * plane;
                v += xd[base..base + plane].iter().map(|&x| (x - mu) * (x - mu)).sum::<T>();
            }
            mean[ch] = mu;
            var[ch] = v / mf;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for n in 0..b {
            for ch in 0..c {
                let base = (n * c + ch) * plane;
                for i in base..base + plane {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gv.data()[ch] * h + bv.data()[ch];
                }
            }
        }
        let unbiased = T::of(m as f64 / (m as f64 - 1.0));
        let stats = BatchStats {
            mean: Tensor::new(&[c], mean)?,
            var: Tensor::new(&[c], var.iter().map(|&v| v * unbiased).collect())?,
        };
        let out = Tensor::new(&shape, out)?;
        let y = self.tape().op(&[self, gamma, beta], out, move |g, need| {
            let gd = g.data();
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for n in 0..b {
                for ch in 0..c {
                    let base = (n * c + ch) * plane;
                    for i in base..base + plane {
                        sum_g[ch] += gd[i];
                        sum_gx[ch] += gd[i] * xhat[i];
                    }
                }
            }
            let gx = need[0].then(|| {
                let mut d = vec![T::zero(); gd.len()];
                for n in 0..b {
                    for ch in 0..c {
                        let k = gv.data()[ch] * inv_std[ch] / mf;
                        let base = (n * c + ch) * plane;
                        for i in base..base + plane {
                            d[i] = k * (mf * gd[i] - sum_g[ch] - xhat[i] * sum_gx[ch]);
                        }
                    }
                }
                Tensor::new(&shape, d).expect("bn dx")
            });
            vec![
                gx,
                need[1].then(|| Tensor::new(&[c], sum_gx.clone()).expect("bn dgamma")),
                need[2].then(|| Tensor::new(&[c], sum_g.clone()).expect("bn dbeta")),
            ]
        });
        Ok((y, stats))
    }

    /// Normalizes with fixed (running) statistics.
    pub fn batch_norm_eval(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: f64,
    ) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let (b, c, plane) = check(&shape, &gamma, &beta)?;
        if running_mean.shape() != [c] || running_var.shape() != [c] {
            return Err(Error::Shape("batch_norm_eval: running stats shape".into()));
        }
        let x = self.value();
        let xd = x.data();
        let (gv, bv) = (gamma.value(), beta.value());
        let mean = running_mean.data().to_vec();
        let inv_std: Vec<T> = running_var
            .data()
            .iter()
            .map(|&v| T::one() / (v + T::of(eps)).sqrt())
            .collect();
        let mut out = vec![T::zero(); xd.len()];
        for n in 0..b {
            for ch in 0..c {
                let base = (n * c + ch) * plane;
                for i in base..base + plane {
                    out[i] = gv.data()[ch] * (xd[i] - mean[ch]) * inv_std[ch] + bv.data()[ch];
                }
            }
        }
        let out = Tensor::new(&shape, out)?;
        Ok(self.tape().op(&[self, gamma, beta], out, move |g, need| {
            let gd = g.data();
            let xd = x.data();
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            let mut d = need[0].then(|| vec![T::zero(); gd.len()]);
            for n in 0..b {
                for ch in 0..c {
                    let base = (n * c + ch) * plane;
                    for i in base..base + plane {
                        sum_g[ch] += gd[i];
                        sum_gx[ch] += gd[i] * (xd[i] - mean[ch]) * inv_std[ch];
                        if let Some(d) = d.as_mut() {
                            d[i] = gd[i] * gv.data()[ch] * inv_std[ch];
                        }
                    }
                }
            }
            vec![
                d.map(|d| Tensor::new(&shape, d).expect("bn eval dx")),
                need[1].then(|| Tensor::new(&[c], sum_gx).expect("bn eval dgamma")),
                need[2].then(|| Tensor::new(&[c], sum_g).expect("bn eval dbeta")),
            ]
        }))
    }
}
