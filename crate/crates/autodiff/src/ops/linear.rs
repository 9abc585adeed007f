use crate::scalar::{gemm, Scalar};
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::{Error, Result};

impl<'t, T: Scalar> Var<'t, T> {
    /// `x · wᵀ + b` for `x: (batch, in)`, `w: (out, in)`, `b: (out)`.
    pub fn linear(self, w: Var<'t, T>, b: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let (xs, ws) = (self.shape(), w.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::Shape(format!("linear: x {xs:?}, w {ws:?}")));
        }
        let (batch, fin, fout) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if b.shape() != [fout] {
                return Err(Error::Shape(format!("linear bias {:?} for {fout} outputs", b.shape())));
            }
        }
        let (x, wv) = (self.value(), w.value());
        let mut out = vec![T::zero(); batch * fout];
        if let Some(b) = b {
            let bv = b.value();
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bv.data());
            }
            gemm(batch, fin, fout, x.data(), false, wv.data(), true, T::one(), &mut out);
        } else {
            gemm(batch, fin, fout, x.data(), false, wv.data(), true, T::zero(), &mut out);
        }
        let out = Tensor::new(&[batch, fout], out)?;
        let mut parents = vec![self, w];
        parents.extend(b);
        Ok(self.tape().op(&parents, out, move |g, need| {
            let gd = g.data();
            let gx = need[0].then(|| {
                let mut d = vec![T::zero(); batch * fin];
                gemm(batch, fout, fin, gd, false, wv.data(), false, T::zero(), &mut d);
                Tensor::new(&[batch, fin], d).expect("linear dx")
            });
            let gw = need[1].then(|| {
                let mut d = vec![T::zero(); fout * fin];
                gemm(fout, batch, fin, gd, true, x.data(), false, T::zero(), &mut d);
                Tensor::new(&[fout, fin], d).expect("linear dw")
            });
            let mut grads = vec![gx, gw];
            if need.len() == 3 {
                grads.push(need[2].then(|| {
                    let mut d = vec![T::zero(); fout];
                    for row in gd.chunks(fout) {
                        for (a, &v) in d.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    Tensor::new(&[fout], d).expect("linear db")
                }));
            }
            grads
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn linear_forward_hand_value() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
        let w = tape.constant(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.5, -1.0]).unwrap());
        let b = tape.constant(Tensor::from_f64(&[2], &[0.25, 0.0]).unwrap());
        let y = x.linear(w, Some(b)).unwrap();
        assert_eq!(y.value().data(), &[1.25, -1.5]);
    }
}
