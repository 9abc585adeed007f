use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// (outer, axis, inner) extents of `shape` split at `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let from = self.shape();
        let out = (*self.value()).clone().reshaped(shape)?;
        Ok(self.tape().op(&[self], out, move |g, _| {
            vec![Some(g.clone().reshaped(&from).expect("same numel"))]
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Shape(format!(
                "narrow axis {axis} [{start}, {}) of {shape:?}",
                start + len
            )));
        }
        let (outer, n, inner) = split(&shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.tape().op(&[self], out, move |g, _| {
            let mut gx = Tensor::zeros(&shape);
            let dst = gx.data_mut();
            for o in 0..outer {
                let base = o * n * inner + start * inner;
                dst[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }
}

impl<T: Scalar> Tape<T> {
    /// Joins values along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero values".into()))?
            .shape();
        if axis >= first.len() {
            return Err(Error::Shape(format!("concat axis {axis} of {first:?}")));
        }
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let mut sizes = Vec::with_capacity(parts.len());
        for v in &values {
            let s = v.shape();
            let ok = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::Shape(format!("concat: {s:?} vs {first:?} on axis {axis}")));
            }
            sizes.push(s[axis]);
        }
        let total: usize = sizes.iter().sum();
        let (outer, _, inner) = split(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &n) in values.iter().zip(&sizes) {
                data.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let out = Tensor::new(&shape, data)?;
        let part_shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(self.op(parts, out, move |g, need| {
            let mut grads: Vec<Vec<T>> = sizes
                .iter()
                .zip(need.iter())
                .map(|(&n, &nd)| if nd { Vec::with_capacity(outer * n * inner) } else { Vec::new() })
                .collect();
            let gd = g.data();
            let mut off = 0;
            for _ in 0..outer {
                for (i, &n) in sizes.iter().enumerate() {
                    if need[i] {
                        grads[i].extend_from_slice(&gd[off..off + n * inner]);
                    }
                    off += n * inner;
                }
            }
            grads
                .into_iter()
                .zip(&part_shapes)
                .zip(need.iter())
                .map(|((d, s), &nd)| nd.then(|| Tensor::new(s, d).expect("concat grad")))
                .collect()
        }))
    }
}
