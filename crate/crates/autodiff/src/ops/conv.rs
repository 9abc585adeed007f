//! 2D convolution, transposed convolution and pooling over `(batch, channels,
//! height, width)` tensors. Convolutions lower to im2col + GEMM per sample.

use crate::scalar::{gemm, Scalar};
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Sliding-window geometry: an input plane of `c × h × w` scanned by a
/// `k × k` window with the given stride and zero padding.
#[derive(Clone, Copy, Debug)]
struct Window {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Window {
    fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if h + 2 * pad < k || w + 2 * pad < k || stride == 0 {
            return Err(Error::Shape(format!(
                "window {k}x{k}/s{stride}/p{pad} does not fit {h}x{w}"
            )));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Ok(Self { c, h, w, k, stride, pad, oh, ow })
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `ox` whose input column `ox*stride + kx - pad` is in range.
    fn valid_x(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pad > kx { (self.pad - kx).div_ceil(self.stride) } else { 0 };
        let hi = if self.w + self.pad > kx {
            ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.ow)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let p = self.cols();
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = ((c * self.k + ky) * self.k + kx) * p;
                    let (lo, hi) = self.valid_x(kx);
                    for oy in 0..self.oh {
                        let dst = &mut cols[row + oy * self.ow..row + (oy + 1) * self.ow];
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        dst[..lo].fill(T::zero());
                        dst[hi..].fill(T::zero());
                        if self.stride == 1 {
                            let ix0 = lo + kx - self.pad;
                            dst[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                        } else {
                            for ox in lo..hi {
                                dst[ox] = src[ox * self.stride + kx - self.pad];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds columns back onto the input plane (adjoint of `im2col`).
    fn col2im<T: Scalar>(&self, cols: &[T], x: &mut [T]) {
        let p = self.cols();
        for c in 0..self.c {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = ((c * self.k + ky) * self.k + kx) * p;
                    let (lo, hi) = self.valid_x(kx);
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &cols[row + oy * self.ow..row + (oy + 1) * self.ow];
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in lo..hi {
                            dst[ox * self.stride + kx - self.pad] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

fn dims4(op: &str, s: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match s {
        &[a, b, c, d] => Ok((a, b, c, d)),
        _ => Err(Error::Shape(format!("{op}: expected 4 dims, got {s:?}"))),
    }
}

fn bias_grad<T: Scalar>(g: &[T], batch: usize, ch: usize, plane: usize) -> Tensor<T> {
    let mut d = vec![T::zero(); ch];
    for b in 0..batch {
        for (c, acc) in d.iter_mut().enumerate() {
            let base = (b * ch + c) * plane;
            *acc += g[base..base + plane].iter().copied().sum::<T>();
        }
    }
    Tensor::new(&[ch], d).expect("bias grad")
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Cross-correlation with weight `(out, in, k, k)`, optional bias `(out)`.
    pub fn conv2d(
        self,
        w: Var<'t, T>,
        b: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        let (batch, cin, h, wd) = dims4("conv2d input", &self.shape())?;
        let (cout, wcin, k, k2) = dims4("conv2d weight", &w.shape())?;
        if wcin != cin || k != k2 {
            return Err(Error::Shape(format!(
                "conv2d: input channels {cin}, weight {:?}",
                w.shape()
            )));
        }
        let win = Window::new(cin, h, wd, k, stride, pad)?;
        let (rows, p) = (win.rows(), win.cols());
        let (x, wv) = (self.value(), w.value());
        let mut out = vec![T::zero(); batch * cout * p];
        let mut cols = vec![T::zero(); rows * p];
        let bias = b.map(|b| b.value());
        for n in 0..batch {
            win.im2col(&x.data()[n * cin * h * wd..(n + 1) * cin * h * wd], &mut cols);
            let y = &mut out[n * cout * p..(n + 1) * cout * p];
            let beta = if let Some(bv) = &bias {
                for (c, chunk) in y.chunks_mut(p).enumerate() {
                    chunk.fill(bv.data()[c]);
                }
                T::one()
            } else {
                T::zero()
            };
            gemm(cout, rows, p, wv.data(), false, &cols, false, beta, y);
        }
        let out = Tensor::new(&[batch, cout, win.oh, win.ow], out)?;
        let mut parents = vec![self, w];
        parents.extend(b);
        Ok(self.tape().op(&parents, out, move |g, need| {
            let gd = g.data();
            let plane_in = cin * h * wd;
            let mut cols = vec![T::zero(); rows * p];
            let mut gx = need[0].then(|| vec![T::zero(); batch * plane_in]);
            let mut gw = need[1].then(|| vec![T::zero(); cout * rows]);
            for n in 0..batch {
                let gy = &gd[n * cout * p..(n + 1) * cout * p];
                if let Some(gw) = gw.as_mut() {
                    win.im2col(&x.data()[n * plane_in..(n + 1) * plane_in], &mut cols);
                    gemm(cout, p, rows, gy, false, &cols, true, T::one(), gw);
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(rows, cout, p, wv.data(), true, gy, false, T::zero(), &mut cols);
                    win.col2im(&cols, &mut gx[n * plane_in..(n + 1) * plane_in]);
                }
            }
            let mut grads = vec![
                gx.map(|d| Tensor::new(&[batch, cin, h, wd], d).expect("conv dx")),
                gw.map(|d| Tensor::new(&[cout, cin, k, k], d).expect("conv dw")),
            ];
            if need.len() == 3 {
                grads.push(need[2].then(|| bias_grad(gd, batch, cout, p)));
            }
            grads
        }))
    }

    /// Transposed convolution with weight `(in, out, k, k)`; output extent
    /// `(h - 1) * stride - 2 * pad + k + output_pad`.
    pub fn conv_transpose2d(
        self,
        w: Var<'t, T>,
        b: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var<'t, T>> {
        let (batch, cin, h, wd) = dims4("conv_transpose2d input", &self.shape())?;
        let (wcin, cout, k, k2) = dims4("conv_transpose2d weight", &w.shape())?;
        if wcin != cin || k != k2 || output_pad >= stride.max(1) {
            return Err(Error::Shape(format!(
                "conv_transpose2d: input {:?}, weight {:?}, output_pad {output_pad}",
                self.shape(),
                w.shape()
            )));
        }
        let oh = ((h - 1) * stride + k + output_pad)
            .checked_sub(2 * pad)
            .ok_or_else(|| Error::Shape("conv_transpose2d: padding too large".into()))?;
        let ow = ((wd - 1) * stride + k + output_pad)
            .checked_sub(2 * pad)
            .ok_or_else(|| Error::Shape("conv_transpose2d: padding too large".into()))?;
        let win = Window::new(cout, oh, ow, k, stride, pad)?;
        debug_assert_eq!((win.oh, win.ow), (h, wd));
        let (rows, p) = (win.rows(), win.cols());
        let (x, wv) = (self.value(), w.value());
        let plane_out = cout * oh * ow;
        let mut out = vec![T::zero(); batch * plane_out];
        let mut cols = vec![T::zero(); rows * p];
        for n in 0..batch {
            gemm(rows, cin, p, wv.data(), true, &x.data()[n * cin * p..(n + 1) * cin * p], false, T::zero(), &mut cols);
            win.col2im(&cols, &mut out[n * plane_out..(n + 1) * plane_out]);
        }
        if let Some(b) = b {
            let bv = b.value();
            for n in 0..batch {
                for c in 0..cout {
                    let base = n * plane_out + c * oh * ow;
                    for v in &mut out[base..base + oh * ow] {
                        *v += bv.data()[c];
                    }
                }
            }
        }
        let out = Tensor::new(&[batch, cout, oh, ow], out)?;
        let mut parents = vec![self, w];
        parents.extend(b);
        Ok(self.tape().op(&parents, out, move |g, need| {
            let gd = g.data();
            let mut cols = vec![T::zero(); rows * p];
            let mut gx = need[0].then(|| vec![T::zero(); batch * cin * p]);
            let mut gw = need[1].then(|| vec![T::zero(); cin * rows]);
            for n in 0..batch {
                win.im2col(&gd[n * plane_out..(n + 1) * plane_out], &mut cols);
                if let Some(gx) = gx.as_mut() {
                    gemm(cin, rows, p, wv.data(), false, &cols, false, T::zero(), &mut gx[n * cin * p..(n + 1) * cin * p]);
                }
                if let Some(gw) = gw.as_mut() {
                    gemm(cin, p, rows, &x.data()[n * cin * p..(n + 1) * cin * p], false, &cols, true, T::one(), gw);
                }
            }
            let mut grads = vec![
                gx.map(|d| Tensor::new(&[batch, cin, h, wd], d).expect("convT dx")),
                gw.map(|d| Tensor::new(&[cin, cout, k, k], d).expect("convT dw")),
            ];
            if need.len() == 3 {
                grads.push(need[2].then(|| bias_grad(gd, batch, cout, oh * ow)));
            }
            grads
        }))
    }

    /// Non-overlapping `k × k` max pooling (stride `k`); trailing rows and
    /// columns that do not fill a window are dropped.
    pub fn max_pool2d(self, k: usize) -> Result<Var<'t, T>> {
        let (batch, c, h, w) = dims4("max_pool2d", &self.shape())?;
        if k == 0 || h < k || w < k {
            return Err(Error::Shape(format!("max_pool2d {k}x{k} on {h}x{w}")));
        }
        let (oh, ow) = (h / k, w / k);
        let x = self.value();
        let xd = x.data();
        let mut out = Vec::with_capacity(batch * c * oh * ow);
        let mut arg = Vec::with_capacity(batch * c * oh * ow);
        for plane in 0..batch * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * k * w + ox * k;
                    for ky in 0..k {
                        let row = base + (oy * k + ky) * w + ox * k;
                        for i in row..row + k {
                            if xd[i] > xd[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xd[best]);
                    arg.push(best);
                }
            }
        }
        let out = Tensor::new(&[batch, c, oh, ow], out)?;
        let in_shape = [batch, c, h, w];
        Ok(self.tape().op(&[self], out, move |g, _| {
            let mut gx = Tensor::zeros(&in_shape);
            let d = gx.data_mut();
            for (&i, &v) in arg.iter().zip(g.data()) {
                d[i] += v;
            }
            vec![Some(gx)]
        }))
    }

    /// Mean over the spatial axes: `(b, c, h, w) -> (b, c)`.
    pub fn global_avg_pool(self) -> Result<Var<'t, T>> {
        let (batch, c, h, w) = dims4("global_avg_pool", &self.shape())?;
        let x = self.value();
        let hw = h * w;
        let inv = T::one() / T::of(hw as f64);
        let out: Vec<T> = x
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(&[batch, c], out)?;
        Ok(self.tape().op(&[self], out, move |g, _| {
            let mut d = Vec::with_capacity(batch * c * hw);
            for &v in g.data() {
                d.extend(std::iter::repeat_n(v * inv, hw));
            }
            vec![Some(Tensor::new(&[batch, c, h, w], d).expect("gap grad"))]
        }))
    }
}
