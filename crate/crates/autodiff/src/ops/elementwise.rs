use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::{Error, Result};

fn same_shape<T: Scalar>(op: &str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::Shape(format!("{op}: {sa:?} vs {sb:?}")));
    }
    Ok(())
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("add", &self, &other)?;
        let out = self.value().zip_map(&other.value(), |a, b| a + b);
        Ok(self.tape().op(&[self, other], out, |g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("sub", &self, &other)?;
        let out = self.value().zip_map(&other.value(), |a, b| a - b);
        Ok(self.tape().op(&[self, other], out, |g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("mul", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |x, y| x * y);
        Ok(self.tape().op(&[self, other], out, move |g, need| {
            vec![
                need[0].then(|| g.zip_map(&b, |g, y| g * y)),
                need[1].then(|| g.zip_map(&a, |g, x| g * x)),
            ]
        }))
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let out = self.value().map(|v| v * c);
        self.tape().op(&[self], out, move |g, _| vec![Some(g.map(|v| v * c))])
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        let out = self.value().map(|v| v + c);
        self.tape().op(&[self], out, |g, _| vec![Some(g.clone())])
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    pub fn relu(self) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(|v| if v > T::zero() { v } else { T::zero() });
        self.tape().op(&[self], out, move |g, _| {
            vec![Some(g.zip_map(&x, |g, v| if v > T::zero() { g } else { T::zero() }))]
        })
    }

    pub fn tanh(self) -> Var<'t, T> {
        let out = self.value().map(|v| v.tanh());
        let y = out.clone();
        self.tape().op(&[self], out, move |g, _| {
            vec![Some(g.zip_map(&y, |g, y| g * (T::one() - y * y)))]
        })
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let out = self.value().map(|v| T::one() / (T::one() + (-v).exp()));
        let y = out.clone();
        self.tape().op(&[self], out, move |g, _| {
            vec![Some(g.zip_map(&y, |g, y| g * y * (T::one() - y)))]
        })
    }

    pub fn square(self) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(|v| v * v);
        self.tape().op(&[self], out, move |g, _| {
            let two = T::one() + T::one();
            vec![Some(g.zip_map(&x, |g, v| two * g * v))]
        })
    }

    /// Sum of all elements as a scalar.
    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let out = Tensor::scalar(x.sum());
        self.tape().op(&[self], out, move |g, _| vec![Some(Tensor::full(&shape, g.item()))])
    }

    /// Mean of all elements as a scalar.
    pub fn mean(self) -> Var<'t, T> {
        let n = T::of(self.value().numel() as f64);
        self.sum().scale(T::one() / n)
    }

    /// Mean squared difference of two equally shaped values.
    pub fn mse(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("mse", &self, &other)?;
        let diff = self.value().zip_map(&other.value(), |a, b| a - b);
        let n = T::of(diff.numel() as f64);
        let out = Tensor::scalar(diff.data().iter().map(|&d| d * d).sum::<T>() / n);
        Ok(self.tape().op(&[self, other], out, move |g, need| {
            let k = (T::one() + T::one()) * g.item() / n;
            let ga = diff.map(|d| d * k);
            let gb = need[1].then(|| ga.map(|v| -v));
            vec![need[0].then_some(ga), gb]
        }))
    }

    /// Adds a constant tensor of the same shape.
    pub fn add_const(self, c: &Tensor<T>) -> Result<Var<'t, T>> {
        let cv = self.tape().constant(c.clone());
        self.add(cv)
    }

    /// Multiplies by a constant tensor of the same shape.
    pub fn mul_const(self, c: &Tensor<T>) -> Result<Var<'t, T>> {
        let cv = self.tape().constant(c.clone());
        self.mul(cv)
    }
}
