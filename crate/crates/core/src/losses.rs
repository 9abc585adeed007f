//! The four training losses and their weighted total.
//!
//! Each loss sums over the two views and averages over the batch. The
//! tape-level functions take batched variables so one backward pass reaches
//! every upstream parameter.

use autodiff::{Ctx, Scalar, Tensor, Var};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{feature_shift_tensor, rigid_transform};
use crate::model::Autoencoder;

/// Weights of the invariance, equivariance and reconstruction terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.001, gamma: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!("loss weight {name} = {w} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Switches for the ablation study; reconstruction terms are always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossToggles {
    pub invar: bool,
    pub equiv: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self { invar: true, equiv: true }
    }
}

/// Named loss combinations used by the ablation rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossPreset {
    RecOnly,
    InvarRec,
    EquivRec,
    Full,
}

impl LossPreset {
    pub const ALL: [LossPreset; 4] = [LossPreset::RecOnly, LossPreset::InvarRec, LossPreset::EquivRec, LossPreset::Full];

    pub fn toggles(self) -> LossToggles {
        match self {
            LossPreset::RecOnly => LossToggles { invar: false, equiv: false },
            LossPreset::InvarRec => LossToggles { invar: true, equiv: false },
            LossPreset::EquivRec => LossToggles { invar: false, equiv: true },
            LossPreset::Full => LossToggles { invar: true, equiv: true },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossPreset::RecOnly => "rec-only",
            LossPreset::InvarRec => "invar-rec",
            LossPreset::EquivRec => "equiv-rec",
            LossPreset::Full => "full",
        }
    }

    /// Row label in the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            LossPreset::RecOnly => "L_rec1 + L_rec2",
            LossPreset::InvarRec => "L_invar + L_rec1 + L_rec2",
            LossPreset::EquivRec => "L_equiv + L_rec1 + L_rec2",
            LossPreset::Full => "L_invar + L_equiv + L_rec1 + L_rec2",
        }
    }
}

impl std::str::FromStr for LossPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown loss preset {s:?} (rec-only, invar-rec, equiv-rec, full)")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub invar: f64,
    pub equiv: f64,
    pub rec1: f64,
    pub rec2: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// First non-finite component in the order invar, equiv, rec1, rec2, total.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("invar", self.invar),
            ("equiv", self.equiv),
            ("rec1", self.rec1),
            ("rec2", self.rec2),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// `α·invar + β·equiv + γ·(rec1 + rec2)`.
pub fn total_loss(invar: f64, equiv: f64, rec1: f64, rec2: f64, weights: &LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    let total = weights.alpha * invar + weights.beta * equiv + weights.gamma * (rec1 + rec2);
    Ok(LossBreakdown { invar, equiv, rec1, rec2, total })
}

/// Mean of squared differences over all elements.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("mse of {:?} and {:?}", a.shape(), b.shape())));
    }
    if a.numel() == 0 {
        return Err(Error::invalid("mse of empty tensors"));
    }
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
    Ok(s / a.numel() as f64)
}

fn var_mse<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("mse of {:?} and {:?}", a.shape(), b.shape())));
    }
    Ok(a.mse(b)?)
}

/// Sum over both views of the image MSE. Batches hold equally sized
/// samples, so the whole-tensor mean is the batch mean of per-sample MSEs.
fn two_view_mse<'t, T: Scalar>(
    iv: Var<'t, T>,
    iw: Var<'t, T>,
    rec_v: Var<'t, T>,
    rec_w: Var<'t, T>,
) -> Result<Var<'t, T>> {
    Ok(var_mse(iv, rec_v)?.add(var_mse(iw, rec_w)?)?)
}

/// Reconstructs each view from the other view's canonical pose placed in
/// this view's frame, then sums the two image errors.
#[allow(clippy::too_many_arguments)]
pub fn view_invariant_loss<'t, T: Scalar>(
    model: &Autoencoder<T>,
    ctx: &Ctx<'t, T>,
    iv: Var<'t, T>,
    iw: Var<'t, T>,
    (rv, rw): (Var<'t, T>, Var<'t, T>),
    (tv, tw): (Var<'t, T>, Var<'t, T>),
    (pv, pw): (Var<'t, T>, Var<'t, T>),
) -> Result<Var<'t, T>> {
    let swapped_v = model.decode_var(ctx, rigid_transform(rv, tv, pw)?)?;
    let swapped_w = model.decode_var(ctx, rigid_transform(rw, tw, pv)?)?;
    two_view_mse(iv, iw, swapped_v, swapped_w)
}

/// Unswapped reconstruction error of the two simultaneous frames.
pub fn reconstruction_loss_1<'t, T: Scalar>(
    iv: Var<'t, T>,
    iw: Var<'t, T>,
    rec_v: Var<'t, T>,
    rec_w: Var<'t, T>,
) -> Result<Var<'t, T>> {
    two_view_mse(iv, iw, rec_v, rec_w)
}

/// Reconstruction error of the two shift-augmented frames.
pub fn reconstruction_loss_2<'t, T: Scalar>(
    aug_v: Var<'t, T>,
    aug_w: Var<'t, T>,
    rec_v: Var<'t, T>,
    rec_w: Var<'t, T>,
) -> Result<Var<'t, T>> {
    two_view_mse(aug_v, aug_w, rec_v, rec_w)
}

/// `Σ_φ MSE(P⊛φ + Δφ, Ṗ⊛φ)` with per-sample feature shifts.
///
/// Poses are `(B, 3, N)`; `delta_v` and `delta_w` hold one shift per sample.
pub fn equivariance_loss<'t, T: Scalar>(
    p_v: Var<'t, T>,
    p_w: Var<'t, T>,
    pdot_v: Var<'t, T>,
    pdot_w: Var<'t, T>,
    delta_v: &[Vector3<f64>],
    delta_w: &[Vector3<f64>],
) -> Result<Var<'t, T>> {
    let term = |p: Var<'t, T>, pdot: Var<'t, T>, d: &[Vector3<f64>]| -> Result<Var<'t, T>> {
        let s = p.shape();
        if s.len() != 3 || s[1] != 3 || d.len() != s[0] {
            return Err(Error::Shape(format!("equivariance term: pose {s:?} with {} shifts", d.len())));
        }
        var_mse(p.add_const(&feature_shift_tensor(d, s[2]))?, pdot)
    };
    Ok(term(p_v, pdot_v, delta_v)?.add(term(p_w, pdot_w, delta_w)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::Tape;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&t(&[2], &[0.0, 0.0]), &t(&[2], &[1.0, 1.0])).unwrap(), 1.0);
        assert_eq!(mse(&t(&[3], &[1.0, 2.0, 3.0]), &t(&[3], &[2.0, 4.0, 6.0])).unwrap(), 14.0 / 3.0);
        assert_eq!(mse(&t(&[2], &[0.5, 0.5]), &t(&[2], &[0.5, 0.5])).unwrap(), 0.0);
        assert!(mse(&t(&[2], &[0.0, 0.0]), &t(&[1, 2], &[0.0, 0.0])).is_err());
    }

    #[test]
    fn weighted_total_examples() {
        let b = total_loss(1.0, 2.0, 3.0, 4.0, &LossWeights::default()).unwrap();
        assert!((b.total - 8.002).abs() < 1e-12);
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, &LossWeights::default()).unwrap().total, 0.0);
        let rec_only = LossWeights { alpha: 0.0, beta: 0.0, gamma: 1.0 };
        assert_eq!(total_loss(5.0, 6.0, 3.0, 4.0, &rec_only).unwrap().total, 7.0);
        assert!(total_loss(1.0, 1.0, 1.0, 1.0, &LossWeights { alpha: -1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn constant_offset_reconstructions() {
        let tape = Tape::<f64>::new();
        let img = |off: f64| tape.constant(Tensor::full(&[2, 3, 4, 4], 0.25 + off));
        let rec1 = reconstruction_loss_1(img(0.0), img(0.0), img(0.1), img(0.1)).unwrap().item();
        assert!((rec1 - 0.02).abs() < 1e-12);
        let rec2 = reconstruction_loss_2(img(0.0), img(0.0), img(0.2), img(0.2)).unwrap().item();
        assert!((rec2 - 0.08).abs() < 1e-12);
        assert_eq!(reconstruction_loss_1(img(0.0), img(0.0), img(0.0), img(0.0)).unwrap().item(), 0.0);
    }

    #[test]
    fn equivariance_examples() {
        let tape = Tape::<f64>::new();
        let zeros = || tape.constant(Tensor::zeros(&[1, 3, 5]));
        let unit = [Vector3::new(1.0, 0.0, 0.0)];
        let l = equivariance_loss(zeros(), zeros(), zeros(), zeros(), &unit, &unit).unwrap().item();
        assert!((l - 2.0 / 3.0).abs() < 1e-12);
        let none = [Vector3::zeros()];
        assert_eq!(equivariance_loss(zeros(), zeros(), zeros(), zeros(), &none, &none).unwrap().item(), 0.0);

        let p = tape.constant(t(&[1, 3, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let d = [Vector3::new(0.5, -0.25, 0.0)];
        let shifted = tape.constant(t(&[1, 3, 2], &[0.6, 0.7, 0.05, 0.15, 0.5, 0.6]));
        assert!(equivariance_loss(p, p, shifted, shifted, &d, &d).unwrap().item() < 1e-30);
    }

    #[test]
    fn breakdown_names_first_non_finite() {
        let b = LossBreakdown { invar: 1.0, equiv: f64::NAN, rec1: f64::INFINITY, ..Default::default() };
        assert_eq!(b.first_non_finite(), Some("equiv"));
        assert_eq!(LossBreakdown::default().first_non_finite(), None);
    }

    #[test]
    fn presets_parse() {
        for p in LossPreset::ALL {
            assert_eq!(p.name().parse::<LossPreset>().unwrap(), p);
        }
        assert!("bogus".parse::<LossPreset>().is_err());
    }
}
