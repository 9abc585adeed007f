//! Rigid transforms between canonical and view-specific pose features.
//!
//! Feature coordinates use a normalized frame: the image spans `[-1, 1]`
//! along x and y, and z is unconstrained. Rotations are Euler triples
//! composed as `Rz * Ry * Rx`.

use autodiff::{Scalar, Tensor, Var};
use nalgebra::{Matrix3, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of feature points per pose.
pub const DEFAULT_FEATURES: usize = 70;

fn check_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

/// View-invariant pose features, a `3 x N` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalPose {
    coords: Matrix3xX<f64>,
}

impl CanonicalPose {
    pub fn new(coords: Matrix3xX<f64>) -> Result<Self> {
        if coords.ncols() == 0 {
            return Err(Error::invalid("pose needs at least one feature point"));
        }
        check_finite("canonical pose", coords.iter().copied())?;
        Ok(Self { coords })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(Matrix3xX::zeros(n))
    }

    /// Builds from a row-major `[x.., y.., z..]` slice of length `3 * n`.
    pub fn from_row_major(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != 3 * n {
            return Err(Error::Shape(format!("expected {} values for 3x{n}, got {}", 3 * n, data.len())));
        }
        Self::new(Matrix3xX::from_row_slice(data))
    }

    pub fn n_features(&self) -> usize {
        self.coords.ncols()
    }

    pub fn coords(&self) -> &Matrix3xX<f64> {
        &self.coords
    }

    /// Row-major flattening, the layout consumed by the decoder.
    pub fn to_row_major(&self) -> Vec<f64> {
        row_major(&self.coords)
    }
}

/// Rotation (radians) and translation estimated for one image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl Viewpoint {
    pub fn new(rotation: [f64; 3], translation: [f64; 3]) -> Result<Self> {
        check_finite("viewpoint", rotation.into_iter().chain(translation))?;
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: [0.0; 3], translation: [0.0; 3] }
    }
}

/// Canonical features after a viewpoint's rigid transform.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSpecificPose {
    coords: Matrix3xX<f64>,
}

impl ViewSpecificPose {
    pub fn new(coords: Matrix3xX<f64>) -> Result<Self> {
        if coords.ncols() == 0 {
            return Err(Error::invalid("pose needs at least one feature point"));
        }
        check_finite("view-specific pose", coords.iter().copied())?;
        Ok(Self { coords })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(Matrix3xX::zeros(n))
    }

    pub fn n_features(&self) -> usize {
        self.coords.ncols()
    }

    pub fn coords(&self) -> &Matrix3xX<f64> {
        &self.coords
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        row_major(&self.coords)
    }
}

fn row_major(m: &Matrix3xX<f64>) -> Vec<f64> {
    (0..3).flat_map(|r| m.row(r).iter().copied().collect::<Vec<_>>()).collect()
}

/// Integer pixel shift applied to an image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftVector {
    pub dx: i32,
    pub dy: i32,
}

impl ShiftVector {
    pub fn new(dx: i32, dy: i32) -> Self {
        Self { dx, dy }
    }
}

fn rx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn ry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn dry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

fn rotation_unchecked(r: [f64; 3]) -> Matrix3<f64> {
    rz(r[2]) * ry(r[1]) * rx(r[0])
}

/// `Rz(θz) · Ry(θy) · Rx(θx)`.
pub fn euler_to_matrix(rotation: [f64; 3]) -> Result<Matrix3<f64>> {
    check_finite("rotation", rotation)?;
    Ok(rotation_unchecked(rotation))
}

/// Partial derivatives of [`euler_to_matrix`] with respect to θx, θy, θz.
pub fn euler_to_matrix_jacobian(rotation: [f64; 3]) -> Result<[Matrix3<f64>; 3]> {
    check_finite("rotation", rotation)?;
    Ok(jacobian_unchecked(rotation))
}

fn jacobian_unchecked(r: [f64; 3]) -> [Matrix3<f64>; 3] {
    let (x, y, z) = (rx(r[0]), ry(r[1]), rz(r[2]));
    [z * y * drx(r[0]), z * dry(r[1]) * x, drz(r[2]) * y * x]
}

/// `R · P + T` with `T` broadcast over the columns of `P`.
pub fn apply_viewpoint(pose: &CanonicalPose, view: &Viewpoint) -> Result<ViewSpecificPose> {
    let view = Viewpoint::new(view.rotation, view.translation)?;
    let m = rotation_unchecked(view.rotation);
    let t = Vector3::from(view.translation);
    let mut out = m * pose.coords();
    for mut col in out.column_iter_mut() {
        col += t;
    }
    ViewSpecificPose::new(out)
}

/// Pixel shift in feature units: the image spans 2 units along each axis.
pub fn pixel_shift_to_feature_shift(shift: ShiftVector, width: usize, height: usize) -> Result<Vector3<f64>> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("image dimensions must be positive, got {width}x{height}")));
    }
    Ok(Vector3::new(2.0 * shift.dx as f64 / width as f64, 2.0 * shift.dy as f64 / height as f64, 0.0))
}

/// Adds `delta.x` to the x row and `delta.y` to the y row; z is untouched.
pub fn shift_view_specific(pose: &ViewSpecificPose, delta: Vector3<f64>) -> Result<ViewSpecificPose> {
    check_finite("feature shift", delta.iter().copied())?;
    let mut out = pose.coords().clone();
    for mut col in out.column_iter_mut() {
        col[0] += delta.x;
        col[1] += delta.y;
    }
    ViewSpecificPose::new(out)
}

/// Batched, differentiable `R(angles_b) · P_b + T_b`.
///
/// `angles` and `translation` are `(B, 3)`, `pose` is `(B, 3, N)`; the
/// result has the shape of `pose`.
pub fn rigid_transform<'t, T: Scalar>(
    angles: Var<'t, T>,
    translation: Var<'t, T>,
    pose: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (a, t, p) = (angles.value(), translation.value(), pose.value());
    let ps = p.shape().to_vec();
    if ps.len() != 3 || ps[1] != 3 || a.shape() != [ps[0], 3] || t.shape() != [ps[0], 3] {
        return Err(Error::Shape(format!(
            "rigid transform of angles {:?}, translation {:?}, pose {ps:?}",
            a.shape(),
            t.shape()
        )));
    }
    let (b, n) = (ps[0], ps[2]);
    let angle_rows: Vec<[f64; 3]> = (0..b)
        .map(|i| [0, 1, 2].map(|j| a.data()[i * 3 + j].as_f64()))
        .collect();
    let rots: Vec<Matrix3<f64>> = angle_rows.iter().map(|&r| rotation_unchecked(r)).collect();
    let mut out = vec![T::zero(); b * 3 * n];
    for i in 0..b {
        let pd = &p.data()[i * 3 * n..(i + 1) * 3 * n];
        for r in 0..3 {
            let shift = t.data()[i * 3 + r].as_f64();
            for c in 0..n {
                let mut acc = shift;
                for k in 0..3 {
                    acc += rots[i][(r, k)] * pd[k * n + c].as_f64();
                }
                out[i * 3 * n + r * n + c] = T::of(acc);
            }
        }
    }
    let value = Tensor::new(&ps, out)?;
    let tape = pose.tape();
    Ok(tape.op(&[angles, translation, pose], value, move |g, need| {
        let gd = g.data();
        let mut ga = vec![T::zero(); b * 3];
        let mut gt = vec![T::zero(); b * 3];
        let mut gp = vec![T::zero(); b * 3 * n];
        for i in 0..b {
            let gi = &gd[i * 3 * n..(i + 1) * 3 * n];
            let pd = &p.data()[i * 3 * n..(i + 1) * 3 * n];
            if need[1] {
                for r in 0..3 {
                    gt[i * 3 + r] = T::of(gi[r * n..(r + 1) * n].iter().map(|v| v.as_f64()).sum());
                }
            }
            if need[2] {
                for k in 0..3 {
                    for c in 0..n {
                        let acc: f64 = (0..3).map(|r| rots[i][(r, k)] * gi[r * n + c].as_f64()).sum();
                        gp[i * 3 * n + k * n + c] = T::of(acc);
                    }
                }
            }
            if need[0] {
                // dL/dM = G · Pᵀ, then contract with each partial of M.
                let mut gm = Matrix3::<f64>::zeros();
                for r in 0..3 {
                    for k in 0..3 {
                        gm[(r, k)] = (0..n).map(|c| gi[r * n + c].as_f64() * pd[k * n + c].as_f64()).sum();
                    }
                }
                let jac = jacobian_unchecked(angle_rows[i]);
                for j in 0..3 {
                    ga[i * 3 + j] = T::of(gm.component_mul(&jac[j]).sum());
                }
            }
        }
        vec![
            need[0].then(|| Tensor::new(&[b, 3], ga).expect("angle grad")),
            need[1].then(|| Tensor::new(&[b, 3], gt).expect("translation grad")),
            need[2].then(|| Tensor::new(&[b, 3, n], gp).expect("pose grad")),
        ]
    }))
}

/// Per-sample feature shifts as a constant `(B, 3, N)` tensor (z row zero).
pub fn feature_shift_tensor<T: Scalar>(deltas: &[Vector3<f64>], n: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(deltas.len() * 3 * n);
    for d in deltas {
        for r in 0..3 {
            let v = if r == 2 { 0.0 } else { d[r] };
            data.extend(std::iter::repeat_n(T::of(v), n));
        }
    }
    Tensor::new(&[deltas.len(), 3, n], data).expect("shift tensor shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::Tape;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_angles_give_identity() {
        assert_eq!(euler_to_matrix([0.0; 3]).unwrap(), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let m = euler_to_matrix([0.0, 0.0, FRAC_PI_2]).unwrap();
        let v = m * Vector3::new(1.0, 0.0, 0.0);
        assert!((v - Vector3::new(0.0, 1.0, 0.0)).amax() < 1e-12);
    }

    #[test]
    fn orthonormal_example() {
        let m = euler_to_matrix([0.3, -0.7, 1.1]).unwrap();
        assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-12);
        assert!((m.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_angles() {
        assert!(euler_to_matrix([f64::NAN, 0.0, 0.0]).is_err());
        assert!(Viewpoint::new([0.0; 3], [f64::INFINITY, 0.0, 0.0]).is_err());
    }

    #[test]
    fn identity_viewpoint_is_identity_map() {
        let p = CanonicalPose::from_row_major(2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = apply_viewpoint(&p, &Viewpoint::identity()).unwrap();
        assert_eq!(out.coords(), p.coords());
    }

    #[test]
    fn translation_of_origin() {
        let p = CanonicalPose::zeros(4).unwrap();
        let out = apply_viewpoint(&p, &Viewpoint::new([0.4, 0.1, -2.0], [1.0, -2.0, 0.5]).unwrap()).unwrap();
        for col in out.coords().column_iter() {
            assert_eq!(col.into_owned(), Vector3::new(1.0, -2.0, 0.5));
        }
    }

    #[test]
    fn pixel_shift_examples() {
        assert_eq!(pixel_shift_to_feature_shift(ShiftVector::new(0, 0), 7, 9).unwrap(), Vector3::zeros());
        assert_eq!(pixel_shift_to_feature_shift(ShiftVector::new(64, 0), 128, 128).unwrap(), Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(
            pixel_shift_to_feature_shift(ShiftVector::new(-32, 16), 128, 128).unwrap(),
            Vector3::new(-0.5, 0.25, 0.0)
        );
        assert!(pixel_shift_to_feature_shift(ShiftVector::new(1, 1), 0, 128).is_err());
    }

    #[test]
    fn shift_broadcasts_over_xy_rows() {
        let p = ViewSpecificPose::zeros(3).unwrap();
        let out = shift_view_specific(&p, Vector3::new(1.0, -1.0, 0.0)).unwrap();
        assert_eq!(out.to_row_major(), vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0, 0.0, 0.0, 0.0]);
        let z_only = shift_view_specific(&p, Vector3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(z_only, p);
    }

    #[test]
    fn tape_op_matches_nalgebra() {
        let tape = Tape::<f64>::new();
        let angles = [0.3, -0.2, 0.9];
        let trans = [0.1, 0.2, -0.3];
        let pose = CanonicalPose::from_row_major(2, &[1.0, -1.0, 0.5, 2.0, 0.0, 3.0]).unwrap();
        let a = tape.leaf(Tensor::from_f64(&[1, 3], &angles).unwrap());
        let t = tape.leaf(Tensor::from_f64(&[1, 3], &trans).unwrap());
        let p = tape.leaf(Tensor::from_f64(&[1, 3, 2], &pose.to_row_major()).unwrap());
        let y = rigid_transform(a, t, p).unwrap();
        let expect = apply_viewpoint(&pose, &Viewpoint::new(angles, trans).unwrap()).unwrap();
        for (u, v) in y.value().data().iter().zip(expect.to_row_major()) {
            assert!((u - v).abs() < 1e-14);
        }
    }
}
