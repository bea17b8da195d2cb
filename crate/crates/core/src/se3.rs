//! Rigid-transform algebra (SO(3)/SE(3)) and fixed-frame registration.
//!
//! Rotations are carried as 3x3 matrices at every public boundary. Units are meters and
//! radians throughout.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::num::Real;

/// Orthonormality defect above which an ingested rotation gets re-orthonormalized.
pub const REORTHONORMALIZE_DEFECT: f64 = 1e-6;
/// Orthonormality defect above which an ingested rotation is rejected.
pub const REJECT_DEFECT: f64 = 1e-2;

/// Below this angle the rotation vector is read directly off the skew-symmetric part.
const SMALL_ANGLE: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Se3Error {
    #[error("rotation is not orthonormal (defect {defect:.3e} exceeds {limit:.0e})")]
    NotOrthonormal { defect: f64, limit: f64 },
    #[error("rotation has non-positive determinant ({det:.6})")]
    Reflection { det: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Skew-symmetric cross-product matrix of `v`.
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z)
}

fn vee_of_skew_part<T: Real>(m: &Matrix3<T>) -> Vector3<T> {
    let half = T::lit(0.5);
    Vector3::new(
        (m[(2, 1)] - m[(1, 2)]) * half,
        (m[(0, 2)] - m[(2, 0)]) * half,
        (m[(1, 0)] - m[(0, 1)]) * half,
    )
}

/// A proper rotation matrix (orthonormal, determinant +1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation<T: Real>(Matrix3<T>);

impl<T: Real> Rotation<T> {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix that is known to be a rotation. No checks.
    pub fn from_matrix_unchecked(m: Matrix3<T>) -> Self {
        Self(m)
    }

    /// Ingests a matrix from untrusted input: re-orthonormalized (polar decomposition) when
    /// the defect is above [`REORTHONORMALIZE_DEFECT`], rejected above [`REJECT_DEFECT`].
    pub fn from_matrix_checked(m: Matrix3<T>) -> Result<Self, Se3Error> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Se3Error::NonFinite("rotation"));
        }
        let det = m.determinant();
        if det <= T::zero() {
            return Err(Se3Error::Reflection {
                det: det.to_f64_lossy(),
            });
        }
        let defect = orthonormality_defect(&m).to_f64_lossy();
        if defect > REJECT_DEFECT {
            return Err(Se3Error::NotOrthonormal {
                defect,
                limit: REJECT_DEFECT,
            });
        }
        if defect <= REORTHONORMALIZE_DEFECT {
            return Ok(Self(m));
        }
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
        Ok(Self(u * v_t))
    }

    /// Rotation of `angle` radians about `axis` (normalized here).
    pub fn from_axis_angle(axis: &Vector3<T>, angle: T) -> Self {
        let n = axis.norm();
        if n == T::zero() {
            return Self::identity();
        }
        Self::from_angle_axis(&(axis * (angle / n)))
    }

    /// Exponential map: rotation vector (axis times angle) to matrix.
    pub fn from_angle_axis(v: &Vector3<T>) -> Self {
        let theta2 = v.norm_squared();
        let theta = theta2.sqrt();
        let k = skew(v);
        let (a, b) = if theta < T::lit(1e-6) {
            (
                T::one() - theta2 / T::lit(6.0),
                T::lit(0.5) - theta2 / T::lit(24.0),
            )
        } else {
            (theta.sin() / theta, (T::one() - theta.cos()) / theta2)
        };
        Self(Matrix3::identity() + k * a + k * k * b)
    }

    pub fn rx(angle: T) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn ry(angle: T) -> Self {
        Self::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn rz(angle: T) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    /// Builds the rotation of quaternion `(w, x, y, z)`. The quaternion is not normalized
    /// first, so a quaternion far from unit norm produces a matrix that fails the
    /// orthonormality check.
    pub fn from_quaternion_checked(w: T, x: T, y: T, z: T) -> Result<Self, Se3Error> {
        let two = T::lit(2.0);
        let (ww, xx, yy, zz) = (w * w, x * x, y * y, z * z);
        let m = Matrix3::new(
            ww + xx - yy - zz,
            two * (x * y - w * z),
            two * (x * z + w * y),
            two * (x * y + w * z),
            ww - xx + yy - zz,
            two * (y * z - w * x),
            two * (x * z - w * y),
            two * (y * z + w * x),
            ww - xx - yy + zz,
        );
        Self::from_matrix_checked(m)
    }

    /// Unit quaternion `(w, x, y, z)` with `w >= 0`.
    pub fn to_quaternion(&self) -> [T; 4] {
        let v = self.angle_axis();
        let theta = v.norm();
        if theta == T::zero() {
            return [T::one(), T::zero(), T::zero(), T::zero()];
        }
        let half = theta * T::lit(0.5);
        let s = half.sin() / theta;
        [half.cos(), v.x * s, v.y * s, v.z * s]
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn apply(&self, v: &Vector3<T>) -> Vector3<T> {
        self.0 * v
    }

    /// Rotation vector `axis * angle` with angle in `[0, pi]`.
    ///
    /// At exactly `pi` the axis sign is ambiguous: the largest-magnitude component is made
    /// positive (ties go to x, then y, then z).
    pub fn angle_axis(&self) -> Vector3<T> {
        let m = &self.0;
        let s = vee_of_skew_part(m);
        let sin = s.norm();
        let cos = (m.trace() - T::one()) * T::lit(0.5);
        let theta = sin.atan2(cos);
        if theta < T::lit(SMALL_ANGLE) {
            return s;
        }
        if cos >= T::zero() {
            return s * (theta / sin);
        }
        // Obtuse angles: the symmetric part is (1 - cos) a a^T + cos I, which pins the
        // axis up to sign even when the skew part vanishes.
        let b = (m + m.transpose()) * T::lit(0.5) - Matrix3::identity() * cos;
        let mut best = 0;
        for i in 1..3 {
            if b[(i, i)] > b[(best, best)] {
                best = i;
            }
        }
        let mut axis = b.column(best).into_owned();
        axis /= axis.norm();
        if sin > T::lit(1e-12) {
            if axis.dot(&s) < T::zero() {
                axis = -axis;
            }
        } else {
            axis = canonical_half_turn_axis(axis);
        }
        axis * theta
    }

    /// Geodesic distance to `other` in radians.
    pub fn angle_to(&self, other: &Self) -> T {
        (*self * other.transpose()).angle_axis().norm()
    }

    pub fn orthonormality_defect(&self) -> T {
        orthonormality_defect(&self.0)
    }

    pub fn determinant(&self) -> T {
        self.0.determinant()
    }

    /// Converts to another scalar type.
    pub fn cast<U: Real>(&self) -> Rotation<U> {
        Rotation(self.0.map(|v| U::lit(v.to_f64_lossy())))
    }
}

fn canonical_half_turn_axis<T: Real>(axis: Vector3<T>) -> Vector3<T> {
    let tie = T::lit(1e-12);
    let max = axis.x.abs().max(axis.y.abs()).max(axis.z.abs());
    let pick = (0..3).find(|&i| axis[i].abs() >= max - tie).unwrap_or(0);
    if axis[pick] < T::zero() {
        -axis
    } else {
        axis
    }
}

fn orthonormality_defect<T: Real>(m: &Matrix3<T>) -> T {
    (m.transpose() * m - Matrix3::identity()).amax()
}

impl<T: Real> Mul for Rotation<T> {
    type Output = Rotation<T>;

    fn mul(self, rhs: Self) -> Self {
        Rotation(self.0 * rhs.0)
    }
}

impl<T: Real> Mul<Vector3<T>> for Rotation<T> {
    type Output = Vector3<T>;

    fn mul(self, rhs: Vector3<T>) -> Vector3<T> {
        self.0 * rhs
    }
}

impl<T: Real> Default for Rotation<T> {
    fn default() -> Self {
        Self::identity()
    }
}

/// Rigid transform `T_{A->B}`: rotation plus translation of frame B expressed in frame A.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform<T: Real> {
    pub rotation: Rotation<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Default for Transform<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Transform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self::new(Rotation::identity(), translation)
    }

    pub fn from_rotation(rotation: Rotation<T>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -rt.apply(&self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation.apply(p) + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation.apply(v)
    }

    /// Largest absolute entry-wise difference between the two homogeneous matrices.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let r = (self.rotation.matrix() - other.rotation.matrix()).amax();
        let t = (self.translation - other.translation).amax();
        r.max(t)
    }

    pub fn cast<U: Real>(&self) -> Transform<U> {
        Transform {
            rotation: self.rotation.cast(),
            translation: self.translation.map(|v| U::lit(v.to_f64_lossy())),
        }
    }

    /// Checked construction from row-major rotation entries and a translation.
    pub fn from_parts_checked(rotation: [T; 9], translation: [T; 3]) -> Result<Self, Se3Error> {
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Se3Error::NonFinite("translation"));
        }
        let m = Matrix3::from_row_slice(&rotation);
        Ok(Self::new(
            Rotation::from_matrix_checked(m)?,
            Vector3::from(translation),
        ))
    }

    /// Row-major rotation entries.
    pub fn rotation_row_major(&self) -> [T; 9] {
        let m = self.rotation.matrix();
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }
}

impl<T: Real> Mul for Transform<T> {
    type Output = Transform<T>;

    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

impl<T: Real> fmt::Display for Transform<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.translation;
        let v = self.rotation.angle_axis();
        write!(
            f,
            "t=({}, {}, {}) r=({}, {}, {})",
            t.x, t.y, t.z, v.x, v.y, v.z
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRepr<T> {
    rotation: [T; 9],
    translation: [T; 3],
}

impl<T: Real + Serialize> Serialize for Transform<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TransformRepr {
            rotation: self.rotation_row_major(),
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(serializer)
    }
}

impl<'de, T: Real + Deserialize<'de>> Deserialize<'de> for Transform<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = TransformRepr::<T>::deserialize(deserializer)?;
        Transform::from_parts_checked(repr.rotation, repr.translation).map_err(D::Error::custom)
    }
}

impl<T: Real + Serialize> Serialize for Rotation<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        Transform::from_rotation(*self)
            .rotation_row_major()
            .serialize(serializer)
    }
}

impl<'de, T: Real + Deserialize<'de>> Deserialize<'de> for Rotation<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let entries = <[T; 9]>::deserialize(deserializer)?;
        Rotation::from_matrix_checked(Matrix3::from_row_slice(&entries)).map_err(D::Error::custom)
    }
}

/// Fixed frames registered against the world frame `W`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Motion-capture frame `O`.
    Optical,
    /// AR headset anchor frame `W_AR`.
    Headset,
    /// Robot base frame `B_R`.
    RobotBase,
}

/// World-from-X transforms produced by an external registration procedure. Immutable for a
/// session.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct FrameRegistry<T: Real> {
    pub world_from_optical: Transform<T>,
    pub world_from_headset: Transform<T>,
    pub world_from_robot_base: Transform<T>,
}

impl<T: Real> FrameRegistry<T> {
    pub fn identity() -> Self {
        Self {
            world_from_optical: Transform::identity(),
            world_from_headset: Transform::identity(),
            world_from_robot_base: Transform::identity(),
        }
    }

    pub fn world_from(&self, frame: Frame) -> &Transform<T> {
        match frame {
            Frame::Optical => &self.world_from_optical,
            Frame::Headset => &self.world_from_headset,
            Frame::RobotBase => &self.world_from_robot_base,
        }
    }

    /// Re-expresses `t` (given relative to `frame`) in the world frame.
    pub fn to_world(&self, frame: Frame, t: &Transform<T>) -> Transform<T> {
        self.world_from(frame).compose(t)
    }

    /// Inverse of [`FrameRegistry::to_world`].
    pub fn from_world(&self, frame: Frame, t: &Transform<T>) -> Transform<T> {
        self.world_from(frame).inverse().compose(t)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryRepr<T: Real> {
    world_from_optical: Transform<T>,
    world_from_headset: Transform<T>,
    world_from_robot_base: Transform<T>,
}

impl<T: Real + Serialize> Serialize for FrameRegistry<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RegistryRepr {
            world_from_optical: self.world_from_optical,
            world_from_headset: self.world_from_headset,
            world_from_robot_base: self.world_from_robot_base,
        }
        .serialize(serializer)
    }
}

impl<'de, T: Real + Deserialize<'de>> Deserialize<'de> for FrameRegistry<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let r = RegistryRepr::<T>::deserialize(deserializer)?;
        Ok(Self {
            world_from_optical: r.world_from_optical,
            world_from_headset: r.world_from_headset,
            world_from_robot_base: r.world_from_robot_base,
        })
    }
}
