//! Quaternions, rigid transforms and region-of-interest boxes.
//!
//! Quaternions are stored as `(w, x, y, z)` with the Hamilton product
//! convention. The canonical representative of a rotation has `w >= 0`; when
//! `w == 0` the first nonzero vector component is made positive.

use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Maximum deviation of `||q||` from one accepted as a unit quaternion.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Unit quaternion rotating by `angle` radians about `axis`.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn from_yaw(yaw: f64) -> Self {
        Quat::from_axis_angle(Vec3::z(), yaw)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(self, other: Quat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn conjugate(self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn scaled(self, k: f64) -> Quat {
        Quat::new(self.w * k, self.x * k, self.y * k, self.z * k)
    }

    pub fn is_unit(self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    pub fn is_canonical(self) -> bool {
        if self.w > 0.0 {
            return true;
        }
        if self.w < 0.0 {
            return false;
        }
        for c in [self.x, self.y, self.z] {
            if c != 0.0 {
                return c > 0.0;
            }
        }
        false
    }

    /// Normalizes and applies the sign convention.
    pub fn canonicalize(self) -> Result<Quat> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "cannot canonicalize quaternion with norm {n}"
            )));
        }
        let q = self.scaled(1.0 / n);
        Ok(if q.is_canonical() { q } else { -q })
    }

    /// Sign factor (+1 or -1) that [`Quat::canonicalize`] applies to a unit
    /// quaternion.
    pub fn canonical_sign(self) -> f64 {
        if self.is_canonical() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn to_rotmat(self) -> Result<Mat3> {
        if !self.is_unit() {
            return Err(Error::InvalidArgument(format!(
                "quaternion norm {} is not within {UNIT_TOLERANCE} of 1",
                self.norm()
            )));
        }
        Ok(self.rotmat_unchecked())
    }

    /// Rotation matrix from the unit-quaternion formula; the caller
    /// guarantees unit norm.
    pub fn rotmat_unchecked(self) -> Mat3 {
        let Quat { w, x, y, z } = self;
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        self.rotmat_unchecked() * v
    }
}

impl Mul for Quat {
    type Output = Quat;

    fn mul(self, r: Quat) -> Quat {
        Quat::new(
            self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        )
    }
}

impl Neg for Quat {
    type Output = Quat;

    fn neg(self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Rigid transform `x -> U x + t` with `U = R(rotation)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Quat,
    translation: [f64; 3],
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Quat::IDENTITY,
        translation: [0.0; 3],
    };

    pub fn new(rotation: Quat, translation: Vec3) -> Result<Self> {
        if !rotation.is_unit() {
            return Err(Error::InvalidArgument(format!(
                "transform rotation has norm {}",
                rotation.norm()
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite translation".into()));
        }
        Ok(RigidTransform {
            rotation: rotation.canonicalize()?,
            translation: translation.into(),
        })
    }

    pub fn from_translation(t: Vec3) -> Self {
        RigidTransform {
            rotation: Quat::IDENTITY,
            translation: t.into(),
        }
    }

    /// Pose with heading `yaw` about +z, placed at `t`.
    pub fn from_yaw(yaw: f64, t: Vec3) -> Self {
        RigidTransform {
            rotation: Quat::from_yaw(yaw).canonicalize().expect("unit"),
            translation: t.into(),
        }
    }

    pub fn rotation(&self) -> Quat {
        self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::from(self.translation)
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.rotmat_unchecked()
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + self.translation()
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let rotation = (self.rotation * other.rotation)
            .canonicalize()
            .expect("product of unit quaternions");
        let translation = self.rotation_matrix() * other.translation() + self.translation();
        RigidTransform {
            rotation,
            translation: translation.into(),
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rotation = self.rotation.conjugate().canonicalize().expect("unit");
        let translation = -(rotation.rotmat_unchecked() * self.translation());
        RigidTransform {
            rotation,
            translation: translation.into(),
        }
    }

    /// Transform taking points in the frame of `from_pose` to the frame of
    /// `to_pose`, where both poses map their local frame into a shared world.
    pub fn between(from_pose: &RigidTransform, to_pose: &RigidTransform) -> RigidTransform {
        to_pose.inverse().compose(from_pose)
    }
}

/// Axis-aligned box in the owning agent's frame. Membership is closed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

impl Roi {
    pub fn new(center: Vec3, half_extents: Vec3) -> Result<Self> {
        if !half_extents.iter().all(|h| *h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ROI half extents must be positive, got {half_extents:?}"
            )));
        }
        Ok(Roi {
            center: center.into(),
            half_extents: half_extents.into(),
        })
    }

    /// The 40 m x 40 m x 3.2 m detection volume. The agent frame has its
    /// origin on the ground below the vehicle, so the box spans z in [0, 3.2].
    pub fn ego_default() -> Self {
        Roi {
            center: [0.0, 0.0, 1.6],
            half_extents: [20.0, 20.0, 1.6],
        }
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| (p[i] - self.center[i]).abs() <= self.half_extents[i])
    }

    pub fn min_corner(&self) -> Vec3 {
        Vec3::from(self.center) - Vec3::from(self.half_extents)
    }

    pub fn max_corner(&self) -> Vec3 {
        Vec3::from(self.center) + Vec3::from(self.half_extents)
    }
}
