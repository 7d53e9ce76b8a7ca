//! Poses, z-y-x Euler rotations and rigid transforms.
//!
//! Euler angles are intrinsic yaw-pitch-roll: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
//! Angles are radians everywhere in the library.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Pitch closer than this to ±π/2 is treated as gimbal lock on extraction.
pub const GIMBAL_EPS: f64 = 1e-6;

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let w = (a + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Brings (yaw, pitch, roll) into the canonical ranges
/// yaw ∈ [−π, π), pitch ∈ [−π/2, π/2], roll ∈ [−π, π) without changing the rotation.
pub fn normalize_ypr(zeta: Vec3) -> Vec3 {
    let (mut yaw, mut pitch, mut roll) = (zeta[0], wrap_angle(zeta[1]), zeta[2]);
    if pitch > FRAC_PI_2 {
        pitch = PI - pitch;
        yaw += PI;
        roll += PI;
    } else if pitch < -FRAC_PI_2 {
        pitch = -PI - pitch;
        yaw += PI;
        roll += PI;
    }
    Vec3::new(wrap_angle(yaw), pitch, wrap_angle(roll))
}

/// Rotation matrix for yaw-pitch-roll angles.
pub fn rotation_from_ypr(zeta: &Vec3) -> Result<Mat3> {
    if !zeta.iter().all(|a| a.is_finite()) {
        return Err(Error::invalid(format!("non-finite Euler angles {zeta:?}")));
    }
    Ok(rotation_unchecked(zeta))
}

pub(crate) fn rotation_unchecked(zeta: &Vec3) -> Mat3 {
    let (sy, cy) = zeta[0].sin_cos();
    let (sp, cp) = zeta[1].sin_cos();
    let (sr, cr) = zeta[2].sin_cos();
    Mat3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Rotation about the z axis.
pub fn rot_z(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// 6-DOF pose: position and yaw-pitch-roll.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub p: Vec3,
    pub zeta: Vec3,
}

impl Pose {
    pub fn new(p: Vec3, zeta: Vec3) -> Self {
        Self { p, zeta }
    }

    pub fn from_xyz_ypr(x: f64, y: f64, z: f64, yaw: f64, pitch: f64, roll: f64) -> Self {
        Self::new(Vec3::new(x, y, z), Vec3::new(yaw, pitch, roll))
    }

    pub fn yaw(&self) -> f64 {
        self.zeta[0]
    }

    pub fn normalized(&self) -> Self {
        Self::new(self.p, normalize_ypr(self.zeta))
    }

    pub fn to_transform(&self) -> Transform {
        pose_to_transform(self)
    }
}

/// Rigid transform `x ↦ rot * x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rot: Mat3,
    pub t: Vec3,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn new(rot: Mat3, t: Vec3) -> Self {
        Self { rot, t }
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Mat3::identity(), t)
    }

    /// Planar transform: rotation about z followed by a translation in the xy plane.
    pub fn planar(theta: f64, tx: f64, ty: f64) -> Self {
        Self::new(rot_z(theta), Vec3::new(tx, ty, 0.0))
    }

    /// Applies `other` first, then `self`.
    pub fn compose(&self, other: &Transform) -> Transform {
        compose(self, other)
    }

    pub fn inverse(&self) -> Transform {
        let rt = self.rot.transpose();
        Transform::new(rt, -(rt * self.t))
    }

    #[inline]
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rot * x + self.t
    }

    pub fn to_pose(&self) -> Pose {
        transform_to_pose(self).pose
    }

    /// Checks RᵀR = I and det R = 1 within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let ortho = (self.rot.transpose() * self.rot - Mat3::identity()).abs().max();
        ortho <= tol && (self.rot.determinant() - 1.0).abs() <= tol && self.t.iter().all(|v| v.is_finite())
    }

    /// Rotation angle of `rot` (radians, in [0, π]).
    pub fn rotation_angle(&self) -> f64 {
        ((self.rot.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// Flattened 4×4 homogeneous matrix, row-major.
    pub fn to_homogeneous(&self) -> [f64; 16] {
        let r = &self.rot;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], self.t[0],
            r[(1, 0)], r[(1, 1)], r[(1, 2)], self.t[1],
            r[(2, 0)], r[(2, 1)], r[(2, 2)], self.t[2],
            0.0, 0.0, 0.0, 1.0,
        ]
    }
}

/// `a ∘ b`: (R_a R_b, R_a t_b + t_a).
pub fn compose(a: &Transform, b: &Transform) -> Transform {
    Transform::new(a.rot * b.rot, a.rot * b.t + a.t)
}

pub fn transform_points(tf: &Transform, pts: &[Vec3]) -> Vec<Vec3> {
    pts.iter().map(|x| tf.apply(x)).collect()
}

pub fn pose_to_transform(pose: &Pose) -> Transform {
    Transform::new(rotation_unchecked(&pose.zeta), pose.p)
}

/// Result of pulling Euler angles out of a rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseExtraction {
    pub pose: Pose,
    /// Pitch within [`GIMBAL_EPS`] of ±π/2; roll was forced to 0.
    pub singular: bool,
}

pub fn transform_to_pose(tf: &Transform) -> PoseExtraction {
    let r = &tf.rot;
    let cp = r[(0, 0)].hypot(r[(1, 0)]);
    let pitch = (-r[(2, 0)]).atan2(cp);
    let singular = FRAC_PI_2 - pitch.abs() <= GIMBAL_EPS;
    let (yaw, roll) = if singular {
        ((-r[(0, 1)]).atan2(r[(1, 1)]), 0.0)
    } else {
        (r[(1, 0)].atan2(r[(0, 0)]), r[(2, 1)].atan2(r[(2, 2)]))
    };
    PoseExtraction {
        pose: Pose::new(tf.t, Vec3::new(wrap_angle(yaw), pitch, wrap_angle(roll))),
        singular,
    }
}
