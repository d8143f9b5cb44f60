//! Rigid transforms and tagged point clouds.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub type Point3 = Vector3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
    #[error("non-finite pose parameter")]
    NonFinite,
    #[error("unknown frame tag `{0}`")]
    UnknownFrame(String),
}

/// A rigid transform `x -> R x + t`, stored as translation plus unit
/// quaternion. Its 7-parameter form is `[tx, ty, tz, qw, qx, qy, qz]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidPose {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn identity() -> Self {
        Self { translation: Vector3::zeros(), rotation: UnitQuaternion::identity() }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self { translation, rotation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(t, UnitQuaternion::identity())
    }

    /// Builds a pose from `[tx, ty, tz, qw, qx, qy, qz]`, normalizing the
    /// quaternion.
    pub fn from_params(p: &[f64; 7]) -> Result<Self, GeometryError> {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let q = Quaternion::new(p[3], p[4], p[5], p[6]);
        let n = q.norm();
        if !(n > 1e-300) {
            return Err(GeometryError::DegenerateQuaternion);
        }
        Ok(Self::new(Vector3::new(p[0], p[1], p[2]), UnitQuaternion::new_unchecked(q / n)))
    }

    pub fn params(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        let t = self.translation;
        [t.x, t.y, t.z, q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    #[inline]
    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn inverse_transform_point(&self, p: &Point3) -> Point3 {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        Self::new(-(r * self.translation), r)
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &RigidPose) -> Self {
        Self::new(self.transform_point(&other.translation), self.rotation * other.rotation)
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

/// Reference frames a cloud can be expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Frame {
    /// Gripper tool frame.
    Tool,
    /// Object geometry frame.
    Geometry,
    /// Camera of finger `i`.
    Camera(u8),
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::Tool => write!(f, "T"),
            Frame::Geometry => write!(f, "G"),
            Frame::Camera(i) => write!(f, "C{i}"),
        }
    }
}

impl FromStr for Frame {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "T" => Ok(Frame::Tool),
            "G" => Ok(Frame::Geometry),
            _ => s
                .strip_prefix('C')
                .and_then(|i| i.parse::<u8>().ok())
                .map(Frame::Camera)
                .ok_or_else(|| GeometryError::UnknownFrame(s.to_string())),
        }
    }
}

/// Ordered set of 3D points (meters) tagged with the frame they live in.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame: Frame) -> Self {
        Self { points, frame }
    }

    pub fn empty(frame: Frame) -> Self {
        Self::new(Vec::new(), frame)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p);
        Some(sum / self.points.len() as f64)
    }

    /// Maps every point through `pose` and retags the result.
    pub fn transformed(&self, pose: &RigidPose, frame: Frame) -> PointCloud {
        PointCloud::new(self.points.iter().map(|p| pose.transform_point(p)).collect(), frame)
    }
}
