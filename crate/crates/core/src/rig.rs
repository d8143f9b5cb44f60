//! Two-finger camera rig: finger-mounted depth cameras and their kinematics
//! as a function of gripper opening.
//!
//! Tool frame `T`: origin midway between the fingers, `y` along the closing
//! axis (finger 0 on `+y`), `z` toward the fingertips. Each camera sits
//! behind its membrane and looks at the mid-plane, tilted toward the
//! fingertips by `tilt`. The rest membrane is a spherical cap whose apex lies
//! `apex_depth` along the optical axis, on the finger contact plane
//! `y = ±width / 2`. Finger 1 is the mirror image of finger 0 through
//! `y = 0`; its image is the mirror image flipped horizontally.

use crate::geometry::RigidPose;
use crate::tactile::{
    is_valid_depth, DepthImage, PinholeModel, TactileError, INVALID_DEPTH, SENSOR_HEIGHT, SENSOR_WIDTH,
};
use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

/// Mechanical opening limit of the parallel gripper, meters.
pub const MAX_GRIPPER_WIDTH: f64 = 0.11;

#[derive(Debug, Error, PartialEq)]
pub enum RigError {
    #[error("gripper width {0} m outside [0, {MAX_GRIPPER_WIDTH}]")]
    WidthOutOfRange(f64),
    #[error("invalid rig: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tactile(#[from] TactileError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Finger {
    Left = 0,
    Right = 1,
}

impl Finger {
    pub const BOTH: [Finger; 2] = [Finger::Left, Finger::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Side of the closing axis the finger sits on.
    fn side(self) -> f64 {
        match self {
            Finger::Left => 1.0,
            Finger::Right => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigParams {
    pub width: usize,
    pub height: usize,
    pub intrinsics: PinholeModel,
    /// Camera tilt toward the fingertips, radians.
    pub tilt: f64,
    /// Distance from camera to membrane apex along the optical axis.
    pub apex_depth: f64,
    /// Radius of the spherical rest membrane.
    pub bubble_radius: f64,
}

impl Default for RigParams {
    fn default() -> Self {
        Self {
            width: SENSOR_WIDTH,
            height: SENSOR_HEIGHT,
            intrinsics: PinholeModel::centered(SENSOR_WIDTH, SENSOR_HEIGHT, 210.0),
            tilt: 25f64.to_radians(),
            apex_depth: 0.055,
            bubble_radius: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraRig {
    pub params: RigParams,
    rest: DepthImage,
    rest_distance: Vec<f64>,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self::new(RigParams::default()).expect("default rig is valid")
    }
}

impl CameraRig {
    pub fn new(params: RigParams) -> Result<Self, RigError> {
        params.intrinsics.validate(params.width, params.height)?;
        if !(params.apex_depth > 0.0 && params.tilt.is_finite()) {
            return Err(RigError::Invalid("apex depth must be positive".into()));
        }
        let center = Vector3::new(0.0, 0.0, params.apex_depth - params.bubble_radius);
        if center.norm() >= params.bubble_radius {
            return Err(RigError::Invalid("membrane cap must enclose the camera".into()));
        }
        let (w, h) = (params.width, params.height);
        let mut depth = Vec::with_capacity(w * h);
        let mut dist = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                let d = params.intrinsics.ray(u as f64, v as f64).normalize();
                let b = d.dot(&center);
                let t = b + (b * b - center.norm_squared() + params.bubble_radius.powi(2)).sqrt();
                let z = t * d.z;
                if !is_valid_depth(z) {
                    return Err(RigError::Invalid(format!("rest depth {z} at ({u},{v}) outside working range")));
                }
                depth.push(z as f32);
                dist.push(t);
            }
        }
        let rest = DepthImage::new(w, h, depth, params.intrinsics)?;
        Ok(Self { params, rest, rest_distance: dist })
    }

    pub fn intrinsics(&self) -> &PinholeModel {
        &self.params.intrinsics
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.params.width, self.params.height)
    }

    /// Contact-free membrane depth map (same for both fingers).
    pub fn rest_depth(&self) -> &DepthImage {
        &self.rest
    }

    /// Ray length from the camera to the rest membrane at pixel `(u, v)`.
    #[inline]
    pub fn rest_distance(&self, u: usize, v: usize) -> f64 {
        self.rest_distance[v * self.params.width + u]
    }

    /// Camera pose in the tool frame (`T <- C_i`) at the given opening.
    pub fn camera_pose(&self, finger: Finger, gripper_width: f64) -> Result<RigidPose, RigError> {
        if !(0.0..=MAX_GRIPPER_WIDTH).contains(&gripper_width) {
            return Err(RigError::WidthOutOfRange(gripper_width));
        }
        let (s, c) = self.params.tilt.sin_cos();
        let side = finger.side();
        let a = self.params.apex_depth;
        let x_axis = Vector3::new(side, 0.0, 0.0);
        let y_axis = Vector3::new(0.0, side * s, c);
        let z_axis = Vector3::new(0.0, -side * c, s);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x_axis, y_axis, z_axis]));
        let origin = Vector3::new(0.0, side * (0.5 * gripper_width + a * c), -a * s);
        Ok(RigidPose::new(origin, UnitQuaternion::from_rotation_matrix(&rot)))
    }

    /// An all-invalid image at sensor resolution.
    pub fn blank_depth(&self) -> DepthImage {
        DepthImage::filled(self.params.width, self.params.height, INVALID_DEPTH, self.params.intrinsics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn apex_lies_on_contact_plane() {
        let rig = CameraRig::default();
        for f in Finger::BOTH {
            let pose = rig.camera_pose(f, 0.07).unwrap();
            let apex = pose.transform_point(&Vector3::new(0.0, 0.0, 0.055));
            assert_relative_eq!(apex, Vector3::new(0.0, f.side() * 0.035, 0.0), epsilon = 1e-12);
            assert!((pose.rotation.quaternion().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fingers_are_mirror_images() {
        let rig = CameraRig::default();
        let l = rig.camera_pose(Finger::Left, 0.05).unwrap();
        let r = rig.camera_pose(Finger::Right, 0.05).unwrap();
        let m = Vector3::new(1.0, -1.0, 1.0);
        // pixel (u, v) of the left camera mirrors pixel (W-1-u, v) of the right one
        let k = rig.intrinsics();
        let (w, _) = rig.resolution();
        let pl = l.transform_point(&k.deproject(30.0, 40.0, 0.06));
        let pr = r.transform_point(&k.deproject((w - 1) as f64 - 30.0, 40.0, 0.06));
        assert_relative_eq!(pl.component_mul(&m), pr, epsilon = 1e-12);
    }

    #[test]
    fn rest_depth_in_range_and_symmetric() {
        let rig = CameraRig::default();
        let rest = rig.rest_depth();
        assert_eq!(rest.valid_count(), rest.width * rest.height);
        let (w, h) = rig.resolution();
        for v in 0..h {
            for u in 0..w {
                assert_eq!(rest.data[v * w + u], rest.data[v * w + (w - 1 - u)]);
            }
        }
        let max = rest.data.iter().cloned().fold(0.0f32, f32::max);
        assert!(max <= 0.055 + 1e-6 && max > 0.054);
    }

    #[test]
    fn width_limits() {
        let rig = CameraRig::default();
        assert!(rig.camera_pose(Finger::Left, -0.001).is_err());
        assert!(rig.camera_pose(Finger::Left, 0.111).is_err());
        assert!(rig.camera_pose(Finger::Left, 0.11).is_ok());
    }
}
