//! Synthetic two-finger bubble sensor: depth and IR rendering, membrane
//! pressure and the stable-grasp predicate.

mod pattern;

pub use pattern::{generate_dots, generate_pattern, rasterize, warp_ir, Dot, DotPattern, MAX_COVERAGE};

use crate::field::ProximityField;
use crate::flow::FlowField;
use crate::geometry::RigidPose;
use crate::par;
use crate::rig::{CameraRig, Finger, RigError, MAX_GRIPPER_WIDTH};
use crate::tactile::{is_valid_depth, ContactPatchMask, DepthImage, IrImage, TactileError, INVALID_DEPTH};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("object does not touch either membrane")]
    NoContact,
    #[error("infeasible dot pattern: {0}")]
    InfeasiblePattern(String),
    #[error("image dimensions do not match the sensor")]
    DimensionMismatch,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Rig(#[from] RigError),
    #[error(transparent)]
    Tactile(#[from] TactileError),
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of substream `(stream, index)` under `root`.
#[inline]
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(root ^ mix64(stream)) ^ index)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperState {
    /// Finger separation, meters.
    pub width: f64,
    /// Closing speed, m/s.
    pub finger_velocity: f64,
    /// Per-finger pressure above rest, kPa.
    pub pressure: [f64; 2],
}

impl GripperState {
    pub fn new(width: f64) -> Result<Self, SimError> {
        if !(0.0..=MAX_GRIPPER_WIDTH).contains(&width) {
            return Err(RigError::WidthOutOfRange(width).into());
        }
        Ok(Self { width, finger_velocity: 0.0, pressure: [0.0; 2] })
    }
}

/// True iff both fingers exceed the pressure threshold and the fingers have
/// stopped moving.
pub fn stable_grasp(state: &GripperState, pressure_threshold: f64, velocity_threshold: f64) -> bool {
    debug_assert!(pressure_threshold > 0.0 && velocity_threshold > 0.0);
    let p = state.pressure[0].min(state.pressure[1]);
    p > pressure_threshold && state.finger_velocity.abs() < velocity_threshold
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Drape falloff radius around the contact silhouette, pixels.
    pub blend_radius: f64,
    /// kPa per litre of displaced volume.
    pub pressure_gain: f64,
    pub max_march_steps: usize,
    /// Sphere-tracing hit tolerance, meters.
    pub hit_epsilon: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { blend_radius: 6.0, pressure_gain: 50.0, max_march_steps: 256, hit_epsilon: 1e-7 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.blend_radius >= 0.0
            && self.blend_radius.is_finite()
            && self.pressure_gain >= 0.0
            && self.pressure_gain.is_finite()
            && self.max_march_steps > 0
            && self.hit_epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidArgument(format!("bad simulator config {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Trace {
    Miss,
    Hit(f64),
    Invalid,
}

/// Noiseless layers of one finger's render.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderLayers {
    /// Z-depth with draping, before noise.
    pub depth: Vec<f64>,
    /// Pixels where the object surface lies in front of the rest membrane.
    pub contact: ContactPatchMask,
    /// Z-depth indentation of contact pixels, meters.
    pub indentation: Vec<f64>,
    /// Pixels whose ray march did not terminate.
    pub invalid: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraspScene {
    pub left: DepthImage,
    pub right: DepthImage,
    /// Contact-free frames on an independent noise stream.
    pub left_reference: DepthImage,
    pub right_reference: DepthImage,
    /// Ground truth `G <- T`.
    pub truth: RigidPose,
    pub state: GripperState,
    pub contact_pixels: [usize; 2],
}

#[derive(Clone, Debug, Default)]
pub struct Simulator {
    pub rig: CameraRig,
    pub config: SimConfig,
}

impl Simulator {
    pub fn new(rig: CameraRig, config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        Ok(Self { rig, config })
    }

    fn march(&self, field: &ProximityField, origin: &nalgebra::Vector3<f64>, dir: &nalgebra::Vector3<f64>, limit: f64) -> Trace {
        let mut t = 0.0;
        for _ in 0..self.config.max_march_steps {
            let phi = field.value(&(origin + dir * t));
            if !phi.is_finite() {
                return Trace::Invalid;
            }
            if phi < self.config.hit_epsilon {
                return Trace::Hit(t);
            }
            t += phi;
            if t >= limit {
                return Trace::Miss;
            }
        }
        Trace::Invalid
    }

    /// Noiseless depth, contact mask and indentation of one finger.
    /// `object_pose` is `T <- G`.
    pub fn render_layers(
        &self,
        finger: Finger,
        field: &ProximityField,
        object_pose: &RigidPose,
        state: &GripperState,
    ) -> Result<RenderLayers, SimError> {
        if !object_pose.is_finite() {
            return Err(SimError::InvalidArgument("object pose is not finite".into()));
        }
        let cam = self.rig.camera_pose(finger, state.width)?;
        let g_from_c = object_pose.inverse().compose(&cam);
        let (w, h) = self.rig.resolution();
        let k = *self.rig.intrinsics();
        let origin = g_from_c.translation;
        let traces = par::map_range(w * h, |i| {
            let (u, v) = (i % w, i / w);
            let d = k.ray(u as f64, v as f64).normalize();
            let t_rest = self.rig.rest_distance(u, v);
            let r = self.march(field, &origin, &(g_from_c.rotation * d), t_rest);
            (r, t_rest, d.z)
        });

        let mut depth = Vec::with_capacity(w * h);
        let mut indentation = vec![0.0; w * h];
        let mut invalid = vec![false; w * h];
        let mut contact = ContactPatchMask::empty(w, h);
        for (i, &(trace, t_rest, dz)) in traces.iter().enumerate() {
            let rest = t_rest * dz;
            match trace {
                Trace::Hit(t) if t < t_rest => {
                    depth.push(t * dz);
                    indentation[i] = rest - t * dz;
                    contact.bits[i] = true;
                }
                Trace::Invalid => {
                    depth.push(0.0);
                    invalid[i] = true;
                }
                _ => depth.push(rest),
            }
        }
        self.drape(&mut depth, &contact, &indentation, &invalid);
        Ok(RenderLayers { depth, contact, indentation, invalid })
    }

    /// Pulls non-contact membrane toward the camera near the contact
    /// silhouette with a Gaussian falloff (sigma = radius / 3, cut at radius).
    fn drape(&self, depth: &mut [f64], contact: &ContactPatchMask, indentation: &[f64], invalid: &[bool]) {
        let rho = self.config.blend_radius;
        if rho <= 0.0 {
            return;
        }
        let (w, h) = (contact.width as isize, contact.height as isize);
        let reach = rho.floor() as isize;
        let inv = 9.0 / (2.0 * rho * rho);
        let mut pull = vec![0.0f64; depth.len()];
        for v in 0..h {
            for u in 0..w {
                let i = (v * w + u) as usize;
                if !contact.bits[i] {
                    continue;
                }
                let edge = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dx, dy)| {
                    let (x, y) = (u + dx, v + dy);
                    x >= 0 && y >= 0 && x < w && y < h && !contact.bits[(y * w + x) as usize]
                });
                if !edge {
                    continue;
                }
                for y in (v - reach).max(0)..(v + reach + 1).min(h) {
                    for x in (u - reach).max(0)..(u + reach + 1).min(w) {
                        let j = (y * w + x) as usize;
                        let d2 = ((x - u).pow(2) + (y - v).pow(2)) as f64;
                        if contact.bits[j] || invalid[j] || d2 > rho * rho {
                            continue;
                        }
                        pull[j] = pull[j].max(indentation[i] * (-d2 * inv).exp());
                    }
                }
            }
        }
        for (d, p) in depth.iter_mut().zip(pull) {
            *d -= p;
        }
    }

    /// One finger's depth image with additive Gaussian noise; depths outside
    /// the working range become invalid.
    pub fn render_depth(
        &self,
        finger: Finger,
        field: &ProximityField,
        object_pose: &RigidPose,
        state: &GripperState,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<DepthImage, SimError> {
        let layers = self.render_layers(finger, field, object_pose, state)?;
        self.finish(&layers.depth, noise_sigma, seed, finger.index() as u64)
    }

    /// Contact-free membrane with noise.
    pub fn render_reference(&self, finger: Finger, noise_sigma: f64, seed: u64) -> Result<DepthImage, SimError> {
        let (w, h) = self.rig.resolution();
        let rest: Vec<f64> = (0..w * h)
            .map(|i| {
                let (u, v) = (i % w, i / w);
                self.rig.rest_distance(u, v) * self.rig.intrinsics().ray(u as f64, v as f64).normalize().z
            })
            .collect();
        self.finish(&rest, noise_sigma, seed, 2 + finger.index() as u64)
    }

    fn finish(&self, depth: &[f64], sigma: f64, seed: u64, stream: u64) -> Result<DepthImage, SimError> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(SimError::InvalidArgument(format!("noise sigma must be non-negative, got {sigma}")));
        }
        let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
        let (w, h) = self.rig.resolution();
        let data = par::map_range(w * h, |i| {
            let mut z = depth[i];
            if z == 0.0 {
                return INVALID_DEPTH;
            }
            if sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, i as u64));
                z += normal.sample(&mut rng);
            }
            if is_valid_depth(z) {
                z as f32
            } else {
                INVALID_DEPTH
            }
        });
        Ok(DepthImage::new(w, h, data, *self.rig.intrinsics())?)
    }

    /// Pressure from the displaced membrane volume, kPa.
    pub fn simulate_pressure(
        &self,
        finger: Finger,
        field: &ProximityField,
        object_pose: &RigidPose,
        state: &GripperState,
    ) -> Result<f64, SimError> {
        let layers = self.render_layers(finger, field, object_pose, state)?;
        Ok(self.pressure_from(&layers))
    }

    fn pressure_from(&self, layers: &RenderLayers) -> f64 {
        let k = self.rig.intrinsics();
        let mut v = 0.0;
        for (i, &ind) in layers.indentation.iter().enumerate() {
            if ind > 0.0 {
                let z = layers.depth[i] + ind;
                v += ind * (z / k.fx) * (z / k.fy);
            }
        }
        // m³ -> litres
        self.config.pressure_gain * v * 1e3
    }

    /// Warps an IR pattern by a per-pixel displacement field.
    pub fn render_ir(&self, pattern: &IrImage, displacement: &FlowField) -> Result<IrImage, SimError> {
        let (w, h) = self.rig.resolution();
        if pattern.width != w || pattern.height != h {
            return Err(SimError::DimensionMismatch);
        }
        warp_ir(pattern, displacement)
    }

    /// Renders both fingers and their references; pressures are filled into
    /// the returned state. `object_pose` is `T <- G`.
    pub fn synthesize_grasp_scene(
        &self,
        field: &ProximityField,
        object_pose: &RigidPose,
        state: &GripperState,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<GraspScene, SimError> {
        let mut state = *state;
        let mut images = Vec::with_capacity(2);
        let mut refs = Vec::with_capacity(2);
        let mut counts = [0usize; 2];
        for f in Finger::BOTH {
            let layers = self.render_layers(f, field, object_pose, &state)?;
            counts[f.index()] = layers.contact.count();
            state.pressure[f.index()] = self.pressure_from(&layers);
            images.push(self.finish(&layers.depth, noise_sigma, seed, f.index() as u64)?);
            refs.push(self.render_reference(f, noise_sigma, seed)?);
        }
        if counts == [0, 0] {
            return Err(SimError::NoContact);
        }
        let (right, left) = (images.pop().unwrap(), images.pop().unwrap());
        let (right_reference, left_reference) = (refs.pop().unwrap(), refs.pop().unwrap());
        Ok(GraspScene {
            left,
            right,
            left_reference,
            right_reference,
            truth: object_pose.inverse(),
            state,
            contact_pixels: counts,
        })
    }
}

/// Integral of `max(rest - deformed, 0)` times the pixel footprint at rest
/// depth, m³. Invalid pixels in either image contribute nothing.
pub fn displaced_volume(rest: &DepthImage, deformed: &DepthImage) -> Result<f64, SimError> {
    if rest.width != deformed.width || rest.height != deformed.height {
        return Err(SimError::DimensionMismatch);
    }
    let k = rest.intrinsics;
    let mut v = 0.0;
    for y in 0..rest.height {
        for x in 0..rest.width {
            if let (Some(r), Some(d)) = (rest.depth(x, y), deformed.depth(x, y)) {
                v += (r - d).max(0.0) * (r / k.fx) * (r / k.fy);
            }
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldNode;
    use nalgebra::Vector3;

    fn far_field() -> ProximityField {
        ProximityField::new(FieldNode::sphere(0.01)).unwrap()
    }

    fn far_pose() -> RigidPose {
        RigidPose::from_translation(Vector3::new(10.0, 0.0, 0.0))
    }

    #[test]
    fn empty_scene_is_rest_membrane() {
        let sim = Simulator::default();
        let s = GripperState::new(0.07).unwrap();
        let img = sim.render_depth(Finger::Left, &far_field(), &far_pose(), &s, 0.0, 1).unwrap();
        assert_eq!(&img, sim.rig.rest_depth());
        let noisy = sim.render_depth(Finger::Left, &far_field(), &far_pose(), &s, 5e-4, 1).unwrap();
        assert_ne!(&noisy, sim.rig.rest_depth());
        assert!(noisy.data.iter().all(|&d| d == 0.0 || is_valid_depth(d as f64)));
        assert!(matches!(
            sim.synthesize_grasp_scene(&far_field(), &far_pose(), &s, 0.0, 1),
            Err(SimError::NoContact)
        ));
    }

    #[test]
    fn sphere_front_matches_closed_form() {
        let sim = Simulator::default();
        let s = GripperState::new(0.07).unwrap();
        let cam = sim.rig.camera_pose(Finger::Left, s.width).unwrap();
        let r = 0.02;
        let depth_c = 0.055 + r - 0.005;
        let centre_t = cam.transform_point(&Vector3::new(0.0, 0.0, depth_c));
        let field = ProximityField::new(FieldNode::sphere(r)).unwrap();
        let img = sim
            .render_depth(Finger::Left, &field, &RigidPose::from_translation(centre_t), &s, 0.0, 0)
            .unwrap();
        let k = sim.rig.intrinsics();
        let c = Vector3::new(0.0, 0.0, depth_c);
        let mut expect = f64::INFINITY;
        for v in 0..img.height {
            for u in 0..img.width {
                let d = k.ray(u as f64, v as f64).normalize();
                let b = d.dot(&c);
                let disc = b * b - c.norm_squared() + r * r;
                if disc >= 0.0 {
                    expect = expect.min((b - disc.sqrt()) * d.z);
                }
            }
        }
        let got = img.data.iter().filter(|&&d| d > 0.0).fold(f64::INFINITY, |m, &d| m.min(d as f64));
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
        assert!((expect - (depth_c - r)).abs() < 1e-5);
    }

    #[test]
    fn stable_grasp_examples() {
        let mut s = GripperState::new(0.05).unwrap();
        assert!(!stable_grasp(&s, 1.0, 0.01));
        s.pressure = [2.0, 2.0];
        assert!(stable_grasp(&s, 1.0, 0.01));
        s.finger_velocity = 0.02;
        assert!(!stable_grasp(&s, 1.0, 0.01));
        s.finger_velocity = 0.0;
        s.pressure = [2.0, 0.5];
        assert!(!stable_grasp(&s, 1.0, 0.01));
        assert!(GripperState::new(0.2).is_err());
    }

    #[test]
    fn uniform_block_volume() {
        let k = crate::tactile::PinholeModel::centered(64, 64, 200.0);
        let rest = DepthImage::filled(64, 64, 0.05, k);
        let mut def = rest.clone();
        for v in 10..50 {
            for u in 10..50 {
                def.data[v * 64 + u] = 0.045;
            }
        }
        let area = (0.05f32 as f64 / 200.0).powi(2);
        let vol = displaced_volume(&rest, &def).unwrap();
        let rel = (vol - 1600.0 * area * 0.005).abs() / vol;
        assert!(rel < 1e-6, "{rel}");
        assert_eq!(displaced_volume(&rest, &rest).unwrap(), 0.0);
    }

    #[test]
    fn centred_cylinder_scene_is_symmetric_and_deterministic() {
        let sim = Simulator::default();
        let s = GripperState::new(0.07).unwrap();
        let field = ProximityField::new(FieldNode::cylinder(0.04, 0.1)).unwrap();
        let pose = RigidPose::from_translation(Vector3::new(0.0, 0.0, 0.045));
        let a = sim.synthesize_grasp_scene(&field, &pose, &s, 5e-4, 9).unwrap();
        let b = sim.synthesize_grasp_scene(&field, &pose, &s, 5e-4, 9).unwrap();
        assert_eq!(a, b);
        let [l, r] = a.contact_pixels;
        assert!(l > 100 && r > 100);
        assert!((l as f64 - r as f64).abs() <= 0.1 * l.max(r) as f64);
        assert!(a.state.pressure[0] > 0.0 && a.state.pressure[1] > 0.0);
        assert_eq!(a.truth, pose.inverse());
    }

    #[test]
    fn deeper_press_raises_pressure() {
        let sim = Simulator::default();
        let field = ProximityField::new(FieldNode::cuboid(0.03, 0.03, 0.03)).unwrap();
        let pose = RigidPose::from_translation(Vector3::new(0.0, 0.0, 0.0));
        let mut last = 0.0;
        for w in [0.064, 0.062, 0.058] {
            let s = GripperState::new(w).unwrap();
            let p = sim.simulate_pressure(Finger::Left, &field, &pose, &s).unwrap();
            assert!(p > last, "{p} <= {last}");
            last = p;
        }
    }
}
