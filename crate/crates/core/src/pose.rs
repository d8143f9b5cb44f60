//! In-hand pose estimation against a proximity field.
//!
//! The estimate `theta` parameterizes the transform that maps tool-frame
//! points into the object geometry frame. The cost is the sum of squared
//! field values of the transformed cloud; it is minimized with damped
//! Gauss-Newton steps on the 7-vector `[t, q]`, projecting the quaternion
//! part of every step onto the tangent of the unit sphere, limiting it so the
//! raw update stays within [`MAX_CONSTRAINT_VIOLATION`] of unit norm, and
//! renormalizing.

use crate::field::ProximityField;
use crate::geometry::{Frame, Point3, PointCloud, RigidPose};
use crate::par;
use crate::rig::{CameraRig, Finger, RigError};
use nalgebra::{Quaternion, SMatrix, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

type Mat7 = SMatrix<f64, 7, 7>;
pub type Vec7 = SVector<f64, 7>;

/// Largest `| ||q + dq|| - 1 |` a single step may produce before
/// renormalization.
pub const MAX_CONSTRAINT_VIOLATION: f64 = 1e-3;

const MAX_REJECTIONS: usize = 12;
const MAX_DAMPING: f64 = 1e12;

#[derive(Debug, Error, PartialEq)]
pub enum PoseError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point cloud contains non-finite points")]
    NonFinite,
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("expected a cloud in frame {expected}, got {got}")]
    FrameMismatch { expected: Frame, got: Frame },
    #[error(transparent)]
    Rig(#[from] RigError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once the cost falls below this, m².
    pub cost_tolerance: f64,
    /// Relative step size below which the solver stops.
    pub step_tolerance: f64,
    /// First-order optimality (`max |grad|` per point) required to report
    /// convergence.
    pub gradient_tolerance: f64,
    pub damping_init: f64,
    /// Huber scale on residuals, meters. Zero disables robust weighting.
    pub robust_loss_scale: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            cost_tolerance: 1e-10,
            step_tolerance: 1e-8,
            gradient_tolerance: 1e-7,
            damping_init: 1e-4,
            robust_loss_scale: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), PoseError> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(PoseError::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        if self.max_iterations == 0 {
            return Err(PoseError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        pos("cost_tolerance", self.cost_tolerance)?;
        pos("step_tolerance", self.step_tolerance)?;
        pos("gradient_tolerance", self.gradient_tolerance)?;
        pos("damping_init", self.damping_init)?;
        if !(self.robust_loss_scale >= 0.0 && self.robust_loss_scale.is_finite()) {
            return Err(PoseError::InvalidConfig("robust_loss_scale must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateResult {
    pub pose: RigidPose,
    /// Solver objective at `pose`; equals [`pose_cost`] unless robust
    /// weighting is enabled.
    pub final_cost: f64,
    /// Accepted steps.
    pub iterations: usize,
    pub converged: bool,
    pub residual_rms: f64,
    /// `max |grad|` of the objective divided by the point count.
    pub optimality: f64,
}

fn check_cloud(cloud: &PointCloud) -> Result<(), PoseError> {
    if cloud.is_empty() {
        return Err(PoseError::EmptyCloud);
    }
    if !cloud.all_finite() {
        return Err(PoseError::NonFinite);
    }
    Ok(())
}

/// Sum of squared field values of the cloud mapped through `theta`.
pub fn pose_cost(field: &ProximityField, theta: &RigidPose, cloud: &PointCloud) -> Result<f64, PoseError> {
    check_cloud(cloud)?;
    let pts = &cloud.points;
    Ok(par::reduce_chunks(
        pts.len(),
        |r| pts[r].iter().map(|p| field.value(&theta.transform_point(p)).powi(2)).sum::<f64>(),
        |a, b| a + b,
    )
    .unwrap_or(0.0))
}

/// Residual and its derivative with respect to `[t, q]` at a unit
/// quaternion. The quaternion block is projected onto the tangent space, so
/// it is the exact derivative of `R(q / |q|)`.
#[inline]
fn residual_row(field: &ProximityField, theta: &RigidPose, p: &Point3) -> (f64, [f64; 7]) {
    let x = theta.transform_point(p);
    let s = field.sample(&x);
    let g = s.gradient;
    let q = theta.rotation.quaternion();
    let w = q.w;
    let v = q.imag();
    let jw = 2.0 * g.dot(&v.cross(p));
    let jv = 2.0 * w * p.cross(&g) + 2.0 * (v.dot(p) * g + g.dot(&v) * p - 2.0 * g.dot(p) * v);
    let radial = jw * w + jv.dot(&v);
    let jq = [jw - radial * w, jv.x - radial * v.x, jv.y - radial * v.y, jv.z - radial * v.z];
    (s.value, [g.x, g.y, g.z, jq[0], jq[1], jq[2], jq[3]])
}

/// Exact gradient of [`pose_cost`] with respect to `[tx, ty, tz, qw, qx, qy, qz]`.
pub fn pose_cost_gradient(
    field: &ProximityField,
    theta: &RigidPose,
    cloud: &PointCloud,
) -> Result<Vec7, PoseError> {
    check_cloud(cloud)?;
    let pts = &cloud.points;
    Ok(par::reduce_chunks(
        pts.len(),
        |r| {
            pts[r].iter().fold(Vec7::zeros(), |acc, p| {
                let (res, j) = residual_row(field, theta, p);
                acc + Vec7::from_column_slice(&j) * (2.0 * res)
            })
        },
        |a, b| a + b,
    )
    .unwrap_or_else(Vec7::zeros))
}

/// Gauss-Newton system at one pose.
struct Normal {
    objective: f64,
    squared: f64,
    hessian: Mat7,
    gradient: Vec7,
}

impl Normal {
    fn zero() -> Self {
        Normal { objective: 0.0, squared: 0.0, hessian: Mat7::zeros(), gradient: Vec7::zeros() }
    }

    fn add(mut self, o: Normal) -> Normal {
        self.objective += o.objective;
        self.squared += o.squared;
        self.hessian += o.hessian;
        self.gradient += o.gradient;
        self
    }

    fn optimality(&self, n: usize) -> f64 {
        self.gradient.amax() / n as f64
    }
}

/// Huber loss scaled to match `r²` in the quadratic zone, with its IRLS weight.
#[inline]
fn robust(r: f64, scale: f64) -> (f64, f64) {
    let a = r.abs();
    if scale <= 0.0 || a <= scale {
        (r * r, 1.0)
    } else {
        (2.0 * scale * a - scale * scale, scale / a)
    }
}

fn accumulate(field: &ProximityField, theta: &RigidPose, pts: &[Point3], scale: f64) -> Normal {
    par::reduce_chunks(
        pts.len(),
        |range| {
            let mut n = Normal::zero();
            for p in &pts[range] {
                let (r, j) = residual_row(field, theta, p);
                let (rho, w) = robust(r, scale);
                let j = Vec7::from_column_slice(&j);
                n.objective += rho;
                n.squared += r * r;
                n.gradient += j * (2.0 * w * r);
                n.hessian.ger(2.0 * w, &j, &j, 1.0);
            }
            n
        },
        Normal::add,
    )
    .unwrap_or_else(Normal::zero)
}

/// Damped step, tangent-projected and limited to the constraint budget.
fn solve_step(n: &Normal, lambda: f64, q: &Quaternion<f64>) -> Option<Vec7> {
    let max_diag = (0..7).map(|i| n.hessian[(i, i)]).fold(0.0, f64::max).max(1e-300);
    let mut a = n.hessian;
    for i in 0..7 {
        a[(i, i)] += lambda * n.hessian[(i, i)].max(1e-9 * max_diag);
    }
    let mut step = a.cholesky()?.solve(&(-n.gradient));
    let qv = nalgebra::Vector4::new(q.w, q.i, q.j, q.k);
    let mut dq = step.fixed_rows::<4>(3).into_owned();
    dq -= qv * qv.dot(&dq);
    // sqrt(1 + |dq|^2) - 1 < MAX_CONSTRAINT_VIOLATION
    let cap = ((1.0 + MAX_CONSTRAINT_VIOLATION).powi(2) - 1.0).sqrt() * 0.999;
    let norm = dq.norm();
    step.fixed_rows_mut::<4>(3).copy_from(&dq);
    if norm > cap {
        step *= cap / norm;
    }
    step.iter().all(|v| v.is_finite()).then_some(step)
}

fn apply_step(theta: &RigidPose, step: &Vec7) -> RigidPose {
    let q = theta.rotation.quaternion();
    let raw = Quaternion::new(q.w + step[3], q.i + step[4], q.j + step[5], q.k + step[6]);
    RigidPose::new(
        theta.translation + Vector3::new(step[0], step[1], step[2]),
        UnitQuaternion::new_normalize(raw),
    )
}

/// Local minimizer of the pose cost starting from `seed`.
pub fn estimate_pose(
    field: &ProximityField,
    cloud: &PointCloud,
    seed: &RigidPose,
    config: &SolverConfig,
) -> Result<EstimateResult, PoseError> {
    estimate_pose_traced(field, cloud, seed, config, |_, _| {})
}

/// [`estimate_pose`] that reports every accepted pose and its objective.
pub fn estimate_pose_traced(
    field: &ProximityField,
    cloud: &PointCloud,
    seed: &RigidPose,
    config: &SolverConfig,
    mut on_step: impl FnMut(&RigidPose, f64),
) -> Result<EstimateResult, PoseError> {
    check_cloud(cloud)?;
    config.validate()?;
    let pts = &cloud.points;
    let n = pts.len();
    let scale = config.robust_loss_scale;
    let mut theta = RigidPose::new(seed.translation, UnitQuaternion::new_normalize(*seed.rotation.quaternion()));
    let mut cur = accumulate(field, &theta, pts, scale);
    let mut lambda = config.damping_init;
    let mut iterations = 0;
    let mut converged = false;

    loop {
        if cur.objective <= config.cost_tolerance || cur.optimality(n) <= config.gradient_tolerance {
            converged = true;
            break;
        }
        if iterations >= config.max_iterations {
            break;
        }
        let mut accepted = None;
        for _ in 0..MAX_REJECTIONS {
            if let Some(step) = solve_step(&cur, lambda, theta.rotation.quaternion()) {
                let cand = apply_step(&theta, &step);
                let next = accumulate(field, &cand, pts, scale);
                if next.objective <= cur.objective {
                    lambda = (lambda * 0.1).max(1e-12);
                    accepted = Some((step, cand, next));
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > MAX_DAMPING {
                break;
            }
        }
        let Some((step, cand, next)) = accepted else { break };
        iterations += 1;
        let theta_norm = Vec7::from_column_slice(&theta.params()).norm();
        theta = cand;
        cur = next;
        on_step(&theta, cur.objective);
        if step.norm() <= config.step_tolerance * (theta_norm + config.step_tolerance) {
            converged = cur.objective <= config.cost_tolerance || cur.optimality(n) <= config.gradient_tolerance;
            break;
        }
    }

    Ok(EstimateResult {
        pose: theta,
        final_cost: cur.objective,
        iterations,
        converged,
        residual_rms: (cur.squared / n as f64).sqrt(),
        optimality: cur.optimality(n),
    })
}

/// Six axis-aligned seeds at the cloud centroid: the object's local z axis
/// along each of `±x, ±y, ±z` of the tool frame.
pub fn cardinal_seeds(cloud: &PointCloud) -> Result<Vec<RigidPose>, PoseError> {
    check_cloud(cloud)?;
    let c = cloud.centroid().ok_or(PoseError::EmptyCloud)?;
    let z = Vector3::z();
    let targets = [Vector3::x(), -Vector3::x(), Vector3::y(), -Vector3::y(), Vector3::z(), -Vector3::z()];
    Ok(targets
        .iter()
        .map(|d| {
            let rot = UnitQuaternion::rotation_between(&z, d)
                .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
            RigidPose::new(c, rot).inverse()
        })
        .collect())
}

/// Multi-start from [`cardinal_seeds`], keeping the lowest final cost.
pub fn estimate_pose_cardinal(
    field: &ProximityField,
    cloud: &PointCloud,
    config: &SolverConfig,
) -> Result<EstimateResult, PoseError> {
    let mut best: Option<EstimateResult> = None;
    for seed in cardinal_seeds(cloud)? {
        let r = estimate_pose(field, cloud, &seed, config)?;
        if best.map_or(true, |b| r.final_cost < b.final_cost) {
            best = Some(r);
        }
    }
    best.ok_or(PoseError::EmptyCloud)
}

/// Continuous symmetry of the object used when scoring estimates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Symmetry {
    None,
    /// Rotation about `axis` (geometry frame, through the origin) is
    /// unobservable. `bidirectional` also identifies `axis` with `-axis`.
    Axis { axis: Vector3<f64>, bidirectional: bool },
}

impl Symmetry {
    /// Cylinder about local z, symmetric end to end.
    pub fn cylinder() -> Self {
        Symmetry::Axis { axis: Vector3::z(), bidirectional: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseDiscrepancy {
    /// Distance between object origins in the tool frame, meters.
    pub translation: f64,
    /// Radians.
    pub rotation: f64,
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Compares two `G <- T` poses through the object placement they imply in the
/// tool frame, modulo `symmetry`.
pub fn pose_error(estimate: &RigidPose, truth: &RigidPose, symmetry: Symmetry) -> PoseDiscrepancy {
    let (pe, pt) = (estimate.inverse(), truth.inverse());
    let translation = (pe.translation - pt.translation).norm();
    let rotation = match symmetry {
        Symmetry::None => estimate.rotation.angle_to(&truth.rotation),
        Symmetry::Axis { axis, bidirectional } => {
            let a = pe.rotation * axis.normalize();
            let b = pt.rotation * axis.normalize();
            let ang = angle_between(&a, &b);
            if bidirectional {
                ang.min(std::f64::consts::PI - ang)
            } else {
                ang
            }
        }
    };
    PoseDiscrepancy { translation, rotation }
}

/// Maps both finger clouds into the tool frame at the given opening.
pub fn concatenate_grasp_cloud(
    left: &PointCloud,
    right: &PointCloud,
    gripper_width: f64,
    rig: &CameraRig,
) -> Result<PointCloud, PoseError> {
    for (cloud, finger) in [(left, Finger::Left), (right, Finger::Right)] {
        let expected = Frame::Camera(finger.index() as u8);
        if cloud.frame != expected {
            return Err(PoseError::FrameMismatch { expected, got: cloud.frame });
        }
    }
    let pl = rig.camera_pose(Finger::Left, gripper_width)?;
    let pr = rig.camera_pose(Finger::Right, gripper_width)?;
    let mut points = Vec::with_capacity(left.len() + right.len());
    points.extend(left.points.iter().map(|p| pl.transform_point(p)));
    points.extend(right.points.iter().map(|p| pr.transform_point(p)));
    Ok(PointCloud::new(points, Frame::Tool))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldNode;
    use approx::assert_relative_eq;

    fn cyl() -> ProximityField {
        ProximityField::new(FieldNode::cylinder(1.0, 2.0)).unwrap()
    }

    fn tool(points: Vec<Point3>) -> PointCloud {
        PointCloud::new(points, Frame::Tool)
    }

    #[test]
    fn cost_examples() {
        let c = tool(vec![Vector3::new(2.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 3.0)]);
        assert_relative_eq!(pose_cost(&cyl(), &RigidPose::identity(), &c).unwrap(), 5.0);
        let one = tool(vec![Vector3::new(0.0, 1.25, 0.0)]);
        assert_relative_eq!(pose_cost(&cyl(), &RigidPose::identity(), &one).unwrap(), 0.0625);
        assert_eq!(pose_cost(&cyl(), &RigidPose::identity(), &tool(vec![])), Err(PoseError::EmptyCloud));
    }

    #[test]
    fn surface_cloud_at_truth_is_stationary() {
        let truth = RigidPose::new(Vector3::new(0.1, -0.2, 0.3), UnitQuaternion::from_euler_angles(0.4, 0.2, -0.1));
        let placement = truth.inverse();
        let pts = (0..200)
            .map(|i| {
                let a = i as f64 * 0.37;
                let z = -0.9 + 1.8 * (i as f64 / 199.0);
                placement.transform_point(&Vector3::new(a.cos(), a.sin(), z))
            })
            .collect();
        let c = tool(pts);
        assert!(pose_cost(&cyl(), &truth, &c).unwrap() < 1e-12);
        assert!(pose_cost_gradient(&cyl(), &truth, &c).unwrap().amax() < 1e-8);
        let r = estimate_pose(&cyl(), &c, &truth, &SolverConfig::default()).unwrap();
        assert!(r.iterations <= 2 && r.converged);
        let e = pose_error(&r.pose, &truth, Symmetry::None);
        assert!(e.translation < 1e-15 && e.rotation < 1e-7);
    }

    #[test]
    fn face_offset_gradient_sign() {
        // 100 points on the +x face of a box, tool frame shifted by +delta in x
        let f = ProximityField::new(FieldNode::cuboid(1.0, 1.0, 1.0)).unwrap();
        let delta = 0.01;
        let pts: Vec<Point3> = (0..100)
            .map(|i| Vector3::new(1.0, -0.5 + (i % 10) as f64 * 0.1, -0.5 + (i / 10) as f64 * 0.1))
            .collect();
        let theta = RigidPose::from_translation(Vector3::new(delta, 0.0, 0.0));
        let g = pose_cost_gradient(&f, &theta, &tool(pts)).unwrap();
        assert_relative_eq!(g[0], 2.0 * 100.0 * delta, epsilon = 1e-10);
        assert_relative_eq!(g[1], 0.0, epsilon = 1e-10);
        assert_relative_eq!(g[2], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn pose_error_examples() {
        let truth = RigidPose::new(Vector3::new(0.01, 0.0, 0.02), UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3));
        let z = pose_error(&truth, &truth, Symmetry::None);
        assert_eq!(z.translation, 0.0);
        assert!(z.rotation < 1e-7);

        let spin = RigidPose::new(Vector3::zeros(), UnitQuaternion::from_euler_angles(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let e = pose_error(&spin.compose(&truth), &truth, Symmetry::cylinder());
        assert!(e.translation < 1e-15 && e.rotation < 1e-7);

        let pitch = RigidPose::new(Vector3::zeros(), UnitQuaternion::from_euler_angles(0.0, 10f64.to_radians(), 0.0));
        let e = pose_error(&pitch, &RigidPose::identity(), Symmetry::None);
        assert_relative_eq!(e.rotation, 0.174533, epsilon = 1e-6);
        assert_eq!(e.translation, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { max_iterations: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { step_tolerance: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn concatenate_checks_frames_and_width() {
        let rig = CameraRig::default();
        let l = PointCloud::empty(Frame::Camera(0));
        let r = PointCloud::empty(Frame::Camera(1));
        let c = concatenate_grasp_cloud(&l, &r, 0.07, &rig).unwrap();
        assert!(c.is_empty() && c.frame == Frame::Tool);
        assert!(matches!(concatenate_grasp_cloud(&r, &l, 0.07, &rig), Err(PoseError::FrameMismatch { .. })));
        assert!(matches!(concatenate_grasp_cloud(&l, &r, 0.2, &rig), Err(PoseError::Rig(_))));
    }

    #[test]
    fn cardinal_seeds_cover_axes() {
        let c = tool(vec![Vector3::new(0.0, 0.01, 0.02)]);
        let seeds = cardinal_seeds(&c).unwrap();
        assert_eq!(seeds.len(), 6);
        for s in &seeds {
            // cloud centroid maps to the object origin
            assert_relative_eq!(s.transform_point(&c.points[0]), Vector3::zeros(), epsilon = 1e-15);
        }
        let axes: Vec<_> = seeds.iter().map(|s| s.inverse().rotation * Vector3::z()).collect();
        assert_relative_eq!(axes[1], -Vector3::x(), epsilon = 1e-12);
        assert_relative_eq!(axes[5], -Vector3::z(), epsilon = 1e-12);
    }
}
