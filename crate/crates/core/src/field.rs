//! Analytic proximity fields.
//!
//! Every primitive is evaluated through the same slab construction: with
//! per-axis penetrations `q = |d| - b`, the field is
//! `||max(q, 0)|| + vmax(min(q, 0))`. Outside the solid the first term is
//! the Euclidean distance to the nearest face, edge or corner, so exterior
//! gradients point away from that nearest feature and stay continuous across
//! the diagonal sectors around convex edges.
//!
//! Ties (medial axis, exact corner loci, equal union branches) resolve to the
//! first minimizing branch in traversal order.

use crate::geometry::{Point3, PointCloud, RigidPose};
use crate::par;
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
}

/// Field value (meters, signed) and its gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub value: f64,
    pub gradient: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FieldNode {
    /// Axis along local z, centered on the origin.
    Cylinder { radius: f64, height: f64 },
    Sphere { radius: f64 },
    Box { half_extents: Vector3<f64> },
    /// `pose` maps the child's frame into this node's frame.
    Transformed { pose: RigidPose, child: Box<FieldNode> },
    /// Pointwise minimum of the children.
    Union(Vec<FieldNode>),
}

impl FieldNode {
    pub fn cylinder(radius: f64, height: f64) -> Self {
        FieldNode::Cylinder { radius, height }
    }

    pub fn sphere(radius: f64) -> Self {
        FieldNode::Sphere { radius }
    }

    pub fn cuboid(hx: f64, hy: f64, hz: f64) -> Self {
        FieldNode::Box { half_extents: Vector3::new(hx, hy, hz) }
    }

    pub fn transformed(pose: RigidPose, child: FieldNode) -> Self {
        FieldNode::Transformed { pose, child: Box::new(child) }
    }

    pub fn union(children: Vec<FieldNode>) -> Self {
        FieldNode::Union(children)
    }

    fn validate(&self) -> Result<(), FieldError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(FieldError::InvalidField(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match self {
            FieldNode::Cylinder { radius, height } => {
                positive("cylinder radius", *radius)?;
                positive("cylinder height", *height)
            }
            FieldNode::Sphere { radius } => positive("sphere radius", *radius),
            FieldNode::Box { half_extents } => {
                half_extents.iter().try_for_each(|&h| positive("box half extent", h))
            }
            FieldNode::Transformed { pose, child } => {
                if !pose.is_finite() {
                    return Err(FieldError::InvalidField("non-finite transform".into()));
                }
                child.validate()
            }
            FieldNode::Union(children) => {
                if children.is_empty() {
                    return Err(FieldError::InvalidField("empty union".into()));
                }
                children.iter().try_for_each(FieldNode::validate)
            }
        }
    }

    fn sample(&self, p: &Point3) -> FieldSample {
        match self {
            FieldNode::Cylinder { radius, height } => cylinder_sample(p, *radius, *height),
            FieldNode::Sphere { radius } => sphere_sample(p, *radius),
            FieldNode::Box { half_extents } => box_sample(p, half_extents),
            FieldNode::Transformed { pose, child } => {
                let s = child.sample(&pose.inverse_transform_point(p));
                FieldSample { value: s.value, gradient: pose.transform_vector(&s.gradient) }
            }
            FieldNode::Union(children) => {
                let mut best = children[0].sample(p);
                for c in &children[1..] {
                    let s = c.sample(p);
                    if s.value < best.value {
                        best = s;
                    }
                }
                best
            }
        }
    }
}

/// A validated field tree. Immutable and safe to share across threads.
#[derive(Clone, Debug, PartialEq)]
pub struct ProximityField {
    root: FieldNode,
}

impl ProximityField {
    pub fn new(root: FieldNode) -> Result<Self, FieldError> {
        root.validate()?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &FieldNode {
        &self.root
    }

    pub fn eval(&self, p: &Point3) -> Result<FieldSample, FieldError> {
        check_finite(p)?;
        Ok(self.root.sample(p))
    }

    /// Unchecked evaluation for hot loops whose inputs were validated once.
    #[inline]
    pub fn sample(&self, p: &Point3) -> FieldSample {
        self.root.sample(p)
    }

    #[inline]
    pub fn value(&self, p: &Point3) -> f64 {
        self.root.sample(p).value
    }

    pub fn eval_batch(&self, cloud: &PointCloud) -> Result<Vec<FieldSample>, FieldError> {
        cloud.points.iter().try_for_each(check_finite)?;
        Ok(par::map_slice(&cloud.points, |p| self.root.sample(p)))
    }
}

fn check_finite(p: &Point3) -> Result<(), FieldError> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FieldError::InvalidArgument(format!("non-finite point {p:?}")))
    }
}

fn check_dim(name: &str, v: f64) -> Result<(), FieldError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(FieldError::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

/// Signed cylinder field; axis local z, half-height `h / 2` either side of
/// the origin.
pub fn eval_cylinder(p: &Point3, r: f64, h: f64) -> Result<f64, FieldError> {
    check_finite(p)?;
    check_dim("radius", r)?;
    check_dim("height", h)?;
    Ok(cylinder_sample(p, r, h).value)
}

pub fn eval_sphere(p: &Point3, radius: f64) -> Result<f64, FieldError> {
    check_finite(p)?;
    check_dim("radius", radius)?;
    Ok(sphere_sample(p, radius).value)
}

pub fn eval_box(p: &Point3, half_extents: &Vector3<f64>) -> Result<f64, FieldError> {
    check_finite(p)?;
    half_extents.iter().try_for_each(|&h| check_dim("half extent", h))?;
    Ok(box_sample(p, half_extents).value)
}

#[inline]
fn sign_or_pos(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Combines per-slab penetrations `q` with the spatial direction in which
/// each slab coordinate increases.
#[inline]
fn slab_sample<const N: usize>(q: &[f64; N], dirs: &[Vector3<f64>; N]) -> FieldSample {
    let mut sq = 0.0;
    for &qi in q {
        if qi > 0.0 {
            sq += qi * qi;
        }
    }
    if sq > 0.0 {
        let norm = sq.sqrt();
        let mut g = Vector3::zeros();
        for (qi, d) in q.iter().zip(dirs) {
            if *qi > 0.0 {
                g += d * (qi / norm);
            }
        }
        FieldSample { value: norm, gradient: g }
    } else {
        let mut k = 0;
        for i in 1..N {
            if q[i] > q[k] {
                k = i;
            }
        }
        FieldSample { value: q[k], gradient: dirs[k] }
    }
}

#[inline]
fn cylinder_sample(p: &Point3, r: f64, h: f64) -> FieldSample {
    let rho = (p.x * p.x + p.y * p.y).sqrt();
    let radial = if rho > 0.0 { Vector3::new(p.x / rho, p.y / rho, 0.0) } else { Vector3::x() };
    let axial = Vector3::new(0.0, 0.0, sign_or_pos(p.z));
    slab_sample(&[rho - r, p.z.abs() - 0.5 * h], &[radial, axial])
}

#[inline]
fn box_sample(p: &Point3, h: &Vector3<f64>) -> FieldSample {
    let q = [p.x.abs() - h.x, p.y.abs() - h.y, p.z.abs() - h.z];
    let dirs = [
        Vector3::new(sign_or_pos(p.x), 0.0, 0.0),
        Vector3::new(0.0, sign_or_pos(p.y), 0.0),
        Vector3::new(0.0, 0.0, sign_or_pos(p.z)),
    ];
    slab_sample(&q, &dirs)
}

#[inline]
fn sphere_sample(p: &Point3, radius: f64) -> FieldSample {
    let n = p.norm();
    let gradient = if n > 0.0 { p / n } else { Vector3::x() };
    FieldSample { value: n - radius, gradient }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;

    fn v(x: f64, y: f64, z: f64) -> Point3 {
        Vector3::new(x, y, z)
    }

    #[test]
    fn cylinder_examples() {
        assert_eq!(eval_cylinder(&v(0.0, 0.0, 0.0), 1.0, 2.0).unwrap(), -1.0);
        assert_eq!(eval_cylinder(&v(1.0, 0.0, 0.0), 1.0, 2.0).unwrap(), 0.0);
        assert_relative_eq!(
            eval_cylinder(&v(2.0, 0.0, 2.0), 1.0, 2.0).unwrap(),
            2f64.sqrt(),
            epsilon = 1e-15
        );
        assert_eq!(eval_cylinder(&v(0.0, 0.0, 3.0), 1.0, 2.0).unwrap(), 2.0);
    }

    #[test]
    fn sphere_and_box_examples() {
        assert_eq!(eval_sphere(&v(0.0, 0.0, 0.0), 1.0).unwrap(), -1.0);
        assert_eq!(eval_sphere(&v(2.0, 0.0, 0.0), 1.0).unwrap(), 1.0);
        assert_relative_eq!(eval_sphere(&v(1.0, 1.0, 1.0), 1.0).unwrap(), 3f64.sqrt() - 1.0);
        let h = v(1.0, 1.0, 1.0);
        assert_eq!(eval_box(&v(0.0, 0.0, 0.0), &h).unwrap(), -1.0);
        assert_relative_eq!(eval_box(&v(2.0, 2.0, 2.0), &h).unwrap(), 3f64.sqrt());
        assert_eq!(eval_box(&v(2.0, 0.0, 0.0), &h).unwrap(), 1.0);
    }

    #[test]
    fn rejects_non_finite_and_bad_dims() {
        assert!(matches!(
            eval_cylinder(&v(f64::NAN, 0.0, 0.0), 1.0, 1.0),
            Err(FieldError::InvalidArgument(_))
        ));
        assert!(eval_sphere(&v(0.0, f64::INFINITY, 0.0), 1.0).is_err());
        assert!(eval_box(&v(0.0, 0.0, 0.0), &v(1.0, 0.0, 1.0)).is_err());
        assert!(matches!(
            ProximityField::new(FieldNode::union(vec![])),
            Err(FieldError::InvalidField(_))
        ));
        assert!(ProximityField::new(FieldNode::cylinder(-1.0, 1.0)).is_err());
        let f = ProximityField::new(FieldNode::sphere(1.0)).unwrap();
        assert!(f.eval(&v(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn rim_corner_gradient() {
        let f = ProximityField::new(FieldNode::cylinder(1.0, 2.0)).unwrap();
        let s = f.eval(&v(2.0, 0.0, 2.0)).unwrap();
        let k = 1.0 / 2f64.sqrt();
        assert_relative_eq!(s.gradient, v(k, 0.0, k), epsilon = 1e-15);
    }

    #[test]
    fn union_takes_minimum() {
        let f = ProximityField::new(FieldNode::union(vec![
            FieldNode::sphere(1.0),
            FieldNode::transformed(RigidPose::from_translation(v(3.0, 0.0, 0.0)), FieldNode::sphere(1.0)),
        ]))
        .unwrap();
        assert_relative_eq!(f.eval(&v(1.5, 0.0, 0.0)).unwrap().value, 0.5);
        // exact tie resolves to the first child
        assert_relative_eq!(f.eval(&v(1.5, 0.0, 0.0)).unwrap().gradient, v(1.0, 0.0, 0.0));
        assert_relative_eq!(f.eval(&v(3.5, 0.0, 0.0)).unwrap().gradient, v(1.0, 0.0, 0.0));
    }

    #[test]
    fn tie_breaks_are_fixed() {
        // medial axis of the cylinder and the z = 0 plane
        let s = cylinder_sample(&v(0.0, 0.0, 0.0), 1.0, 4.0);
        assert_eq!(s.gradient, Vector3::x());
        let s = cylinder_sample(&v(0.0, 0.0, 3.0), 1.0, 2.0);
        assert_eq!(s.gradient, Vector3::z());
        let s = box_sample(&v(0.0, 0.0, 0.0), &v(1.0, 1.0, 1.0));
        assert_eq!(s.gradient, Vector3::x());
        let s = sphere_sample(&v(0.0, 0.0, 0.0), 1.0);
        assert_eq!(s.gradient, Vector3::x());
    }

    #[test]
    fn interior_gradient_follows_active_slab() {
        // radial penetration -0.2 beats axial -0.5
        let s = cylinder_sample(&v(0.0, 0.8, 0.5), 1.0, 2.0);
        assert_relative_eq!(s.value, -0.2, epsilon = 1e-15);
        assert_relative_eq!(s.gradient, v(0.0, 1.0, 0.0));
        let s = cylinder_sample(&v(0.1, 0.0, -0.9), 1.0, 2.0);
        assert_relative_eq!(s.value, -0.1, epsilon = 1e-15);
        assert_relative_eq!(s.gradient, v(0.0, 0.0, -1.0));
    }

    #[test]
    fn transformed_node_maps_gradient() {
        let pose = RigidPose::new(v(0.5, 0.0, 0.0), UnitQuaternion::from_euler_angles(0.0, 0.0, 0.5));
        let f = ProximityField::new(FieldNode::transformed(pose, FieldNode::cuboid(1.0, 2.0, 3.0))).unwrap();
        let local = v(3.0, 0.5, 0.2);
        let s = f.eval(&pose.transform_point(&local)).unwrap();
        let base = box_sample(&local, &v(1.0, 2.0, 3.0));
        assert_relative_eq!(s.value, base.value, epsilon = 1e-12);
        assert_relative_eq!(s.gradient, pose.transform_vector(&base.gradient), epsilon = 1e-12);
    }

    #[test]
    fn batch_matches_single() {
        let f = ProximityField::new(FieldNode::cylinder(1.0, 2.0)).unwrap();
        let cloud = PointCloud::new(vec![v(2.0, 0.0, 2.0), v(0.0, 0.0, 3.0)], crate::geometry::Frame::Geometry);
        let out = f.eval_batch(&cloud).unwrap();
        assert_eq!(out.len(), 2);
        for (p, s) in cloud.points.iter().zip(&out) {
            assert_eq!(*s, f.eval(p).unwrap());
        }
        let empty = PointCloud::empty(crate::geometry::Frame::Geometry);
        assert!(f.eval_batch(&empty).unwrap().is_empty());
    }
}
