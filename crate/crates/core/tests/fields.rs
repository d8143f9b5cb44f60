mod common;

use bubble_core::{FieldNode, Frame, Point3, PointCloud, ProximityField, RigidPose};
use common::{fd_gradient, inside_cylinder};
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn point(range: f64) -> impl Strategy<Value = Point3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = RigidPose> {
    (point(0.05), -3.0..3.0f64, -1.5..1.5f64, -3.0..3.0f64)
        .prop_map(|(t, r, p, y)| RigidPose::new(t, UnitQuaternion::from_euler_angles(r, p, y)))
}

fn cyl() -> ProximityField {
    ProximityField::new(FieldNode::cylinder(0.04, 0.1)).unwrap()
}

#[test]
fn cylinder_surface_points_are_on_the_zero_set() {
    let f = cyl();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<Point3> = (0..10_000)
        .map(|i| match i % 3 {
            0 => {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                Point3::new(0.04 * a.cos(), 0.04 * a.sin(), rng.random_range(-0.05..0.05))
            }
            k => {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let rho = 0.04 * rng.random_range(0.0f64..1.0).sqrt();
                Point3::new(rho * a.cos(), rho * a.sin(), if k == 1 { 0.05 } else { -0.05 })
            }
        })
        .collect();
    let samples = f.eval_batch(&PointCloud::new(pts, Frame::Geometry)).unwrap();
    assert!(samples.iter().all(|s| s.value.abs() < 1e-9));
}

#[test]
fn non_finite_points_are_rejected() {
    assert!(cyl().eval(&Point3::new(f64::NAN, 0.0, 0.0)).is_err());
    assert!(cyl().eval(&Point3::new(0.0, f64::INFINITY, 0.0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sign_matches_inside_test(p in point(0.12)) {
        let v = cyl().value(&p);
        if inside_cylinder(&p, 0.04, 0.1) {
            prop_assert!(v <= 0.0);
        } else {
            prop_assert!(v > 0.0);
        }
    }

    #[test]
    fn exterior_gradient_is_unit_and_matches_differences(p in point(0.12)) {
        prop_assume!(!inside_cylinder(&p, 0.04, 0.1) && cyl().value(&p) > 1e-4);
        let f = cyl();
        let s = f.sample(&p);
        prop_assert!((s.gradient.norm() - 1.0).abs() < 1e-9);
        let fd = fd_gradient(|x| f.value(x), &p, 1e-6);
        prop_assert!((s.gradient - fd).norm() < 1e-5);
    }

    #[test]
    fn transform_is_an_isometry(pose in pose(), p in point(0.1)) {
        let child = FieldNode::cuboid(0.03, 0.02, 0.05);
        let plain = ProximityField::new(child.clone()).unwrap();
        let moved = ProximityField::new(FieldNode::transformed(pose, child)).unwrap();
        let a = plain.sample(&p);
        let b = moved.sample(&pose.transform_point(&p));
        prop_assert!((a.value - b.value).abs() < 1e-12);
        prop_assert!((pose.transform_vector(&a.gradient) - b.gradient).norm() < 1e-9);
    }

    #[test]
    fn union_is_pointwise_minimum(p in point(0.1), shift in point(0.05)) {
        let a = FieldNode::sphere(0.02);
        let b = FieldNode::transformed(RigidPose::from_translation(shift), FieldNode::cylinder(0.01, 0.04));
        let u = ProximityField::new(FieldNode::union(vec![a.clone(), b.clone()])).unwrap();
        let (fa, fb) = (ProximityField::new(a).unwrap(), ProximityField::new(b).unwrap());
        prop_assert_eq!(u.value(&p), fa.value(&p).min(fb.value(&p)));
    }

    #[test]
    fn sphere_is_radial(p in point(0.1), r in 0.005..0.05f64) {
        prop_assume!(p.norm() > 1e-6);
        let s = ProximityField::new(FieldNode::sphere(r)).unwrap().sample(&p);
        prop_assert!((s.value - (p.norm() - r)).abs() < 1e-12);
        prop_assert!((s.gradient - p.normalize()).norm() < 1e-12);
    }

    #[test]
    fn batch_is_mode_independent(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point3> = (0..2000).map(|_| Point3::from_fn(|_, _| rng.random_range(-0.1..0.1))).collect();
        let cloud = PointCloud::new(pts, Frame::Geometry);
        let f = cyl();
        let batch = f.eval_batch(&cloud).unwrap();
        for (p, s) in cloud.points.iter().zip(&batch) {
            prop_assert_eq!(*s, f.sample(p));
        }
    }
}

#[test]
fn transformed_union_evaluates_children_in_local_frames() {
    let off = RigidPose::new(Vector3::new(0.1, 0.0, 0.0), UnitQuaternion::from_euler_angles(0.0, 0.0, 1.0));
    let f = ProximityField::new(FieldNode::union(vec![
        FieldNode::sphere(0.01),
        FieldNode::transformed(off, FieldNode::sphere(0.01)),
    ]))
    .unwrap();
    let s = f.sample(&Point3::new(0.12, 0.0, 0.0));
    assert!((s.value - 0.01).abs() < 1e-12);
    assert!((s.gradient - Vector3::x()).norm() < 1e-12);
}
