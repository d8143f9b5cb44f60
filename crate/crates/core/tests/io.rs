use bubble_core::flow::FlowField;
use bubble_core::io::{
    format_field, format_pose, parse_field, parse_pose, read_depth, read_flow, read_ir, read_point_cloud, write_depth,
    write_flow, write_ir, write_point_cloud,
};
use bubble_core::{DepthImage, FieldNode, Frame, IrImage, PinholeModel, Point3, PointCloud, RigidPose};
use nalgebra::{UnitQuaternion, Vector2, Vector3};
use proptest::prelude::*;

fn small_k() -> PinholeModel {
    PinholeModel::centered(8, 6, 10.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pose_text_round_trips(t in prop::array::uniform3(-1.0..1.0f64), e in prop::array::uniform3(-3.0..3.0f64)) {
        let p = RigidPose::new(Vector3::from(t), UnitQuaternion::from_euler_angles(e[0], e[1], e[2]));
        let q = parse_pose(&format_pose(&p)).unwrap();
        for (a, b) in p.params().iter().zip(q.params()) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn point_cloud_round_trips(pts in prop::collection::vec(prop::array::uniform3(-1.0..1.0f64), 0..50), cam in 0u8..2) {
        let cloud = PointCloud::new(pts.into_iter().map(Point3::from).collect(), Frame::Camera(cam));
        let mut buf = Vec::new();
        write_point_cloud(&mut buf, &cloud).unwrap();
        let back = read_point_cloud(&buf[..]).unwrap();
        prop_assert_eq!(back.frame, cloud.frame);
        prop_assert_eq!(back.len(), cloud.len());
        for (a, b) in back.points.iter().zip(&cloud.points) {
            prop_assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
        }
    }

    #[test]
    fn rasters_round_trip_bit_exact(d in prop::collection::vec(0.0f32..0.2, 48), flow in prop::collection::vec(-9.0..9.0f64, 96)) {
        let img = DepthImage::new(8, 6, d.clone(), small_k()).unwrap();
        let mut buf = Vec::new();
        write_depth(&mut buf, &img).unwrap();
        prop_assert_eq!(read_depth(&buf, small_k()).unwrap().data, img.data);

        let ir = IrImage::new(8, 6, d).unwrap();
        let mut buf = Vec::new();
        write_ir(&mut buf, &ir).unwrap();
        prop_assert_eq!(read_ir(&buf).unwrap().data, ir.data);

        // flow is stored as f32
        let f = FlowField::from_fn(8, 6, |u, v| {
            let i = (v as usize * 8 + u as usize) * 2;
            Vector2::new(flow[i] as f32 as f64, flow[i + 1] as f32 as f64)
        });
        let mut buf = Vec::new();
        write_flow(&mut buf, &f).unwrap();
        prop_assert_eq!(read_flow(&buf).unwrap().vectors, f.vectors);
    }
}

#[test]
fn field_text_round_trips() {
    let node = FieldNode::union(vec![
        FieldNode::cylinder(0.04, 0.1),
        FieldNode::transformed(
            RigidPose::new(Vector3::new(0.0, 0.0, 0.07), UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3)),
            FieldNode::union(vec![FieldNode::sphere(0.01), FieldNode::cuboid(0.01, 0.02, 0.03)]),
        ),
    ]);
    let text = format_field(&node);
    let back = parse_field(&text).unwrap();
    assert_eq!(format_field(&back), text);
}

#[test]
fn truncated_rasters_are_rejected() {
    let img = DepthImage::filled(8, 6, 0.05, small_k());
    let mut buf = Vec::new();
    write_depth(&mut buf, &img).unwrap();
    assert!(read_depth(&buf[..buf.len() - 1], small_k()).is_err());
    assert!(read_ir(&buf).is_err());
    assert!(read_depth(b"BDI1 8\n", small_k()).is_err());
}
