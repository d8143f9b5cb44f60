//! File formats: point clouds, rasters, flow fields, poses, field trees and
//! `key=value` configs.

use crate::field::FieldNode;
use crate::flow::FlowField;
use crate::geometry::{Frame, PointCloud, RigidPose};
use crate::tactile::{DepthImage, IrImage, PinholeModel};
use nalgebra::{Vector2, Vector3};
use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

fn format_err(msg: impl Into<String>) -> IoError {
    IoError::Format(msg.into())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    String::from_utf8(read_file(path)?).map_err(|_| format_err(format!("{}: not UTF-8", path.display())))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

// ---- point clouds ----

pub fn write_point_cloud(mut w: impl Write, cloud: &PointCloud) -> Result<(), IoError> {
    writeln!(w, "BPC1 {} {}", cloud.len(), cloud.frame)?;
    for p in &cloud.points {
        writeln!(w, "{:.12e} {:.12e} {:.12e}", p.x, p.y, p.z)?;
    }
    Ok(())
}

pub fn read_point_cloud(r: impl BufRead) -> Result<PointCloud, IoError> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| format_err("empty point cloud file"))??;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 3 || h[0] != "BPC1" {
        return Err(format_err(format!("bad BPC1 header {header:?}")));
    }
    let count: usize = h[1].parse().map_err(|_| format_err("bad point count"))?;
    let frame: Frame = h[2].parse().map_err(|e| format_err(format!("{e}")))?;
    let mut points = Vec::with_capacity(count);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| format_err(format!("bad point line {line:?}")))?;
        if v.len() != 3 {
            return Err(format_err(format!("bad point line {line:?}")));
        }
        points.push(Vector3::new(v[0], v[1], v[2]));
    }
    if points.len() != count {
        return Err(format_err(format!("header says {count} points, found {}", points.len())));
    }
    Ok(PointCloud::new(points, frame))
}

// ---- rasters ----

fn write_raster(mut w: impl Write, magic: &str, width: usize, height: usize, data: &[f32]) -> Result<(), IoError> {
    write!(w, "{magic} {width} {height}\n")?;
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_raster(bytes: &[u8], magic: &str, per_pixel: usize) -> Result<(usize, usize, Vec<f32>), IoError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err(format!("missing {magic} header")))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| format_err("header is not ASCII"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 3 || h[0] != magic {
        return Err(format_err(format!("expected {magic} header, got {header:?}")));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|_| format_err(format!("bad dimension {s:?}")));
    let (width, height) = (dim(h[1])?, dim(h[2])?);
    let body = &bytes[nl + 1..];
    let n = width * height * per_pixel;
    if body.len() != n * 4 {
        return Err(format_err(format!("{magic} {width}x{height} needs {} bytes, found {}", n * 4, body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((width, height, data))
}

pub fn write_depth(w: impl Write, img: &DepthImage) -> Result<(), IoError> {
    write_raster(w, "BDI1", img.width, img.height, &img.data)
}

/// The format stores no intrinsics; the caller supplies them.
pub fn read_depth(bytes: &[u8], intrinsics: PinholeModel) -> Result<DepthImage, IoError> {
    let (w, h, data) = read_raster(bytes, "BDI1", 1)?;
    DepthImage::new(w, h, data, intrinsics).map_err(|e| format_err(e.to_string()))
}

pub fn write_ir(w: impl Write, img: &IrImage) -> Result<(), IoError> {
    write_raster(w, "BIR1", img.width, img.height, &img.data)
}

pub fn read_ir(bytes: &[u8]) -> Result<IrImage, IoError> {
    let (w, h, data) = read_raster(bytes, "BIR1", 1)?;
    IrImage::new(w, h, data).map_err(|e| format_err(e.to_string()))
}

pub fn write_flow(w: impl Write, flow: &FlowField) -> Result<(), IoError> {
    let data: Vec<f32> = flow.vectors.iter().flat_map(|v| [v.x as f32, v.y as f32]).collect();
    write_raster(w, "BFF1", flow.width, flow.height, &data)
}

pub fn read_flow(bytes: &[u8]) -> Result<FlowField, IoError> {
    let (w, h, data) = read_raster(bytes, "BFF1", 2)?;
    let mut f = FlowField::zeros(w, h);
    for (v, c) in f.vectors.iter_mut().zip(data.chunks_exact(2)) {
        *v = Vector2::new(c[0] as f64, c[1] as f64);
    }
    Ok(f)
}

// ---- poses ----

pub fn format_pose(pose: &RigidPose) -> String {
    let p = pose.params();
    format!("{:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}\n", p[0], p[1], p[2], p[3], p[4], p[5], p[6])
}

fn parse_numbers<const N: usize>(tokens: &[&str], what: &str) -> Result<[f64; N], IoError> {
    if tokens.len() != N {
        return Err(format_err(format!("{what}: expected {N} numbers, got {}", tokens.len())));
    }
    let mut out = [0.0; N];
    for (o, t) in out.iter_mut().zip(tokens) {
        *o = t.parse().map_err(|_| format_err(format!("{what}: bad number {t:?}")))?;
    }
    Ok(out)
}

/// `tx ty tz qw qx qy qz`; the quaternion is normalized.
pub fn parse_pose(text: &str) -> Result<RigidPose, IoError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let p = parse_numbers::<7>(&tokens, "pose")?;
    RigidPose::from_params(&p).map_err(|e| format_err(format!("pose: {e}")))
}

// ---- field trees ----

fn parse_assignments<'a>(tokens: &[&'a str], keys: &[&str], line: usize) -> Result<Vec<f64>, IoError> {
    let mut map = BTreeMap::new();
    for t in tokens {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| format_err(format!("line {line}: expected key=value, got {t:?}")))?;
        let v: f64 = v.parse().map_err(|_| format_err(format!("line {line}: bad number in {t:?}")))?;
        if map.insert(k, v).is_some() {
            return Err(format_err(format!("line {line}: duplicate key {k}")));
        }
    }
    let out = keys
        .iter()
        .map(|k| map.remove(k).ok_or_else(|| format_err(format!("line {line}: missing {k}="))))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(k) = map.keys().next() {
        return Err(format_err(format!("line {line}: unknown key {k}")));
    }
    Ok(out)
}

struct Line<'a> {
    number: usize,
    indent: usize,
    tokens: Vec<&'a str>,
}

fn parse_node(lines: &[Line], at: &mut usize) -> Result<FieldNode, IoError> {
    let line = &lines[*at];
    *at += 1;
    let n = line.number;
    let args = &line.tokens[1..];
    let children = |at: &mut usize| -> Result<Vec<FieldNode>, IoError> {
        let mut out = Vec::new();
        let child_indent = lines.get(*at).filter(|l| l.indent > line.indent).map(|l| l.indent);
        while let Some(ci) = child_indent {
            match lines.get(*at) {
                Some(l) if l.indent == ci => out.push(parse_node(lines, at)?),
                Some(l) if l.indent > line.indent => {
                    return Err(format_err(format!("line {}: inconsistent indentation", l.number)))
                }
                _ => break,
            }
        }
        Ok(out)
    };
    let leaf = |node: FieldNode, at: &mut usize| -> Result<FieldNode, IoError> {
        if lines.get(*at).is_some_and(|l| l.indent > line.indent) {
            return Err(format_err(format!("line {n}: primitives take no children")));
        }
        Ok(node)
    };
    match line.tokens[0] {
        "cylinder" => {
            let v = parse_assignments(args, &["r", "h"], n)?;
            leaf(FieldNode::cylinder(v[0], v[1]), at)
        }
        "sphere" => {
            let v = parse_assignments(args, &["r"], n)?;
            leaf(FieldNode::sphere(v[0]), at)
        }
        "box" => {
            let v = parse_assignments(args, &["hx", "hy", "hz"], n)?;
            leaf(FieldNode::cuboid(v[0], v[1], v[2]), at)
        }
        "transform" => {
            let p = parse_numbers::<7>(args, &format!("line {n}: transform"))?;
            let pose = RigidPose::from_params(&p).map_err(|e| format_err(format!("line {n}: {e}")))?;
            let mut c = children(at)?;
            if c.len() != 1 {
                return Err(format_err(format!("line {n}: transform needs exactly one child, got {}", c.len())));
            }
            Ok(FieldNode::transformed(pose, c.pop().unwrap()))
        }
        "union" => {
            if !args.is_empty() {
                return Err(format_err(format!("line {n}: union takes no arguments")));
            }
            let c = children(at)?;
            if c.is_empty() {
                return Err(format_err(format!("line {n}: empty union")));
            }
            Ok(FieldNode::union(c))
        }
        other => Err(format_err(format!("line {n}: unknown node {other:?}"))),
    }
}

/// Parses a field tree: one node per line, children indented deeper than
/// their parent. `#` starts a comment.
pub fn parse_field(text: &str) -> Result<FieldNode, IoError> {
    let lines: Vec<Line> = text
        .lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let body = raw.split('#').next().unwrap_or("");
            let tokens: Vec<&str> = body.split_whitespace().collect();
            (!tokens.is_empty()).then(|| Line {
                number: i + 1,
                indent: body.len() - body.trim_start().len(),
                tokens,
            })
        })
        .collect();
    if lines.is_empty() {
        return Err(format_err("empty field description"));
    }
    let mut at = 0;
    let root = parse_node(&lines, &mut at)?;
    if let Some(l) = lines.get(at) {
        return Err(format_err(format!("line {}: more than one root node", l.number)));
    }
    Ok(root)
}

pub fn format_field(node: &FieldNode) -> String {
    fn go(node: &FieldNode, depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        match node {
            FieldNode::Cylinder { radius, height } => out.push_str(&format!("{pad}cylinder r={radius:e} h={height:e}\n")),
            FieldNode::Sphere { radius } => out.push_str(&format!("{pad}sphere r={radius:e}\n")),
            FieldNode::Box { half_extents: h } => {
                out.push_str(&format!("{pad}box hx={:e} hy={:e} hz={:e}\n", h.x, h.y, h.z))
            }
            FieldNode::Transformed { pose, child } => {
                let p = pose.params();
                out.push_str(&format!(
                    "{pad}transform {:e} {:e} {:e} {:e} {:e} {:e} {:e}\n",
                    p[0], p[1], p[2], p[3], p[4], p[5], p[6]
                ));
                go(child, depth + 1, out);
            }
            FieldNode::Union(children) => {
                out.push_str(&format!("{pad}union\n"));
                for c in children {
                    go(c, depth + 1, out);
                }
            }
        }
    }
    let mut s = String::new();
    go(node, 0, &mut s);
    s
}

// ---- key=value configs ----

/// `key = value` lines; `#` comments and blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, IoError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format_err(format!("line {}: expected key=value", i + 1)))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(format_err(format!("line {}: duplicate key {}", i + 1, k.trim())));
        }
    }
    Ok(out)
}

/// Reads a whole stream into memory.
pub fn slurp(mut r: impl Read) -> Result<Vec<u8>, IoError> {
    let mut v = Vec::new();
    r.read_to_end(&mut v)?;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    #[test]
    fn point_cloud_round_trip() {
        let cloud = PointCloud::new(
            vec![Vector3::new(0.1, -0.2, 0.3), Vector3::new(1.0 / 3.0, 1e-9, -7.25)],
            Frame::Camera(1),
        );
        let mut buf = Vec::new();
        write_point_cloud(&mut buf, &cloud).unwrap();
        assert!(buf.starts_with(b"BPC1 2 C1\n"));
        let back = read_point_cloud(&buf[..]).unwrap();
        assert_eq!(back.frame, Frame::Camera(1));
        for (a, b) in back.points.iter().zip(&cloud.points) {
            assert!((a - b).norm() <= 1e-12 * b.norm());
        }
        assert!(read_point_cloud(&b"BPC1 3 T\n0 0 0\n"[..]).is_err());
    }

    #[test]
    fn raster_round_trips() {
        let k = PinholeModel::centered(3, 2, 100.0);
        let d = DepthImage::new(3, 2, vec![0.05, 0.0, 0.1, 0.06, 0.07, 0.08], k).unwrap();
        let mut buf = Vec::new();
        write_depth(&mut buf, &d).unwrap();
        assert!(buf.starts_with(b"BDI1 3 2\n"));
        assert_eq!(buf.len(), 9 + 24);
        assert_eq!(read_depth(&buf, k).unwrap(), d);
        assert!(read_depth(&buf[..buf.len() - 1], k).is_err());
        assert!(read_ir(&buf).is_err());

        let f = FlowField::from_fn(4, 3, |u, v| Vector2::new(u, -v * 0.5));
        let mut buf = Vec::new();
        write_flow(&mut buf, &f).unwrap();
        assert_eq!(read_flow(&buf).unwrap(), f);
    }

    #[test]
    fn pose_round_trip() {
        let p = RigidPose::new(
            Vector3::new(0.01, -0.02, 0.005),
            UnitQuaternion::from_euler_angles(0.1, 0.2, -0.3),
        );
        let back = parse_pose(&format_pose(&p)).unwrap();
        assert_eq!(back.translation, p.translation);
        for (a, b) in back.params().iter().zip(p.params()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(parse_pose("1 2 3").is_err());
        assert!(parse_pose("0 0 0 0 0 0 0").is_err());
    }

    #[test]
    fn field_tree_round_trip() {
        let text = "\
# mug
union
  cylinder r=0.04 h=0.1
  transform 0.05 0 0 1 0 0 0
    box hx=0.01 hy=0.005 hz=0.03
  sphere r=0.01
";
        let node = parse_field(text).unwrap();
        match &node {
            FieldNode::Union(c) => {
                assert_eq!(c.len(), 3);
                assert!(matches!(c[1], FieldNode::Transformed { .. }));
            }
            _ => panic!("expected union"),
        }
        assert_eq!(parse_field(&format_field(&node)).unwrap(), node);
    }

    #[test]
    fn field_parse_errors() {
        for bad in [
            "",
            "torus r=1",
            "cylinder r=0.04",
            "cylinder r=0.04 h=0.1 z=3",
            "sphere r=abc",
            "union",
            "transform 0 0 0 1 0 0 0",
            "sphere r=1\nsphere r=2",
            "sphere r=1\n  sphere r=2",
            "union\n    sphere r=1\n  sphere r=2",
        ] {
            assert!(parse_field(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn key_values() {
        let kv = parse_key_values("a = 1\n# c\n\nb=two # trailing\n").unwrap();
        assert_eq!(kv["a"], "1");
        assert_eq!(kv["b"], "two");
        assert!(parse_key_values("novalue").is_err());
        assert!(parse_key_values("a=1\na=2").is_err());
    }
}
