//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use bubble_core::bench::{trial_setup, BenchConfig};
use bubble_core::pose::concatenate_grasp_cloud;
use bubble_core::tactile::{crop_to_patch, difference_mask, morphological_clean};
use bubble_core::{Frame, GripperState, Point3, PointCloud, ProximityField, RigidPose, Simulator};
use std::f64::consts::{PI, TAU};

/// Static 3-d tree for nearest-neighbour distance queries.
pub struct KdTree {
    pts: Vec<[f64; 3]>,
}

impl KdTree {
    pub fn new(mut pts: Vec<[f64; 3]>) -> Self {
        fn build(p: &mut [[f64; 3]], depth: usize) {
            if p.len() <= 1 {
                return;
            }
            let axis = depth % 3;
            let mid = p.len() / 2;
            p.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
            let (lo, hi) = p.split_at_mut(mid);
            build(lo, depth + 1);
            build(&mut hi[1..], depth + 1);
        }
        build(&mut pts, 0);
        Self { pts }
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn nearest_distance(&self, q: &[f64; 3]) -> f64 {
        fn go(p: &[[f64; 3]], depth: usize, q: &[f64; 3], best: &mut f64) {
            if p.is_empty() {
                return;
            }
            let axis = depth % 3;
            let mid = p.len() / 2;
            let c = &p[mid];
            let d2 = (c[0] - q[0]).powi(2) + (c[1] - q[1]).powi(2) + (c[2] - q[2]).powi(2);
            if d2 < *best {
                *best = d2;
            }
            let diff = q[axis] - c[axis];
            let (near, far) = if diff < 0.0 { (&p[..mid], &p[mid + 1..]) } else { (&p[mid + 1..], &p[..mid]) };
            go(near, depth + 1, q, best);
            if diff * diff < *best {
                go(far, depth + 1, q, best);
            }
        }
        let mut best = f64::INFINITY;
        go(&self.pts, 0, q, &mut best);
        best.sqrt()
    }
}

/// Points on a disc of radius `r` at height `z`, on concentric rings `s` apart.
fn disc(r: f64, z: f64, s: f64, out: &mut Vec<[f64; 3]>) {
    let rings = (r / s).ceil() as usize;
    out.push([0.0, 0.0, z]);
    for k in 1..=rings {
        let rho = r * k as f64 / rings as f64;
        let n = ((TAU * rho / s).round() as usize).max(1);
        for j in 0..n {
            let a = TAU * j as f64 / n as f64;
            out.push([rho * a.cos(), rho * a.sin(), z]);
        }
    }
}

/// Regular grid on the rectangle spanned by axes `a`, `b` at coordinate `c`
/// on axis `n`.
fn rect(ext: [f64; 3], (a, b, n): (usize, usize, usize), c: f64, s: f64, out: &mut Vec<[f64; 3]>) {
    let na = (2.0 * ext[a] / s).ceil() as usize;
    let nb = (2.0 * ext[b] / s).ceil() as usize;
    for i in 0..=na {
        for j in 0..=nb {
            let mut p = [0.0; 3];
            p[a] = -ext[a] + 2.0 * ext[a] * i as f64 / na as f64;
            p[b] = -ext[b] + 2.0 * ext[b] * j as f64 / nb as f64;
            p[n] = c;
            out.push(p);
        }
    }
}

/// About `n` surface samples of a z-axis cylinder; returns the samples and
/// their nominal spacing.
pub fn cylinder_samples(r: f64, h: f64, n: usize) -> (Vec<[f64; 3]>, f64) {
    let area = TAU * r * h + 2.0 * PI * r * r;
    let s = (area / n as f64).sqrt();
    let mut out = Vec::with_capacity(n + n / 10);
    let na = (TAU * r / s).round() as usize;
    let nz = (h / s).ceil() as usize;
    for i in 0..na {
        let a = TAU * i as f64 / na as f64;
        for j in 0..=nz {
            out.push([r * a.cos(), r * a.sin(), -h / 2.0 + h * j as f64 / nz as f64]);
        }
    }
    disc(r, h / 2.0, s, &mut out);
    disc(r, -h / 2.0, s, &mut out);
    (out, s)
}

pub fn sphere_samples(r: f64, n: usize) -> (Vec<[f64; 3]>, f64) {
    let s = (4.0 * PI * r * r / n as f64).sqrt();
    let golden = PI * (3.0 - 5f64.sqrt());
    let out = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            [r * rho * a.cos(), r * rho * a.sin(), r * z]
        })
        .collect();
    (out, s)
}

pub fn box_samples(e: [f64; 3], n: usize) -> (Vec<[f64; 3]>, f64) {
    let area = 8.0 * (e[0] * e[1] + e[1] * e[2] + e[0] * e[2]);
    let s = (area / n as f64).sqrt();
    let mut out = Vec::with_capacity(n + n / 10);
    for (a, b, k) in [(0, 1, 2), (0, 2, 1), (1, 2, 0)] {
        for sign in [-1.0, 1.0] {
            rect(e, (a, b, k), sign * e[k], s, &mut out);
        }
    }
    (out, s)
}

pub fn inside_cylinder(p: &Point3, r: f64, h: f64) -> bool {
    p.x.hypot(p.y) <= r && p.z.abs() <= h / 2.0
}

pub fn inside_box(p: &Point3, e: [f64; 3]) -> bool {
    (0..3).all(|i| p[i].abs() <= e[i])
}

/// Slab field without the exterior corner term: `vmax(|d| - b)`, with the
/// gradient of the active slab.
pub fn uncorrected_cylinder(p: &Point3, r: f64, h: f64) -> (f64, Point3) {
    let rho = p.x.hypot(p.y);
    let (qr, qz) = (rho - r, p.z.abs() - h / 2.0);
    if qr >= qz {
        let g = if rho > 0.0 { Point3::new(p.x / rho, p.y / rho, 0.0) } else { Point3::x() };
        (qr, g)
    } else {
        (qz, Point3::new(0.0, 0.0, p.z.signum()))
    }
}

/// Central differences of `f` at `p` with step `h`.
pub fn fd_gradient(f: impl Fn(&Point3) -> f64, p: &Point3, h: f64) -> Point3 {
    let mut g = Point3::zeros();
    for i in 0..3 {
        let mut a = *p;
        let mut b = *p;
        a[i] += h;
        b[i] -= h;
        g[i] = (f(&a) - f(&b)) / (2.0 * h);
    }
    g
}

/// Noiseless basin-bench style grasp: tool-frame patch cloud and `G <- T` truth.
pub fn grasp_cloud(sim: &Simulator, field: &ProximityField, cfg: &BenchConfig, trial: usize) -> (PointCloud, RigidPose, RigidPose) {
    let setup = trial_setup(cfg, trial);
    grasp_cloud_at(sim, field, &setup.object_pose, cfg.gripper_width, cfg.noise_sigma, trial as u64)
        .map(|(c, t)| (c, t, setup.seed_pose))
        .expect("grasp touches the membranes")
}

/// Scene at an explicit `T <- G` placement.
pub fn grasp_cloud_at(
    sim: &Simulator,
    field: &ProximityField,
    object_pose: &RigidPose,
    width: f64,
    sigma: f64,
    seed: u64,
) -> Option<(PointCloud, RigidPose)> {
    let state = GripperState::new(width).ok()?;
    let scene = sim.synthesize_grasp_scene(field, object_pose, &state, sigma, seed).ok()?;
    let mut clouds = Vec::new();
    for (i, (img, reference)) in [(&scene.left, &scene.left_reference), (&scene.right, &scene.right_reference)]
        .into_iter()
        .enumerate()
    {
        let mask = morphological_clean(&difference_mask(img, reference, 0.002).ok()?, 1);
        clouds.push(crop_to_patch(img, &mask, Frame::Camera(i as u8)).ok()?);
    }
    let cloud = concatenate_grasp_cloud(&clouds[0], &clouds[1], width, &sim.rig).ok()?;
    Some((cloud, scene.truth))
}
