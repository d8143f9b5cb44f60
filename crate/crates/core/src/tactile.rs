//! Depth-image processing: deprojection, reference-difference contact
//! patches, cropping and mask cleanup.

use crate::geometry::{Frame, Point3, PointCloud};
use nalgebra::Vector3;
use thiserror::Error;

/// Default sensor resolution.
pub const SENSOR_WIDTH: usize = 224;
pub const SENSOR_HEIGHT: usize = 176;

/// Valid depth range of the internal sensor, meters.
pub const WORKING_RANGE: (f64, f64) = (0.04, 0.11);

/// Stored value of an invalid depth pixel.
pub const INVALID_DEPTH: f32 = 0.0;

pub const DEFAULT_DIFF_THRESHOLD: f64 = 0.002;
pub const DEFAULT_OPEN_RADIUS: usize = 1;

#[derive(Debug, Error, PartialEq)]
pub enum TactileError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PinholeModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl PinholeModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    /// Square pixels with the principal point at the image center.
    pub fn centered(width: usize, height: usize, focal: f64) -> Self {
        Self::new(focal, focal, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<(), TactileError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && (0.0..=width as f64).contains(&self.cx)
            && (0.0..=height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(TactileError::InvalidArgument(format!("bad intrinsics {self:?}")))
        }
    }

    /// Camera-frame point for pixel `(u, v)` at z-depth `depth`.
    #[inline]
    pub fn deproject(&self, u: f64, v: f64, depth: f64) -> Point3 {
        Vector3::new(depth * (u - self.cx) / self.fx, depth * (v - self.cy) / self.fy, depth)
    }

    /// Pixel coordinates and z-depth of a camera-frame point.
    #[inline]
    pub fn project(&self, p: &Point3) -> (f64, f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy, p.z)
    }

    /// Unnormalized ray direction with unit z.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

#[inline]
pub fn is_valid_depth(d: f64) -> bool {
    d.is_finite() && d >= WORKING_RANGE.0 && d <= WORKING_RANGE.1
}

/// Row-major z-depth raster in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    pub intrinsics: PinholeModel,
}

impl DepthImage {
    pub fn new(
        width: usize,
        height: usize,
        data: Vec<f32>,
        intrinsics: PinholeModel,
    ) -> Result<Self, TactileError> {
        if data.len() != width * height {
            return Err(TactileError::InvalidArgument(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data, intrinsics })
    }

    pub fn filled(width: usize, height: usize, value: f32, intrinsics: PinholeModel) -> Self {
        Self { width, height, data: vec![value; width * height], intrinsics }
    }

    /// Depth at pixel `(u, v)` if it lies inside the working range.
    #[inline]
    pub fn depth(&self, u: usize, v: usize) -> Option<f64> {
        let d = self.data[v * self.width + u] as f64;
        is_valid_depth(d).then_some(d)
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| is_valid_depth(d as f64)).count()
    }

    fn same_shape(&self, w: usize, h: usize) -> Result<(), TactileError> {
        if self.width == w && self.height == h {
            Ok(())
        } else {
            Err(TactileError::DimensionMismatch(self.width, self.height, w, h))
        }
    }
}

/// Row-major normalized intensity raster in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IrImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl IrImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, TactileError> {
        if data.len() != width * height {
            return Err(TactileError::InvalidArgument(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContactPatchMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl ContactPatchMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![true; width * height] }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, on: bool) {
        self.bits[v * self.width + u] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

fn deproject_where(img: &DepthImage, frame: Frame, keep: impl Fn(usize) -> bool) -> PointCloud {
    let mut points = Vec::new();
    for v in 0..img.height {
        for u in 0..img.width {
            if !keep(v * img.width + u) {
                continue;
            }
            if let Some(d) = img.depth(u, v) {
                points.push(img.intrinsics.deproject(u as f64, v as f64, d));
            }
        }
    }
    PointCloud::new(points, frame)
}

/// Back-projects every valid pixel into the camera frame `frame`.
pub fn deproject(img: &DepthImage, frame: Frame) -> PointCloud {
    deproject_where(img, frame, |_| true)
}

/// Marks pixels where the membrane moved toward the camera by more than
/// `threshold` meters relative to the contact-free `reference`.
pub fn difference_mask(
    current: &DepthImage,
    reference: &DepthImage,
    threshold: f64,
) -> Result<ContactPatchMask, TactileError> {
    reference.same_shape(current.width, current.height)?;
    if !(threshold > 0.0) {
        return Err(TactileError::InvalidArgument(format!("threshold must be positive, got {threshold}")));
    }
    let mut mask = ContactPatchMask::empty(current.width, current.height);
    for v in 0..current.height {
        for u in 0..current.width {
            if let (Some(c), Some(r)) = (current.depth(u, v), reference.depth(u, v)) {
                if r - c > threshold {
                    mask.set(u, v, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Deprojects only the masked pixels.
pub fn crop_to_patch(
    img: &DepthImage,
    mask: &ContactPatchMask,
    frame: Frame,
) -> Result<PointCloud, TactileError> {
    img.same_shape(mask.width, mask.height)?;
    Ok(deproject_where(img, frame, |i| mask.bits[i]))
}

fn disc_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Erosion (`all`) or dilation (any) with a disc; out-of-image neighbours are
/// ignored.
fn morph(mask: &ContactPatchMask, offsets: &[(isize, isize)], erode: bool) -> ContactPatchMask {
    let (w, h) = (mask.width as isize, mask.height as isize);
    let mut out = ContactPatchMask::empty(mask.width, mask.height);
    for v in 0..h {
        for u in 0..w {
            let mut hit = erode;
            for &(dx, dy) in offsets {
                let (x, y) = (u + dx, v + dy);
                if x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                let b = mask.bits[(y * w + x) as usize];
                if erode && !b {
                    hit = false;
                    break;
                }
                if !erode && b {
                    hit = true;
                    break;
                }
            }
            out.bits[(v * w + u) as usize] = hit;
        }
    }
    out
}

/// Binary opening with a disc of `open_radius` pixels; radius 0 is identity.
pub fn morphological_clean(mask: &ContactPatchMask, open_radius: usize) -> ContactPatchMask {
    if open_radius == 0 {
        return mask.clone();
    }
    let offsets = disc_offsets(open_radius);
    morph(&morph(mask, &offsets, true), &offsets, false)
}
