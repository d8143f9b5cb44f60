//! Shear displacement from a flow field, release monitoring and
//! tangential/torsional decomposition.

use crate::flow::FlowField;
use crate::tactile::ContactPatchMask;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this summed-flow norm (pixels) the direction is reported as zero.
pub const ZERO_DIRECTION_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ShearError {
    #[error("release monitor has no reference")]
    NotInitialized,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShearEstimate {
    /// Sum of flow vectors, pixels.
    pub raw_sum: [f64; 2],
    /// `raw_sum / |raw_sum|`, or zero when the sum vanishes.
    pub direction: [f64; 2],
    pub magnitude: f64,
    /// Pixels that contributed to the sum.
    pub pixels: usize,
}

impl ShearEstimate {
    fn from_sum(s: Vector2<f64>, pixels: usize) -> Self {
        let m = s.norm();
        let d = if m > ZERO_DIRECTION_EPS { s / m } else { Vector2::zeros() };
        Self { raw_sum: [s.x, s.y], direction: [d.x, d.y], magnitude: m, pixels }
    }
}

/// Which pixels of the flow field enter the sum.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShearRegion {
    /// Pixels closer than this to the image border are skipped.
    pub border: usize,
    pub mask: Option<ContactPatchMask>,
}

impl ShearRegion {
    pub fn interior(border: usize) -> Self {
        Self { border, mask: None }
    }
}

/// Sum of all flow vectors.
pub fn shear_displacement(flow: &FlowField) -> ShearEstimate {
    let s = flow.vectors.iter().fold(Vector2::zeros(), |a, v| a + v);
    ShearEstimate::from_sum(s, flow.vectors.len())
}

/// Sum over the pixels selected by `region`.
pub fn shear_displacement_in(flow: &FlowField, region: &ShearRegion) -> Result<ShearEstimate, ShearError> {
    if let Some(m) = &region.mask {
        if m.width != flow.width || m.height != flow.height {
            return Err(ShearError::InvalidArgument("mask dimensions differ from the flow field".into()));
        }
    }
    let b = region.border;
    let mut s = Vector2::zeros();
    let mut n = 0;
    for v in b..flow.height.saturating_sub(b) {
        for u in b..flow.width.saturating_sub(b) {
            if region.mask.as_ref().is_some_and(|m| !m.get(u, v)) {
                continue;
            }
            s += flow.get(u, v);
            n += 1;
        }
    }
    Ok(ShearEstimate::from_sum(s, n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReleaseEvent {
    /// Index of the triggering sample since the reference was set.
    pub sample_index: usize,
    pub magnitude: f64,
    pub effective_threshold: f64,
}

/// Latching threshold detector on shear magnitude.
///
/// The per-pixel threshold is scaled by the reference patch pixel count, so
/// it compares against summed flow of a patch that size.
#[derive(Clone, Debug)]
pub struct ReleaseMonitor {
    threshold: f64,
    reference_pixels: Option<usize>,
    samples: usize,
    fired: bool,
}

impl ReleaseMonitor {
    pub fn new(threshold: f64) -> Result<Self, ShearError> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(ShearError::InvalidArgument(format!("threshold must be positive, got {threshold}")));
        }
        Ok(Self { threshold, reference_pixels: None, samples: 0, fired: false })
    }

    /// Captures a new reference (after a stable grasp); clears the latch.
    pub fn set_reference(&mut self, patch_pixels: usize) {
        self.reference_pixels = Some(patch_pixels.max(1));
        self.samples = 0;
        self.fired = false;
    }

    pub fn effective_threshold(&self) -> Result<f64, ShearError> {
        self.reference_pixels.map(|n| self.threshold * n as f64).ok_or(ShearError::NotInitialized)
    }

    pub fn has_fired(&self) -> bool {
        self.fired
    }

    /// Returns the event on the first sample whose magnitude exceeds the
    /// threshold; later samples never fire until the next reference.
    pub fn observe(&mut self, estimate: &ShearEstimate) -> Result<Option<ReleaseEvent>, ShearError> {
        let limit = self.effective_threshold()?;
        let index = self.samples;
        self.samples += 1;
        if self.fired || estimate.magnitude <= limit {
            return Ok(None);
        }
        self.fired = true;
        Ok(Some(ReleaseEvent { sample_index: index, magnitude: estimate.magnitude, effective_threshold: limit }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorsionDecomposition {
    /// Mean flow, pixels.
    pub tangential: [f64; 2],
    /// Mean `cross(r, v) / |r|²` about the image centroid; equals the rotation
    /// angle for a small rigid rotation.
    pub torsional: f64,
}

pub fn torsion_decompose(flow: &FlowField) -> TorsionDecomposition {
    let c = Vector2::new((flow.width as f64 - 1.0) / 2.0, (flow.height as f64 - 1.0) / 2.0);
    let mut mean = Vector2::zeros();
    let mut torsion = 0.0;
    let mut n_t = 0usize;
    for v in 0..flow.height {
        for u in 0..flow.width {
            let f = flow.get(u, v);
            mean += f;
            let r = Vector2::new(u as f64, v as f64) - c;
            let r2 = r.norm_squared();
            if r2 > 0.0 {
                torsion += (r.x * f.y - r.y * f.x) / r2;
                n_t += 1;
            }
        }
    }
    let n = flow.vectors.len().max(1) as f64;
    mean /= n;
    TorsionDecomposition { tangential: [mean.x, mean.y], torsional: torsion / n_t.max(1) as f64 }
}
