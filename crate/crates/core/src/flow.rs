//! Dense optical flow by polynomial expansion (Farnebäck).
//!
//! Each image is locally approximated by a quadratic `x'Ax + b'x + c`
//! fitted with Gaussian-weighted least squares. For a displacement `d`
//! between the two expansions, `A d = -(b2 - b1) / 2`; the per-pixel systems
//! are averaged over a window and solved, coarse to fine over a Gaussian
//! pyramid, iterating with the current estimate as prior.

use crate::par;
use crate::tactile::IrImage;
use nalgebra::{SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("invalid flow config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub pyramid_levels: usize,
    pub pyramid_scale: f64,
    /// Side of the averaging window, pixels (odd).
    pub window: usize,
    pub iterations_per_level: usize,
    /// Side of the polynomial-expansion neighbourhood, pixels (odd, >= 3).
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            pyramid_scale: 0.5,
            window: 15,
            iterations_per_level: 3,
            poly_n: 5,
            poly_sigma: 1.1,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: &str| Err(FlowError::InvalidConfig(m.to_string()));
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return bad("pyramid_scale must lie in (0, 1)");
        }
        if self.window % 2 == 0 {
            return bad("window must be odd");
        }
        if self.poly_n % 2 == 0 || self.poly_n < 3 {
            return bad("poly_n must be odd and >= 3");
        }
        if self.pyramid_levels == 0 || self.iterations_per_level == 0 {
            return bad("pyramid_levels and iterations_per_level must be >= 1");
        }
        if !(self.poly_sigma > 0.0) {
            return bad("poly_sigma must be positive");
        }
        Ok(())
    }
}

/// Row-major per-pixel displacement, pixels, from reference to current.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub vectors: Vec<Vector2<f64>>,
    /// Set when an input had no texture to track.
    pub low_confidence: bool,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, vectors: vec![Vector2::zeros(); width * height], low_confidence: false }
    }

    pub fn constant(width: usize, height: usize, v: Vector2<f64>) -> Self {
        Self { width, height, vectors: vec![v; width * height], low_confidence: false }
    }

    /// Builds a field from a function of pixel coordinates `(u, v)`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(f64, f64) -> Vector2<f64>) -> Self {
        let mut vectors = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                vectors.push(f(u as f64, v as f64));
            }
        }
        Self { width, height, vectors, low_confidence: false }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Vector2<f64> {
        self.vectors[v * self.width + u]
    }
}

#[derive(Clone, Debug)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn from_ir(img: &IrImage) -> Self {
        Plane { w: img.width, h: img.height, data: img.data.iter().map(|&v| v as f64).collect() }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.w + x]
    }

    fn variance(&self) -> f64 {
        let n = self.data.len().max(1) as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        self.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }
}

/// Reflect-101 border index.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

fn gaussian(sigma: f64, radius: usize) -> Vec<f64> {
    let k: Vec<f64> =
        (-(radius as isize)..=radius as isize).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable correlation with reflected borders over `channels` interleaved
/// values per pixel.
fn separable<const C: usize>(w: usize, h: usize, src: &[[f64; C]], kx: &[f64], ky: &[f64]) -> Vec<[f64; C]> {
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let rows = par::map_range(w * h, |i| {
        let (x, y) = ((i % w) as isize, i / w);
        let mut acc = [0.0; C];
        for (k, wk) in kx.iter().enumerate() {
            let s = &src[y * w + reflect(x + k as isize - rx, w)];
            for c in 0..C {
                acc[c] += wk * s[c];
            }
        }
        acc
    });
    par::map_range(w * h, |i| {
        let (x, y) = (i % w, (i / w) as isize);
        let mut acc = [0.0; C];
        for (k, wk) in ky.iter().enumerate() {
            let s = &rows[reflect(y + k as isize - ry, h) * w + x];
            for c in 0..C {
                acc[c] += wk * s[c];
            }
        }
        acc
    })
}

fn blur(p: &Plane, sigma: f64) -> Plane {
    let radius = ((sigma * 2.5).round() as usize).max(1);
    let k = gaussian(sigma, radius);
    let src: Vec<[f64; 1]> = p.data.iter().map(|&v| [v]).collect();
    let out = separable(p.w, p.h, &src, &k, &k);
    Plane { w: p.w, h: p.h, data: out.into_iter().map(|v| v[0]).collect() }
}

#[inline]
fn bilinear<const C: usize>(w: usize, h: usize, src: &[[f64; C]], x: f64, y: f64) -> [f64; C] {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let mut out = [0.0; C];
    let (a, b, c, d) = (&src[y0 * w + x0], &src[y0 * w + x1], &src[y1 * w + x0], &src[y1 * w + x1]);
    for k in 0..C {
        out[k] = (1.0 - fy) * ((1.0 - fx) * a[k] + fx * b[k]) + fy * ((1.0 - fx) * c[k] + fx * d[k]);
    }
    out
}

fn resize<const C: usize>(w: usize, h: usize, src: &[[f64; C]], nw: usize, nh: usize) -> Vec<[f64; C]> {
    let (sx, sy) = (w as f64 / nw as f64, h as f64 / nh as f64);
    par::map_range(nw * nh, |i| {
        let (x, y) = ((i % nw) as f64, (i / nw) as f64);
        bilinear(w, h, src, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5)
    })
}

/// Per-pixel quadratic coefficients `[bx, by, axx, ayy, axy]`.
type Poly = [f64; 5];

fn poly_expansion(p: &Plane, n: usize, sigma: f64) -> Vec<Poly> {
    let r = (n / 2) as isize;
    let g: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let xs: Vec<f64> = (-r..=r).map(|i| i as f64).collect();

    // Gram matrix of the basis [1, x, y, x², y², xy] under the window weights.
    let mut gram = SMatrix::<f64, 6, 6>::zeros();
    for (iy, y) in xs.iter().enumerate() {
        for (ix, x) in xs.iter().enumerate() {
            let b = SVector::<f64, 6>::from([1.0, *x, *y, x * x, y * y, x * y]);
            gram.ger(g[ix] * g[iy], &b, &b, 1.0);
        }
    }
    let inv = gram.try_inverse().expect("polynomial basis Gram matrix is positive definite");

    let k0 = g.clone();
    let k1: Vec<f64> = g.iter().zip(&xs).map(|(a, x)| a * x).collect();
    let k2: Vec<f64> = g.iter().zip(&xs).map(|(a, x)| a * x * x).collect();
    let (w, h) = (p.w, p.h);
    let rows = par::map_range(w * h, |i| {
        let (x, y) = ((i % w) as isize, i / w);
        let mut acc = [0.0; 3];
        for k in 0..k0.len() {
            let f = p.at(reflect(x + k as isize - r, w), y);
            acc[0] += k0[k] * f;
            acc[1] += k1[k] * f;
            acc[2] += k2[k] * f;
        }
        acc
    });
    par::map_range(w * h, |i| {
        let (x, y) = (i % w, (i / w) as isize);
        let mut m = SVector::<f64, 6>::zeros();
        for k in 0..k0.len() {
            let row = &rows[reflect(y + k as isize - r, h) * w + x];
            m[0] += k0[k] * row[0];
            m[1] += k0[k] * row[1];
            m[2] += k1[k] * row[0];
            m[3] += k0[k] * row[2];
            m[4] += k2[k] * row[0];
            m[5] += k1[k] * row[1];
        }
        let c = inv * m;
        [c[1], c[2], c[3], c[4], c[5]]
    })
}

/// One refinement pass: builds the averaged normal equations around the
/// current estimate and solves them per pixel.
fn refine(w: usize, h: usize, r1: &[Poly], r2: &[Poly], flow: &[Vector2<f64>], window: usize) -> Vec<Vector2<f64>> {
    let terms: Vec<[f64; 5]> = par::map_range(w * h, |i| {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let d = flow[i];
        let (sx, sy) = (x + d.x, y + d.y);
        if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
            return [0.0; 5];
        }
        let p1 = &r1[i];
        let p2 = bilinear(w, h, r2, sx, sy);
        let a11 = 0.5 * (p1[2] + p2[2]);
        let a22 = 0.5 * (p1[3] + p2[3]);
        let a12 = 0.25 * (p1[4] + p2[4]);
        let b1 = -0.5 * (p2[0] - p1[0]) + a11 * d.x + a12 * d.y;
        let b2 = -0.5 * (p2[1] - p1[1]) + a12 * d.x + a22 * d.y;
        [
            a11 * a11 + a12 * a12,
            a12 * (a11 + a22),
            a12 * a12 + a22 * a22,
            a11 * b1 + a12 * b2,
            a12 * b1 + a22 * b2,
        ]
    });
    let bx = vec![1.0 / window as f64; window];
    let avg = separable(w, h, &terms, &bx, &bx);
    avg.iter()
        .map(|t| {
            let eps = 1e-9;
            let (g11, g12, g22) = (t[0] + eps, t[1], t[2] + eps);
            let det = g11 * g22 - g12 * g12;
            Vector2::new((g22 * t[3] - g12 * t[4]) / det, (g11 * t[4] - g12 * t[3]) / det)
        })
        .collect()
}

const MIN_LEVEL_SIZE: usize = 16;
const MIN_VARIANCE: f64 = 1e-10;

/// Displacement of every reference pixel in `current`.
pub fn dense_flow(reference: &IrImage, current: &IrImage, config: &FlowConfig) -> Result<FlowField, FlowError> {
    config.validate()?;
    if reference.width != current.width || reference.height != current.height {
        return Err(FlowError::DimensionMismatch(reference.width, reference.height, current.width, current.height));
    }
    let (w, h) = (reference.width, reference.height);
    let img1 = Plane::from_ir(reference);
    let img2 = Plane::from_ir(current);
    if img1.variance() < MIN_VARIANCE || img2.variance() < MIN_VARIANCE || w < 2 || h < 2 {
        let mut f = FlowField::zeros(w, h);
        f.low_confidence = true;
        return Ok(f);
    }

    let mut sizes = vec![(w, h)];
    for k in 1..config.pyramid_levels {
        let s = config.pyramid_scale.powi(k as i32);
        let (lw, lh) = ((w as f64 * s).round() as usize, (h as f64 * s).round() as usize);
        if lw.min(lh) < MIN_LEVEL_SIZE {
            break;
        }
        sizes.push((lw, lh));
    }

    let mut flow: Vec<Vector2<f64>> = Vec::new();
    let mut prev = (0, 0);
    for k in (0..sizes.len()).rev() {
        let (lw, lh) = sizes[k];
        let (l1, l2) = if k == 0 {
            (img1.clone(), img2.clone())
        } else {
            let sigma = (1.0 / config.pyramid_scale.powi(k as i32) - 1.0) * 0.5;
            let shrink = |p: &Plane| {
                let b = blur(p, sigma);
                let src: Vec<[f64; 1]> = b.data.iter().map(|&v| [v]).collect();
                let out = resize(w, h, &src, lw, lh);
                Plane { w: lw, h: lh, data: out.into_iter().map(|v| v[0]).collect() }
            };
            (shrink(&img1), shrink(&img2))
        };
        flow = if flow.is_empty() {
            vec![Vector2::zeros(); lw * lh]
        } else {
            let src: Vec<[f64; 2]> = flow.iter().map(|v| [v.x, v.y]).collect();
            let (fx, fy) = (lw as f64 / prev.0 as f64, lh as f64 / prev.1 as f64);
            resize(prev.0, prev.1, &src, lw, lh).into_iter().map(|v| Vector2::new(v[0] * fx, v[1] * fy)).collect()
        };
        let p1 = poly_expansion(&l1, config.poly_n, config.poly_sigma);
        let p2 = poly_expansion(&l2, config.poly_n, config.poly_sigma);
        for _ in 0..config.iterations_per_level {
            flow = refine(lw, lh, &p1, &p2, &flow, config.window);
        }
        prev = (lw, lh);
    }
    Ok(FlowField { width: w, height: h, vectors: flow, low_confidence: false })
}
