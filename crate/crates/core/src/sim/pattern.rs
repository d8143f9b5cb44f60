//! Pseudorandom dot patterns for shear tracking and their warping.

use super::SimError;
use crate::flow::FlowField;
use crate::tactile::IrImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Largest fraction of the surface the dots may cover.
pub const MAX_COVERAGE: f64 = 0.6;
const MAX_ATTEMPTS: usize = 2000;
const BACKGROUND: f64 = 0.9;
const INK: f64 = 0.1;
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DotPattern {
    /// Dots per mm².
    pub density: f64,
    /// mm.
    pub min_diameter: f64,
    pub max_diameter: f64,
    /// 0 places dots on a regular grid, 1 places them uniformly at random.
    pub randomness: f64,
    pub seed: u64,
}

impl Default for DotPattern {
    fn default() -> Self {
        Self { density: 0.5, min_diameter: 0.6, max_diameter: 1.0, randomness: 0.7, seed: 7 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dot {
    /// mm, from the top-left corner.
    pub center: (f64, f64),
    pub diameter: f64,
}

impl DotPattern {
    fn validate(&self) -> Result<(), SimError> {
        let ok = self.density > 0.0
            && self.density.is_finite()
            && self.min_diameter > 0.0
            && self.min_diameter <= self.max_diameter
            && self.max_diameter.is_finite()
            && (0.0..=1.0).contains(&self.randomness);
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidArgument(format!("bad dot pattern {self:?}")))
        }
    }

    /// Expected fraction of the surface covered by ink.
    pub fn coverage(&self) -> f64 {
        let (a, b) = (self.min_diameter, self.max_diameter);
        self.density * std::f64::consts::PI / 4.0 * (a * a + a * b + b * b) / 3.0
    }
}

/// Bucket grid for overlap queries.
struct Buckets {
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<usize>>,
}

impl Buckets {
    fn new(w: f64, h: f64, cell: f64) -> Self {
        let nx = ((w / cell).ceil() as usize).max(1);
        let ny = ((h / cell).ceil() as usize).max(1);
        Self { cell, nx, ny, cells: vec![Vec::new(); nx * ny] }
    }

    fn key(&self, x: f64, y: f64) -> (usize, usize) {
        (((x / self.cell) as usize).min(self.nx - 1), ((y / self.cell) as usize).min(self.ny - 1))
    }

    fn overlaps(&self, dots: &[Dot], c: (f64, f64), d: f64) -> bool {
        let (kx, ky) = self.key(c.0, c.1);
        for y in ky.saturating_sub(1)..(ky + 2).min(self.ny) {
            for x in kx.saturating_sub(1)..(kx + 2).min(self.nx) {
                for &i in &self.cells[y * self.nx + x] {
                    let o = &dots[i];
                    let min = 0.5 * (o.diameter + d);
                    if (o.center.0 - c.0).powi(2) + (o.center.1 - c.1).powi(2) < min * min {
                        return true;
                    }
                }
            }
        }
        false
    }

    fn insert(&mut self, c: (f64, f64), index: usize) {
        let (kx, ky) = self.key(c.0, c.1);
        self.cells[ky * self.nx + kx].push(index);
    }
}

/// Non-overlapping dots over a `width_mm × height_mm` sheet.
///
/// The count is `round(density · area)`. Each dot starts at its cell of a
/// regular grid and is pulled toward a uniform random position by
/// `randomness`; overlapping candidates are redrawn.
pub fn generate_dots(pattern: &DotPattern, width_mm: f64, height_mm: f64) -> Result<Vec<Dot>, SimError> {
    pattern.validate()?;
    if !(width_mm > 0.0 && height_mm > 0.0) {
        return Err(SimError::InvalidArgument("pattern area must be positive".into()));
    }
    if pattern.coverage() > MAX_COVERAGE {
        return Err(SimError::InfeasiblePattern(format!(
            "coverage {:.2} exceeds {MAX_COVERAGE}",
            pattern.coverage()
        )));
    }
    let n = (pattern.density * width_mm * height_mm).round() as usize;
    let nx = ((n as f64 * width_mm / height_mm).sqrt().round() as usize).max(1);
    let ny = n.div_ceil(nx).max(1);
    let (sx, sy) = (width_mm / nx as f64, height_mm / ny as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(pattern.seed);
    let diameters: Vec<f64> = (0..n)
        .map(|_| {
            if pattern.max_diameter > pattern.min_diameter {
                rng.random_range(pattern.min_diameter..=pattern.max_diameter)
            } else {
                pattern.min_diameter
            }
        })
        .collect();

    let mut dots: Vec<Dot> = Vec::with_capacity(n);
    let mut buckets = Buckets::new(width_mm, height_mm, pattern.max_diameter);
    for (i, &d) in diameters.iter().enumerate() {
        let grid = (((i % nx) as f64 + 0.5) * sx, ((i / nx) as f64 + 0.5) * sy);
        let r = pattern.randomness;
        let mut placed = None;
        for _ in 0..MAX_ATTEMPTS {
            let c = if r > 0.0 {
                let half = 0.5 * d;
                let ux = rng.random_range(half.min(width_mm / 2.0)..=(width_mm - half).max(width_mm / 2.0));
                let uy = rng.random_range(half.min(height_mm / 2.0)..=(height_mm - half).max(height_mm / 2.0));
                (grid.0 + r * (ux - grid.0), grid.1 + r * (uy - grid.1))
            } else {
                grid
            };
            if !buckets.overlaps(&dots, c, d) {
                placed = Some(c);
                break;
            }
            if r == 0.0 {
                break;
            }
        }
        let c = placed
            .ok_or_else(|| SimError::InfeasiblePattern(format!("could not place dot {i} of {n} without overlap")))?;
        buckets.insert(c, dots.len());
        dots.push(Dot { center: c, diameter: d });
    }
    Ok(dots)
}

/// Rasterizes a dot pattern at `resolution` pixels, `mm_per_pixel` each.
/// Dots are dark on a bright background with anti-aliased edges.
pub fn generate_pattern(
    pattern: &DotPattern,
    resolution: (usize, usize),
    mm_per_pixel: f64,
) -> Result<IrImage, SimError> {
    if !(mm_per_pixel > 0.0) {
        return Err(SimError::InvalidArgument("mm_per_pixel must be positive".into()));
    }
    let (w, h) = resolution;
    let dots = generate_dots(pattern, w as f64 * mm_per_pixel, h as f64 * mm_per_pixel)?;
    Ok(rasterize(&dots, resolution, mm_per_pixel))
}

pub fn rasterize(dots: &[Dot], (w, h): (usize, usize), mm_per_pixel: f64) -> IrImage {
    let mut coverage = vec![0.0f64; w * h];
    let step = 1.0 / SUPERSAMPLE as f64;
    for dot in dots {
        let (cx, cy) = (dot.center.0 / mm_per_pixel, dot.center.1 / mm_per_pixel);
        let rad = 0.5 * dot.diameter / mm_per_pixel;
        let (u0, u1) = ((cx - rad).floor().max(0.0) as usize, ((cx + rad).ceil() as usize).min(w));
        let (v0, v1) = ((cy - rad).floor().max(0.0) as usize, ((cy + rad).ceil() as usize).min(h));
        for v in v0..v1 {
            for u in u0..u1 {
                let mut hits = 0;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let x = u as f64 + (sx as f64 + 0.5) * step;
                        let y = v as f64 + (sy as f64 + 0.5) * step;
                        if (x - cx).powi(2) + (y - cy).powi(2) <= rad * rad {
                            hits += 1;
                        }
                    }
                }
                let c = &mut coverage[v * w + u];
                *c = (*c + hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64).min(1.0);
            }
        }
    }
    let data = coverage.iter().map(|c| (BACKGROUND - (BACKGROUND - INK) * c) as f32).collect();
    IrImage { width: w, height: h, data }
}

/// Inverse warp: `out(x) = pattern(x - displacement(x))`, bilinear, with
/// clamped borders.
pub fn warp_ir(pattern: &IrImage, displacement: &FlowField) -> Result<IrImage, SimError> {
    let (w, h) = (pattern.width, pattern.height);
    if displacement.width != w || displacement.height != h {
        return Err(SimError::DimensionMismatch);
    }
    let mut data = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let d = displacement.get(u, v);
            data.push(sample(pattern, u as f64 - d.x, v as f64 - d.y));
        }
    }
    Ok(IrImage { width: w, height: h, data })
}

fn sample(img: &IrImage, x: f64, y: f64) -> f32 {
    let (w, h) = (img.width, img.height);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let p = |u: usize, v: usize| img.get(u, v) as f64;
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    (top * (1.0 - fy) + bot * fy) as f32
}
