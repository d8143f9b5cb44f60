//! Minimal raster drawing for inspection images.

use image::{Rgb, RgbImage};

pub fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Arrow from `from` along `(dx, dy)` with a two-stroke head.
pub fn arrow(img: &mut RgbImage, from: (f64, f64), (dx, dy): (f64, f64), color: Rgb<u8>) {
    let len = dx.hypot(dy);
    if len < 0.5 {
        img.put_pixel(from.0 as u32, from.1 as u32, color);
        return;
    }
    let tip = (from.0 + dx, from.1 + dy);
    line(img, from, tip, color);
    let (ux, uy) = (dx / len, dy / len);
    let head = (len * 0.3).clamp(2.0, 5.0);
    for s in [-1.0, 1.0] {
        let (hx, hy) = (-ux * 0.866 - s * uy * 0.5, -uy * 0.866 + s * ux * 0.5);
        line(img, tip, (tip.0 + head * hx, tip.1 + head * hy), color);
    }
}

pub fn save(img: &RgbImage, path: &std::path::Path) -> Result<(), crate::error::CliError> {
    img.save(path).map_err(|e| crate::error::CliError::Input(format!("{}: {e}", path.display())))
}
