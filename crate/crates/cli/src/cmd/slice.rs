use super::{load_field, out_dir, write_json};
use crate::config::Config;
use crate::draw;
use crate::error::CliError;
use crate::log::Log;
use crate::Common;
use bubble_core::Point3;
use clap::Args;
use image::{Rgb, RgbImage};
use serde_json::json;
use std::path::PathBuf;

#[derive(Args, Debug)]
pub struct SliceArgs {
    /// Field description file.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// `xy`, `xz` or `yz`.
    #[arg(long)]
    pub plane: Option<String>,
    /// Coordinate of the plane along its normal, meters.
    #[arg(long)]
    pub offset: Option<f64>,
    /// Half side of the square window, meters.
    #[arg(long)]
    pub extent: Option<f64>,
    /// Image side, pixels.
    #[arg(long)]
    pub resolution: Option<u32>,
    /// Arrow spacing, pixels.
    #[arg(long = "arrow-step")]
    pub arrow_step: Option<u32>,
}

/// Axis indices spanned by the plane and the normal axis.
pub fn parse_plane(s: &str) -> Result<(usize, usize, usize), CliError> {
    match s {
        "xy" => Ok((0, 1, 2)),
        "xz" => Ok((0, 2, 1)),
        "yz" => Ok((1, 2, 0)),
        _ => Err(CliError::Usage(format!("plane must be xy, xz or yz, got {s:?}"))),
    }
}

fn colour(phi: f64, scale: f64, pixel: f64) -> Rgb<u8> {
    if phi.abs() <= 0.75 * pixel {
        return Rgb([255, 255, 255]);
    }
    let t = (phi.abs() / scale).tanh();
    let band = if ((phi / scale * 8.0).floor() as i64).rem_euclid(2) == 0 { 1.0 } else { 0.85 };
    let v = ((40.0 + 200.0 * (1.0 - t)) * band) as u8;
    if phi > 0.0 {
        Rgb([230, v, v / 2])
    } else {
        Rgb([v / 2, v, 230])
    }
}

pub fn run(common: &Common, args: &SliceArgs) -> Result<(), CliError> {
    let cfg = Config::load(common.config.as_deref())?;
    cfg.check_keys(&["out", "field", "plane", "offset", "extent", "resolution", "arrow_step"])?;
    let field_path = match &args.field {
        Some(p) => p.clone(),
        None => cfg.require_path("field")?,
    };
    let plane = cfg.pick(args.plane.clone(), "plane", "xz".to_string())?;
    let (a, b, n) = parse_plane(&plane)?;
    let offset = cfg.pick(args.offset, "offset", 0.0)?;
    let extent = cfg.pick(args.extent, "extent", 0.1)?;
    let res = cfg.pick(args.resolution, "resolution", 256u32)?;
    let step = cfg.pick(args.arrow_step, "arrow_step", 16u32)?;
    if !(extent > 0.0) || res < 8 || step == 0 {
        return Err(CliError::Usage("extent must be positive, resolution >= 8 and arrow step >= 1".into()));
    }
    let (_, field) = load_field(&field_path)?;
    let pixel = 2.0 * extent / res as f64;
    let point = |px: f64, py: f64| {
        let mut p = Point3::zeros();
        p[a] = -extent + (px + 0.5) * pixel;
        // image rows grow downward, the second plane axis grows upward
        p[b] = extent - (py + 0.5) * pixel;
        p[n] = offset;
        p
    };
    let mut img = RgbImage::new(res, res);
    let scale = extent / 2.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in 0..res {
        for x in 0..res {
            let phi = field.value(&point(x as f64, y as f64));
            lo = lo.min(phi);
            hi = hi.max(phi);
            img.put_pixel(x, y, colour(phi, scale, pixel));
        }
    }
    let len = 0.8 * step as f64;
    for y in (step / 2..res).step_by(step as usize) {
        for x in (step / 2..res).step_by(step as usize) {
            let g = field.sample(&point(x as f64, y as f64)).gradient;
            draw::arrow(&mut img, (x as f64, y as f64), (g[a] * len, -g[b] * len), Rgb([20, 20, 20]));
        }
    }
    let out = out_dir(common, &cfg)?;
    let png = out.join("slice.png");
    draw::save(&img, &png)?;
    let meta = json!({
        "field": field_path.display().to_string(), "plane": plane, "offset": offset, "extent": extent,
        "resolution": res, "arrow_step": step, "phi_min": lo, "phi_max": hi,
    });
    write_json(&out.join("slice.json"), &meta)?;
    Log::stdout_only(common.quiet).event("field_slice", json!({ "png": png.display().to_string(), "phi_min": lo, "phi_max": hi }));
    Ok(())
}
