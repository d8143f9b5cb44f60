use super::{out_dir, rig_from, write_json, RIG_KEYS};
use crate::config::Config;
use crate::draw;
use crate::error::{input, CliError};
use crate::log::Log;
use crate::Common;
use bubble_core::flow::{dense_flow, FlowConfig, FlowField};
use bubble_core::io::{read_file, read_ir, write_file, write_flow};
use bubble_core::shear::{shear_displacement_in, torsion_decompose, ReleaseMonitor, ShearRegion};
use bubble_core::sim::{generate_pattern, warp_ir, DotPattern};
use bubble_core::IrImage;
use image::{Rgb, RgbImage};
use nalgebra::Vector2;
use serde_json::json;

const KEYS: &[&str] = &[
    "out", "frames", "frame_count", "ramp_frames", "max_shift_px", "residual_px", "direction_deg", "threshold",
    "border", "seed", "pattern_density", "pattern_min_diameter", "pattern_max_diameter", "pattern_randomness",
    "mm_per_pixel", "pyramid_levels", "pyramid_scale", "window", "iterations_per_level", "poly_n", "poly_sigma",
];

struct Ramp {
    frames: usize,
    ramp: usize,
    max: f64,
    residual: f64,
}

impl Ramp {
    /// Shear displacement magnitude of frame `k`: a linear ramp, then a
    /// release that decays toward the residual.
    fn magnitude(&self, k: usize) -> f64 {
        if k < self.ramp {
            self.max * k as f64 / (self.ramp.max(2) - 1) as f64
        } else {
            self.residual + (self.max - self.residual) * 0.5f64.powi((k - self.ramp + 1) as i32)
        }
    }
}

fn overlay(img: &IrImage, flow: &FlowField, mean: Vector2<f64>) -> RgbImage {
    let mut out = RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let v = (img.get(x as usize, y as usize).clamp(0.0, 1.0) * 255.0) as u8;
        Rgb([v, v, v])
    });
    let step = 12;
    for y in (step / 2..img.height).step_by(step) {
        for x in (step / 2..img.width).step_by(step) {
            let f = flow.get(x, y);
            draw::arrow(&mut out, (x as f64, y as f64), (f.x * 1.5, f.y * 1.5), Rgb([0, 200, 60]));
        }
    }
    let c = (img.width as f64 / 2.0, img.height as f64 / 2.0);
    draw::arrow(&mut out, c, (mean.x * 6.0, mean.y * 6.0), Rgb([230, 30, 30]));
    out
}

pub fn run(common: &Common) -> Result<(), CliError> {
    let cfg = Config::load(common.config.as_deref())?;
    let allowed: Vec<&str> = KEYS.iter().chain(RIG_KEYS).copied().collect();
    cfg.check_keys(&allowed)?;
    let rig = rig_from(&cfg)?;
    let fd = FlowConfig::default();
    let flow_cfg = FlowConfig {
        pyramid_levels: cfg.pick(None, "pyramid_levels", fd.pyramid_levels)?,
        pyramid_scale: cfg.pick(None, "pyramid_scale", fd.pyramid_scale)?,
        window: cfg.pick(None, "window", fd.window)?,
        iterations_per_level: cfg.pick(None, "iterations_per_level", fd.iterations_per_level)?,
        poly_n: cfg.pick(None, "poly_n", fd.poly_n)?,
        poly_sigma: cfg.pick(None, "poly_sigma", fd.poly_sigma)?,
    };
    flow_cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let threshold = cfg.pick(common.threshold, "threshold", 3.0)?;
    let border = cfg.pick(None, "border", 16usize)?;
    let direction = cfg.pick(None, "direction_deg", 30.0f64)?.to_radians();
    let seed = cfg.pick(common.seed, "seed", 7u64)?;
    let ramp = Ramp {
        frames: cfg.pick(None, "frame_count", 24usize)?,
        ramp: cfg.pick(None, "ramp_frames", 16usize)?,
        max: cfg.pick(None, "max_shift_px", 6.0)?,
        residual: cfg.pick(None, "residual_px", 1.0)?,
    };

    let frames: Vec<IrImage> = match cfg.raw("frames") {
        Some(list) => {
            let mut v = Vec::new();
            for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let path = cfg.resolve(name);
                v.push(read_ir(&read_file(&path)?).map_err(|e| input(format!("{}: {e}", path.display())))?);
            }
            if v.len() < 2 {
                return Err(CliError::Usage("frames needs a reference and at least one frame".into()));
            }
            if let Some(i) = v.iter().position(|f| (f.width, f.height) != (v[0].width, v[0].height)) {
                return Err(CliError::Input(format!(
                    "frame {i} is {}x{}, reference is {}x{}",
                    v[i].width, v[i].height, v[0].width, v[0].height
                )));
            }
            v
        }
        None => {
            let dp = DotPattern::default();
            let pattern = DotPattern {
                density: cfg.pick(None, "pattern_density", dp.density)?,
                min_diameter: cfg.pick(None, "pattern_min_diameter", dp.min_diameter)?,
                max_diameter: cfg.pick(None, "pattern_max_diameter", dp.max_diameter)?,
                randomness: cfg.pick(None, "pattern_randomness", dp.randomness)?,
                seed,
            };
            let reference = generate_pattern(&pattern, rig.resolution(), cfg.pick(None, "mm_per_pixel", 0.25)?)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let (w, h) = rig.resolution();
            let dir = Vector2::new(direction.cos(), direction.sin());
            (0..ramp.frames)
                .map(|k| warp_ir(&reference, &FlowField::constant(w, h, dir * ramp.magnitude(k))))
                .collect::<Result<_, _>>()
                .map_err(input)?
        }
    };

    let out = out_dir(common, &cfg)?;
    let mut log = Log::create(&out, "shear", common.quiet)?;
    let (w, h) = (frames[0].width, frames[0].height);
    let region = ShearRegion::interior(border);
    let pixels = w.saturating_sub(2 * border) * h.saturating_sub(2 * border);
    let mut monitor = ReleaseMonitor::new(threshold).map_err(|e| CliError::Usage(e.to_string()))?;
    monitor.set_reference(pixels);
    let mut trigger = None;
    let mut records = Vec::new();
    let mut last = None;
    for (k, frame) in frames.iter().enumerate().skip(1) {
        let flow = dense_flow(&frames[0], frame, &flow_cfg).map_err(input)?;
        let est = shear_displacement_in(&flow, &region).map_err(input)?;
        let tors = torsion_decompose(&flow);
        let event = monitor.observe(&est).map_err(input)?;
        let mut buf = Vec::new();
        write_flow(&mut buf, &flow)?;
        write_file(&out.join(format!("flow_{k:03}.bff")), &buf)?;
        let rec = json!({
            "frame": k, "raw_sum": est.raw_sum, "direction": est.direction, "magnitude": est.magnitude,
            "mean_px": est.magnitude / est.pixels.max(1) as f64, "pixels": est.pixels,
            "torsion": tors.torsional, "low_confidence": flow.low_confidence, "fired": event.is_some(),
        });
        log.event("frame", rec.clone());
        records.push(rec);
        if let Some(e) = event {
            log.event("release", json!({ "frame": k, "magnitude": e.magnitude, "effective_threshold": e.effective_threshold }));
            trigger = Some((k, e));
            draw::save(&overlay(frame, &flow, Vector2::new(est.raw_sum[0], est.raw_sum[1]) / est.pixels.max(1) as f64), &out.join("overlay.png"))?;
        }
        last = Some((k, frame, flow, est));
    }
    let (_, last_frame, last_flow, last_est) = last.expect("at least two frames");
    if trigger.is_none() {
        let mean = Vector2::new(last_est.raw_sum[0], last_est.raw_sum[1]) / last_est.pixels.max(1) as f64;
        draw::save(&overlay(last_frame, &last_flow, mean), &out.join("overlay.png"))?;
    }
    let summary = json!({
        "frames": frames.len(),
        "threshold": threshold,
        "effective_threshold": monitor.effective_threshold().map_err(input)?,
        "border": border,
        "flow": flow_cfg,
        "trigger_frame": trigger.map(|(k, _)| k),
        "trigger_magnitude": trigger.map(|(_, e)| e.magnitude),
        "residual_magnitude": last_est.magnitude,
        "records": records,
    });
    write_json(&out.join("shear.json"), &summary)?;
    Ok(())
}

