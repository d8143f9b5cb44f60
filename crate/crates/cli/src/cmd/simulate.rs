use super::{load_field, out_dir, pose_value, rig_from, rig_json, write_json, RIG_KEYS};
use crate::config::Config;
use crate::error::{input, CliError};
use crate::log::Log;
use crate::Common;
use bubble_core::io::{format_pose, write_depth, write_file, write_ir, write_point_cloud};
use bubble_core::sim::{generate_pattern, DotPattern, SimConfig, SimError};
use bubble_core::tactile::{crop_to_patch, difference_mask, morphological_clean, DEFAULT_DIFF_THRESHOLD};
use bubble_core::{Frame, GripperState, IrImage, RigidPose, Simulator};
use serde_json::json;
use std::path::Path;

const KEYS: &[&str] = &[
    "out", "field", "pose", "width", "finger_velocity", "noise_sigma", "seed", "threshold", "open_radius",
    "blend_radius", "pressure_gain", "pattern_density", "pattern_min_diameter", "pattern_max_diameter",
    "pattern_randomness", "pattern_seed", "mm_per_pixel",
];

fn save(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<(), bubble_core::io::IoError>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_file(path, &buf)?;
    Ok(())
}

pub fn run(common: &Common) -> Result<(), CliError> {
    let cfg = Config::load(common.config.as_deref())?;
    let allowed: Vec<&str> = KEYS.iter().chain(RIG_KEYS).copied().collect();
    cfg.check_keys(&allowed)?;
    let field_path = cfg.require_path("field")?;
    let (_, field) = load_field(&field_path)?;
    let object_pose = pose_value(&cfg, "pose")?.unwrap_or_else(RigidPose::identity);
    let width: f64 = cfg.pick(None, "width", 0.07)?;
    let noise_sigma = cfg.pick(common.noise_sigma, "noise_sigma", 0.0)?;
    let seed = cfg.pick(common.seed, "seed", 0u64)?;
    let threshold = cfg.pick(common.threshold, "threshold", DEFAULT_DIFF_THRESHOLD)?;
    let open_radius = cfg.pick(None, "open_radius", 1usize)?;
    let d = SimConfig::default();
    let sim_cfg = SimConfig {
        blend_radius: cfg.pick(None, "blend_radius", d.blend_radius)?,
        pressure_gain: cfg.pick(None, "pressure_gain", d.pressure_gain)?,
        ..d
    };
    let dp = DotPattern::default();
    let pattern = DotPattern {
        density: cfg.pick(None, "pattern_density", dp.density)?,
        min_diameter: cfg.pick(None, "pattern_min_diameter", dp.min_diameter)?,
        max_diameter: cfg.pick(None, "pattern_max_diameter", dp.max_diameter)?,
        randomness: cfg.pick(None, "pattern_randomness", dp.randomness)?,
        seed: cfg.pick(None, "pattern_seed", dp.seed)?,
    };
    let mm_per_pixel: f64 = cfg.pick(None, "mm_per_pixel", 0.25)?;

    let rig = rig_from(&cfg)?;
    let sim = Simulator::new(rig, sim_cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut state = GripperState::new(width).map_err(|e| CliError::Usage(e.to_string()))?;
    state.finger_velocity = cfg.pick(None, "finger_velocity", 0.0)?;
    let scene = match sim.synthesize_grasp_scene(&field, &object_pose, &state, noise_sigma, seed) {
        Ok(s) => s,
        Err(SimError::NoContact) => {
            return Err(CliError::NoContact(format!("object in {} touches neither membrane", field_path.display())))
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    let pattern_img: IrImage =
        generate_pattern(&pattern, sim.rig.resolution(), mm_per_pixel).map_err(|e| CliError::Usage(e.to_string()))?;

    let out = out_dir(common, &cfg)?;
    let mut log = Log::create(&out, "simulate", common.quiet)?;
    let names = [("left", &scene.left, &scene.left_reference), ("right", &scene.right, &scene.right_reference)];
    let mut patches = Vec::new();
    for (i, (name, img, reference)) in names.into_iter().enumerate() {
        save(&out.join(format!("{name}.bdi")), |b| write_depth(b, img))?;
        save(&out.join(format!("{name}_ref.bdi")), |b| write_depth(b, reference))?;
        save(&out.join(format!("{name}.bir")), |b| write_ir(b, &pattern_img))?;
        let mask = morphological_clean(&difference_mask(img, reference, threshold).map_err(input)?, open_radius);
        let cloud = crop_to_patch(img, &mask, Frame::Camera(i as u8)).map_err(input)?;
        save(&out.join(format!("{name}.bpc")), |b| write_point_cloud(b, &cloud))?;
        patches.push(cloud.len());
    }
    write_file(&out.join("truth.pose"), format_pose(&scene.truth).as_bytes())?;

    let mut est = format!(
        "# generated by simulate\nleft = left.bdi\nright = right.bdi\nleft_ref = left_ref.bdi\nright_ref = right_ref.bdi\n\
         field = {}\nwidth = {width}\nseed_pose = truth.pose\ntruth = truth.pose\nthreshold = {threshold}\nopen_radius = {open_radius}\n",
        std::fs::canonicalize(&field_path).unwrap_or(field_path.clone()).display()
    );
    for k in RIG_KEYS {
        if let Some(v) = cfg.raw(k) {
            est.push_str(&format!("{k} = {v}\n"));
        }
    }
    write_file(&out.join("estimate.cfg"), est.as_bytes())?;

    let meta = json!({
        "field": field_path.display().to_string(),
        "object_pose": object_pose.params(),
        "truth": scene.truth.params(),
        "width": width,
        "finger_velocity": state.finger_velocity,
        "noise_sigma": noise_sigma,
        "seed": seed,
        "threshold": threshold,
        "open_radius": open_radius,
        "sim": sim_cfg,
        "pattern": pattern,
        "mm_per_pixel": mm_per_pixel,
        "rig": rig_json(&sim.rig),
        "pressure_kpa": scene.state.pressure,
        "contact_pixels": scene.contact_pixels,
        "patch_points": patches,
    });
    write_json(&out.join("meta.json"), &meta)?;
    log.event("simulate", json!({ "out": out.display().to_string(), "contact_pixels": scene.contact_pixels, "patch_points": patches, "pressure_kpa": scene.state.pressure }));
    Ok(())
}
