use super::{load_field, out_dir, pose_value, rig_from, write_json, RIG_KEYS};
use crate::config::Config;
use crate::error::{input, CliError};
use crate::log::Log;
use crate::Common;
use bubble_core::io::{format_pose, read_depth, read_file, write_file};
use bubble_core::pose::{concatenate_grasp_cloud, estimate_pose, estimate_pose_cardinal, pose_error};
use bubble_core::tactile::{crop_to_patch, difference_mask, morphological_clean, DEFAULT_DIFF_THRESHOLD};
use bubble_core::{DepthImage, FieldNode, Frame, SolverConfig, Symmetry};
use serde_json::json;
use std::time::Instant;

const KEYS: &[&str] = &[
    "out", "left", "right", "left_ref", "right_ref", "field", "width", "seed_pose", "truth", "threshold",
    "open_radius", "max_iterations", "robust_loss_scale", "symmetry",
];

pub fn run(common: &Common) -> Result<(), CliError> {
    let cfg = Config::load(common.config.as_deref())?;
    let allowed: Vec<&str> = KEYS.iter().chain(RIG_KEYS).copied().collect();
    cfg.check_keys(&allowed)?;
    let rig = rig_from(&cfg)?;
    let k = *rig.intrinsics();
    let load = |key: &str| -> Result<DepthImage, CliError> {
        let path = cfg.require_path(key)?;
        read_depth(&read_file(&path)?, k).map_err(|e| input(format!("{}: {e}", path.display())))
    };
    let (left, right, left_ref, right_ref) = (load("left")?, load("right")?, load("left_ref")?, load("right_ref")?);
    let (node, field) = load_field(&cfg.require_path("field")?)?;
    let width: f64 = cfg.pick(None, "width", 0.07)?;
    let threshold = cfg.pick(common.threshold, "threshold", DEFAULT_DIFF_THRESHOLD)?;
    let open_radius = cfg.pick(None, "open_radius", 1usize)?;
    let d = SolverConfig::default();
    let solver = SolverConfig {
        max_iterations: cfg.pick(None, "max_iterations", d.max_iterations)?,
        robust_loss_scale: cfg.pick(None, "robust_loss_scale", d.robust_loss_scale)?,
        ..d
    };
    let symmetry = match cfg.raw("symmetry") {
        Some("cylinder") => Symmetry::cylinder(),
        Some("none") => Symmetry::None,
        None if matches!(node, FieldNode::Cylinder { .. }) => Symmetry::cylinder(),
        None => Symmetry::None,
        Some(s) => return Err(CliError::Usage(format!("symmetry must be cylinder or none, got {s:?}"))),
    };
    let cardinal = cfg.raw("seed_pose") == Some("cardinal");
    let seed = if cardinal {
        None
    } else {
        Some(pose_value(&cfg, "seed_pose")?.ok_or_else(|| CliError::Usage("config key seed_pose is required".into()))?)
    };
    let truth = pose_value(&cfg, "truth")?;

    let out = out_dir(common, &cfg)?;
    let mut log = Log::create(&out, "estimate", common.quiet)?;
    let start = Instant::now();
    let mut clouds = Vec::with_capacity(2);
    for (i, (img, reference)) in [(&left, &left_ref), (&right, &right_ref)].into_iter().enumerate() {
        let mask = morphological_clean(&difference_mask(img, reference, threshold).map_err(input)?, open_radius);
        clouds.push(crop_to_patch(img, &mask, Frame::Camera(i as u8)).map_err(input)?);
    }
    let patch = [clouds[0].len(), clouds[1].len()];
    log.event("patch", json!({ "left": patch[0], "right": patch[1], "threshold": threshold }));
    if patch == [0, 0] {
        return Err(CliError::EmptyPatch(format!("both contact patches are empty at threshold {threshold} m")));
    }
    let cloud = concatenate_grasp_cloud(&clouds[0], &clouds[1], width, &rig).map_err(input)?;
    let result = match seed {
        Some(s) => estimate_pose(&field, &cloud, &s, &solver),
        None => estimate_pose_cardinal(&field, &cloud, &solver),
    }
    .map_err(input)?;
    let wall = start.elapsed().as_secs_f64();

    write_file(&out.join("estimate.pose"), format_pose(&result.pose).as_bytes())?;
    let error = truth.map(|t| pose_error(&result.pose, &t, symmetry));
    let report = json!({
        "pose": result.pose.params(),
        "final_cost": result.final_cost,
        "residual_rms": result.residual_rms,
        "iterations": result.iterations,
        "converged": result.converged,
        "optimality": result.optimality,
        "patch_points": patch,
        "cloud_points": cloud.len(),
        "wall_s": wall,
        "pose_error": error,
        "config": { "width": width, "threshold": threshold, "open_radius": open_radius, "solver": solver, "seed": if cardinal { json!("cardinal") } else { json!(seed.map(|s| s.params())) } },
    });
    write_json(&out.join("estimate.json"), &report)?;
    log.event("estimate", report);
    Ok(())
}
