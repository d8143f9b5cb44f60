pub mod basin;
pub mod estimate;
pub mod shear;
pub mod simulate;
pub mod slice;
pub mod verify;

use crate::config::Config;
use crate::error::{input, CliError};
use crate::Common;
use bubble_core::io::{parse_field, parse_pose, read_text};
use bubble_core::rig::RigParams;
use bubble_core::{CameraRig, FieldNode, PinholeModel, ProximityField, RigidPose};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

pub const RIG_KEYS: &[&str] = &["fx", "fy", "cx", "cy", "tilt_deg", "apex_depth", "bubble_radius"];

pub fn out_dir(common: &Common, cfg: &Config) -> Result<PathBuf, CliError> {
    let dir = common.out.clone().or_else(|| cfg.path("out")).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

pub fn rig_from(cfg: &Config) -> Result<CameraRig, CliError> {
    let d = RigParams::default();
    let k = d.intrinsics;
    let params = RigParams {
        intrinsics: PinholeModel::new(
            cfg.pick(None, "fx", k.fx)?,
            cfg.pick(None, "fy", k.fy)?,
            cfg.pick(None, "cx", k.cx)?,
            cfg.pick(None, "cy", k.cy)?,
        ),
        tilt: cfg.pick(None, "tilt_deg", d.tilt.to_degrees())?.to_radians(),
        apex_depth: cfg.pick(None, "apex_depth", d.apex_depth)?,
        bubble_radius: cfg.pick(None, "bubble_radius", d.bubble_radius)?,
        ..d
    };
    CameraRig::new(params).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn rig_json(rig: &CameraRig) -> Value {
    let p = &rig.params;
    let k = p.intrinsics;
    json!({
        "width": p.width, "height": p.height,
        "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
        "tilt_deg": p.tilt.to_degrees(), "apex_depth": p.apex_depth, "bubble_radius": p.bubble_radius,
    })
}

pub fn load_field(path: &Path) -> Result<(FieldNode, ProximityField), CliError> {
    let text = read_text(path)?;
    let node = parse_field(&text).map_err(|e| input(format!("{}: {e}", path.display())))?;
    let field = ProximityField::new(node.clone()).map_err(|e| input(format!("{}: {e}", path.display())))?;
    Ok((node, field))
}

/// A pose given inline (`tx ty tz qw qx qy qz`) or as a path to a pose file.
pub fn pose_value(cfg: &Config, key: &str) -> Result<Option<RigidPose>, CliError> {
    let Some(raw) = cfg.raw(key) else { return Ok(None) };
    if raw.split_whitespace().count() == 7 {
        return parse_pose(raw).map(Some).map_err(|e| CliError::Usage(format!("{key}: {e}")));
    }
    let path = cfg.require_path(key)?;
    let text = read_text(&path)?;
    parse_pose(&text).map(Some).map_err(|e| input(format!("{}: {e}", path.display())))
}

pub fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(input)?;
    s.push('\n');
    bubble_core::io::write_file(path, s.as_bytes())?;
    Ok(())
}
