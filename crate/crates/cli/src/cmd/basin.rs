use super::{out_dir, rig_from, rig_json, write_json, RIG_KEYS};
use crate::config::Config;
use crate::error::CliError;
use crate::log::Log;
use crate::Common;
use bubble_core::bench::{run_basin_bench, BenchConfig};
use bubble_core::io::write_file;
use bubble_core::{SimConfig, Simulator, SolverConfig};
use serde_json::json;

const KEYS: &[&str] = &[
    "out", "trials", "seed", "offset_max_deg", "offset_grid", "noise_sigma", "gripper_width", "axial_center",
    "max_tilt_deg", "max_shift", "threshold", "open_radius", "radius", "height", "max_iterations",
    "robust_loss_scale", "threads",
];

pub fn run(common: &Common) -> Result<(), CliError> {
    let cfg = Config::load(common.config.as_deref())?;
    let allowed: Vec<&str> = KEYS.iter().chain(RIG_KEYS).copied().collect();
    cfg.check_keys(&allowed)?;
    let d = BenchConfig::default();
    let sd = SolverConfig::default();
    let bench = BenchConfig {
        trials: cfg.pick(common.trials, "trials", d.trials)?,
        seed: cfg.pick(common.seed, "seed", d.seed)?,
        offset_max_deg: cfg.pick(common.offset_max_deg, "offset_max_deg", d.offset_max_deg)?,
        offset_grid: cfg.opt("offset_grid")?,
        noise_sigma: cfg.pick(common.noise_sigma, "noise_sigma", d.noise_sigma)?,
        radius: cfg.pick(None, "radius", d.radius)?,
        height: cfg.pick(None, "height", d.height)?,
        gripper_width: cfg.pick(None, "gripper_width", d.gripper_width)?,
        axial_center: cfg.pick(None, "axial_center", d.axial_center)?,
        max_tilt_deg: cfg.pick(None, "max_tilt_deg", d.max_tilt_deg)?,
        max_shift: cfg.pick(None, "max_shift", d.max_shift)?,
        diff_threshold: cfg.pick(common.threshold, "threshold", d.diff_threshold)?,
        open_radius: cfg.pick(None, "open_radius", d.open_radius)?,
        solver: SolverConfig {
            max_iterations: cfg.pick(None, "max_iterations", sd.max_iterations)?,
            robust_loss_scale: cfg.pick(None, "robust_loss_scale", sd.robust_loss_scale)?,
            ..sd
        },
        ..d
    };
    bench.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let threads: Option<usize> = match common.threads {
        Some(t) => Some(t),
        None => cfg.opt("threads")?,
    };
    let sim = Simulator::new(rig_from(&cfg)?, SimConfig::default()).map_err(|e| CliError::Usage(e.to_string()))?;

    let out = out_dir(common, &cfg)?;
    let mut log = Log::create(&out, "basin", common.quiet)?;
    log.event("start", json!({ "config": bench, "threads": threads, "rig": rig_json(&sim.rig) }));
    let report = run_basin_bench(&sim, &bench, threads).map_err(|e| CliError::Usage(e.to_string()))?;
    for r in &report.records {
        log.event("trial", json!({ "record": r, "success": r.success(&bench) }));
    }
    write_file(&out.join("basin.csv"), report.to_csv().as_bytes())?;
    let mut summary = report.summary_json();
    summary["threads"] = json!(threads);
    summary["rig"] = rig_json(&sim.rig);
    write_json(&out.join("basin.json"), &summary)?;
    log.event("summary", json!({ "aggregate": report.aggregate }));
    Ok(())
}
