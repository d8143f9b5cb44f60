//! Seeded convergence-basin experiment for the cylinder pose estimator.

use crate::field::{FieldNode, ProximityField};
use crate::geometry::{Frame, RigidPose};
use crate::par;
use crate::pose::{concatenate_grasp_cloud, estimate_pose, pose_error, PoseError, SolverConfig, Symmetry};
use crate::sim::{derive_seed, GripperState, SimError, Simulator};
use crate::tactile::{crop_to_patch, difference_mask, morphological_clean, TactileError, DEFAULT_DIFF_THRESHOLD};
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

pub const CSV_HEADER: &str = "trial,offset_pitch_deg,offset_roll_deg,converged,trans_err_m,rot_err_rad,iters,wall_s";

const STREAM_GRASP: u64 = 0xB0;
const STREAM_SCENE: u64 = 0xB1;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error("malformed report: {0}")]
    Malformed(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Tactile(#[from] TactileError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub trials: usize,
    pub seed: u64,
    /// Seed offsets are drawn from `[-max, max]` in pitch and roll.
    pub offset_max_deg: f64,
    /// When set, offsets cycle through an `n × n` grid spanning the range
    /// instead of being drawn uniformly.
    pub offset_grid: Option<usize>,
    pub noise_sigma: f64,
    pub radius: f64,
    pub height: f64,
    pub gripper_width: f64,
    /// Axial position of the cylinder centre along the tool z axis.
    pub axial_center: f64,
    /// Random placement spread: tilt of the true axis and lateral/axial shift.
    pub max_tilt_deg: f64,
    pub max_shift: f64,
    pub diff_threshold: f64,
    pub open_radius: usize,
    pub success_translation: f64,
    pub success_rotation_deg: f64,
    pub solver: SolverConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            offset_max_deg: 30.0,
            offset_grid: None,
            noise_sigma: 0.0,
            radius: 0.04,
            height: 0.1,
            gripper_width: 0.066,
            axial_center: 0.03,
            max_tilt_deg: 5.0,
            max_shift: 0.003,
            diff_threshold: DEFAULT_DIFF_THRESHOLD,
            open_radius: 1,
            success_translation: 0.005,
            success_rotation_deg: 5.0,
            solver: SolverConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidConfig(m.into()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if !(self.offset_max_deg >= 0.0 && self.offset_max_deg.is_finite()) {
            return bad("offset_max_deg must be non-negative");
        }
        if self.offset_grid == Some(0) {
            return bad("offset grid needs at least one step");
        }
        if !(self.noise_sigma >= 0.0 && self.radius > 0.0 && self.height > 0.0) {
            return bad("noise and cylinder dimensions must be positive");
        }
        if !(self.diff_threshold > 0.0 && self.max_tilt_deg >= 0.0 && self.max_shift >= 0.0) {
            return bad("threshold must be positive and spreads non-negative");
        }
        self.solver.validate()?;
        Ok(())
    }

    fn offsets(&self, trial: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let m = self.offset_max_deg;
        match self.offset_grid {
            Some(n) => {
                let at = |k: usize| if n == 1 { 0.0 } else { -m + 2.0 * m * k as f64 / (n - 1) as f64 };
                let k = trial % (n * n);
                (at(k % n), at(k / n))
            }
            None if m == 0.0 => (0.0, 0.0),
            None => (rng.random_range(-m..=m), rng.random_range(-m..=m)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub offset_pitch_deg: f64,
    pub offset_roll_deg: f64,
    pub converged: bool,
    pub trans_err_m: f64,
    pub rot_err_rad: f64,
    pub iters: usize,
    pub wall_s: f64,
}

impl TrialRecord {
    pub fn success(&self, config: &BenchConfig) -> bool {
        self.trans_err_m < config.success_translation && self.rot_err_rad < config.success_rotation_deg.to_radians()
    }

    /// Equal in everything but wall time.
    pub fn same_outcome(&self, other: &TrialRecord) -> bool {
        TrialRecord { wall_s: 0.0, ..*self } == TrialRecord { wall_s: 0.0, ..*other }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub converged: usize,
    pub median_trans_err_m: f64,
    pub median_rot_err_rad: f64,
    pub median_iters: f64,
    pub median_wall_s: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl Aggregate {
    pub fn from_records(records: &[TrialRecord], config: &BenchConfig) -> Self {
        let successes = records.iter().filter(|r| r.success(config)).count();
        let col = |f: fn(&TrialRecord) -> f64| median(records.iter().map(f).collect());
        Aggregate {
            trials: records.len(),
            successes,
            success_rate: if records.is_empty() { 0.0 } else { successes as f64 / records.len() as f64 },
            converged: records.iter().filter(|r| r.converged).count(),
            median_trans_err_m: col(|r| r.trans_err_m),
            median_rot_err_rad: col(|r| r.rot_err_rad),
            median_iters: col(|r| r.iters as f64),
            median_wall_s: col(|r| r.wall_s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub records: Vec<TrialRecord>,
    pub aggregate: Aggregate,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        records_to_csv(&self.records)
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({ "config": self.config, "aggregate": self.aggregate })
    }
}

pub fn records_to_csv(records: &[TrialRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.trial, r.offset_pitch_deg, r.offset_roll_deg, r.converged, r.trans_err_m, r.rot_err_rad, r.iters, r.wall_s
        ));
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<TrialRecord>, BenchError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(BenchError::Malformed("unexpected CSV header".into()));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || BenchError::Malformed(format!("line {}: {line}", n + 2));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        out.push(TrialRecord {
            trial: f[0].parse().map_err(|_| bad())?,
            offset_pitch_deg: num(1)?,
            offset_roll_deg: num(2)?,
            converged: f[3].parse().map_err(|_| bad())?,
            trans_err_m: num(4)?,
            rot_err_rad: num(5)?,
            iters: f[6].parse().map_err(|_| bad())?,
            wall_s: num(7)?,
        });
    }
    Ok(out)
}

/// Recomputes the aggregate from per-trial records and compares it with the
/// reported one. Returns the recomputed aggregate.
pub fn verify_report(records: &[TrialRecord], reported: &Aggregate, config: &BenchConfig) -> Result<Aggregate, BenchError> {
    let fresh = Aggregate::from_records(records, config);
    let close = |a: f64, b: f64| (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    let ok = fresh.trials == reported.trials
        && fresh.successes == reported.successes
        && fresh.converged == reported.converged
        && close(fresh.success_rate, reported.success_rate)
        && close(fresh.median_trans_err_m, reported.median_trans_err_m)
        && close(fresh.median_rot_err_rad, reported.median_rot_err_rad)
        && close(fresh.median_iters, reported.median_iters)
        && close(fresh.median_wall_s, reported.median_wall_s)
        && (0.0..=1.0).contains(&reported.success_rate);
    if ok {
        Ok(fresh)
    } else {
        Err(BenchError::Malformed(format!("aggregate mismatch: reported {reported:?}, recomputed {fresh:?}")))
    }
}

/// Ground truth and seed of one trial, both as `G <- T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialSetup {
    pub object_pose: RigidPose,
    pub truth: RigidPose,
    pub seed_pose: RigidPose,
    pub offset_pitch_deg: f64,
    pub offset_roll_deg: f64,
}

/// Draws the grasp and seed of trial `trial`. Offsets rotate the object about
/// its own origin, pitch about the tool x axis and roll about the closing axis.
pub fn trial_setup(config: &BenchConfig, trial: usize) -> TrialSetup {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_GRASP, trial as u64));
    let yaw = rng.random_range(0.0..std::f64::consts::TAU);
    let t = config.max_tilt_deg.to_radians();
    let s = config.max_shift;
    let spread = |rng: &mut ChaCha8Rng, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let (tx, ty) = (spread(&mut rng, t), spread(&mut rng, t));
    let (sx, sz) = (spread(&mut rng, s), spread(&mut rng, s));
    let (pitch, roll) = config.offsets(trial, &mut rng);

    let rot = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), tx)
        * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), ty)
        * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
    let object_pose = RigidPose::new(Vector3::new(sx, 0.0, config.axial_center + sz), rot);
    let offset = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), roll.to_radians())
        * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), pitch.to_radians());
    let seeded = RigidPose::new(object_pose.translation, offset * object_pose.rotation);
    TrialSetup {
        object_pose,
        truth: object_pose.inverse(),
        seed_pose: seeded.inverse(),
        offset_pitch_deg: pitch,
        offset_roll_deg: roll,
    }
}

pub fn cylinder_field(config: &BenchConfig) -> Result<ProximityField, BenchError> {
    ProximityField::new(FieldNode::cylinder(config.radius, config.height))
        .map_err(|e| BenchError::InvalidConfig(e.to_string()))
}

/// Runs one trial. Scenes without a usable patch count as failures.
pub fn run_trial(sim: &Simulator, field: &ProximityField, config: &BenchConfig, trial: usize) -> TrialRecord {
    let start = Instant::now();
    let setup = trial_setup(config, trial);
    let outcome = (|| -> Result<_, BenchError> {
        let state = GripperState::new(config.gripper_width)?;
        let scene_seed = derive_seed(config.seed, STREAM_SCENE, trial as u64);
        let scene = sim.synthesize_grasp_scene(field, &setup.object_pose, &state, config.noise_sigma, scene_seed)?;
        let mut clouds = Vec::with_capacity(2);
        for (i, (img, reference)) in [(&scene.left, &scene.left_reference), (&scene.right, &scene.right_reference)]
            .into_iter()
            .enumerate()
        {
            let mask = morphological_clean(&difference_mask(img, reference, config.diff_threshold)?, config.open_radius);
            clouds.push(crop_to_patch(img, &mask, Frame::Camera(i as u8))?);
        }
        let cloud = concatenate_grasp_cloud(&clouds[0], &clouds[1], config.gripper_width, &sim.rig)?;
        Ok(estimate_pose(field, &cloud, &setup.seed_pose, &config.solver)?)
    })();
    let (converged, trans, rot, iters) = match outcome {
        Ok(r) => {
            let e = pose_error(&r.pose, &setup.truth, Symmetry::cylinder());
            (r.converged, e.translation, e.rotation, r.iterations)
        }
        Err(_) => (false, f64::INFINITY, f64::INFINITY, 0),
    };
    TrialRecord {
        trial,
        offset_pitch_deg: setup.offset_pitch_deg,
        offset_roll_deg: setup.offset_roll_deg,
        converged,
        trans_err_m: trans,
        rot_err_rad: rot,
        iters,
        wall_s: start.elapsed().as_secs_f64(),
    }
}

/// All trials on `threads` workers (`None`: global pool). Records are in
/// trial order and, wall time aside, independent of the worker count.
pub fn run_basin_bench(sim: &Simulator, config: &BenchConfig, threads: Option<usize>) -> Result<BenchReport, BenchError> {
    config.validate()?;
    let field = cylinder_field(config)?;
    let records = par::with_threads(threads, || par::map_range(config.trials, |i| run_trial(sim, &field, config, i)));
    let aggregate = Aggregate::from_records(&records, config);
    Ok(BenchReport { config: *config, records, aggregate })
}
