//! Perception stack for soft-bubble visuotactile grippers.
//!
//! - [`field`]: analytic proximity fields with corner-corrected gradients
//! - [`pose`]: in-hand pose estimation by nonlinear least squares on SE(3)
//! - [`tactile`]: depth deprojection and contact-patch extraction
//! - [`flow`], [`shear`]: dense optical flow and shear-displacement tracking
//! - [`sim`]: synthetic two-finger sensor renderer
//! - [`bench`]: seeded convergence-basin experiments
//! - [`io`]: on-disk formats

pub mod bench;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod par;
pub mod pose;
pub mod rig;
pub mod shear;
pub mod sim;
pub mod tactile;

pub use field::{FieldError, FieldNode, FieldSample, ProximityField};
pub use geometry::{Frame, Point3, PointCloud, RigidPose};
pub use pose::{EstimateResult, SolverConfig, Symmetry};
pub use rig::{CameraRig, Finger};
pub use shear::{ReleaseMonitor, ShearEstimate};
pub use sim::{GripperState, SimConfig, SimError, Simulator};
pub use tactile::{ContactPatchMask, DepthImage, IrImage, PinholeModel};
