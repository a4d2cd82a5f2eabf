//! Deterministic simulation stack for an RTK-guided crop-spraying robot.
//!
//! - [`geodesy`]: WGS-84 LLH / ECEF / ENU conversions.
//! - [`odometry`]: arc-based dead reckoning from wheel increments.
//! - [`fusion`]: EKF over `(x, y, theta)` with GPS and heading updates.
//! - [`guidance`]: dynamic reference point path follower.
//! - [`targeting`]: pixel detection to nozzle pan/tilt and spray planning.
//! - [`simworld`]: true kinematics, plants and sensor synthesis.
//! - [`config`], [`mission`], [`report`], [`montecarlo`]: mission runner
//!   and metrics.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod fusion;
pub mod geodesy;
pub mod guidance;
pub mod mission;
pub mod montecarlo;
pub mod odometry;
pub mod report;
pub mod simworld;
pub mod targeting;

pub use config::{ConfigError, MissionConfig};
pub use mission::{run_mission, run_mission_to_dir, MissionError, MissionRun};
pub use montecarlo::{montecarlo, Execution, MonteCarloReport};
pub use report::{verify_table1, RunReport, StepLog};
