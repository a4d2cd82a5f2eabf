//! Mission configuration, loaded from TOML.
//!
//! Unknown keys are rejected. Positions may be given either in the local
//! ENU frame (`east_m`, `north_m`, `up_m`) or geodetically (`latitude_deg`,
//! `longitude_deg`, `height_m`); geodetic positions are mapped through the
//! mission datum.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::ProcessNoise;
use crate::geodesy::{Datum, EnuCoord, GeodeticCoord};
use crate::guidance::{PlannedPath, ReferenceMode};
use crate::odometry::Pose2D;
use crate::simworld::{CameraMount, NoiseConfig, Plant, RobotGeometry};
use crate::targeting::{CameraModel, FlowRate, RigidTransform};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Position {
    Local(LocalPosition),
    Geodetic(GeodeticPosition),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalPosition {
    pub east_m: f64,
    pub north_m: f64,
    #[serde(default)]
    pub up_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodeticPosition {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    #[serde(default)]
    pub height_m: f64,
}

impl Position {
    pub fn resolve(&self, datum: &Datum, field: &str) -> Result<EnuCoord, ConfigError> {
        match *self {
            Position::Local(p) => Ok(EnuCoord::new(p.east_m, p.north_m, p.up_m)),
            Position::Geodetic(g) => {
                let coord = GeodeticCoord::new(g.latitude_deg, g.longitude_deg, g.height_m)
                    .map_err(|e| invalid(field, e.to_string()))?;
                Ok(datum.llh_to_enu(coord))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatumConfig {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    #[serde(default)]
    pub height_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub id: String,
    pub position: Position,
    #[serde(default = "default_plant_diameter")]
    pub diameter_m: f64,
}

fn default_plant_diameter() -> f64 {
    0.25
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPose {
    pub x_m: f64,
    pub y_m: f64,
    pub theta_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width_px: f64,
    pub height_px: f64,
    pub hfov_deg: f64,
    pub vfov_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width_px: 1080.0,
            height_px: 720.0,
            hfov_deg: 62.2,
            vfov_deg: 48.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotConfig {
    pub track_width_m: f64,
    pub v_max_mps: f64,
    pub initial_pose: Option<InitialPose>,
    pub camera: CameraConfig,
    pub mount: CameraMount,
    /// Camera-to-nozzle translation; axes are aligned.
    pub nozzle_offset_m: [f64; 3],
    pub min_range_m: f64,
    pub max_range_m: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            track_width_m: 0.5,
            v_max_mps: 0.5,
            initial_pose: None,
            camera: CameraConfig::default(),
            mount: CameraMount::default(),
            nozzle_offset_m: [0.20, 0.0, 0.10],
            min_range_m: 0.3,
            max_range_m: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Defaults to the wheel-slip model matched to `noise`.
    pub process_noise: Option<ProcessNoise>,
    pub gps_std_m: Option<f64>,
    pub imu_std_rad: Option<f64>,
    pub initial_std: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub lookahead_m: f64,
    pub v_nominal_mps: f64,
    pub reference_mode: ReferenceMode,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            lookahead_m: 1.0,
            v_nominal_mps: 0.2,
            reference_mode: ReferenceMode::Dynamic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeSource {
    /// Range supplied by the simulator with `noise.range_std_m`.
    #[default]
    Truth,
    /// Intersect the pixel ray with a horizontal plane at the plant height.
    GroundPlane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SprayConfig {
    pub flow_l_per_min: f64,
    pub volume_per_plant_ml: f64,
    pub tank_capacity_ml: f64,
    pub range_source: RangeSource,
    /// Assumed plant top height for the ground-plane range estimate.
    pub plant_height_m: f64,
}

impl Default for SprayConfig {
    fn default() -> Self {
        Self {
            flow_l_per_min: 10.0,
            volume_per_plant_ml: 200.0,
            tank_capacity_ml: 10_000.0,
            range_source: RangeSource::Truth,
            plant_height_m: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub waypoints: Vec<Position>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_duration")]
    pub max_duration_s: f64,
    #[serde(default = "default_tick_rate")]
    pub tick_rate_hz: f64,
    pub datum: DatumConfig,
    pub path: PathConfig,
    #[serde(default)]
    pub plants: Vec<PlantConfig>,
    #[serde(default)]
    pub robot: RobotConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default)]
    pub spray: SprayConfig,
}

fn default_max_duration() -> f64 {
    600.0
}

fn default_tick_rate() -> f64 {
    50.0
}

/// Bundled two-row, ten-plant demonstration mission.
pub const DEMO_MISSION_TOML: &str = include_str!("../missions/demo.toml");
/// Bundled 20 m straight-row mission without plants.
pub const STRAIGHT_MISSION_TOML: &str = include_str!("../missions/straight.toml");

/// Everything derived from a validated config that a run needs.
#[derive(Debug, Clone)]
pub struct ResolvedMission {
    pub config: MissionConfig,
    pub datum: Datum,
    pub path: PlannedPath,
    pub plants: Vec<Plant>,
    pub start: Pose2D,
    pub geometry: RobotGeometry,
    pub process_noise: ProcessNoise,
    pub filter_gps_std_m: Option<f64>,
    pub filter_imu_std_rad: Option<f64>,
    pub initial_std: [f64; 3],
    pub flow: FlowRate,
}

impl MissionConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: MissionConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn demo() -> Self {
        Self::from_toml_str(DEMO_MISSION_TOML).expect("bundled demo mission is valid")
    }

    pub fn straight() -> Self {
        Self::from_toml_str(STRAIGHT_MISSION_TOML).expect("bundled straight mission is valid")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("mission config serializes")
    }

    /// Validates the config and resolves every frame it references.
    pub fn resolve(&self) -> Result<ResolvedMission, ConfigError> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("must be positive, got {v}")))
            }
        };
        positive("max_duration_s", self.max_duration_s)?;
        positive("tick_rate_hz", self.tick_rate_hz)?;
        positive("robot.track_width_m", self.robot.track_width_m)?;
        positive("robot.v_max_mps", self.robot.v_max_mps)?;
        positive("guidance.lookahead_m", self.guidance.lookahead_m)?;
        positive("guidance.v_nominal_mps", self.guidance.v_nominal_mps)?;
        positive("spray.flow_l_per_min", self.spray.flow_l_per_min)?;
        positive("spray.volume_per_plant_ml", self.spray.volume_per_plant_ml)?;
        positive("spray.tank_capacity_ml", self.spray.tank_capacity_ml)?;
        positive("robot.camera.width_px", self.robot.camera.width_px)?;
        positive("robot.camera.height_px", self.robot.camera.height_px)?;
        for (field, fov) in [
            ("robot.camera.hfov_deg", self.robot.camera.hfov_deg),
            ("robot.camera.vfov_deg", self.robot.camera.vfov_deg),
        ] {
            if !(fov > 0.0 && fov < 180.0) {
                return Err(invalid(field, "must lie in (0, 180) degrees"));
            }
        }
        if self.guidance.v_nominal_mps > self.robot.v_max_mps {
            return Err(invalid("guidance.v_nominal_mps", "exceeds robot.v_max_mps"));
        }
        if !(self.robot.min_range_m >= 0.0 && self.robot.max_range_m > self.robot.min_range_m) {
            return Err(invalid("robot.max_range_m", "must exceed robot.min_range_m"));
        }
        self.noise.validate().map_err(|reason| {
            let field = reason.split_whitespace().next().unwrap_or("noise").to_string();
            ConfigError::Invalid { field, reason }
        })?;

        let origin = GeodeticCoord::new(self.datum.latitude_deg, self.datum.longitude_deg, self.datum.height_m)
            .map_err(|e| invalid("datum", e.to_string()))?;
        let datum = Datum::new(origin);

        let waypoints = self
            .path
            .waypoints
            .iter()
            .enumerate()
            .map(|(i, p)| p.resolve(&datum, &format!("path.waypoints[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let path = PlannedPath::new(waypoints).map_err(|e| invalid("path.waypoints", e.to_string()))?;

        let mut plants = Vec::with_capacity(self.plants.len());
        for (i, p) in self.plants.iter().enumerate() {
            if plants.iter().any(|q: &Plant| q.id == p.id) {
                return Err(invalid(&format!("plants[{i}].id"), format!("duplicate id `{}`", p.id)));
            }
            positive(&format!("plants[{i}].diameter_m"), p.diameter_m)?;
            plants.push(Plant {
                id: p.id.clone(),
                position: p.position.resolve(&datum, &format!("plants[{i}].position"))?,
                diameter_m: p.diameter_m,
                sprayed_volume_ml: 0.0,
            });
        }

        let start = match self.robot.initial_pose {
            Some(p) => Pose2D::new(p.x_m, p.y_m, p.theta_deg.to_radians()),
            None => {
                let w = path.waypoints();
                let heading = (w[1].north_m - w[0].north_m).atan2(w[1].east_m - w[0].east_m);
                Pose2D::new(w[0].east_m, w[0].north_m, heading)
            }
        };

        let nozzle = self.robot.nozzle_offset_m;
        let geometry = RobotGeometry {
            track_width_m: self.robot.track_width_m,
            v_max_mps: self.robot.v_max_mps,
            camera: CameraModel {
                width_px: self.robot.camera.width_px,
                height_px: self.robot.camera.height_px,
                hfov_rad: self.robot.camera.hfov_deg.to_radians(),
                vfov_rad: self.robot.camera.vfov_deg.to_radians(),
            },
            mount: self.robot.mount,
            camera_to_nozzle: RigidTransform::translation(Vector3::new(nozzle[0], nozzle[1], nozzle[2])),
            min_range_m: self.robot.min_range_m,
            max_range_m: self.robot.max_range_m,
        };

        let process_noise = self.filter.process_noise.unwrap_or(ProcessNoise::WheelSlip {
            slip_std: self.noise.encoder_slip_std,
            heading_jitter_std_rad: self.noise.caster_jitter_std_rad,
        });
        for (field, v) in [
            ("filter.gps_std_m", self.filter.gps_std_m),
            ("filter.imu_std_rad", self.filter.imu_std_rad),
        ] {
            if let Some(v) = v {
                positive(field, v)?;
            }
        }
        let initial_std = self.filter.initial_std.unwrap_or(self.noise.initial_std);
        if initial_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(invalid("filter.initial_std", "must be non-negative"));
        }

        Ok(ResolvedMission {
            config: self.clone(),
            datum,
            path,
            plants,
            start,
            geometry,
            process_noise,
            filter_gps_std_m: self.filter.gps_std_m,
            filter_imu_std_rad: self.filter.imu_std_rad,
            initial_std,
            flow: FlowRate::from_l_per_min(self.spray.flow_l_per_min),
        })
    }
}
