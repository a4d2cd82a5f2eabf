//! Closed-loop mission runner: world -> filter -> guidance -> targeting.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::config::{ConfigError, MissionConfig, RangeSource, ResolvedMission};
use crate::fusion::{self, GpsFix, HeadingFix, StateEstimate};
use crate::guidance::{self, PathComplete, ReferenceTracker};
use crate::report::{
    csv_header, csv_row, MeasurementStatus, ReportBuilder, RunReport, SprayEvent, SprayFailure, StepLog,
};
use crate::simworld::{SensorBundle, WorldState};
use crate::targeting::{
    self, camera_to_nozzle, incremental_angles, nozzle_angles, pixel_to_angles, plant_in_camera, ray_miss_distance,
    CameraSide, Detection, NozzlePose, TankState, TargetingError,
};

#[derive(Debug, thiserror::Error)]
pub enum MissionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Fires each plant once, on the first tick its detection crosses the image
/// centre column, and owns the tank.
#[derive(Debug, Clone)]
struct SprayScheduler {
    tank: TankState,
    last_offset: HashMap<(String, CameraSide), f64>,
    handled: HashSet<String>,
    nozzle: [NozzlePose; 2],
    active: Vec<(String, f64)>,
}

fn side_index(side: CameraSide) -> usize {
    match side {
        CameraSide::Left => 0,
        CameraSide::Right => 1,
    }
}

impl SprayScheduler {
    fn new(capacity_ml: f64) -> Self {
        Self {
            tank: TankState::full(capacity_ml),
            last_offset: HashMap::new(),
            handled: HashSet::new(),
            nozzle: [NozzlePose::default(); 2],
            active: Vec::new(),
        }
    }

    /// Returns the detections that cross the centre column this tick.
    fn crossings<'a>(&mut self, detections: &'a [Detection], center_x: f64) -> Vec<&'a Detection> {
        let mut out = Vec::new();
        for d in detections {
            let Some(id) = d.plant_id.as_ref() else { continue };
            if self.handled.contains(id) {
                continue;
            }
            let offset = d.center[0] - center_x;
            let key = (id.clone(), d.side);
            let crossed = match self.last_offset.get(&key) {
                Some(&prev) => offset == 0.0 || prev.signum() != offset.signum(),
                None => offset == 0.0,
            };
            self.last_offset.insert(key, offset);
            if crossed {
                out.push(d);
            }
        }
        out
    }
}

/// One mission in progress.
pub struct MissionRun {
    mission: ResolvedMission,
    world: WorldState,
    estimate: StateEstimate,
    tracker: ReferenceTracker,
    sprayer: SprayScheduler,
    plant_index: HashMap<String, usize>,
    max_ticks: u64,
}

impl MissionRun {
    pub fn new(config: &MissionConfig) -> Result<Self, ConfigError> {
        let mission = config.resolve()?;
        let cfg = &mission.config;
        let mut world = WorldState::new(
            mission.start,
            mission.plants.clone(),
            mission.geometry.clone(),
            cfg.noise.clone(),
            cfg.tick_rate_hz,
            cfg.seed,
        );
        let mean = world.sample_initial_estimate();
        let s = mission.initial_std;
        let p0 = Matrix3::from_diagonal(&Vector3::new(s[0] * s[0], s[1] * s[1], s[2] * s[2]));
        let plant_index = mission
            .plants
            .iter()
            .enumerate()
            .map(|(i, p)| (p.id.clone(), i))
            .collect();
        Ok(Self {
            estimate: StateEstimate::new(mean, p0),
            tracker: ReferenceTracker::new(cfg.guidance.reference_mode),
            sprayer: SprayScheduler::new(cfg.spray.tank_capacity_ml),
            max_ticks: (cfg.max_duration_s * cfg.tick_rate_hz).ceil() as u64,
            plant_index,
            world,
            mission,
        })
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn estimate(&self) -> &StateEstimate {
        &self.estimate
    }

    pub fn report_builder(&self) -> ReportBuilder {
        let cfg = &self.mission.config;
        let ids: Vec<String> = self.mission.plants.iter().map(|p| p.id.clone()).collect();
        ReportBuilder::new(
            &cfg.name,
            cfg.seed,
            &ids,
            cfg.spray.tank_capacity_ml,
            cfg.spray.volume_per_plant_ml,
        )
    }

    /// Advances one tick. `Err(PathComplete)` once the path is finished.
    pub fn step(&mut self) -> Result<StepLog, PathComplete> {
        let cfg = &self.mission.config;
        let geo = &self.mission.geometry;
        let reference =
            self.tracker
                .reference_point(&self.mission.path, &self.estimate.mean, cfg.guidance.lookahead_m)?;
        let here = crate::geodesy::EnuCoord::planar(self.estimate.mean.x_m, self.estimate.mean.y_m);
        let chord = reference.point.horizontal_distance(here).max(1e-6);
        let max_curvature = 2.0 / geo.track_width_m;
        let arc = guidance::arc_to_reference(&self.estimate.mean, &reference.point, chord, max_curvature);
        let command = guidance::wheel_speeds(
            arc.curvature_inv_m,
            cfg.guidance.v_nominal_mps,
            geo.track_width_m,
            geo.v_max_mps,
        );

        let bundle = self.world.step(&command);
        let (gps, heading) = self.fuse(&bundle);
        let (sprays_started, spray_failures) = self.spray(&bundle);

        let t = bundle.time_s;
        self.sprayer.active.retain(|(_, end)| *end > t);
        let truth = self.world.true_pose;
        Ok(StepLog {
            tick: bundle.tick,
            time_s: t,
            true_pose: truth,
            est_pose: self.estimate.mean,
            cov_diag: self.estimate.variances(),
            nees: self.estimate.nees(&truth),
            gps,
            heading,
            command,
            reference_arclength_m: reference.arclength_m,
            cross_track_m: self.mission.path.cross_track_error(truth.x_m, truth.y_m),
            sprays_started,
            spray_failures,
            active_sprays: self.sprayer.active.iter().map(|(id, _)| id.clone()).collect(),
            tank_remaining_ml: self.sprayer.tank.remaining_ml,
        })
    }

    fn fuse(&mut self, bundle: &SensorBundle) -> (MeasurementStatus, MeasurementStatus) {
        let q = self
            .mission
            .process_noise
            .covariance(&self.estimate.mean, &bundle.wheel);
        self.estimate = fusion::predict(&self.estimate, &bundle.wheel, &q);

        let heading = match bundle.heading {
            Some(fix) => {
                let fix = HeadingFix {
                    noise_std_rad: self.mission.filter_imu_std_rad.unwrap_or(fix.noise_std_rad),
                    ..fix
                };
                self.apply(fusion::update_heading(&self.estimate, &fix))
            }
            None => MeasurementStatus::Absent,
        };
        let gps = match bundle.gps {
            Some(fix) => {
                let fix = GpsFix {
                    noise_std_m: self.mission.filter_gps_std_m.unwrap_or(fix.noise_std_m),
                    ..fix
                };
                self.apply(fusion::update_gps(&self.estimate, &fix))
            }
            None if bundle.gps_dropped => MeasurementStatus::Outage,
            None => MeasurementStatus::Absent,
        };
        (gps, heading)
    }

    fn apply(&mut self, outcome: fusion::UpdateOutcome) -> MeasurementStatus {
        self.estimate = outcome.estimate;
        if outcome.accepted {
            MeasurementStatus::Accepted
        } else {
            MeasurementStatus::Rejected
        }
    }

    fn spray(&mut self, bundle: &SensorBundle) -> (Vec<SprayEvent>, Vec<SprayFailure>) {
        let geo = &self.mission.geometry;
        let spray_cfg = &self.mission.config.spray;
        let mut started = Vec::new();
        let mut failures = Vec::new();
        let crossing = self.sprayer.crossings(&bundle.detections, 0.5 * geo.camera.width_px);
        for det in crossing {
            let id = det.plant_id.clone().expect("crossings carry plant ids");
            self.sprayer.handled.insert(id.clone());
            let side = det.side;
            let fail = |reason: String, low_tank: bool| SprayFailure {
                plant_id: id.clone(),
                side,
                reason,
                low_tank,
            };

            let angles = pixel_to_angles(&geo.camera, det.center);
            let range = match spray_cfg.range_source {
                RangeSource::Truth => det.range_m,
                RangeSource::GroundPlane => self.world.ground_plane_range(side, angles, spray_cfg.plant_height_m),
            };
            let Some(range) = range else {
                failures.push(fail("no range estimate".into(), false));
                continue;
            };
            let aim = plant_in_camera(range, angles)
                .map(|p| camera_to_nozzle(&p, &geo.camera_to_nozzle))
                .and_then(|p| nozzle_angles(&p));
            let aim = match aim {
                Ok(a) => a,
                Err(e) => {
                    failures.push(fail(e.to_string(), false));
                    continue;
                }
            };
            let plan =
                match targeting::plan_spray(spray_cfg.volume_per_plant_ml, self.mission.flow, &mut self.sprayer.tank) {
                    Ok(p) => p,
                    Err(e) => {
                        let low = matches!(e, TargetingError::LowTank { .. });
                        failures.push(fail(e.to_string(), low));
                        continue;
                    }
                };
            let prev = &mut self.sprayer.nozzle[side_index(side)];
            let delta = incremental_angles(prev, &aim);
            *prev = aim;

            let plant_idx = self.plant_index[&id];
            let plant_pos = self.world.plants[plant_idx].position.to_vector();
            let (origin, dir) = self.world.nozzle_ray_world(side, &aim);
            let miss = ray_miss_distance(&dir, &(plant_pos - origin));
            self.world.plants[plant_idx].sprayed_volume_ml += plan.volume_ml;
            self.sprayer.active.push((id.clone(), bundle.time_s + plan.duration_s));
            started.push(SprayEvent {
                plant_id: id,
                side,
                pan_rad: aim.pan_rad,
                tilt_rad: aim.tilt_rad,
                d_pan_rad: delta.d_pan_rad,
                d_tilt_rad: delta.d_tilt_rad,
                duration_s: plan.duration_s,
                volume_ml: plan.volume_ml,
                miss_m: miss,
            });
        }
        (started, failures)
    }

    /// Runs to completion or the duration cap, handing every step to `sink`.
    pub fn run_with<F: FnMut(&StepLog)>(mut self, mut sink: F) -> RunReport {
        let mut builder = self.report_builder();
        let mut completed = false;
        for _ in 0..self.max_ticks {
            match self.step() {
                Ok(log) => {
                    builder.push(&log);
                    sink(&log);
                }
                Err(PathComplete) => {
                    completed = true;
                    break;
                }
            }
        }
        if !completed {
            // The cap may land exactly on the tick that would finish.
            completed = self
                .tracker
                .reference_point(
                    &self.mission.path,
                    &self.estimate.mean,
                    self.mission.config.guidance.lookahead_m,
                )
                .is_err();
        }
        builder.finish(completed)
    }
}

/// Runs a mission in memory, returning every step and the report.
pub fn run_mission(config: &MissionConfig) -> Result<(Vec<StepLog>, RunReport), ConfigError> {
    let run = MissionRun::new(config)?;
    let mut logs = Vec::new();
    let report = run.run_with(|s| logs.push(s.clone()));
    Ok((logs, report))
}

pub const STEPS_FILE: &str = "steps.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CSV_FILE: &str = "path.csv";

/// Runs a mission and writes `steps.jsonl`, `report.json` and optionally
/// `path.csv` into `out_dir`.
pub fn run_mission_to_dir(config: &MissionConfig, out_dir: &Path, csv: bool) -> Result<RunReport, MissionError> {
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| MissionError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let steps_path = out_dir.join(STEPS_FILE);
    let mut steps = BufWriter::new(File::create(&steps_path).map_err(io_err(&steps_path))?);
    let csv_path = out_dir.join(CSV_FILE);
    let mut csv_out = if csv {
        let mut w = BufWriter::new(File::create(&csv_path).map_err(io_err(&csv_path))?);
        writeln!(w, "{}", csv_header()).map_err(io_err(&csv_path))?;
        Some(w)
    } else {
        None
    };

    let run = MissionRun::new(config)?;
    let mut write_error = None;
    let report = run.run_with(|s| {
        if write_error.is_some() {
            return;
        }
        let line = serde_json::to_string(s).expect("step log serializes");
        if let Err(e) = writeln!(steps, "{line}") {
            write_error = Some((steps_path.clone(), e));
            return;
        }
        if let Some(w) = csv_out.as_mut() {
            if let Err(e) = writeln!(w, "{}", csv_row(s)) {
                write_error = Some((csv_path.clone(), e));
            }
        }
    });
    if let Some((path, e)) = write_error {
        return Err(io_err(&path)(e));
    }
    steps.flush().map_err(io_err(&steps_path))?;
    if let Some(mut w) = csv_out {
        w.flush().map_err(io_err(&csv_path))?;
    }

    let report_path = out_dir.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&report_path, text + "\n").map_err(io_err(&report_path))?;
    Ok(report)
}
