//! Per-tick log records and end-of-run summaries.
//!
//! A [`RunReport`] is a pure fold over the [`StepLog`] stream, so a report can
//! always be rebuilt from a saved log.

use serde::{Deserialize, Serialize};

use crate::geodesy::table1;
use crate::guidance::GuidanceCommand;
use crate::odometry::Pose2D;
use crate::targeting::CameraSide;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementStatus {
    Accepted,
    Rejected,
    /// No fix due this tick.
    Absent,
    /// A fix was due but the receiver was in an outage window.
    Outage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SprayEvent {
    pub plant_id: String,
    pub side: CameraSide,
    pub pan_rad: f64,
    pub tilt_rad: f64,
    pub d_pan_rad: f64,
    pub d_tilt_rad: f64,
    pub duration_s: f64,
    pub volume_ml: f64,
    /// Distance from the true plant to the commanded aiming ray.
    pub miss_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SprayFailure {
    pub plant_id: String,
    pub side: CameraSide,
    pub reason: String,
    pub low_tank: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub tick: u64,
    pub time_s: f64,
    pub true_pose: Pose2D,
    pub est_pose: Pose2D,
    pub cov_diag: [f64; 3],
    pub nees: Option<f64>,
    pub gps: MeasurementStatus,
    pub heading: MeasurementStatus,
    pub command: GuidanceCommand,
    pub reference_arclength_m: f64,
    pub cross_track_m: f64,
    pub sprays_started: Vec<SprayEvent>,
    pub spray_failures: Vec<SprayFailure>,
    pub active_sprays: Vec<String>,
    pub tank_remaining_ml: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTrackStats {
    pub mean_m: f64,
    /// Population variance.
    pub variance_m2: f64,
    pub max_m: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasurementCounts {
    pub accepted: u64,
    pub rejected: u64,
    pub absent: u64,
    pub outage: u64,
}

impl MeasurementCounts {
    fn add(&mut self, s: MeasurementStatus) {
        match s {
            MeasurementStatus::Accepted => self.accepted += 1,
            MeasurementStatus::Rejected => self.rejected += 1,
            MeasurementStatus::Absent => self.absent += 1,
            MeasurementStatus::Outage => self.outage += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantResult {
    pub plant_id: String,
    pub sprayed: bool,
    pub time_s: Option<f64>,
    pub side: Option<CameraSide>,
    pub miss_m: Option<f64>,
    pub volume_ml: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TankSummary {
    pub capacity_ml: f64,
    pub consumed_ml: f64,
    pub remaining_ml: f64,
    pub low_tank_refusals: u64,
    /// Full-tank plant count at the configured dose (capacity / dose).
    pub plants_per_tank: f64,
    /// Figure quoted for the physical robot, which holds back some volume.
    pub plants_per_tank_field: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mission: String,
    pub seed: u64,
    pub completed: bool,
    pub timed_out: bool,
    pub ticks: u64,
    pub sim_duration_s: f64,
    pub cross_track: CrossTrackStats,
    pub gps: MeasurementCounts,
    pub heading: MeasurementCounts,
    pub mean_nees: Option<f64>,
    pub final_nees: Option<f64>,
    pub plants: Vec<PlantResult>,
    pub plants_sprayed: usize,
    pub spray_failures: u64,
    pub tank: TankSummary,
}

/// Incremental fold from step logs to a [`RunReport`].
#[derive(Debug, Clone)]
pub struct ReportBuilder {
    mission: String,
    seed: u64,
    capacity_ml: f64,
    dose_ml: f64,
    plants: Vec<PlantResult>,
    ticks: u64,
    last_time_s: f64,
    ct_sum: f64,
    ct_sq_sum: f64,
    ct_max: f64,
    gps: MeasurementCounts,
    heading: MeasurementCounts,
    nees_sum: f64,
    nees_count: u64,
    final_nees: Option<f64>,
    consumed_ml: f64,
    remaining_ml: f64,
    refusals: u64,
    failures: u64,
}

impl ReportBuilder {
    pub fn new(mission: &str, seed: u64, plant_ids: &[String], capacity_ml: f64, dose_ml: f64) -> Self {
        Self {
            mission: mission.to_string(),
            seed,
            capacity_ml,
            dose_ml,
            plants: plant_ids
                .iter()
                .map(|id| PlantResult {
                    plant_id: id.clone(),
                    sprayed: false,
                    time_s: None,
                    side: None,
                    miss_m: None,
                    volume_ml: 0.0,
                })
                .collect(),
            ticks: 0,
            last_time_s: 0.0,
            ct_sum: 0.0,
            ct_sq_sum: 0.0,
            ct_max: 0.0,
            gps: MeasurementCounts::default(),
            heading: MeasurementCounts::default(),
            nees_sum: 0.0,
            nees_count: 0,
            final_nees: None,
            consumed_ml: 0.0,
            remaining_ml: capacity_ml,
            refusals: 0,
            failures: 0,
        }
    }

    pub fn push(&mut self, step: &StepLog) {
        self.ticks += 1;
        self.last_time_s = step.time_s;
        self.ct_sum += step.cross_track_m;
        self.ct_sq_sum += step.cross_track_m * step.cross_track_m;
        self.ct_max = self.ct_max.max(step.cross_track_m);
        self.gps.add(step.gps);
        self.heading.add(step.heading);
        if let Some(n) = step.nees {
            self.nees_sum += n;
            self.nees_count += 1;
        }
        self.final_nees = step.nees;
        for ev in &step.sprays_started {
            self.consumed_ml += ev.volume_ml;
            if let Some(p) = self.plants.iter_mut().find(|p| p.plant_id == ev.plant_id) {
                p.sprayed = true;
                p.time_s = Some(step.time_s);
                p.side = Some(ev.side);
                p.miss_m = Some(ev.miss_m);
                p.volume_ml += ev.volume_ml;
            }
        }
        for f in &step.spray_failures {
            self.failures += 1;
            self.refusals += f.low_tank as u64;
        }
        self.remaining_ml = step.tank_remaining_ml;
    }

    pub fn finish(self, completed: bool) -> RunReport {
        let n = self.ticks.max(1) as f64;
        let mean = self.ct_sum / n;
        let variance = (self.ct_sq_sum / n - mean * mean).max(0.0);
        let plants_sprayed = self.plants.iter().filter(|p| p.sprayed).count();
        RunReport {
            mission: self.mission,
            seed: self.seed,
            completed,
            timed_out: !completed,
            ticks: self.ticks,
            sim_duration_s: self.last_time_s,
            cross_track: CrossTrackStats {
                mean_m: mean,
                variance_m2: variance,
                max_m: self.ct_max,
            },
            gps: self.gps,
            heading: self.heading,
            mean_nees: (self.nees_count > 0).then(|| self.nees_sum / self.nees_count as f64),
            final_nees: self.final_nees,
            plants: self.plants,
            plants_sprayed,
            spray_failures: self.failures,
            tank: TankSummary {
                capacity_ml: self.capacity_ml,
                consumed_ml: self.consumed_ml,
                remaining_ml: self.remaining_ml,
                low_tank_refusals: self.refusals,
                plants_per_tank: (self.capacity_ml / self.dose_ml).floor(),
                plants_per_tank_field: 45,
            },
        }
    }
}

/// Header and one row per tick for plotting path and error traces.
pub fn csv_header() -> &'static str {
    "tick,time_s,true_x_m,true_y_m,true_theta_rad,est_x_m,est_y_m,est_theta_rad,var_x,var_y,var_theta,cross_track_m,gps"
}

pub fn csv_row(s: &StepLog) -> String {
    let gps = match s.gps {
        MeasurementStatus::Accepted => "accepted",
        MeasurementStatus::Rejected => "rejected",
        MeasurementStatus::Absent => "absent",
        MeasurementStatus::Outage => "outage",
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        s.tick,
        s.time_s,
        s.true_pose.x_m,
        s.true_pose.y_m,
        s.true_pose.theta_rad,
        s.est_pose.x_m,
        s.est_pose.y_m,
        s.est_pose.theta_rad,
        s.cov_diag[0],
        s.cov_diag[1],
        s.cov_diag[2],
        s.cross_track_m,
        gps
    )
}

/// Expected errors for the two RTK survey points and their mean, in cm.
pub const TABLE1_EXPECTED_CM: [f64; 3] = [3.2, 5.8, 4.5];
pub const TABLE1_TOLERANCE_CM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Row {
    pub name: &'static str,
    pub horizontal_error_cm: f64,
    pub full_error_cm: f64,
    pub expected_cm: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Verification {
    pub rows: Vec<Table1Row>,
    pub mean_horizontal_error_cm: f64,
    pub mean_full_error_cm: f64,
    pub expected_mean_cm: f64,
    pub mean_pass: bool,
}

impl Table1Verification {
    pub fn pass(&self) -> bool {
        self.mean_pass && self.rows.iter().all(|r| r.pass)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("RTK survey points: actual vs observed (ECEF)\n");
        for r in &self.rows {
            out.push_str(&format!(
                "  {}: horizontal {:.2} cm (expected {:.1} ± {:.1}) [{}]   3-D {:.2} cm\n",
                r.name,
                r.horizontal_error_cm,
                r.expected_cm,
                TABLE1_TOLERANCE_CM,
                if r.pass { "PASS" } else { "FAIL" },
                r.full_error_cm,
            ));
        }
        out.push_str(&format!(
            "  mean: horizontal {:.2} cm (expected {:.1} ± {:.1}) [{}]   3-D {:.2} cm\n",
            self.mean_horizontal_error_cm,
            self.expected_mean_cm,
            TABLE1_TOLERANCE_CM,
            if self.mean_pass { "PASS" } else { "FAIL" },
            self.mean_full_error_cm,
        ));
        out
    }
}

pub fn verify_table1() -> Table1Verification {
    let rows: Vec<Table1Row> = table1::POINTS
        .iter()
        .zip(TABLE1_EXPECTED_CM)
        .map(|(p, expected_cm)| {
            let h = 100.0 * table1::horizontal_error_m(p.actual, p.observed);
            Table1Row {
                name: p.name,
                horizontal_error_cm: h,
                full_error_cm: 100.0 * table1::full_error_m(p.actual, p.observed),
                expected_cm,
                pass: (h - expected_cm).abs() <= TABLE1_TOLERANCE_CM,
            }
        })
        .collect();
    let n = rows.len() as f64;
    let mean_h = rows.iter().map(|r| r.horizontal_error_cm).sum::<f64>() / n;
    let mean_f = rows.iter().map(|r| r.full_error_cm).sum::<f64>() / n;
    Table1Verification {
        mean_pass: (mean_h - TABLE1_EXPECTED_CM[2]).abs() <= TABLE1_TOLERANCE_CM,
        rows,
        mean_horizontal_error_cm: mean_h,
        mean_full_error_cm: mean_f,
        expected_mean_cm: TABLE1_EXPECTED_CM[2],
    }
}
