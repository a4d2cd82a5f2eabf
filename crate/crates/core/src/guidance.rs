//! Dynamic reference point path following.
//!
//! A reference point slides along the planned polyline at a fixed lookahead
//! distance `L1` from the robot. The robot steers along the unique circular
//! arc that is tangent to its heading and passes through that point, with
//! curvature `2 sin(eta) / L1` where `eta` is the bearing of the point
//! relative to the heading.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::EnuCoord;
use crate::odometry::{wrap_angle, Pose2D};

/// Minimum spacing between consecutive waypoints.
pub const MIN_WAYPOINT_SPACING_M: f64 = 1e-3;
/// Reference points more than this far past abeam count as behind the robot.
pub const BEHIND_MARGIN_RAD: f64 = 0.1;
/// The robot is considered arrived within this distance of the final waypoint.
pub const ARRIVAL_TOLERANCE_M: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GuidanceError {
    #[error("a path needs at least two waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("waypoints {index} and {next} are closer than 1 mm")]
    DuplicateWaypoint { index: usize, next: usize },
    #[error("lookahead distance must be positive, got {0}")]
    InvalidLookahead(f64),
}

/// Signalled once the robot has passed the final waypoint.
#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("path complete")]
pub struct PathComplete;

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    waypoints: Vec<EnuCoord>,
    cumulative_m: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub point: EnuCoord,
    pub arclength_m: f64,
    pub distance_m: f64,
}

impl PlannedPath {
    pub fn new(waypoints: Vec<EnuCoord>) -> Result<Self, GuidanceError> {
        if waypoints.len() < 2 {
            return Err(GuidanceError::TooFewWaypoints(waypoints.len()));
        }
        let mut cumulative_m = Vec::with_capacity(waypoints.len());
        cumulative_m.push(0.0);
        for (i, pair) in waypoints.windows(2).enumerate() {
            let len = pair[0].horizontal_distance(pair[1]);
            if len <= MIN_WAYPOINT_SPACING_M {
                return Err(GuidanceError::DuplicateWaypoint { index: i, next: i + 1 });
            }
            cumulative_m.push(cumulative_m[i] + len);
        }
        Ok(Self {
            waypoints,
            cumulative_m,
        })
    }

    pub fn waypoints(&self) -> &[EnuCoord] {
        &self.waypoints
    }

    pub fn total_length_m(&self) -> f64 {
        *self.cumulative_m.last().unwrap()
    }

    fn segment_count(&self) -> usize {
        self.waypoints.len() - 1
    }

    fn segment(&self, i: usize) -> ((f64, f64), (f64, f64), f64, f64) {
        let a = self.waypoints[i];
        let b = self.waypoints[i + 1];
        let s0 = self.cumulative_m[i];
        let len = self.cumulative_m[i + 1] - s0;
        ((a.east_m, a.north_m), (b.east_m, b.north_m), s0, len)
    }

    /// Point at arclength `s`, clamped to the path.
    pub fn point_at(&self, s: f64) -> EnuCoord {
        let s = s.clamp(0.0, self.total_length_m());
        let i = match self.cumulative_m.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.segment_count() - 1),
            Err(i) => (i - 1).min(self.segment_count() - 1),
        };
        let ((ax, ay), (bx, by), s0, len) = self.segment(i);
        let t = ((s - s0) / len).clamp(0.0, 1.0);
        EnuCoord::planar(ax + t * (bx - ax), ay + t * (by - ay))
    }

    /// Closest point on the part of the path with arclength >= `from_s`.
    pub fn closest_point_from(&self, x: f64, y: f64, from_s: f64) -> PathPoint {
        let mut best: Option<PathPoint> = None;
        for i in 0..self.segment_count() {
            let ((ax, ay), (bx, by), s0, len) = self.segment(i);
            if s0 + len < from_s {
                continue;
            }
            let t_min = ((from_s - s0) / len).max(0.0);
            let (dx, dy) = ((bx - ax) / len, (by - ay) / len);
            let t = (((x - ax) * dx + (y - ay) * dy) / len).clamp(t_min, 1.0);
            let (px, py) = (ax + t * (bx - ax), ay + t * (by - ay));
            let d = (x - px).hypot(y - py);
            if best.is_none_or(|b| d < b.distance_m) {
                best = Some(PathPoint {
                    point: EnuCoord::planar(px, py),
                    arclength_m: s0 + t * len,
                    distance_m: d,
                });
            }
        }
        best.expect("path has at least one segment")
    }

    pub fn closest_point(&self, x: f64, y: f64) -> PathPoint {
        self.closest_point_from(x, y, 0.0)
    }

    /// Distance from `(x, y)` to the nearest point of the polyline.
    pub fn cross_track_error(&self, x: f64, y: f64) -> f64 {
        self.closest_point(x, y).distance_m
    }

    /// Arclengths where the circle of radius `radius` around `(x, y)` meets
    /// the path at or beyond `from_s`.
    fn circle_intersections(&self, x: f64, y: f64, radius: f64, from_s: f64) -> Vec<f64> {
        let mut hits = Vec::new();
        for i in 0..self.segment_count() {
            let ((ax, ay), (bx, by), s0, len) = self.segment(i);
            if s0 + len < from_s {
                continue;
            }
            // |a + t (b - a) - c|^2 = r^2, t in [0, 1]
            let (dx, dy) = (bx - ax, by - ay);
            let (fx, fy) = (ax - x, ay - y);
            let qa = dx * dx + dy * dy;
            let qb = 2.0 * (fx * dx + fy * dy);
            let qc = fx * fx + fy * fy - radius * radius;
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                continue;
            }
            let root = disc.sqrt();
            for t in [(-qb - root) / (2.0 * qa), (-qb + root) / (2.0 * qa)] {
                if (0.0..=1.0).contains(&t) {
                    let s = s0 + t * len;
                    if s >= from_s {
                        hits.push(s);
                    }
                }
            }
        }
        hits
    }

    fn past_end(&self, x: f64, y: f64) -> bool {
        let n = self.waypoints.len();
        let end = self.waypoints[n - 1];
        let prev = self.waypoints[n - 2];
        let (dx, dy) = (end.east_m - prev.east_m, end.north_m - prev.north_m);
        let (rx, ry) = (x - end.east_m, y - end.north_m);
        rx * dx + ry * dy >= 0.0 || rx.hypot(ry) < ARRIVAL_TOLERANCE_M
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// Reference slides continuously at the lookahead distance.
    #[default]
    Dynamic,
    /// Reference is held fixed until the robot closes to half the lookahead,
    /// then jumps ahead. Kept for comparison runs.
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub point: EnuCoord,
    pub arclength_m: f64,
}

/// Owns the monotone progress marker along a path.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTracker {
    mode: ReferenceMode,
    progress_m: f64,
    held: Option<Reference>,
}

impl ReferenceTracker {
    pub fn new(mode: ReferenceMode) -> Self {
        Self {
            mode,
            progress_m: 0.0,
            held: None,
        }
    }

    pub fn progress_m(&self) -> f64 {
        self.progress_m
    }

    pub fn reference_point(
        &mut self,
        path: &PlannedPath,
        pose: &Pose2D,
        lookahead_m: f64,
    ) -> Result<Reference, PathComplete> {
        let total = path.total_length_m();
        if self.progress_m >= total && path.past_end(pose.x_m, pose.y_m) {
            return Err(PathComplete);
        }
        let reference = match self.mode {
            ReferenceMode::Dynamic => self.dynamic_point(path, pose, lookahead_m),
            ReferenceMode::Static => self.static_point(path, pose, lookahead_m),
        };
        self.progress_m = self.progress_m.max(reference.arclength_m);
        if self.progress_m >= total && path.past_end(pose.x_m, pose.y_m) {
            return Err(PathComplete);
        }
        Ok(reference)
    }

    fn dynamic_point(&self, path: &PlannedPath, pose: &Pose2D, lookahead_m: f64) -> Reference {
        let (x, y) = (pose.x_m, pose.y_m);
        let total = path.total_length_m();
        let end = path.point_at(total);
        let closest = path.closest_point_from(x, y, self.progress_m);
        // Final approach: once the end is inside the circle, the path leaves
        // the circle only beyond its end, so the end itself is the target.
        // The arclength check keeps a looping path from short-cutting.
        if end.horizontal_distance(EnuCoord::planar(x, y)) <= lookahead_m && total - closest.arclength_m <= lookahead_m
        {
            return Reference {
                point: end,
                arclength_m: total,
            };
        }
        let hits = path.circle_intersections(x, y, lookahead_m, self.progress_m);
        if let Some(s) = hits.into_iter().reduce(f64::max) {
            return Reference {
                point: path.point_at(s),
                arclength_m: s,
            };
        }
        // Off path: head for the closest point ahead.
        Reference {
            point: closest.point,
            arclength_m: closest.arclength_m,
        }
    }

    fn static_point(&mut self, path: &PlannedPath, pose: &Pose2D, lookahead_m: f64) -> Reference {
        let here = EnuCoord::planar(pose.x_m, pose.y_m);
        if let Some(held) = self.held {
            let reached = held.point.horizontal_distance(here) < 0.5 * lookahead_m;
            let (s, c) = pose.theta_rad.sin_cos();
            let ahead = (held.point.east_m - here.east_m) * c + (held.point.north_m - here.north_m) * s;
            if !reached && ahead > 0.0 {
                return held;
            }
        }
        let closest = path.closest_point_from(pose.x_m, pose.y_m, self.progress_m);
        let s = (closest.arclength_m + lookahead_m).min(path.total_length_m());
        let r = Reference {
            point: path.point_at(s),
            arclength_m: s,
        };
        self.held = Some(r);
        r
    }
}

/// Steering arc toward a reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcCommand {
    pub curvature_inv_m: f64,
    pub eta_rad: f64,
    /// The reference lay behind the robot and a maximum-curvature turn was
    /// emitted instead of the tangent arc.
    pub behind: bool,
}

/// `chord_m` is the robot-to-reference distance, equal to the lookahead on
/// the normal path-following branch.
pub fn arc_to_reference(pose: &Pose2D, reference: &EnuCoord, chord_m: f64, max_curvature: f64) -> ArcCommand {
    let bearing = (reference.north_m - pose.y_m).atan2(reference.east_m - pose.x_m);
    let eta = wrap_angle(bearing - pose.theta_rad);
    if eta.abs() > FRAC_PI_2 + BEHIND_MARGIN_RAD {
        let sign = if eta < 0.0 { -1.0 } else { 1.0 };
        return ArcCommand {
            curvature_inv_m: sign * max_curvature,
            eta_rad: eta,
            behind: true,
        };
    }
    ArcCommand {
        curvature_inv_m: 2.0 * eta.sin() / chord_m,
        eta_rad: eta,
        behind: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceCommand {
    pub v_left_mps: f64,
    pub v_right_mps: f64,
    pub curvature_inv_m: f64,
    #[serde(default)]
    pub saturated: bool,
}

impl GuidanceCommand {
    pub fn stop() -> Self {
        Self {
            v_left_mps: 0.0,
            v_right_mps: 0.0,
            curvature_inv_m: 0.0,
            saturated: false,
        }
    }
}

/// Differential wheel speeds that hold the mean speed at `v_nominal` along
/// an arc of curvature `kappa`. If a wheel would exceed `v_max`, both are
/// scaled down together so the curvature is preserved.
pub fn wheel_speeds(kappa: f64, v_nominal: f64, track_width_m: f64, v_max: f64) -> GuidanceCommand {
    let half = 0.5 * kappa * track_width_m;
    let mut v_left = v_nominal * (1.0 - half);
    let mut v_right = v_nominal * (1.0 + half);
    let peak = v_left.abs().max(v_right.abs());
    let saturated = peak > v_max;
    if saturated {
        let scale = v_max / peak;
        v_left *= scale;
        v_right *= scale;
    }
    GuidanceCommand {
        v_left_mps: v_left,
        v_right_mps: v_right,
        curvature_inv_m: kappa,
        saturated,
    }
}
