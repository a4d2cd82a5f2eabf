//! Discrete-time world: true kinematics, plant layout and sensor synthesis.
//!
//! Every noise source draws from its own ChaCha substream derived from the
//! mission seed, so adding or reordering sensors never perturbs another
//! sensor's noise sequence.

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::fusion::{GpsFix, HeadingFix};
use crate::geodesy::EnuCoord;
use crate::guidance::GuidanceCommand;
use crate::odometry::{self, wrap_angle, Pose2D, WheelIncrement};
use crate::targeting::{
    default_camera_to_nozzle, CameraAngles, CameraModel, CameraSide, Detection, NozzlePose, RigidTransform,
};

/// Substream ids.
const STREAM_ENCODER: u64 = 1;
const STREAM_GPS: u64 = 2;
const STREAM_IMU: u64 = 3;
const STREAM_CAMERA: u64 = 4;
const STREAM_CASTER: u64 = 5;
const STREAM_INIT: u64 = 6;

/// Smallest measurement std reported to the filter, so a noiseless sensor
/// still yields a well-posed update.
pub const MIN_REPORTED_STD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageWindow {
    pub start_s: f64,
    pub end_s: f64,
}

impl OutageWindow {
    /// Half-open: `[start, end)`.
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Multiplicative per-wheel slip, as a fraction of that wheel's travel.
    pub encoder_slip_std: f64,
    pub gps_std_m: f64,
    pub gps_rate_hz: f64,
    pub gps_outages: Vec<OutageWindow>,
    pub imu_std_rad: f64,
    pub imu_rate_hz: f64,
    pub pixel_std_px: f64,
    pub range_std_m: f64,
    /// Zero-mean heading disturbance per tick from the free-swinging casters.
    pub caster_jitter_std_rad: f64,
    /// Spread of the initial estimate around the true start pose.
    pub initial_std: [f64; 3],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            encoder_slip_std: 0.02,
            gps_std_m: 0.045,
            gps_rate_hz: 5.0,
            gps_outages: Vec::new(),
            imu_std_rad: 0.01,
            imu_rate_hz: 50.0,
            pixel_std_px: 2.0,
            range_std_m: 0.02,
            caster_jitter_std_rad: 0.0,
            initial_std: [0.02, 0.02, 0.01],
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            encoder_slip_std: 0.0,
            gps_std_m: 0.0,
            imu_std_rad: 0.0,
            pixel_std_px: 0.0,
            range_std_m: 0.0,
            caster_jitter_std_rad: 0.0,
            initial_std: [0.0; 3],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let stds = [
            ("encoder_slip_std", self.encoder_slip_std),
            ("gps_std_m", self.gps_std_m),
            ("imu_std_rad", self.imu_std_rad),
            ("pixel_std_px", self.pixel_std_px),
            ("range_std_m", self.range_std_m),
            ("caster_jitter_std_rad", self.caster_jitter_std_rad),
            ("initial_std", self.initial_std.iter().cloned().fold(0.0, f64::min)),
        ];
        for (name, v) in stds {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("noise.{name} must be a finite non-negative value"));
            }
        }
        if !(self.gps_rate_hz > 0.0) {
            return Err("noise.gps_rate_hz must be positive".into());
        }
        if !(self.imu_rate_hz > 0.0) {
            return Err("noise.imu_rate_hz must be positive".into());
        }
        for w in &self.gps_outages {
            if !(w.end_s >= w.start_s) {
                return Err("noise.gps_outages: end_s must not precede start_s".into());
            }
        }
        Ok(())
    }
}

/// Camera pose on the robot base (x forward, y left, z up, origin on the
/// ground under the axle centre). Cameras look sideways, pitched down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraMount {
    pub forward_m: f64,
    pub lateral_m: f64,
    pub height_m: f64,
    pub pitch_down_deg: f64,
}

impl Default for CameraMount {
    fn default() -> Self {
        Self {
            forward_m: 0.0,
            lateral_m: 0.2,
            height_m: 0.5,
            pitch_down_deg: 25.0,
        }
    }
}

impl CameraMount {
    /// Columns are the camera `x` (optical), `y` (image right) and `z`
    /// (image up) axes in the robot frame.
    pub fn axes(&self, side: CameraSide) -> Matrix3<f64> {
        let (sp, cp) = self.pitch_down_deg.to_radians().sin_cos();
        let s = match side {
            CameraSide::Left => 1.0,
            CameraSide::Right => -1.0,
        };
        let optical = Vector3::new(0.0, s * cp, -sp);
        let right = Vector3::new(s, 0.0, 0.0);
        let up = Vector3::new(0.0, s * sp, cp);
        Matrix3::from_columns(&[optical, right, up])
    }

    pub fn position(&self, side: CameraSide) -> Vector3<f64> {
        let s = match side {
            CameraSide::Left => 1.0,
            CameraSide::Right => -1.0,
        };
        Vector3::new(self.forward_m, s * self.lateral_m, self.height_m)
    }

    pub fn robot_to_camera(&self, side: CameraSide, p_robot: &Vector3<f64>) -> Vector3<f64> {
        self.axes(side).transpose() * (p_robot - self.position(side))
    }

    pub fn camera_to_robot(&self, side: CameraSide, p_camera: &Vector3<f64>) -> Vector3<f64> {
        self.axes(side) * p_camera + self.position(side)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotGeometry {
    pub track_width_m: f64,
    pub v_max_mps: f64,
    pub camera: CameraModel,
    pub mount: CameraMount,
    pub camera_to_nozzle: RigidTransform,
    pub min_range_m: f64,
    pub max_range_m: f64,
}

impl Default for RobotGeometry {
    fn default() -> Self {
        Self {
            track_width_m: 0.5,
            v_max_mps: 0.5,
            camera: CameraModel::default(),
            mount: CameraMount::default(),
            camera_to_nozzle: default_camera_to_nozzle(),
            min_range_m: 0.3,
            max_range_m: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub id: String,
    pub position: EnuCoord,
    pub diameter_m: f64,
    pub sprayed_volume_ml: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorBundle {
    pub tick: u64,
    pub time_s: f64,
    pub wheel: WheelIncrement,
    pub gps: Option<GpsFix>,
    /// A fix was due on this tick but fell inside an outage window.
    pub gps_dropped: bool,
    pub heading: Option<HeadingFix>,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone)]
struct Streams {
    encoder: ChaCha8Rng,
    gps: ChaCha8Rng,
    imu: ChaCha8Rng,
    camera: ChaCha8Rng,
    caster: ChaCha8Rng,
    init: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |id| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(id);
            r
        };
        Self {
            encoder: stream(STREAM_ENCODER),
            gps: stream(STREAM_GPS),
            imu: stream(STREAM_IMU),
            camera: stream(STREAM_CAMERA),
            caster: stream(STREAM_CASTER),
            init: stream(STREAM_INIT),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * std
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub true_pose: Pose2D,
    pub plants: Vec<Plant>,
    pub tick: u64,
    tick_rate_hz: f64,
    noise: NoiseConfig,
    geometry: RobotGeometry,
    streams: Streams,
}

impl WorldState {
    pub fn new(
        start: Pose2D,
        plants: Vec<Plant>,
        geometry: RobotGeometry,
        noise: NoiseConfig,
        tick_rate_hz: f64,
        seed: u64,
    ) -> Self {
        Self {
            true_pose: start,
            plants,
            tick: 0,
            tick_rate_hz,
            noise,
            geometry,
            streams: Streams::new(seed),
        }
    }

    pub fn geometry(&self) -> &RobotGeometry {
        &self.geometry
    }

    pub fn noise(&self) -> &NoiseConfig {
        &self.noise
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate_hz
    }

    pub fn time_s(&self) -> f64 {
        self.tick as f64 / self.tick_rate_hz
    }

    fn every_n_ticks(&self, rate_hz: f64) -> u64 {
        ((self.tick_rate_hz / rate_hz).round() as u64).max(1)
    }

    /// Initial filter mean: the true pose perturbed by `initial_std`.
    pub fn sample_initial_estimate(&mut self) -> Pose2D {
        let s = self.noise.initial_std;
        let r = &mut self.streams.init;
        Pose2D::new(
            self.true_pose.x_m + gaussian(r, s[0]),
            self.true_pose.y_m + gaussian(r, s[1]),
            self.true_pose.theta_rad + gaussian(r, s[2]),
        )
    }

    pub fn step(&mut self, cmd: &GuidanceCommand) -> SensorBundle {
        let dt = self.dt();
        let w = self.geometry.track_width_m;
        let true_inc = WheelIncrement {
            left_m: cmd.v_left_mps * dt,
            right_m: cmd.v_right_mps * dt,
            track_width_m: w,
        };
        let mut pose = odometry::propagate(&self.true_pose, &true_inc);
        let jitter = gaussian(&mut self.streams.caster, self.noise.caster_jitter_std_rad);
        pose.theta_rad = wrap_angle(pose.theta_rad + jitter);
        self.true_pose = pose;
        self.tick += 1;
        let time_s = self.time_s();

        let slip = self.noise.encoder_slip_std;
        let el = gaussian(&mut self.streams.encoder, slip);
        let er = gaussian(&mut self.streams.encoder, slip);
        let wheel = WheelIncrement {
            left_m: true_inc.left_m * (1.0 + el),
            right_m: true_inc.right_m * (1.0 + er),
            track_width_m: w,
        };

        let mut gps = None;
        let mut gps_dropped = false;
        if self.tick.is_multiple_of(self.every_n_ticks(self.noise.gps_rate_hz)) {
            if self.noise.gps_outages.iter().any(|o| o.contains(time_s)) {
                gps_dropped = true;
            } else {
                let std = self.noise.gps_std_m;
                let e = gaussian(&mut self.streams.gps, std);
                let n = gaussian(&mut self.streams.gps, std);
                gps = Some(GpsFix {
                    position: EnuCoord::planar(self.true_pose.x_m + e, self.true_pose.y_m + n),
                    noise_std_m: std.max(MIN_REPORTED_STD),
                    timestamp_s: time_s,
                });
            }
        }

        let heading = self
            .tick
            .is_multiple_of(self.every_n_ticks(self.noise.imu_rate_hz))
            .then(|| {
                let std = self.noise.imu_std_rad;
                let noisy = self.true_pose.theta_rad + gaussian(&mut self.streams.imu, std);
                HeadingFix::new(noisy, std.max(MIN_REPORTED_STD), time_s)
            });

        let mut detections = self.project_plants(CameraSide::Left);
        detections.extend(self.project_plants(CameraSide::Right));

        SensorBundle {
            tick: self.tick,
            time_s,
            wheel,
            gps,
            gps_dropped,
            heading,
            detections,
        }
    }

    /// Plant position in the given camera's frame, at the current true pose.
    pub fn plant_in_camera_frame(&self, side: CameraSide, plant: &EnuCoord) -> Vector3<f64> {
        let p = &self.true_pose;
        let (s, c) = p.theta_rad.sin_cos();
        let dx = plant.east_m - p.x_m;
        let dy = plant.north_m - p.y_m;
        let robot = Vector3::new(c * dx + s * dy, -s * dx + c * dy, plant.up_m);
        self.geometry.mount.robot_to_camera(side, &robot)
    }

    /// Image angles and horizontal camera-frame range of a camera-frame point,
    /// or `None` when it lies outside the frustum.
    pub fn frustum_angles(&self, p_cam: &Vector3<f64>) -> Option<(CameraAngles, f64)> {
        let g = &self.geometry;
        let dist = p_cam.norm();
        if p_cam.x <= 0.0 || dist < g.min_range_m || dist > g.max_range_m {
            return None;
        }
        let angles = CameraAngles {
            alpha_z_rad: p_cam.y.atan2(p_cam.x),
            alpha_y_rad: (-p_cam.z).atan2(p_cam.x),
        };
        if angles.alpha_z_rad.abs() > 0.5 * g.camera.hfov_rad || angles.alpha_y_rad.abs() > 0.5 * g.camera.vfov_rad {
            return None;
        }
        Some((angles, p_cam.x.hypot(p_cam.y)))
    }

    /// Synthetic detections for one camera, with pixel and range noise.
    pub fn project_plants(&mut self, side: CameraSide) -> Vec<Detection> {
        let cam = self.geometry.camera;
        let mut out = Vec::new();
        for i in 0..self.plants.len() {
            let p_cam = self.plant_in_camera_frame(side, &self.plants[i].position);
            let Some((angles, range)) = self.frustum_angles(&p_cam) else {
                continue;
            };
            let rng = &mut self.streams.camera;
            let (px, py) = cam.angles_to_pixel(angles);
            let px = px + gaussian(rng, self.noise.pixel_std_px);
            let py = py + gaussian(rng, self.noise.pixel_std_px);
            let range = (range + gaussian(rng, self.noise.range_std_m)).max(0.01);
            if !cam.contains(px, py) {
                continue;
            }
            let dist = p_cam.norm();
            let half_angle = (0.5 * self.plants[i].diameter_m / dist).atan();
            let hw = (half_angle / cam.rad_per_px_x()).min(px).min(cam.width_px - px);
            let hh = (half_angle / cam.rad_per_px_y()).min(py).min(cam.height_px - py);
            let mut det = Detection::new([px - hw, py - hh, px + hw, py + hh], 0.0, side);
            det.center = [px, py];
            det.confidence = (1.0 - 0.1 * dist / self.geometry.max_range_m).clamp(0.0, 1.0);
            det.plant_id = Some(self.plants[i].id.clone());
            det.range_m = Some(range);
            out.push(det);
        }
        out
    }

    /// Nozzle origin and aiming direction in the ENU frame at the current
    /// true pose.
    pub fn nozzle_ray_world(&self, side: CameraSide, aim: &NozzlePose) -> (Vector3<f64>, Vector3<f64>) {
        let g = &self.geometry;
        let h_inv = g.camera_to_nozzle.inverse();
        let origin_cam = h_inv.apply(&Vector4::new(0.0, 0.0, 0.0, 1.0)).xyz();
        let dir_cam = h_inv.rotation() * aim.direction();
        let origin_robot = g.mount.camera_to_robot(side, &origin_cam);
        let dir_robot = g.mount.axes(side) * dir_cam;
        let p = &self.true_pose;
        let (s, c) = p.theta_rad.sin_cos();
        let to_world = |v: &Vector3<f64>| Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z);
        let origin = to_world(&origin_robot) + Vector3::new(p.x_m, p.y_m, 0.0);
        (origin, to_world(&dir_robot))
    }

    /// Height of the camera above a horizontal plane at `target_height_m`
    /// along the ray through `angles`, expressed as the horizontal camera
    /// frame range that [`crate::targeting::plant_in_camera`] expects.
    pub fn ground_plane_range(&self, side: CameraSide, angles: CameraAngles, target_height_m: f64) -> Option<f64> {
        let mount = &self.geometry.mount;
        let (sz, cz) = angles.alpha_z_rad.sin_cos();
        let unit = Vector3::new(cz, sz, -cz * angles.alpha_y_rad.tan());
        let drop_per_unit = -(mount.axes(side) * unit).z;
        let height = mount.height_m - target_height_m;
        (drop_per_unit > 1e-9 && height > 0.0).then(|| height / drop_per_unit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targeting::pixel_to_angles;
    use approx::assert_abs_diff_eq;

    fn world(noise: NoiseConfig, plants: Vec<Plant>) -> WorldState {
        WorldState::new(Pose2D::default(), plants, RobotGeometry::default(), noise, 50.0, 42)
    }

    fn plant(id: &str, e: f64, n: f64, u: f64) -> Plant {
        Plant {
            id: id.into(),
            position: EnuCoord::new(e, n, u),
            diameter_m: 0.25,
            sprayed_volume_ml: 0.0,
        }
    }

    fn straight(v: f64) -> GuidanceCommand {
        GuidanceCommand {
            v_left_mps: v,
            v_right_mps: v,
            curvature_inv_m: 0.0,
            saturated: false,
        }
    }

    #[test]
    fn zero_command_keeps_pose() {
        let mut w = world(NoiseConfig::default(), vec![]);
        let b = w.step(&GuidanceCommand::stop());
        assert_eq!(w.true_pose, Pose2D::default());
        assert_eq!(b.wheel.left_m, 0.0);
        assert_eq!(b.wheel.right_m, 0.0);
        assert_eq!(b.tick, 1);
    }

    #[test]
    fn noiseless_straight_drive() {
        let mut w = world(NoiseConfig::noiseless(), vec![]);
        for _ in 0..50 {
            w.step(&straight(0.2));
        }
        assert_abs_diff_eq!(w.true_pose.x_m, 0.2, epsilon = 1e-12);
        assert_eq!(w.true_pose.y_m, 0.0);
        assert_eq!(w.true_pose.theta_rad, 0.0);
        assert_eq!(w.tick, 50);
    }

    #[test]
    fn same_seed_same_sensors() {
        let plants = vec![plant("a", 1.0, -1.0, 0.3), plant("b", 2.0, 1.2, 0.3)];
        let mut a = world(NoiseConfig::default(), plants.clone());
        let mut b = world(NoiseConfig::default(), plants);
        for _ in 0..300 {
            assert_eq!(a.step(&straight(0.2)), b.step(&straight(0.2)));
        }
    }

    #[test]
    fn gps_cadence_and_outage_count() {
        let noise = NoiseConfig {
            gps_outages: vec![OutageWindow {
                start_s: 10.0,
                end_s: 20.0,
            }],
            ..NoiseConfig::default()
        };
        let mut w = world(noise, vec![]);
        let (mut fixes, mut dropped) = (0, 0);
        for _ in 0..(30 * 50) {
            let b = w.step(&straight(0.2));
            if b.gps.is_some() {
                assert_eq!(b.tick % 10, 0);
                fixes += 1;
            }
            dropped += b.gps_dropped as usize;
        }
        assert_eq!(dropped, 50);
        assert_eq!(fixes, 150 - 50);
    }

    #[test]
    fn plant_abeam_projects_to_center_column() {
        // Plant directly left of the camera: optical axis passes over it.
        let mount = CameraMount::default();
        let mut w = world(NoiseConfig::noiseless(), vec![plant("p", 0.0, 1.2, 0.3)]);
        let dets = w.project_plants(CameraSide::Left);
        assert_eq!(dets.len(), 1);
        assert_abs_diff_eq!(dets[0].center[0], 540.0, epsilon = 1e-9);
        // Elevation relative to the optical axis.
        let depression = (mount.height_m - 0.3f64).atan2(1.2 - mount.lateral_m);
        let expected_ay = depression - mount.pitch_down_deg.to_radians();
        let a = pixel_to_angles(&w.geometry().camera, dets[0].center);
        assert_abs_diff_eq!(a.alpha_y_rad, expected_ay, epsilon = 1e-12);
        assert!(w.project_plants(CameraSide::Right).is_empty());
    }

    #[test]
    fn plant_on_optical_axis_hits_image_center() {
        let mut w = world(NoiseConfig::noiseless(), vec![]);
        let p_robot = CameraMount::default().camera_to_robot(CameraSide::Right, &Vector3::new(1.5, 0.0, 0.0));
        w.plants.push(plant("axis", p_robot.x, p_robot.y, p_robot.z));
        let dets = w.project_plants(CameraSide::Right);
        assert_eq!(dets.len(), 1);
        assert_abs_diff_eq!(dets[0].center[0], 540.0, epsilon = 1e-9);
        assert_abs_diff_eq!(dets[0].center[1], 360.0, epsilon = 1e-9);
        assert_abs_diff_eq!(dets[0].range_m.unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn plant_at_half_hfov_lands_on_right_edge() {
        let mut w = world(NoiseConfig::noiseless(), vec![]);
        let half = 0.5 * w.geometry().camera.hfov_rad - 1e-12;
        let p_cam = Vector3::new(1.0 * half.cos(), 1.0 * half.sin(), 0.0);
        let p_robot = CameraMount::default().camera_to_robot(CameraSide::Left, &p_cam);
        w.plants.push(plant("edge", p_robot.x, p_robot.y, p_robot.z));
        let dets = w.project_plants(CameraSide::Left);
        assert_eq!(dets.len(), 1);
        assert_abs_diff_eq!(dets[0].center[0], 1080.0, epsilon = 1e-6);
    }

    #[test]
    fn plant_behind_camera_is_culled() {
        let mut w = world(NoiseConfig::noiseless(), vec![plant("behind", 0.0, -1.5, 0.3)]);
        assert!(w.project_plants(CameraSide::Left).is_empty());
        assert_eq!(w.project_plants(CameraSide::Right).len(), 1);
    }

    #[test]
    fn detection_bbox_is_centered() {
        let mut w = world(NoiseConfig::default(), vec![plant("p", 0.3, -1.0, 0.3)]);
        for d in w.project_plants(CameraSide::Right) {
            assert_abs_diff_eq!(0.5 * (d.bbox[0] + d.bbox[2]), d.center[0], epsilon = 1e-9);
            assert_abs_diff_eq!(0.5 * (d.bbox[1] + d.bbox[3]), d.center[1], epsilon = 1e-9);
            assert!(d.bbox[0] >= 0.0 && d.bbox[2] <= 1080.0);
        }
    }

    #[test]
    fn ground_plane_range_recovers_true_range() {
        let w = world(NoiseConfig::noiseless(), vec![]);
        let p_robot = Vector3::new(0.4, -1.3, 0.3);
        let p_cam = w.geometry().mount.robot_to_camera(CameraSide::Right, &p_robot);
        let (angles, range) = w.frustum_angles(&p_cam).unwrap();
        let est = w.ground_plane_range(CameraSide::Right, angles, 0.3).unwrap();
        assert_abs_diff_eq!(est, range, epsilon = 1e-12);
    }
}
