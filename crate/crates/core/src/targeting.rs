//! Pixel detection to nozzle pan/tilt, plus spray timing and tank accounting.
//!
//! Camera frame: `x` along the optical axis, `y` toward image-right, `z`
//! toward image-up. Image angles are linear in pixels (field of view over
//! pixel count), with `alpha_z` positive right of centre and `alpha_y`
//! positive below centre. A plant at horizontal range `d` then sits at
//! `(d cos az, d sin az, -d cos az tan ay)`.
//!
//! The camera-to-nozzle transform maps camera coordinates into the nozzle
//! frame. With the default mount the nozzle frame is aligned with the camera
//! and offset so that `p_N = p_C + (0.20, 0, 0.10)` m.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetingError {
    #[error("plant bearing {0} rad is at or behind the focal plane")]
    BehindFocalPlane(f64),
    #[error("range must be positive, got {0} m")]
    InvalidRange(f64),
    #[error("plant is not in front of the nozzle (x = {0} m)")]
    NotInFront(f64),
    #[error("target needs pan {pan_rad} rad / tilt {tilt_rad} rad, outside servo limits")]
    Unreachable { pan_rad: f64, tilt_rad: f64 },
    #[error("transform rotation block is not orthonormal")]
    NotRigid,
    #[error("spray volume must be positive, got {0} ml")]
    InvalidVolume(f64),
    #[error("tank has {remaining_ml} ml left, {requested_ml} ml requested")]
    LowTank { remaining_ml: f64, requested_ml: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub width_px: f64,
    pub height_px: f64,
    pub hfov_rad: f64,
    pub vfov_rad: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            width_px: 1080.0,
            height_px: 720.0,
            hfov_rad: 62.2f64.to_radians(),
            vfov_rad: 48.8f64.to_radians(),
        }
    }
}

impl CameraModel {
    pub fn rad_per_px_x(&self) -> f64 {
        self.hfov_rad / self.width_px
    }

    pub fn rad_per_px_y(&self) -> f64 {
        self.vfov_rad / self.height_px
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        (0.0..=self.width_px).contains(&px) && (0.0..=self.height_px).contains(&py)
    }

    /// Inverse of [`pixel_to_angles`].
    pub fn angles_to_pixel(&self, a: CameraAngles) -> (f64, f64) {
        (
            0.5 * self.width_px + a.alpha_z_rad / self.rad_per_px_x(),
            0.5 * self.height_px + a.alpha_y_rad / self.rad_per_px_y(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraSide {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// `(x_min, y_min, x_max, y_max)` in pixels.
    pub bbox: [f64; 4],
    pub center: [f64; 2],
    pub confidence: f64,
    pub side: CameraSide,
    pub plant_id: Option<String>,
    /// Range supplied alongside the detection (simulation only).
    pub range_m: Option<f64>,
}

impl Detection {
    pub fn new(bbox: [f64; 4], confidence: f64, side: CameraSide) -> Self {
        Self {
            bbox,
            center: [0.5 * (bbox[0] + bbox[2]), 0.5 * (bbox[1] + bbox[3])],
            confidence,
            side,
            plant_id: None,
            range_m: None,
        }
    }
}

/// Spherical angles of a plant relative to the camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraAngles {
    pub alpha_y_rad: f64,
    pub alpha_z_rad: f64,
}

pub fn pixel_to_angles(cam: &CameraModel, center: [f64; 2]) -> CameraAngles {
    CameraAngles {
        alpha_z_rad: (center[0] - 0.5 * cam.width_px) * cam.rad_per_px_x(),
        alpha_y_rad: (center[1] - 0.5 * cam.height_px) * cam.rad_per_px_y(),
    }
}

/// Homogeneous camera-frame position of a plant at horizontal range `d`.
pub fn plant_in_camera(d: f64, a: CameraAngles) -> Result<Vector4<f64>, TargetingError> {
    if !(d > 0.0) {
        return Err(TargetingError::InvalidRange(d));
    }
    if a.alpha_z_rad.abs() >= FRAC_PI_2 {
        return Err(TargetingError::BehindFocalPlane(a.alpha_z_rad));
    }
    let (sz, cz) = a.alpha_z_rad.sin_cos();
    Ok(Vector4::new(d * cz, d * sz, -d * cz * a.alpha_y_rad.tan(), 1.0))
}

/// 4x4 homogeneous transform whose rotation block is orthonormal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform(Matrix4<f64>);

impl RigidTransform {
    pub fn new(m: Matrix4<f64>) -> Result<Self, TargetingError> {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        let bottom_ok = m[(3, 0)] == 0.0 && m[(3, 1)] == 0.0 && m[(3, 2)] == 0.0 && m[(3, 3)] == 1.0;
        if ortho > 1e-9 || !bottom_ok {
            return Err(TargetingError::NotRigid);
        }
        Ok(Self(m))
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, TargetingError> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self::new(m)
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self(m)
    }

    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into()
    }

    pub fn translation_part(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into()
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation_part());
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self(m)
    }

    pub fn apply(&self, p: &Vector4<f64>) -> Vector4<f64> {
        self.0 * p
    }
}

/// Default camera-to-nozzle map: aligned axes, `+(0.20, 0, 0.10)` m.
pub fn default_camera_to_nozzle() -> RigidTransform {
    RigidTransform::translation(Vector3::new(0.20, 0.0, 0.10))
}

pub fn camera_to_nozzle(p_camera: &Vector4<f64>, h: &RigidTransform) -> Vector4<f64> {
    h.apply(p_camera)
}

/// Pan (about the nozzle `z` axis) and tilt (elevation toward `+z`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NozzlePose {
    pub pan_rad: f64,
    pub tilt_rad: f64,
}

pub const SERVO_LIMIT_RAD: f64 = FRAC_PI_2;

impl NozzlePose {
    /// Unit aiming direction in the nozzle frame.
    pub fn direction(&self) -> Vector3<f64> {
        let (sp, cp) = self.pan_rad.sin_cos();
        let (st, ct) = self.tilt_rad.sin_cos();
        Vector3::new(ct * cp, ct * sp, st)
    }
}

pub fn nozzle_angles(p_nozzle: &Vector4<f64>) -> Result<NozzlePose, TargetingError> {
    let (x, y, z) = (p_nozzle.x, p_nozzle.y, p_nozzle.z);
    if !(x > 0.0) {
        return Err(TargetingError::NotInFront(x));
    }
    let pan = y.atan2(x);
    let tilt = z.atan2(x.hypot(y));
    if pan.abs() > SERVO_LIMIT_RAD || tilt.abs() > SERVO_LIMIT_RAD {
        return Err(TargetingError::Unreachable {
            pan_rad: pan,
            tilt_rad: tilt,
        });
    }
    Ok(NozzlePose {
        pan_rad: pan,
        tilt_rad: tilt,
    })
}

/// Servo adjustment from the previous target to the next one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleIncrement {
    pub d_tilt_rad: f64,
    pub d_pan_rad: f64,
}

pub fn incremental_angles(prev: &NozzlePose, next: &NozzlePose) -> AngleIncrement {
    AngleIncrement {
        d_tilt_rad: next.tilt_rad - prev.tilt_rad,
        d_pan_rad: next.pan_rad - prev.pan_rad,
    }
}

/// Distance from `point` to the ray from the origin along `direction`
/// (unit length). Points behind the origin measure to the origin.
pub fn ray_miss_distance(direction: &Vector3<f64>, point: &Vector3<f64>) -> f64 {
    let along = direction.dot(point);
    if along <= 0.0 {
        return point.norm();
    }
    (point - direction * along).norm()
}

/// Nozzle flow rate, stored per minute so the nominal 10 l/min figure and the
/// derived spray durations are exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRate {
    pub ml_per_min: f64,
}

impl FlowRate {
    pub fn from_l_per_min(l: f64) -> Self {
        Self { ml_per_min: l * 1000.0 }
    }

    pub fn ml_per_s(&self) -> f64 {
        self.ml_per_min / 60.0
    }

    pub fn duration_s(&self, volume_ml: f64) -> f64 {
        volume_ml * 60.0 / self.ml_per_min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SprayPlan {
    pub duration_s: f64,
    pub volume_ml: f64,
    pub flow_ml_per_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TankState {
    pub capacity_ml: f64,
    pub remaining_ml: f64,
}

impl TankState {
    pub fn full(capacity_ml: f64) -> Self {
        Self {
            capacity_ml,
            remaining_ml: capacity_ml,
        }
    }

    pub fn refill(&mut self) {
        self.remaining_ml = self.capacity_ml;
    }
}

impl Default for TankState {
    fn default() -> Self {
        Self::full(10_000.0)
    }
}

/// Plans one spray and draws its volume from the tank. A low tank leaves the
/// tank untouched.
pub fn plan_spray(volume_ml: f64, flow: FlowRate, tank: &mut TankState) -> Result<SprayPlan, TargetingError> {
    if !(volume_ml > 0.0) {
        return Err(TargetingError::InvalidVolume(volume_ml));
    }
    if tank.remaining_ml < volume_ml {
        return Err(TargetingError::LowTank {
            remaining_ml: tank.remaining_ml,
            requested_ml: volume_ml,
        });
    }
    tank.remaining_ml -= volume_ml;
    Ok(SprayPlan {
        duration_s: flow.duration_s(volume_ml),
        volume_ml,
        flow_ml_per_s: flow.ml_per_s(),
    })
}
