//! Extended Kalman filter over the planar state `(x, y, theta)`.
//!
//! Wheel increments drive the prediction step; RTK position fixes and IMU
//! heading fixes are absolute measurements applied as linear updates with a
//! chi-square innovation gate.

use nalgebra::{Matrix2, Matrix3, Matrix3x2, RowVector3, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geodesy::EnuCoord;
use crate::odometry::{self, wrap_angle, Pose2D, WheelIncrement};

/// chi2 inverse CDF at 0.999 with 2 degrees of freedom (`-2 ln 0.001`).
pub const GATE_CHI2_2DOF: f64 = 13.815_510_557_964_274;
/// chi2 inverse CDF at 0.999 with 1 degree of freedom.
pub const GATE_CHI2_1DOF: f64 = 10.827_566_170_662_733;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateEstimate {
    pub mean: Pose2D,
    pub covariance: Matrix3<f64>,
}

impl StateEstimate {
    /// Symmetrizes `covariance` and clamps negative eigenvalues to zero.
    pub fn new(mean: Pose2D, covariance: Matrix3<f64>) -> Self {
        Self {
            mean: Pose2D::new(mean.x_m, mean.y_m, mean.theta_rad),
            covariance: condition_covariance(covariance),
        }
    }

    pub fn variances(&self) -> [f64; 3] {
        [
            self.covariance[(0, 0)],
            self.covariance[(1, 1)],
            self.covariance[(2, 2)],
        ]
    }

    /// Normalized estimation error squared against a known true pose.
    /// Returns `None` when the covariance is singular.
    pub fn nees(&self, truth: &Pose2D) -> Option<f64> {
        let e = Vector3::new(
            truth.x_m - self.mean.x_m,
            truth.y_m - self.mean.y_m,
            wrap_angle(truth.theta_rad - self.mean.theta_rad),
        );
        let inv = self.covariance.try_inverse()?;
        Some((e.transpose() * inv * e)[(0, 0)])
    }
}

fn condition_covariance(p: Matrix3<f64>) -> Matrix3<f64> {
    let sym = (p + p.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let rebuilt = eig.eigenvectors * Matrix3::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (rebuilt + rebuilt.transpose()) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub position: EnuCoord,
    pub noise_std_m: f64,
    pub timestamp_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadingFix {
    pub theta_rad: f64,
    pub noise_std_rad: f64,
    pub timestamp_s: f64,
}

impl HeadingFix {
    pub fn new(theta_rad: f64, noise_std_rad: f64, timestamp_s: f64) -> Self {
        Self {
            theta_rad: wrap_angle(theta_rad),
            noise_std_rad,
            timestamp_s,
        }
    }
}

/// Result of a measurement update. When gated out, `estimate` is the prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub estimate: StateEstimate,
    pub mahalanobis_sq: f64,
    pub accepted: bool,
}

/// Process noise added at each prediction step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessNoise {
    /// Independent multiplicative slip on each wheel (std as a fraction of
    /// that wheel's travel), mapped through the input Jacobian, plus an
    /// optional additive heading jitter per tick.
    WheelSlip {
        slip_std: f64,
        #[serde(default)]
        heading_jitter_std_rad: f64,
    },
    /// `diag(sxy^2 lbar^2, sxy^2 lbar^2, sth^2 lbar^2)` with `lbar` the mean
    /// wheel travel of the tick.
    TravelScaled { sigma_xy: f64, sigma_theta: f64 },
}

impl ProcessNoise {
    pub fn covariance(&self, pose: &Pose2D, inc: &WheelIncrement) -> Matrix3<f64> {
        match *self {
            ProcessNoise::WheelSlip {
                slip_std,
                heading_jitter_std_rad,
            } => {
                let g: Matrix3x2<f64> = odometry::input_jacobian(pose, inc);
                let m = Matrix2::from_diagonal(&Vector2::new(
                    (slip_std * inc.left_m).powi(2),
                    (slip_std * inc.right_m).powi(2),
                ));
                let mut q = g * m * g.transpose();
                q[(2, 2)] += heading_jitter_std_rad * heading_jitter_std_rad;
                q
            }
            ProcessNoise::TravelScaled { sigma_xy, sigma_theta } => {
                let l2 = inc.mean_travel().powi(2);
                Matrix3::from_diagonal(&Vector3::new(
                    sigma_xy * sigma_xy * l2,
                    sigma_xy * sigma_xy * l2,
                    sigma_theta * sigma_theta * l2,
                ))
            }
        }
    }
}

pub fn predict(s: &StateEstimate, inc: &WheelIncrement, q: &Matrix3<f64>) -> StateEstimate {
    let f = odometry::state_jacobian(&s.mean, inc);
    let mean = odometry::propagate(&s.mean, inc);
    StateEstimate::new(mean, f * s.covariance * f.transpose() + q)
}

pub fn update_gps(s: &StateEstimate, fix: &GpsFix) -> UpdateOutcome {
    #[rustfmt::skip]
    let h = nalgebra::Matrix2x3::new(
        1.0, 0.0, 0.0,
        0.0, 1.0, 0.0,
    );
    let r = Matrix2::identity() * fix.noise_std_m.powi(2);
    let innovation = Vector2::new(fix.position.east_m - s.mean.x_m, fix.position.north_m - s.mean.y_m);
    let s_mat = h * s.covariance * h.transpose() + r;
    let Some(s_inv) = s_mat.try_inverse() else {
        return rejected(s, f64::INFINITY);
    };
    let d2 = (innovation.transpose() * s_inv * innovation)[(0, 0)];
    if !(d2 <= GATE_CHI2_2DOF) {
        return rejected(s, d2);
    }
    let k = s.covariance * h.transpose() * s_inv;
    let dx = k * innovation;
    let i_kh = Matrix3::identity() - k * h;
    // Joseph form
    let p = i_kh * s.covariance * i_kh.transpose() + k * r * k.transpose();
    accepted(s, dx, p, d2)
}

pub fn update_heading(s: &StateEstimate, fix: &HeadingFix) -> UpdateOutcome {
    let h = RowVector3::new(0.0, 0.0, 1.0);
    let r = fix.noise_std_rad.powi(2);
    let innovation = wrap_angle(fix.theta_rad - s.mean.theta_rad);
    let s_scalar = s.covariance[(2, 2)] + r;
    if !(s_scalar > 0.0) {
        return rejected(s, f64::INFINITY);
    }
    let d2 = innovation * innovation / s_scalar;
    if !(d2 <= GATE_CHI2_1DOF) {
        return rejected(s, d2);
    }
    let k: Vector3<f64> = s.covariance.column(2) / s_scalar;
    let dx = k * innovation;
    let i_kh = Matrix3::identity() - k * h;
    let p = i_kh * s.covariance * i_kh.transpose() + k * r * k.transpose();
    accepted(s, dx, p, d2)
}

fn accepted(s: &StateEstimate, dx: Vector3<f64>, p: Matrix3<f64>, d2: f64) -> UpdateOutcome {
    let mean = Pose2D::new(s.mean.x_m + dx.x, s.mean.y_m + dx.y, s.mean.theta_rad + dx.z);
    UpdateOutcome {
        estimate: StateEstimate::new(mean, p),
        mahalanobis_sq: d2,
        accepted: true,
    }
}

fn rejected(s: &StateEstimate, d2: f64) -> UpdateOutcome {
    UpdateOutcome {
        estimate: *s,
        mahalanobis_sq: d2,
        accepted: false,
    }
}
