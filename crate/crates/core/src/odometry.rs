//! Arc-based dead reckoning from wheel-encoder increments.
//!
//! Per tick the left and right wheels travel `l` and `r`. The heading change
//! is `(r - l) / w` and the robot centre moves along an arc of radius
//! `l / dtheta + w / 2`. The arc chord is evaluated in its half-angle form,
//! `lbar * sinc(dtheta / 2) * (cos, sin)(theta + dtheta / 2)`, which equals
//! `(R + w/2) * (sin(theta + dtheta) - sin theta, cos theta - cos(theta + dtheta))`
//! but stays well conditioned as `dtheta -> 0`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix3x2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this heading change per tick the straight-line update is used.
pub const STRAIGHT_EPSILON_RAD: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdometryError {
    #[error("track width must be positive, got {0} m")]
    InvalidTrackWidth(f64),
    #[error("wheel travel {travel_m} m exceeds per-tick limit {limit_m} m (encoder glitch)")]
    EncoderGlitch { travel_m: f64, limit_m: f64 },
    #[error("non-finite wheel travel")]
    NonFinite,
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Planar pose in the navigation frame (x east, y north, heading CCW from east).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x_m: f64,
    pub y_m: f64,
    pub theta_rad: f64,
}

impl Pose2D {
    pub fn new(x_m: f64, y_m: f64, theta_rad: f64) -> Self {
        Self {
            x_m,
            y_m,
            theta_rad: wrap_angle(theta_rad),
        }
    }

    /// Express `local`, given relative to the origin, in the frame of `self`.
    pub fn compose(&self, local: &Pose2D) -> Pose2D {
        let (s, c) = self.theta_rad.sin_cos();
        Pose2D::new(
            self.x_m + c * local.x_m - s * local.y_m,
            self.y_m + s * local.x_m + c * local.y_m,
            self.theta_rad + local.theta_rad,
        )
    }

    pub fn distance_to(&self, other: &Pose2D) -> f64 {
        (self.x_m - other.x_m).hypot(self.y_m - other.y_m)
    }
}

/// Signed wheel travel over one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WheelIncrement {
    pub left_m: f64,
    pub right_m: f64,
    pub track_width_m: f64,
}

impl WheelIncrement {
    pub fn new(left_m: f64, right_m: f64, track_width_m: f64) -> Result<Self, OdometryError> {
        if !(track_width_m > 0.0 && track_width_m.is_finite()) {
            return Err(OdometryError::InvalidTrackWidth(track_width_m));
        }
        if !(left_m.is_finite() && right_m.is_finite()) {
            return Err(OdometryError::NonFinite);
        }
        Ok(Self {
            left_m,
            right_m,
            track_width_m,
        })
    }

    /// Like [`WheelIncrement::new`] but rejects travel beyond `v_max * dt`.
    pub fn checked(left_m: f64, right_m: f64, track_width_m: f64, max_travel_m: f64) -> Result<Self, OdometryError> {
        let inc = Self::new(left_m, right_m, track_width_m)?;
        for travel_m in [left_m, right_m] {
            if travel_m.abs() > max_travel_m {
                return Err(OdometryError::EncoderGlitch {
                    travel_m,
                    limit_m: max_travel_m,
                });
            }
        }
        Ok(inc)
    }

    /// Mean wheel travel, i.e. travel of the axle centre.
    pub fn mean_travel(&self) -> f64 {
        0.5 * (self.left_m + self.right_m)
    }
}

pub fn heading_delta(inc: &WheelIncrement) -> f64 {
    (inc.right_m - inc.left_m) / inc.track_width_m
}

/// `sin(h) / h`, with its Taylor series near zero.
fn sinc(h: f64) -> f64 {
    if h.abs() < 1e-4 {
        let h2 = h * h;
        1.0 - h2 / 6.0 + h2 * h2 / 120.0
    } else {
        h.sin() / h
    }
}

/// d/dh of `sin(h) / h`.
fn sinc_derivative(h: f64) -> f64 {
    if h.abs() < 1e-4 {
        -h / 3.0 + h * h * h / 30.0
    } else {
        (h * h.cos() - h.sin()) / (h * h)
    }
}

pub fn propagate(p: &Pose2D, inc: &WheelIncrement) -> Pose2D {
    let dtheta = heading_delta(inc);
    let lbar = inc.mean_travel();
    if dtheta.abs() < STRAIGHT_EPSILON_RAD {
        let (s, c) = p.theta_rad.sin_cos();
        return Pose2D::new(p.x_m + lbar * c, p.y_m + lbar * s, p.theta_rad + dtheta);
    }
    let chord = lbar * sinc(0.5 * dtheta);
    let (s, c) = (p.theta_rad + 0.5 * dtheta).sin_cos();
    Pose2D::new(p.x_m + chord * c, p.y_m + chord * s, p.theta_rad + dtheta)
}

/// Jacobian of [`propagate`] with respect to the pose `(x, y, theta)`.
pub fn state_jacobian(p: &Pose2D, inc: &WheelIncrement) -> Matrix3<f64> {
    let dtheta = heading_delta(inc);
    let chord = inc.mean_travel() * sinc(0.5 * dtheta);
    let (s, c) = (p.theta_rad + 0.5 * dtheta).sin_cos();
    #[rustfmt::skip]
    let f = Matrix3::new(
        1.0, 0.0, -chord * s,
        0.0, 1.0,  chord * c,
        0.0, 0.0,  1.0,
    );
    f
}

/// Jacobian of [`propagate`] with respect to the wheel travel `(left, right)`.
pub fn input_jacobian(p: &Pose2D, inc: &WheelIncrement) -> Matrix3x2<f64> {
    let w = inc.track_width_m;
    let dtheta = heading_delta(inc);
    let half = 0.5 * dtheta;
    let lbar = inc.mean_travel();
    let k = sinc(half);
    let dk = 0.5 * sinc_derivative(half); // d sinc(dtheta/2) / d dtheta
    let (s, c) = (p.theta_rad + half).sin_cos();

    // d(chord * cos(phi)) / d(dtheta), phi = theta + dtheta / 2
    let dx_ddt = lbar * (dk * c - 0.5 * k * s);
    let dy_ddt = lbar * (dk * s + 0.5 * k * c);
    let (ddt_dl, ddt_dr) = (-1.0 / w, 1.0 / w);

    #[rustfmt::skip]
    let g = Matrix3x2::new(
        0.5 * k * c + dx_ddt * ddt_dl, 0.5 * k * c + dx_ddt * ddt_dr,
        0.5 * k * s + dy_ddt * ddt_dl, 0.5 * k * s + dy_ddt * ddt_dr,
        ddt_dl,                        ddt_dr,
    );
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn inc(l: f64, r: f64) -> WheelIncrement {
        WheelIncrement::new(l, r, 0.5).unwrap()
    }

    /// The arc update written out literally, with the `sin(theta)` term.
    fn literal_arc(p: &Pose2D, i: &WheelIncrement) -> Pose2D {
        let dt = (i.right_m - i.left_m) / i.track_width_m;
        let r = i.left_m / dt;
        let rc = r + i.track_width_m / 2.0;
        Pose2D::new(
            p.x_m + rc * ((p.theta_rad + dt).sin() - p.theta_rad.sin()),
            p.y_m + rc * (p.theta_rad.cos() - (p.theta_rad + dt).cos()),
            p.theta_rad + dt,
        )
    }

    #[test]
    fn heading_delta_examples() {
        assert_eq!(heading_delta(&inc(1.0, 1.0)), 0.0);
        assert_abs_diff_eq!(heading_delta(&inc(1.0, 1.1)), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(heading_delta(&inc(1.1, 1.0)), -0.2, epsilon = 1e-12);
    }

    #[test]
    fn straight_and_arc_examples() {
        let p = propagate(&Pose2D::default(), &inc(2.0, 2.0));
        assert_eq!(p, Pose2D::new(2.0, 0.0, 0.0));

        let p = propagate(&Pose2D::default(), &inc(1.0, 1.1));
        // R = 5, R + w/2 = 5.25
        assert_abs_diff_eq!(p.x_m, 5.25 * 0.2f64.sin(), epsilon = 1e-12);
        assert_abs_diff_eq!(p.y_m, 5.25 * (1.0 - 0.2f64.cos()), epsilon = 1e-12);
        assert_abs_diff_eq!(p.x_m, 1.04301, epsilon = 1e-5);
        assert_abs_diff_eq!(p.y_m, 0.10465, epsilon = 1e-5);
        assert_abs_diff_eq!(p.theta_rad, 0.2, epsilon = 1e-12);

        let p = propagate(&Pose2D::new(1.0, 1.0, PI / 2.0), &inc(2.0, 2.0));
        assert_abs_diff_eq!(p.x_m, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y_m, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.theta_rad, PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn half_angle_form_matches_literal_arc() {
        let start = Pose2D::new(0.3, -1.2, 2.5);
        for (l, r) in [(1.0, 1.1), (0.02, 0.021), (-0.3, 0.4), (0.5, -0.5)] {
            let a = propagate(&start, &inc(l, r));
            let b = literal_arc(&start, &inc(l, r));
            assert_abs_diff_eq!(a.x_m, b.x_m, epsilon = 1e-12);
            assert_abs_diff_eq!(a.y_m, b.y_m, epsilon = 1e-12);
            assert_abs_diff_eq!(a.theta_rad, b.theta_rad, epsilon = 1e-12);
        }
    }

    #[test]
    fn heading_is_wrapped() {
        let p = propagate(&Pose2D::new(0.0, 0.0, 3.1), &inc(0.0, 0.1));
        assert!(p.theta_rad > -PI && p.theta_rad <= PI);
        assert_abs_diff_eq!(p.theta_rad, 3.3 - 2.0 * PI, epsilon = 1e-12);
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
    }

    #[test]
    fn encoder_glitch_guard() {
        assert!(WheelIncrement::checked(0.01, 0.011, 0.5, 0.02).is_ok());
        assert!(matches!(
            WheelIncrement::checked(0.5, 0.011, 0.5, 0.02),
            Err(OdometryError::EncoderGlitch { .. })
        ));
        assert!(WheelIncrement::new(0.1, 0.1, 0.0).is_err());
    }

    fn finite_diff_state(p: &Pose2D, i: &WheelIncrement) -> Matrix3<f64> {
        let h = 1e-6;
        let mut m = Matrix3::zeros();
        for k in 0..3 {
            let mut plus = [p.x_m, p.y_m, p.theta_rad];
            let mut minus = plus;
            plus[k] += h;
            minus[k] -= h;
            let a = propagate(
                &Pose2D {
                    x_m: plus[0],
                    y_m: plus[1],
                    theta_rad: plus[2],
                },
                i,
            );
            let b = propagate(
                &Pose2D {
                    x_m: minus[0],
                    y_m: minus[1],
                    theta_rad: minus[2],
                },
                i,
            );
            m[(0, k)] = (a.x_m - b.x_m) / (2.0 * h);
            m[(1, k)] = (a.y_m - b.y_m) / (2.0 * h);
            m[(2, k)] = wrap_angle(a.theta_rad - b.theta_rad) / (2.0 * h);
        }
        m
    }

    #[test]
    fn state_jacobian_straight_example() {
        let f = state_jacobian(&Pose2D::default(), &inc(1.0, 1.0));
        #[rustfmt::skip]
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0);
        assert!((f - expected).abs().max() < 1e-12);
        let fd = finite_diff_state(&Pose2D::default(), &inc(1.0, 1.0));
        assert!((fd - expected).abs().max() < 1e-6);
    }

    proptest! {
        #[test]
        fn state_jacobian_matches_finite_differences(
            x in -10.0..10.0f64, y in -10.0..10.0f64, th in -3.0..3.0f64,
            l in -0.05..0.05f64, r in -0.05..0.05f64,
        ) {
            let p = Pose2D::new(x, y, th);
            let i = inc(l, r);
            let err = (state_jacobian(&p, &i) - finite_diff_state(&p, &i)).abs().max();
            prop_assert!(err < 1e-6);
        }

        #[test]
        fn input_jacobian_matches_finite_differences(
            th in -3.0..3.0f64, l in -0.05..0.05f64, r in -0.05..0.05f64,
        ) {
            let p = Pose2D::new(0.5, -0.5, th);
            let g = input_jacobian(&p, &inc(l, r));
            let h = 1e-7;
            for (col, (dl, dr)) in [(h, 0.0), (0.0, h)].into_iter().enumerate() {
                let a = propagate(&p, &inc(l + dl, r + dr));
                let b = propagate(&p, &inc(l - dl, r - dr));
                let fd = [
                    (a.x_m - b.x_m) / (2.0 * h),
                    (a.y_m - b.y_m) / (2.0 * h),
                    wrap_angle(a.theta_rad - b.theta_rad) / (2.0 * h),
                ];
                for row in 0..3 {
                    prop_assert!((g[(row, col)] - fd[row]).abs() < 1e-6,
                        "row {} col {}: {} vs {}", row, col, g[(row, col)], fd[row]);
                }
            }
        }

        #[test]
        fn rigid_motion_equivariance(
            x in -50.0..50.0f64, y in -50.0..50.0f64, th in -3.1..3.1f64,
            l in -0.5..0.5f64, r in -0.5..0.5f64,
        ) {
            let start = Pose2D::new(x, y, th);
            let i = inc(l, r);
            let direct = propagate(&start, &i);
            let via_origin = start.compose(&propagate(&Pose2D::default(), &i));
            prop_assert!((direct.x_m - via_origin.x_m).abs() < 1e-9);
            prop_assert!((direct.y_m - via_origin.y_m).abs() < 1e-9);
            prop_assert!(wrap_angle(direct.theta_rad - via_origin.theta_rad).abs() < 1e-12);
        }

        #[test]
        fn straight_composition(
            x in -5.0..5.0f64, y in -5.0..5.0f64, th in -3.1..3.1f64, d in -1.0..1.0f64,
        ) {
            let p = Pose2D::new(x, y, th);
            let twice = propagate(&propagate(&p, &inc(d, d)), &inc(d, d));
            let double = propagate(&p, &inc(2.0 * d, 2.0 * d));
            prop_assert!((twice.x_m - double.x_m).abs() < 1e-12);
            prop_assert!((twice.y_m - double.y_m).abs() < 1e-12);
            prop_assert!((twice.theta_rad - double.theta_rad).abs() < 1e-15);
        }
    }
}
