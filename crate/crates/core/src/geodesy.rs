//! WGS-84 conversions between geodetic (LLH), Earth-centered Earth-fixed
//! (ECEF) and local east-north-up (ENU) coordinates.
//!
//! RTK fixes arrive as latitude/longitude/height. The filter and the path
//! follower work in a planar frame, so every absolute fix is taken through
//! `llh -> ecef -> enu` against a fixed [`Datum`].

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WGS-84 semi-major axis (m).
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS-84 semi-minor axis (m).
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
/// First eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);
/// Second eccentricity squared.
pub const WGS84_EP2: f64 = WGS84_E2 / (1.0 - WGS84_E2);

const LAT_TOLERANCE_RAD: f64 = 1e-12;
const MAX_ITERATIONS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeodesyError {
    #[error("latitude {0}° outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("non-finite coordinate component")]
    NonFinite,
    #[error("geodetic inversion did not converge after {iterations} iterations (point too close to Earth's center?)")]
    NoConvergence { iterations: usize },
}

/// Latitude/longitude in degrees, height in meters above the WGS-84 ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticCoord {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub height_m: f64,
}

impl GeodeticCoord {
    /// Validates latitude and normalizes longitude into (-180, 180].
    pub fn new(latitude_deg: f64, longitude_deg: f64, height_m: f64) -> Result<Self, GeodesyError> {
        if !(latitude_deg.is_finite() && longitude_deg.is_finite() && height_m.is_finite()) {
            return Err(GeodesyError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&latitude_deg) {
            return Err(GeodesyError::LatitudeOutOfRange(latitude_deg));
        }
        Ok(Self {
            latitude_deg,
            longitude_deg: normalize_longitude(longitude_deg),
            height_m,
        })
    }
}

fn normalize_longitude(lon: f64) -> f64 {
    let mut l = lon % 360.0;
    if l <= -180.0 {
        l += 360.0;
    } else if l > 180.0 {
        l -= 360.0;
    }
    l
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcefCoord {
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
}

impl EcefCoord {
    pub fn new(x_m: f64, y_m: f64, z_m: f64) -> Self {
        Self { x_m, y_m, z_m }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x_m, self.y_m, self.z_m)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn norm(self) -> f64 {
        self.to_vector().norm()
    }
}

/// Position relative to a [`Datum`] origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnuCoord {
    pub east_m: f64,
    pub north_m: f64,
    #[serde(default)]
    pub up_m: f64,
}

impl EnuCoord {
    pub fn new(east_m: f64, north_m: f64, up_m: f64) -> Self {
        Self { east_m, north_m, up_m }
    }

    /// Point on the ground plane (`up = 0`).
    pub fn planar(east_m: f64, north_m: f64) -> Self {
        Self::new(east_m, north_m, 0.0)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.east_m, self.north_m, self.up_m)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn horizontal_distance(self, other: EnuCoord) -> f64 {
        (self.east_m - other.east_m).hypot(self.north_m - other.north_m)
    }
}

/// Geodetic to ECEF, closed form.
pub fn llh_to_ecef(g: GeodeticCoord) -> EcefCoord {
    let lat = g.latitude_deg.to_radians();
    let lon = g.longitude_deg.to_radians();
    let (sin_lat, cos_lat) = lat.sin_cos();
    let (sin_lon, cos_lon) = lon.sin_cos();
    let n = prime_vertical_radius(sin_lat);
    EcefCoord {
        x_m: (n + g.height_m) * cos_lat * cos_lon,
        y_m: (n + g.height_m) * cos_lat * sin_lon,
        z_m: (n * (1.0 - WGS84_E2) + g.height_m) * sin_lat,
    }
}

fn prime_vertical_radius(sin_lat: f64) -> f64 {
    WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt()
}

/// ECEF to geodetic. Bowring's closed form seeds a fixed-point refinement of
/// latitude that runs until successive iterates agree to 1e-12 rad.
pub fn ecef_to_llh(e: EcefCoord) -> Result<GeodeticCoord, GeodesyError> {
    let (x, y, z) = (e.x_m, e.y_m, e.z_m);
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(GeodesyError::NonFinite);
    }
    let p = x.hypot(y);
    if p == 0.0 && z == 0.0 {
        return Err(GeodesyError::NoConvergence { iterations: 0 });
    }
    let lon = y.atan2(x);

    // Bowring initial guess via the parametric latitude.
    let u = (z * WGS84_A).atan2(p * WGS84_B);
    let (sin_u, cos_u) = u.sin_cos();
    let mut lat = (z + WGS84_EP2 * WGS84_B * sin_u.powi(3)).atan2(p - WGS84_E2 * WGS84_A * cos_u.powi(3));

    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let (sin_lat, cos_lat) = lat.sin_cos();
        let n = prime_vertical_radius(sin_lat);
        let h = p * cos_lat + z * sin_lat - WGS84_A * (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
        let next = z.atan2(p * (1.0 - WGS84_E2 * n / (n + h)));
        if !next.is_finite() {
            break;
        }
        let delta = (next - lat).abs();
        lat = next;
        if delta < LAT_TOLERANCE_RAD {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(GeodesyError::NoConvergence {
            iterations: MAX_ITERATIONS,
        });
    }

    let (sin_lat, cos_lat) = lat.sin_cos();
    let h = p * cos_lat + z * sin_lat - WGS84_A * (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
    Ok(GeodeticCoord {
        latitude_deg: lat.to_degrees(),
        longitude_deg: normalize_longitude(lon.to_degrees()),
        height_m: h,
    })
}

/// Local tangent-plane anchor. The ECEF->ENU rotation and the origin's ECEF
/// position are derived from `origin` once and never mutated.
#[derive(Debug, Clone, PartialEq)]
pub struct Datum {
    origin: GeodeticCoord,
    origin_ecef: EcefCoord,
    rotation: Matrix3<f64>,
}

impl Datum {
    pub fn new(origin: GeodeticCoord) -> Self {
        let lat = origin.latitude_deg.to_radians();
        let lon = origin.longitude_deg.to_radians();
        let (sl, cl) = lat.sin_cos();
        let (so, co) = lon.sin_cos();
        #[rustfmt::skip]
        let rotation = Matrix3::new(
            -so,       co,      0.0,
            -sl * co, -sl * so, cl,
             cl * co,  cl * so, sl,
        );
        Self {
            origin,
            origin_ecef: llh_to_ecef(origin),
            rotation,
        }
    }

    /// Datum anchored exactly at an ECEF point.
    pub fn from_ecef(origin: EcefCoord) -> Result<Self, GeodesyError> {
        Ok(Self {
            origin_ecef: origin,
            ..Self::new(ecef_to_llh(origin)?)
        })
    }

    pub fn origin(&self) -> GeodeticCoord {
        self.origin
    }

    pub fn origin_ecef(&self) -> EcefCoord {
        self.origin_ecef
    }

    /// Rows are the east, north and up unit vectors expressed in ECEF.
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn llh_to_enu(&self, g: GeodeticCoord) -> EnuCoord {
        ecef_to_enu(llh_to_ecef(g), self)
    }

    pub fn enu_to_llh(&self, p: EnuCoord) -> Result<GeodeticCoord, GeodesyError> {
        ecef_to_llh(enu_to_ecef(p, self))
    }
}

pub fn ecef_to_enu(e: EcefCoord, d: &Datum) -> EnuCoord {
    // Subtract componentwise first so the origin maps to exactly zero.
    let delta = Vector3::new(
        e.x_m - d.origin_ecef.x_m,
        e.y_m - d.origin_ecef.y_m,
        e.z_m - d.origin_ecef.z_m,
    );
    EnuCoord::from_vector(d.rotation * delta)
}

pub fn enu_to_ecef(p: EnuCoord, d: &Datum) -> EcefCoord {
    let v = d.rotation.transpose() * p.to_vector();
    EcefCoord::new(
        v.x + d.origin_ecef.x_m,
        v.y + d.origin_ecef.y_m,
        v.z + d.origin_ecef.z_m,
    )
}

/// Surveyed ("actual") and RTK-observed ECEF coordinates of the two field
/// reference points used to assess positioning accuracy.
pub mod table1 {
    use super::EcefCoord;

    #[derive(Debug, Clone, Copy)]
    pub struct SurveyPoint {
        pub name: &'static str,
        pub actual: EcefCoord,
        pub observed: EcefCoord,
    }

    pub const POINTS: [SurveyPoint; 2] = [
        SurveyPoint {
            name: "point1",
            actual: EcefCoord {
                x_m: 1_110_825.867,
                y_m: 6_235_329.584,
                z_m: 750_012.164,
            },
            observed: EcefCoord {
                x_m: 1_110_825.870_85,
                y_m: 6_235_329.552_16,
                z_m: 750_012.098_407,
            },
        },
        SurveyPoint {
            name: "point2",
            actual: EcefCoord {
                x_m: 1_110_706.361,
                y_m: 6_235_347.832,
                z_m: 750_033.936,
            },
            observed: EcefCoord {
                x_m: 1_110_706.365_02,
                y_m: 6_235_347.890_16,
                z_m: 750_033.982_406,
            },
        },
    ];

    /// Error in the x-y plane of the ECEF table, which is the metric the
    /// reported centimeter figures correspond to.
    pub fn horizontal_error_m(a: EcefCoord, b: EcefCoord) -> f64 {
        (a.x_m - b.x_m).hypot(a.y_m - b.y_m)
    }

    pub fn full_error_m(a: EcefCoord, b: EcefCoord) -> f64 {
        (a.to_vector() - b.to_vector()).norm()
    }
}
