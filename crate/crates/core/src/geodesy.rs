//! Local tangent plane built around an origin fix.
//!
//! Positions are projected with a spherical equirectangular map, which is
//! exact to invert and accurate to well below a millimetre over the tens of
//! metres a scaled vehicle covers.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::wrap_angle;

/// Mean spherical earth radius (m).
pub const EARTH_RADIUS: f64 = 6_371_000.0;

/// Distance from the origin beyond which the flat-earth projection is
/// considered out of range (m).
pub const VALIDITY_RADIUS: f64 = 50_000.0;

const DEG: f64 = PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} is outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} is outside (-180, 180]")]
    InvalidLongitude(f64),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("point is {0:.0} m from the frame origin, beyond the projection validity radius")]
    OutOfRange(f64),
    #[error("horizontal field magnitude {0:e} is too small to define a heading")]
    DegenerateField(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodeticCoord {
    /// Degrees north.
    pub lat: f64,
    /// Degrees east.
    pub lon: f64,
    /// Metres, passed through untouched.
    pub alt: f64,
}

impl GeodeticCoord {
    pub fn new(lat: f64, lon: f64, alt: f64) -> Self {
        Self { lat, lon, alt }
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(self.lat.is_finite() && self.lon.is_finite() && self.alt.is_finite()) {
            return Err(GeoError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(GeoError::InvalidLatitude(self.lat));
        }
        if !(self.lon > -180.0 && self.lon <= 180.0) {
            return Err(GeoError::InvalidLongitude(self.lon));
        }
        Ok(())
    }
}

/// A local tangent plane: x east, y north, metres from `origin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtpFrame {
    pub origin: GeodeticCoord,
    /// Heading of the magnetic reference direction relative to the frame x axis (rad).
    pub heading_offset: f64,
    cos_lat0: f64,
}

impl LtpFrame {
    pub fn origin(&self) -> GeodeticCoord {
        self.origin
    }
}

pub fn make_ltp(origin: GeodeticCoord, heading: f64) -> Result<LtpFrame, GeoError> {
    origin.validate()?;
    if !heading.is_finite() {
        return Err(GeoError::NonFinite);
    }
    Ok(LtpFrame {
        origin,
        heading_offset: heading,
        cos_lat0: (origin.lat * DEG).cos(),
    })
}

/// Projects a geodetic fix into the plane. Returns [`GeoError::OutOfRange`]
/// when the point is further than [`VALIDITY_RADIUS`] from the origin.
pub fn to_ltp(frame: &LtpFrame, geo: &GeodeticCoord) -> Result<Vector2<f64>, GeoError> {
    let p = project(frame, geo);
    let dist = p.norm();
    if !dist.is_finite() {
        return Err(GeoError::NonFinite);
    }
    if dist > VALIDITY_RADIUS {
        return Err(GeoError::OutOfRange(dist));
    }
    Ok(p)
}

fn project(frame: &LtpFrame, geo: &GeodeticCoord) -> Vector2<f64> {
    let o = &frame.origin;
    Vector2::new(
        (geo.lon - o.lon) * frame.cos_lat0 * DEG * EARTH_RADIUS,
        (geo.lat - o.lat) * DEG * EARTH_RADIUS,
    )
}

/// Exact inverse of [`to_ltp`]; altitude is the origin's.
pub fn from_ltp(frame: &LtpFrame, planar: &Vector2<f64>) -> GeodeticCoord {
    let o = &frame.origin;
    GeodeticCoord {
        lat: o.lat + planar.y / (DEG * EARTH_RADIUS),
        lon: o.lon + planar.x / (frame.cos_lat0 * DEG * EARTH_RADIUS),
        alt: o.alt,
    }
}

/// Horizontal field the magnetometer reads, in body axes, for a vehicle at
/// heading `theta`. The reference direction lies along the frame x axis
/// rotated by the frame's heading offset.
pub fn magnetometer_field(theta: f64, frame: &LtpFrame) -> Vector3<f64> {
    let rel = frame.heading_offset - theta;
    Vector3::new(rel.cos(), rel.sin(), 0.0)
}

/// Recovers the planar heading from a body-frame field vector.
pub fn heading_from_magnetometer(field: &Vector3<f64>, frame: &LtpFrame) -> Result<f64, GeoError> {
    let horizontal = field.x.hypot(field.y);
    if !horizontal.is_finite() {
        return Err(GeoError::NonFinite);
    }
    if horizontal < 1e-12 {
        return Err(GeoError::DegenerateField(horizontal));
    }
    Ok(wrap_angle(frame.heading_offset - field.y.atan2(field.x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn madison() -> GeodeticCoord {
        GeodeticCoord::new(43.07, -89.40, 260.0)
    }

    #[test]
    fn frame_stores_inputs() {
        let f = make_ltp(madison(), 0.3).unwrap();
        assert_eq!(f.origin, madison());
        assert_eq!(f.heading_offset, 0.3);
        assert_eq!(make_ltp(madison(), 0.0).unwrap().heading_offset, 0.0);
    }

    #[test]
    fn invalid_origins_rejected() {
        assert!(matches!(
            make_ltp(GeodeticCoord::new(91.0, 0.0, 0.0), 0.0),
            Err(GeoError::InvalidLatitude(_))
        ));
        assert!(matches!(
            make_ltp(GeodeticCoord::new(0.0, -180.0, 0.0), 0.0),
            Err(GeoError::InvalidLongitude(_))
        ));
        assert!(make_ltp(GeodeticCoord::new(0.0, 180.0, 0.0), 0.0).is_ok());
        assert!(make_ltp(GeodeticCoord::new(f64::NAN, 0.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn origin_maps_to_zero() {
        let f = make_ltp(madison(), 0.1).unwrap();
        assert_eq!(to_ltp(&f, &madison()).unwrap(), Vector2::zeros());
        assert_eq!(from_ltp(&f, &Vector2::zeros()), madison());
    }

    #[test]
    fn one_millidegree_north() {
        let f = make_ltp(madison(), 0.0).unwrap();
        let g = GeodeticCoord::new(43.071, -89.40, 260.0);
        let p = to_ltp(&f, &g).unwrap();
        assert_eq!(p.x, 0.0);
        let expected = 1e-3 * PI / 180.0 * 6_371_000.0;
        assert!((p.y - expected).abs() < 1e-6, "{} vs {expected}", p.y);
        assert!((p.y - 111.19).abs() < 0.01);
    }

    #[test]
    fn pure_east_keeps_latitude() {
        let f = make_ltp(madison(), 0.0).unwrap();
        assert_eq!(from_ltp(&f, &Vector2::new(250.0, 0.0)).lat, madison().lat);
    }

    #[test]
    fn round_trip_within_five_km() {
        let f = make_ltp(madison(), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p = Vector2::new(
                rng.random_range(-3500.0..3500.0),
                rng.random_range(-3500.0..3500.0),
            );
            let g = from_ltp(&f, &p);
            let back = from_ltp(&f, &to_ltp(&f, &g).unwrap());
            assert!((back.lat - g.lat).abs() < 1e-9);
            assert!((back.lon - g.lon).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_is_affine() {
        let f = make_ltp(madison(), 0.0).unwrap();
        let a = GeodeticCoord::new(43.071, -89.402, 0.0);
        let b = GeodeticCoord::new(43.069, -89.397, 0.0);
        let mid = GeodeticCoord::new((a.lat + b.lat) / 2.0, (a.lon + b.lon) / 2.0, 0.0);
        let pa = to_ltp(&f, &a).unwrap();
        let pb = to_ltp(&f, &b).unwrap();
        let pm = to_ltp(&f, &mid).unwrap();
        assert!((pm - (pa + pb) / 2.0).norm() < 1e-9);
    }

    #[test]
    fn far_points_flagged() {
        let f = make_ltp(madison(), 0.0).unwrap();
        let far = GeodeticCoord::new(44.0, -89.40, 0.0);
        assert!(matches!(to_ltp(&f, &far), Err(GeoError::OutOfRange(_))));
    }

    #[test]
    fn magnetometer_heading() {
        let f = make_ltp(madison(), 0.0).unwrap();
        let along = Vector3::new(1.0, 0.0, -0.4);
        assert_eq!(heading_from_magnetometer(&along, &f).unwrap(), 0.0);
        let quarter = magnetometer_field(PI / 2.0, &f);
        assert!((heading_from_magnetometer(&quarter, &f).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!(matches!(
            heading_from_magnetometer(&Vector3::new(0.0, 0.0, 1.0), &f),
            Err(GeoError::DegenerateField(_))
        ));

        let g = make_ltp(madison(), 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let h = rng.random_range(-PI..PI);
            let back = heading_from_magnetometer(&magnetometer_field(h, &g), &g).unwrap();
            assert!(wrap_angle(back - h).abs() < 1e-12);
            assert!(back > -PI && back <= PI);
        }
    }
}
