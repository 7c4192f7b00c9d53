//! Miller cylindrical projection between geographic and planar coordinates.
//!
//! Forward: x = R*(lon - lon0), y = R*ln(tan(pi/4 + 0.4*lat))/0.8, angles in
//! radians, R the Earth radius. The 0.8 latitude scaling moderates the
//! stretch toward the poles. The inverse is analytic.

use crate::error::{Error, Result};
use crate::sensors::gps::GpsFix;

pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

/// Planar coordinates in meters: x east, y north.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarCoord {
    pub x: f64,
    pub y: f64,
}

pub fn miller_project(fix: &GpsFix, central_meridian_deg: f64) -> Result<PlanarCoord> {
    let lat = fix.lat_deg.to_radians();
    let lon = fix.lon_deg.to_radians();
    let lon0 = central_meridian_deg.to_radians();
    if lat.abs() >= std::f64::consts::FRAC_PI_2 - 1e-12 {
        return Err(Error::Domain(format!(
            "latitude {} deg too close to the pole for the projection",
            fix.lat_deg
        )));
    }
    let x = EARTH_RADIUS_M * (lon - lon0);
    let y = EARTH_RADIUS_M * (std::f64::consts::FRAC_PI_4 + 0.4 * lat).tan().ln() / 0.8;
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::Numeric(format!(
            "projection produced non-finite coordinates for {fix:?}"
        )));
    }
    Ok(PlanarCoord { x, y })
}

/// Analytic inverse of [`miller_project`]. The returned fix has zero altitude.
pub fn miller_unproject(p: &PlanarCoord, central_meridian_deg: f64) -> Result<GpsFix> {
    if !p.x.is_finite() || !p.y.is_finite() {
        return Err(Error::Domain(format!("non-finite planar input {p:?}")));
    }
    let lon0 = central_meridian_deg.to_radians();
    let lon = p.x / EARTH_RADIUS_M + lon0;
    let lat = ((0.8 * p.y / EARTH_RADIUS_M).exp().atan() - std::f64::consts::FRAC_PI_4) / 0.4;
    let lat_deg = lat.to_degrees();
    let lon_deg = lon.to_degrees();
    if !(-90.0..=90.0).contains(&lat_deg) {
        return Err(Error::Domain(format!(
            "unprojected latitude {lat_deg} deg outside [-90, 90]"
        )));
    }
    GpsFix::new(lat_deg, lon_deg, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_maps_to_origin() {
        let p = miller_project(&GpsFix::new(0.0, 0.0, 0.0).unwrap(), 0.0).unwrap();
        assert_eq!(p.x, 0.0);
        assert!(p.y.abs() < 1e-9);
        let f = miller_unproject(&PlanarCoord { x: 0.0, y: 0.0 }, 0.0).unwrap();
        assert!(f.lat_deg.abs() < 1e-12 && f.lon_deg.abs() < 1e-12);
    }

    #[test]
    fn forward_values_match_independent_evaluation() {
        // Evaluated with 30-digit arithmetic: R*ln(tan(pi/4 + 0.4*40deg))/0.8.
        let y = miller_project(&GpsFix::new(40.0, 0.0, 0.0).unwrap(), 0.0)
            .unwrap()
            .y;
        assert!((y - 4_704_138.283_930_817).abs() < 1.0, "y = {y}");
        // R * 116.4deg in radians.
        let x = miller_project(&GpsFix::new(0.0, 116.4, 0.0).unwrap(), 0.0)
            .unwrap()
            .x;
        assert!((x - 12_957_588.728_337_044).abs() < 1.0, "x = {x}");
    }

    #[test]
    fn inverse_recovers_the_forward_example() {
        let p = PlanarCoord {
            x: 0.0,
            y: 4_704_138.283_930_817,
        };
        let f = miller_unproject(&p, 0.0).unwrap();
        assert!((f.lat_deg.to_radians() - 40.0f64.to_radians()).abs() < 1e-9);
    }

    #[test]
    fn pole_is_rejected() {
        assert!(miller_project(&GpsFix::new(90.0, 0.0, 0.0).unwrap(), 0.0).is_err());
        assert!(miller_project(&GpsFix::new(-90.0, 0.0, 0.0).unwrap(), 0.0).is_err());
    }

    #[test]
    fn far_out_plane_point_rejected() {
        // y large enough that the latitude would leave [-90, 90] is impossible
        // analytically (atan is bounded), but non-finite inputs must fail.
        assert!(miller_unproject(
            &PlanarCoord {
                x: f64::NAN,
                y: 0.0
            },
            0.0
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn round_trip_within_1e9_rad(lat in -85.0f64..85.0, lon in -179.0f64..179.0, lon0 in -10.0f64..10.0) {
            let fix = GpsFix::new(lat, lon, 0.0).unwrap();
            let p = miller_project(&fix, lon0).unwrap();
            let back = miller_unproject(&p, lon0).unwrap();
            prop_assert!((back.lat_deg.to_radians() - lat.to_radians()).abs() < 1e-9);
            prop_assert!((back.lon_deg.to_radians() - lon.to_radians()).abs() < 1e-9);
        }

        #[test]
        fn monotone_in_latitude_affine_in_longitude(lat in -80.0f64..80.0, lon in -170.0f64..170.0) {
            let y0 = miller_project(&GpsFix::new(lat, 0.0, 0.0).unwrap(), 0.0).unwrap().y;
            let y1 = miller_project(&GpsFix::new(lat + 1.0, 0.0, 0.0).unwrap(), 0.0).unwrap().y;
            prop_assert!(y1 > y0);
            let x0 = miller_project(&GpsFix::new(0.0, lon, 0.0).unwrap(), 0.0).unwrap().x;
            let x1 = miller_project(&GpsFix::new(0.0, lon + 1.0, 0.0).unwrap(), 0.0).unwrap().x;
            let per_degree = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
            prop_assert!(((x1 - x0) - per_degree).abs() < 1e-6);
        }
    }
}
