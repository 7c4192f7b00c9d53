//! GPS fix synthesis along routes: planar route positions mapped to
//! latitude/longitude through the inverse Miller projection, with Gaussian
//! position noise applied in the planar domain.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Route;
use crate::seeds::{self, stream};

pub const DEFAULT_GPS_NOISE_SIGMA_M: f64 = 1.5;

/// A single GPS fix. Range bounds are enforced on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
}

impl GpsFix {
    pub fn new(lat_deg: f64, lon_deg: f64, alt_m: f64) -> Result<Self> {
        if !lat_deg.is_finite() || !(-90.0..=90.0).contains(&lat_deg) {
            return Err(Error::Domain(format!(
                "latitude {lat_deg} outside [-90, 90]"
            )));
        }
        if !lon_deg.is_finite() || !(-180.0..=180.0).contains(&lon_deg) {
            return Err(Error::Domain(format!(
                "longitude {lon_deg} outside [-180, 180]"
            )));
        }
        if !alt_m.is_finite() {
            return Err(Error::Domain(format!("altitude {alt_m} not finite")));
        }
        Ok(Self {
            lat_deg,
            lon_deg,
            alt_m,
        })
    }
}

/// Default anchor of the scene's planar origin on the globe.
pub fn default_origin() -> GpsFix {
    GpsFix {
        lat_deg: 39.9042,
        lon_deg: 116.4074,
        alt_m: 0.0,
    }
}

/// GPS fix for the route position at arc length `arc_m`, with planar noise of
/// the given sigma. Deterministic per (inputs, seed).
pub fn sample_gps_with_sigma(
    route: &Route,
    arc_m: f64,
    origin: &GpsFix,
    noise_sigma_m: f64,
    seed: u64,
) -> Result<GpsFix> {
    use crate::preprocess::miller::{miller_project, miller_unproject, PlanarCoord};

    let p = route.point_at(arc_m)?; // validates the arc position
    let start = route.point_at(0.0)?;
    let mut dx = p[0] - start[0];
    let mut dy = p[1] - start[1];
    if noise_sigma_m > 0.0 {
        let mut rng = seeds::rng(seed, stream::GPS, 0);
        let normal = Normal::new(0.0, noise_sigma_m)
            .map_err(|e| Error::Config(format!("gps noise sigma: {e}")))?;
        dx += normal.sample(&mut rng);
        dy += normal.sample(&mut rng);
    }
    let origin_p = miller_project(origin, 0.0)?;
    let fix = miller_unproject(
        &PlanarCoord {
            x: origin_p.x + dx,
            y: origin_p.y + dy,
        },
        0.0,
    )?;
    GpsFix::new(fix.lat_deg, fix.lon_deg, route.rx_height)
}

/// [`sample_gps_with_sigma`] at the default receiver noise level.
pub fn sample_gps(route: &Route, arc_m: f64, origin: &GpsFix, seed: u64) -> Result<GpsFix> {
    sample_gps_with_sigma(route, arc_m, origin, DEFAULT_GPS_NOISE_SIGMA_M, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::miller::miller_project;

    fn straight_route() -> Route {
        Route {
            waypoints: vec![[0.0, 0.0], [300.0, 0.0], [300.0, 80.0]],
            rx_height: 2.0,
        }
    }

    #[test]
    fn fix_ranges_enforced() {
        assert!(GpsFix::new(91.0, 0.0, 0.0).is_err());
        assert!(GpsFix::new(0.0, -181.0, 0.0).is_err());
        assert!(GpsFix::new(45.0, 120.0, 10.0).is_ok());
    }

    #[test]
    fn route_start_is_the_origin_fix() {
        let route = straight_route();
        let origin = default_origin();
        let fix = sample_gps_with_sigma(&route, 0.0, &origin, 0.0, 1).unwrap();
        assert!((fix.lat_deg - origin.lat_deg).abs() < 1e-10);
        assert!((fix.lon_deg - origin.lon_deg).abs() < 1e-10);
        assert_eq!(fix.alt_m, route.rx_height);
    }

    #[test]
    fn planar_displacement_round_trips() {
        let route = straight_route();
        let origin = default_origin();
        for arc in [10.0, 155.5, 340.0] {
            let f0 = sample_gps_with_sigma(&route, 0.0, &origin, 0.0, 1).unwrap();
            let fs = sample_gps_with_sigma(&route, arc, &origin, 0.0, 1).unwrap();
            let p0 = miller_project(&f0, 0.0).unwrap();
            let ps = miller_project(&fs, 0.0).unwrap();
            let expect = route.point_at(arc).unwrap();
            let start = route.point_at(0.0).unwrap();
            assert!(((ps.x - p0.x) - (expect[0] - start[0])).abs() < 1e-6);
            assert!(((ps.y - p0.y) - (expect[1] - start[1])).abs() < 1e-6);
        }
    }

    #[test]
    fn noise_std_matches_configured_sigma() {
        let route = straight_route();
        let origin = default_origin();
        let clean = miller_project(
            &sample_gps_with_sigma(&route, 100.0, &origin, 0.0, 0).unwrap(),
            0.0,
        )
        .unwrap();
        let mut errs = Vec::new();
        for i in 0..1000u64 {
            let noisy = miller_project(
                &sample_gps_with_sigma(&route, 100.0, &origin, 1.5, i).unwrap(),
                0.0,
            )
            .unwrap();
            errs.push(noisy.x - clean.x);
            errs.push(noisy.y - clean.y);
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64;
        let std = var.sqrt();
        assert!(
            (1.3..=1.7).contains(&std),
            "planar noise std {std} outside [1.3, 1.7]"
        );
    }

    #[test]
    fn arc_outside_route_rejected() {
        let route = straight_route();
        let origin = default_origin();
        assert!(sample_gps(&route, -1.0, &origin, 0).is_err());
        assert!(sample_gps(&route, route.length() + 1.0, &origin, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let route = straight_route();
        let origin = default_origin();
        let a = sample_gps(&route, 42.0, &origin, 5).unwrap();
        let b = sample_gps(&route, 42.0, &origin, 5).unwrap();
        assert_eq!(a, b);
        let c = sample_gps(&route, 42.0, &origin, 6).unwrap();
        assert_ne!(a, c);
    }
}
