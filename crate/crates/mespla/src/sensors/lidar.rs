//! Spinning-lidar point cloud rendering: spherical ray sweep with range
//! noise and seeded outlier injection.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::scene::geometry::Vec3;
use crate::sensors::image::{raycast, HitKind, Pose};

/// Point cloud in the sensor frame (x forward, y left, z up, meters).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
}

impl PointCloud {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!(
                    "point {i} has non-finite coordinates {p:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarConfig {
    pub azimuth_steps: usize,
    pub elevation_steps: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub max_range_m: f64,
    pub range_noise_sigma_m: f64,
    pub outlier_fraction: f64,
    pub height_m: f64,
    pub include_ground: bool,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            azimuth_steps: 720,
            elevation_steps: 16,
            elevation_min_deg: -15.0,
            elevation_max_deg: 15.0,
            max_range_m: 80.0,
            range_noise_sigma_m: 0.02,
            outlier_fraction: 0.02,
            height_m: 2.1,
            include_ground: true,
        }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_range_m > 0.0) {
            return Err(Error::Config(format!(
                "lidar max_range_m must be positive, got {}",
                self.max_range_m
            )));
        }
        if self.azimuth_steps == 0 || self.elevation_steps == 0 {
            return Err(Error::Config(
                "lidar angular resolutions must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::Config(format!(
                "outlier_fraction must be in [0, 1), got {}",
                self.outlier_fraction
            )));
        }
        if self.range_noise_sigma_m < 0.0 {
            return Err(Error::Config("range_noise_sigma_m must be >= 0".into()));
        }
        Ok(())
    }
}

/// Spherical ray sweep from the lidar mount height. Hits return the surface
/// point plus Gaussian range noise; a seeded fraction of returns is replaced
/// by uniform outliers within 1.5x range; misses produce no point.
pub fn render_point_cloud(
    scene: &Scene,
    pose: &Pose,
    cfg: &LidarConfig,
    seed: u64,
) -> Result<PointCloud> {
    cfg.validate()?;
    let origin = Vec3::new(pose.x, pose.y, cfg.height_m);
    // Independent streams so outlier injection never perturbs range noise.
    let mut rng_noise = crate::seeds::rng(seed, crate::seeds::stream::LIDAR, 0);
    let mut rng_outlier = crate::seeds::rng(seed, crate::seeds::stream::LIDAR, 1);
    let noise = if cfg.range_noise_sigma_m > 0.0 {
        Some(Normal::new(0.0, cfg.range_noise_sigma_m).expect("sigma validated"))
    } else {
        None
    };

    let mut points = Vec::new();
    for az_i in 0..cfg.azimuth_steps {
        let sweep_az = 2.0 * std::f64::consts::PI * az_i as f64 / cfg.azimuth_steps as f64;
        let world_az = pose.yaw + sweep_az;
        for el_i in 0..cfg.elevation_steps {
            let el = if cfg.elevation_steps == 1 {
                cfg.elevation_min_deg
            } else {
                cfg.elevation_min_deg
                    + (cfg.elevation_max_deg - cfg.elevation_min_deg) * el_i as f64
                        / (cfg.elevation_steps - 1) as f64
            }
            .to_radians();
            let dir = Vec3::new(
                el.cos() * world_az.cos(),
                el.cos() * world_az.sin(),
                el.sin(),
            );
            let (kind, t, ..) = raycast(scene, origin, dir, Some(cfg.max_range_m), cfg.include_ground);
            if kind == HitKind::Sky {
                continue;
            }
            let r_true = match &noise {
                Some(n) => t + n.sample(&mut rng_noise),
                None => t,
            };
            let is_outlier = rng_outlier.random::<f64>() < cfg.outlier_fraction;
            let p_sensor = if is_outlier {
                let az_o = 2.0 * std::f64::consts::PI * rng_outlier.random::<f64>();
                let sin_el = 2.0 * rng_outlier.random::<f64>() - 1.0;
                let cos_el = (1.0 - sin_el * sin_el).sqrt();
                let r = 1.5 * cfg.max_range_m * rng_outlier.random::<f64>();
                [
                    (r * cos_el * az_o.cos()) as f32,
                    (r * cos_el * az_o.sin()) as f32,
                    (r * sin_el) as f32,
                ]
            } else {
                // Sensor frame: spin azimuth relative to the heading.
                [
                    (r_true * el.cos() * sweep_az.cos()) as f32,
                    (r_true * el.cos() * sweep_az.sin()) as f32,
                    (r_true * el.sin()) as f32,
                ]
            };
            points.push(p_sensor);
        }
    }
    let pc = PointCloud { points };
    pc.validate()?;
    Ok(pc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::geometry::Aabb;
    use crate::scene::{PathLossParams, SceneConfig, build_scene};

    fn bare_scene(buildings: Vec<Aabb>) -> Scene {
        Scene {
            street_width: 1000.0,
            street_length: 1000.0,
            buildings,
            tx_pose: Vec3::new(900.0, 0.0, 1.5), // far outside lidar range
            carrier_frequency: 5.9e9,
            seed: 3,
            side_street: None,
            rx_height: 2.0,
            pathloss: PathLossParams::default(),
        }
    }

    #[test]
    fn empty_scene_yields_empty_cloud() {
        let scene = bare_scene(vec![]);
        let cfg = LidarConfig {
            include_ground: false,
            ..Default::default()
        };
        let pose = Pose {
            x: 100.0,
            y: 0.0,
            yaw: 0.0,
        };
        let pc = render_point_cloud(&scene, &pose, &cfg, 1).unwrap();
        assert!(pc.is_empty());
    }

    #[test]
    fn wall_ranges_match_analytic_distances() {
        // Wall plane at x = +10 relative to the sensor.
        let wall = Aabb::new(
            Vec3::new(110.0, -500.0, 0.0),
            Vec3::new(110.5, 500.0, 100.0),
        )
        .unwrap();
        let scene = bare_scene(vec![wall]);
        let cfg = LidarConfig {
            elevation_steps: 1,
            elevation_min_deg: 0.0,
            elevation_max_deg: 0.0,
            range_noise_sigma_m: 0.0,
            outlier_fraction: 0.0,
            include_ground: false,
            ..Default::default()
        };
        let pose = Pose {
            x: 100.0,
            y: 0.0,
            yaw: 0.0,
        };
        let pc = render_point_cloud(&scene, &pose, &cfg, 1).unwrap();
        assert!(!pc.is_empty());
        let mut saw_exact_normal = false;
        for p in &pc.points {
            let range = ((p[0] as f64).powi(2) + (p[1] as f64).powi(2)).sqrt();
            // Only rays with a forward component reach the wall.
            assert!(p[0] > 0.0);
            let az = (p[1] as f64).atan2(p[0] as f64);
            let analytic = 10.0 / az.cos();
            assert!(
                (range - analytic).abs() < 1e-4,
                "range {range} vs analytic {analytic}"
            );
            if p[1] == 0.0 {
                assert_eq!(p[0], 10.0, "wall-normal ray must return exactly 10 m");
                saw_exact_normal = true;
            }
        }
        assert!(saw_exact_normal);
    }

    #[test]
    fn outlier_injection_count_is_binomial() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let cfg = LidarConfig::default();
        let pose = Pose {
            x: 180.0,
            y: 0.0,
            yaw: 0.0,
        };
        let pc = render_point_cloud(&scene, &pose, &cfg, 99).unwrap();
        let hits = pc.len();
        assert!(hits > 9_000, "expected a dense sweep, got {hits} returns");
        // The clean run shares the noise stream, so exactly the injected
        // returns differ.
        let clean_cfg = LidarConfig {
            outlier_fraction: 0.0,
            ..cfg
        };
        let clean = render_point_cloud(&scene, &pose, &clean_cfg, 99).unwrap();
        assert_eq!(clean.len(), hits, "injection replaces, never adds");
        let expected = cfg.outlier_fraction * hits as f64;
        let differing = pc
            .points
            .iter()
            .zip(clean.points.iter())
            .filter(|(a, b)| a != b)
            .count();
        assert!(
            (differing as f64 - expected).abs() < 30.0,
            "outliers {differing} vs expected {expected}"
        );
    }

    #[test]
    fn cloud_rendering_is_deterministic() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let pose = Pose {
            x: 120.0,
            y: -2.0,
            yaw: 1.0,
        };
        let a = render_point_cloud(&scene, &pose, &LidarConfig::default(), 5).unwrap();
        let b = render_point_cloud(&scene, &pose, &LidarConfig::default(), 5).unwrap();
        assert_eq!(a, b);
        let c = render_point_cloud(&scene, &pose, &LidarConfig::default(), 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn nonpositive_range_rejected() {
        let scene = bare_scene(vec![]);
        let cfg = LidarConfig {
            max_range_m: 0.0,
            ..Default::default()
        };
        let pose = Pose {
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
        };
        assert!(matches!(
            render_point_cloud(&scene, &pose, &cfg, 1),
            Err(Error::Config(_))
        ));
    }
}
