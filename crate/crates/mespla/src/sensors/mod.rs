//! Sensor rendering and multi-modal dataset assembly: one aligned record of
//! image, point cloud, GPS track, and path-loss label per receiver pose.

pub mod gps;
pub mod image;
pub mod lidar;
pub mod storage;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scene::geometry::Vec3;
use crate::scene::{oracle_path_loss, PathLossLabel, Route, Scene};
use crate::seeds::{self, stream};
pub use gps::GpsFix;
pub use storage::{load_dataset, save_dataset};
pub use image::{CameraConfig, Image, Pose};
pub use lidar::{LidarConfig, PointCloud};

/// Where a sample was taken; enough to regenerate its label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePose {
    pub route: usize,
    pub step: u64,
    pub trip: u64,
    pub arc_m: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

/// One aligned multi-modal record.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub image: Image,
    pub cloud: PointCloud,
    pub gps_track: Vec<GpsFix>,
    pub label: PathLossLabel,
    pub pose: SamplePose,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Splits must be disjoint and cover 0..n.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(Error::Format(format!("split index {i} out of range {n}")));
            }
            if seen[i] {
                return Err(Error::Format(format!("split index {i} appears twice")));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!(
                "sample {missing} missing from all splits"
            )));
        }
        Ok(())
    }
}

/// Everything needed to re-derive the dataset besides the samples themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub scene: Scene,
    pub routes: Vec<Route>,
    pub origin: GpsFix,
    pub seed: u64,
    pub n_samples: usize,
    pub gps_window: usize,
    pub arc_step_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub scene_config_digest: String,
    pub split: SplitIndices,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Planar diagonal of the main street, the GPS normalization scale.
    pub fn scene_diagonal_m(&self) -> f64 {
        (self.meta.scene.street_length.powi(2) + self.meta.scene.street_width.powi(2)).sqrt()
    }

    /// Content digest over every sample's raw bytes; equal datasets hash equal.
    pub fn content_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for s in &self.samples {
            hasher.update((s.id as u64).to_le_bytes());
            for v in &s.image.data {
                hasher.update(v.to_le_bytes());
            }
            for p in &s.cloud.points {
                for v in p {
                    hasher.update(v.to_le_bytes());
                }
            }
            for f in &s.gps_track {
                hasher.update(f.lat_deg.to_le_bytes());
                hasher.update(f.lon_deg.to_le_bytes());
                hasher.update(f.alt_m.to_le_bytes());
            }
            hasher.update(s.label.pl_db.to_le_bytes());
            hasher.update([s.label.los as u8]);
        }
        hex_digest(hasher)
    }
}

pub(crate) fn hex_digest(hasher: Sha256) -> String {
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Digest of the generating configuration (scene, routes, options).
pub fn config_digest(meta: &DatasetMeta) -> String {
    let json = serde_json::to_string(meta).expect("meta serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hex_digest(hasher)
}

/// Generation knobs beyond the spec-level signature.
#[derive(Debug, Clone, PartialEq)]
pub struct GenOptions {
    pub camera: CameraConfig,
    pub lidar: LidarConfig,
    pub gps_noise_sigma_m: f64,
    pub arc_step_m: f64,
    pub origin: GpsFix,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            camera: CameraConfig::default(),
            lidar: LidarConfig::default(),
            gps_noise_sigma_m: gps::DEFAULT_GPS_NOISE_SIGMA_M,
            arc_step_m: 1.5,
            origin: gps::default_origin(),
        }
    }
}

/// First step index of the trip containing step `k` on a route of length
/// `len` walked at `arc_step`.
fn trip_start_step(trip: u64, len: f64, arc_step: f64) -> u64 {
    if trip == 0 {
        return 0;
    }
    let mut k0 = ((trip as f64) * len / arc_step).ceil() as u64;
    while k0 > 0 && (k0 - 1) as f64 * arc_step >= trip as f64 * len {
        k0 -= 1;
    }
    while (k0 as f64) * arc_step < trip as f64 * len {
        k0 += 1;
    }
    k0
}

/// Generate `n_samples` aligned samples by walking the routes at fixed arc
/// steps, cycling across routes; 70/15/15 split by seeded shuffle.
pub fn generate_dataset(
    scene: &Scene,
    routes: &[Route],
    n_samples: usize,
    gps_window: usize,
    seed: u64,
) -> Result<Dataset> {
    generate_dataset_with(scene, routes, n_samples, gps_window, seed, &GenOptions::default())
}

pub fn generate_dataset_with(
    scene: &Scene,
    routes: &[Route],
    n_samples: usize,
    gps_window: usize,
    seed: u64,
    opts: &GenOptions,
) -> Result<Dataset> {
    if routes.is_empty() {
        return Err(Error::Config("routes must be nonempty".into()));
    }
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    if gps_window == 0 {
        return Err(Error::Config("gps_window must be at least 1".into()));
    }
    if !(opts.arc_step_m > 0.0) {
        return Err(Error::Config("arc_step_m must be positive".into()));
    }
    opts.camera.validate()?;
    opts.lidar.validate()?;
    for r in routes {
        r.validate()?;
    }

    // World anchor of each route start on the globe.
    use crate::preprocess::miller::{miller_project, miller_unproject, PlanarCoord};
    let origin_p = miller_project(&opts.origin, 0.0)?;
    let route_origins: Vec<GpsFix> = routes
        .iter()
        .map(|r| {
            let s = r.point_at(0.0)?;
            let fix = miller_unproject(
                &PlanarCoord {
                    x: origin_p.x + s[0],
                    y: origin_p.y + s[1],
                },
                0.0,
            )?;
            GpsFix::new(fix.lat_deg, fix.lon_deg, r.rx_height)
        })
        .collect::<Result<Vec<_>>>()?;

    let n_routes = routes.len();
    let samples = (0..n_samples)
        .into_par_iter()
        .map(|i| -> Result<Sample> {
            let r = i % n_routes;
            let k = (i / n_routes) as u64;
            let route = &routes[r];
            let len = route.length();
            let raw = k as f64 * opts.arc_step_m;
            let trip = (raw / len).floor() as u64;
            let arc = (raw - trip as f64 * len).clamp(0.0, len);

            let p = route.point_at(arc)?;
            let yaw = route.heading_at(arc)?;
            let pose = Pose {
                x: p[0],
                y: p[1],
                yaw,
            };
            let image = image::render_image(scene, &pose, &opts.camera)?;
            let cloud =
                lidar::render_point_cloud(scene, &pose, &opts.lidar, seeds::derive(seed, stream::LIDAR, i as u64))?;

            // GPS history clamped to the current trip, padded by repeating
            // the trip-start fix.
            let k0 = trip_start_step(trip, len, opts.arc_step_m);
            let mut gps_track = Vec::with_capacity(gps_window);
            for j in 0..gps_window {
                let m = (k + 1 + j as u64).saturating_sub(gps_window as u64).max(k0);
                let arc_m = (m as f64 * opts.arc_step_m - trip as f64 * len).clamp(0.0, len);
                let fix = gps::sample_gps_with_sigma(
                    route,
                    arc_m,
                    &route_origins[r],
                    opts.gps_noise_sigma_m,
                    seeds::derive2(seed, stream::GPS, r as u64, m),
                )?;
                gps_track.push(fix);
            }

            let rx = Vec3::new(p[0], p[1], route.rx_height);
            let label = oracle_path_loss(scene, scene.tx_pose, rx, seed)?;

            Ok(Sample {
                id: i,
                image,
                cloud,
                gps_track,
                label,
                pose: SamplePose {
                    route: r,
                    step: k,
                    trip,
                    arc_m: arc,
                    x: p[0],
                    y: p[1],
                    z: route.rx_height,
                    yaw,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // 70/15/15 split by seeded shuffle: val and test take floor(0.15 n) each,
    // train the remainder, so tiny datasets keep at least their train split.
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut rng = seeds::rng(seed, stream::SPLIT, 0);
    order.shuffle(&mut rng);
    let n_val = (0.15 * n_samples as f64).floor() as usize;
    let n_test = n_val;
    let mut val: Vec<usize> = order[..n_val].to_vec();
    let mut test: Vec<usize> = order[n_val..n_val + n_test].to_vec();
    let mut train: Vec<usize> = order[n_val + n_test..].to_vec();
    val.sort_unstable();
    test.sort_unstable();
    train.sort_unstable();
    let split = SplitIndices { train, val, test };
    split.validate(n_samples)?;

    let meta = DatasetMeta {
        scene: scene.clone(),
        routes: routes.to_vec(),
        origin: opts.origin,
        seed,
        n_samples,
        gps_window,
        arc_step_m: opts.arc_step_m,
    };
    let scene_config_digest = config_digest(&meta);

    Ok(Dataset {
        samples,
        scene_config_digest,
        split,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_scene, generate_routes, SceneConfig};

    fn small_dataset(n: usize) -> Dataset {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let routes = generate_routes(&scene, 4, 11).unwrap();
        generate_dataset(&scene, &routes, n, 8, 21).unwrap()
    }

    #[test]
    fn split_sizes_match_70_15_15() {
        let ds = small_dataset(200);
        assert_eq!(ds.split.val.len(), 30);
        assert_eq!(ds.split.test.len(), 30);
        assert_eq!(ds.split.train.len(), 140);
        ds.split.validate(200).unwrap();
        assert_eq!(ds.samples.len(), 200);
        for (i, s) in ds.samples.iter().enumerate() {
            assert_eq!(s.id, i);
            assert_eq!(s.gps_track.len(), 8);
        }
    }

    #[test]
    fn single_sample_dataset_is_all_train() {
        let ds = small_dataset(1);
        assert_eq!(ds.split.train, vec![0]);
        assert!(ds.split.val.is_empty());
        assert!(ds.split.test.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = small_dataset(60);
        let b = small_dataset(60);
        assert_eq!(a.content_digest(), b.content_digest());
        assert_eq!(a.scene_config_digest, b.scene_config_digest);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_routes_rejected() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        assert!(matches!(
            generate_dataset(&scene, &[], 10, 8, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn labels_regenerate_from_pose_metadata() {
        let ds = small_dataset(80);
        for s in &ds.samples {
            let rx = Vec3::new(s.pose.x, s.pose.y, s.pose.z);
            let re = oracle_path_loss(&ds.meta.scene, ds.meta.scene.tx_pose, rx, ds.meta.seed)
                .unwrap();
            assert_eq!(re.pl_db.to_bits(), s.label.pl_db.to_bits());
            assert_eq!(re.los, s.label.los);
        }
    }

    #[test]
    fn los_labels_match_closed_form_without_shadowing() {
        let mut scene = build_scene(&SceneConfig::default()).unwrap();
        scene.pathloss.shadow_sigma_db = 0.0;
        let routes = generate_routes(&scene, 4, 11).unwrap();
        let ds = generate_dataset(&scene, &routes, 120, 8, 21).unwrap();
        let p = scene.pathloss;
        let pl0 = crate::scene::free_space_intercept_db(
            p.reference_distance_m,
            scene.carrier_frequency,
        );
        for s in ds.samples.iter().filter(|s| s.label.los) {
            let expect =
                pl0 + 10.0 * p.los_exponent * (s.label.distance / p.reference_distance_m).log10();
            assert!(
                (s.label.pl_db - expect).abs() < 1e-12,
                "sample {} deviates from the LOS curve",
                s.id
            );
        }
    }

    #[test]
    fn gps_tracks_share_history_across_consecutive_samples() {
        let ds = small_dataset(200);
        // Samples i and i+4 sit on the same route one step apart; their
        // windows overlap in exactly window-1 fixes.
        let w = ds.meta.gps_window;
        for i in 0..(200 - 4) {
            let a = &ds.samples[i];
            let b = &ds.samples[i + 4];
            if a.pose.route != b.pose.route || a.pose.trip != b.pose.trip {
                continue;
            }
            if a.pose.step + 1 != b.pose.step {
                continue;
            }
            assert_eq!(a.gps_track[1..], b.gps_track[..w - 1]);
        }
    }
}
