//! Synthetic urban T-junction scene: street geometry, receiver routes,
//! line-of-sight testing, and the log-distance path-loss oracle that labels
//! every generated sample.

pub mod geometry;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::seeds::{self, stream};
use geometry::{segment_box_interval, Aabb, Vec3};

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Scene construction parameters, readable from a key-value config file.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneConfig {
    pub street_width_m: f64,
    pub street_length_m: f64,
    pub building_count: usize,
    pub carrier_hz: f64,
    pub tx_height_m: f64,
    pub rx_height_m: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            street_width_m: 14.0,
            street_length_m: 375.0,
            building_count: 5,
            carrier_hz: 5.9e9,
            tx_height_m: 1.5,
            rx_height_m: 2.0,
            seed: 7,
        }
    }
}

impl SceneConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(v) = kv.get_f64("street_width_m")? {
            cfg.street_width_m = v;
        }
        if let Some(v) = kv.get_f64("street_length_m")? {
            cfg.street_length_m = v;
        }
        if let Some(v) = kv.get_usize("building_count")? {
            cfg.building_count = v;
        }
        if let Some(v) = kv.get_f64("carrier_hz")? {
            cfg.carrier_hz = v;
        }
        if let Some(v) = kv.get_f64("tx_height_m")? {
            cfg.tx_height_m = v;
        }
        if let Some(v) = kv.get_f64("rx_height_m")? {
            cfg.rx_height_m = v;
        }
        if let Some(v) = kv.get_u64("seed")? {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.street_width_m > 0.0) {
            return Err(Error::Config(format!(
                "street_width_m must be positive, got {}",
                self.street_width_m
            )));
        }
        if !(self.street_length_m > 0.0) {
            return Err(Error::Config(format!(
                "street_length_m must be positive, got {}",
                self.street_length_m
            )));
        }
        if self.building_count == 0 {
            return Err(Error::Config("building_count must be at least 1".into()));
        }
        if !(self.carrier_hz > 0.0) {
            return Err(Error::Config(format!(
                "carrier_hz must be positive, got {}",
                self.carrier_hz
            )));
        }
        if !(self.tx_height_m > 0.0) {
            return Err(Error::Config(format!(
                "tx_height_m must be positive, got {}",
                self.tx_height_m
            )));
        }
        if !(self.rx_height_m > 0.0) {
            return Err(Error::Config(format!(
                "rx_height_m must be positive, got {}",
                self.rx_height_m
            )));
        }
        Ok(())
    }
}

/// Log-distance propagation constants used by the labeling oracle.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PathLossParams {
    pub reference_distance_m: f64,
    pub los_exponent: f64,
    pub nlos_exponent: f64,
    pub nlos_penalty_db: f64,
    pub shadow_sigma_db: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self {
            reference_distance_m: 1.0,
            los_exponent: 2.1,
            nlos_exponent: 3.2,
            nlos_penalty_db: 12.0,
            shadow_sigma_db: 2.0,
        }
    }
}

/// Opening of the perpendicular side street on the +y edge of the main street.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SideStreet {
    pub x_min: f64,
    pub x_max: f64,
    /// Far end of the drivable side-street rectangle (starts at +street_width/2).
    pub y_max: f64,
}

/// Immutable scene: street footprint, buildings, transmitter pose.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scene {
    pub street_width: f64,
    pub street_length: f64,
    pub buildings: Vec<Aabb>,
    pub tx_pose: Vec3,
    pub carrier_frequency: f64,
    pub seed: u64,
    pub side_street: Option<SideStreet>,
    pub rx_height: f64,
    pub pathloss: PathLossParams,
}

impl Scene {
    /// Planar membership test for the drivable area (main street plus side
    /// street when present). Boundary points count as inside.
    pub fn contains_planar(&self, x: f64, y: f64) -> bool {
        let half = self.street_width / 2.0;
        if x >= 0.0 && x <= self.street_length && y >= -half && y <= half {
            return true;
        }
        if let Some(side) = &self.side_street {
            if x >= side.x_min && x <= side.x_max && y >= half && y <= side.y_max {
                return true;
            }
        }
        false
    }

    /// Deterministic per-building facade color in [0.25, 0.95] per channel.
    pub fn building_albedo(&self, index: usize) -> [f64; 3] {
        let mut rng = seeds::rng(self.seed, stream::ALBEDO, index as u64);
        let mut c = [0.0; 3];
        for ch in &mut c {
            *ch = 0.25 + 0.70 * rng.random::<f64>();
        }
        c
    }
}

const SIDE_STREET_WIDTH_M: f64 = 10.0;
const BUILDING_GAP_M: f64 = 3.0;
const MIN_BUILDING_HEIGHT_M: f64 = 6.0;
const MAX_BUILDING_HEIGHT_M: f64 = 20.0;
const MIN_BUILDING_DEPTH_M: f64 = 8.0;
const MAX_BUILDING_DEPTH_M: f64 = 15.0;

/// Build the deterministic T-junction scene for `config`.
///
/// Buildings are placed flush along both street edges with seeded footprints
/// and heights; the +y row leaves a gap where the side street joins. The
/// transmitter stands at roadside near the street start.
pub fn build_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let length = config.street_length_m;
    let width = config.street_width_m;
    let half = width / 2.0;

    let mut rng = seeds::rng(config.seed, stream::BUILDINGS, 0);

    // Side street exists when the main street is long enough to host it.
    let side_street = if length > 3.0 * SIDE_STREET_WIDTH_M {
        let x_center = length * (0.52 + 0.16 * rng.random::<f64>());
        let y_max = half + (0.4 * length).min(200.0);
        Some(SideStreet {
            x_min: x_center - SIDE_STREET_WIDTH_M / 2.0,
            x_max: x_center + SIDE_STREET_WIDTH_M / 2.0,
            y_max,
        })
    } else {
        None
    };

    let n = config.building_count;
    let n_minus = n.div_ceil(2); // -y row (no opening)
    let n_plus = n - n_minus; // +y row, split around the side street

    let mut buildings = Vec::with_capacity(n);

    // -y row: n_minus slots across the full length.
    place_row(
        &mut buildings,
        &mut rng,
        0.0,
        length,
        n_minus,
        -half,
        RowSide::Minus,
    )?;

    // +y row: distribute buildings over the intervals around the opening.
    if n_plus > 0 {
        match &side_street {
            Some(side) => {
                let left = (side.x_min - 1.0).max(0.0);
                let right_start = (side.x_max + 1.0).min(length);
                let left_len = left;
                let right_len = (length - right_start).max(0.0);
                let total = left_len + right_len;
                let mut n_left = if total > 0.0 {
                    ((n_plus as f64) * left_len / total).round() as usize
                } else {
                    0
                };
                n_left = n_left.min(n_plus);
                if n_left == 0 && left_len > 20.0 {
                    n_left = 1.min(n_plus);
                }
                let n_right = n_plus - n_left;
                place_row(&mut buildings, &mut rng, 0.0, left, n_left, half, RowSide::Plus)?;
                place_row(
                    &mut buildings,
                    &mut rng,
                    right_start,
                    length,
                    n_right,
                    half,
                    RowSide::Plus,
                )?;
            }
            None => {
                place_row(&mut buildings, &mut rng, 0.0, length, n_plus, half, RowSide::Plus)?;
            }
        }
    }

    let tx_pose = Vec3::new(0.1 * length, -half + 1.0, config.tx_height_m);

    Ok(Scene {
        street_width: width,
        street_length: length,
        buildings,
        tx_pose,
        carrier_frequency: config.carrier_hz,
        seed: config.seed,
        side_street,
        rx_height: config.rx_height_m,
        pathloss: PathLossParams::default(),
    })
}

enum RowSide {
    Minus,
    Plus,
}

fn place_row(
    out: &mut Vec<Aabb>,
    rng: &mut rand_chacha::ChaCha8Rng,
    x_start: f64,
    x_end: f64,
    count: usize,
    edge_y: f64,
    side: RowSide,
) -> Result<()> {
    if count == 0 {
        return Ok(());
    }
    let span = x_end - x_start;
    if span <= 0.0 {
        return Err(Error::Config(format!(
            "not enough street frontage to place {count} buildings in [{x_start}, {x_end}]"
        )));
    }
    let slot = span / count as f64;
    for i in 0..count {
        let slot_start = x_start + slot * i as f64;
        let gap = BUILDING_GAP_M.min(slot * 0.2);
        let avail = slot - gap;
        let len = avail * (0.85 + 0.15 * rng.random::<f64>());
        let x0 = slot_start + gap / 2.0;
        let x1 = (x0 + len).min(x_end);
        let depth = MIN_BUILDING_DEPTH_M
            + (MAX_BUILDING_DEPTH_M - MIN_BUILDING_DEPTH_M) * rng.random::<f64>();
        let height = MIN_BUILDING_HEIGHT_M
            + (MAX_BUILDING_HEIGHT_M - MIN_BUILDING_HEIGHT_M) * rng.random::<f64>();
        let (y0, y1) = match side {
            RowSide::Minus => (edge_y - depth, edge_y),
            RowSide::Plus => (edge_y, edge_y + depth),
        };
        out.push(Aabb::new(
            Vec3::new(x0, y0, 0.0),
            Vec3::new(x1, y1, height),
        )?);
    }
    Ok(())
}

/// A receiver route: planar waypoints walked at constant height.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Route {
    pub waypoints: Vec<[f64; 2]>,
    pub rx_height: f64,
}

impl Route {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::Config("route needs at least 2 waypoints".into()));
        }
        for w in self.waypoints.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            if d < 1e-9 {
                return Err(Error::Config(
                    "route has coincident consecutive waypoints".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
            .sum()
    }

    /// Planar position at arc length `s` from the route start.
    pub fn point_at(&self, s: f64) -> Result<[f64; 2]> {
        if s < 0.0 || s > self.length() + 1e-9 {
            return Err(Error::Domain(format!(
                "arc position {s} outside route of length {}",
                self.length()
            )));
        }
        let mut remaining = s;
        for w in self.waypoints.windows(2) {
            let seg = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            if remaining <= seg {
                let t = remaining / seg;
                return Ok([
                    w[0][0] + t * (w[1][0] - w[0][0]),
                    w[0][1] + t * (w[1][1] - w[0][1]),
                ]);
            }
            remaining -= seg;
        }
        Ok(*self.waypoints.last().unwrap())
    }

    /// Unit heading (radians, atan2 convention) of the segment containing `s`.
    pub fn heading_at(&self, s: f64) -> Result<f64> {
        if s < 0.0 || s > self.length() + 1e-9 {
            return Err(Error::Domain(format!(
                "arc position {s} outside route of length {}",
                self.length()
            )));
        }
        let mut remaining = s;
        for w in self.waypoints.windows(2) {
            let seg = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            if remaining < seg {
                return Ok((w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]));
            }
            remaining -= seg;
        }
        let w = &self.waypoints[self.waypoints.len() - 2..];
        Ok((w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]))
    }
}

/// Lay out `n` collection routes: straight lanes along the main street plus,
/// when the scene has a side street, turning routes that drive into it.
/// Directions alternate so the transmitter appears both ahead and behind.
pub fn generate_routes(scene: &Scene, n: usize, seed: u64) -> Result<Vec<Route>> {
    if n == 0 {
        return Err(Error::Config("route count must be at least 1".into()));
    }
    let mut rng = seeds::rng(seed, stream::ROUTES, 0);
    let half = scene.street_width / 2.0;
    let margin = 2.0_f64.min(scene.street_length * 0.05);
    let x0 = margin;
    let x1 = scene.street_length - margin;
    let mut routes = Vec::with_capacity(n);
    for i in 0..n {
        // Lane offsets spread over the middle 60% of the street.
        let frac = (i as f64 + 1.0) / (n as f64 + 1.0);
        let lane_y = -0.6 * half + 1.2 * half * frac;
        let jitter = 0.2 * (rng.random::<f64>() - 0.5);
        let lane_y = lane_y + jitter;

        let turning = i % 2 == 1 && scene.side_street.is_some();
        let reversed = (i / 2) % 2 == 1;
        let route = if turning {
            let side = scene.side_street.as_ref().unwrap();
            let lane_x = if reversed {
                (side.x_min + side.x_max) / 2.0 + 2.5
            } else {
                (side.x_min + side.x_max) / 2.0 - 2.5
            };
            let start_x = if reversed { x1 } else { x0 };
            Route {
                waypoints: vec![
                    [start_x, lane_y],
                    [lane_x, lane_y],
                    [lane_x, side.y_max - margin],
                ],
                rx_height: scene.rx_height,
            }
        } else {
            let (a, b) = if reversed { (x1, x0) } else { (x0, x1) };
            Route {
                waypoints: vec![[a, lane_y], [b, lane_y]],
                rx_height: scene.rx_height,
            }
        };
        route.validate()?;
        for w in &route.waypoints {
            if !scene.contains_planar(w[0], w[1]) {
                return Err(Error::Config(format!(
                    "route waypoint ({}, {}) falls outside the street footprint",
                    w[0], w[1]
                )));
            }
        }
        routes.push(route);
    }
    Ok(routes)
}

/// True iff the open segment tx -> rx passes through any building interior.
pub fn los_blocked(scene: &Scene, tx: Vec3, rx: Vec3) -> Result<bool> {
    if tx == rx {
        return Err(Error::Domain(
            "los test requires distinct endpoints".into(),
        ));
    }
    Ok(scene
        .buildings
        .iter()
        .any(|bb| segment_box_interval(tx, rx, bb).is_some()))
}

/// Path-loss label: the oracle output attached to every sample.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PathLossLabel {
    pub pl_db: f64,
    pub los: bool,
    pub distance: f64,
}

/// Free-space intercept at the reference distance for carrier `f_hz`.
pub fn free_space_intercept_db(d0_m: f64, f_hz: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * d0_m * f_hz / SPEED_OF_LIGHT_M_S).log10()
}

/// Spatially consistent shadowing: the same (position, seed) always yields
/// the same draw. Positions are keyed on a millimeter grid so that repeated
/// visits to a location shadow identically.
fn shadowing_db(rx: Vec3, sigma_db: f64, seed: u64) -> f64 {
    if sigma_db == 0.0 {
        return 0.0;
    }
    let q = |v: f64| (v * 1000.0).round() as i64 as u64;
    let key = seeds::splitmix64(
        seeds::splitmix64(q(rx.x) ^ seed.rotate_left(17))
            ^ seeds::splitmix64(q(rx.y).wrapping_mul(0x9e37_79b9_7f4a_7c15))
            ^ q(rx.z).rotate_left(31),
    );
    let mut rng = seeds::rng(key, stream::LABEL_SHADOW, 0);
    let normal = Normal::new(0.0, sigma_db).expect("sigma validated nonnegative");
    normal.sample(&mut rng)
}

/// Log-distance path loss with an LOS/NLOS exponent switch, an NLOS penalty,
/// and seeded position-keyed shadowing.
pub fn oracle_path_loss(scene: &Scene, tx: Vec3, rx: Vec3, seed: u64) -> Result<PathLossLabel> {
    let p = &scene.pathloss;
    let d = rx.sub(tx).norm();
    if d < p.reference_distance_m {
        return Err(Error::Domain(format!(
            "tx-rx distance {d:.3} m below reference distance {} m",
            p.reference_distance_m
        )));
    }
    let blocked = los_blocked(scene, tx, rx)?;
    let exponent = if blocked {
        p.nlos_exponent
    } else {
        p.los_exponent
    };
    let pl0 = free_space_intercept_db(p.reference_distance_m, scene.carrier_frequency);
    let mut pl = pl0 + 10.0 * exponent * (d / p.reference_distance_m).log10();
    if blocked {
        pl += p.nlos_penalty_db;
    }
    pl += shadowing_db(rx, p.shadow_sigma_db, seed);
    if !pl.is_finite() {
        return Err(Error::Numeric(format!("path loss not finite: {pl}")));
    }
    Ok(PathLossLabel {
        pl_db: pl,
        los: !blocked,
        distance: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn default_scene_matches_config() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        assert_eq!(scene.street_width, 14.0);
        assert_eq!(scene.street_length, 375.0);
        assert_eq!(scene.buildings.len(), 5);
        assert_eq!(scene.tx_pose.z, 1.5);
        assert!(scene.side_street.is_some());
        for bb in &scene.buildings {
            assert!(bb.min.x < bb.max.x && bb.min.y < bb.max.y && bb.min.z < bb.max.z);
            let h = bb.max.z - bb.min.z;
            assert!((MIN_BUILDING_HEIGHT_M..=MAX_BUILDING_HEIGHT_M).contains(&h));
        }
    }

    #[test]
    fn zero_buildings_rejected() {
        let cfg = SceneConfig {
            building_count: 0,
            ..Default::default()
        };
        match build_scene(&cfg) {
            Err(Error::Config(msg)) => assert!(msg.contains("building_count")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn negative_width_rejected_by_name() {
        let cfg = SceneConfig {
            street_width_m: -3.0,
            ..Default::default()
        };
        match build_scene(&cfg) {
            Err(Error::Config(msg)) => assert!(msg.contains("street_width_m")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = build_scene(&SceneConfig::default()).unwrap();
        let b = build_scene(&SceneConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seed_different_buildings() {
        let a = build_scene(&SceneConfig::default()).unwrap();
        let b = build_scene(&SceneConfig {
            seed: 8,
            ..Default::default()
        })
        .unwrap();
        assert_ne!(a.buildings, b.buildings);
    }

    #[test]
    fn four_routes_inside_street() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let routes = generate_routes(&scene, 4, 11).unwrap();
        assert_eq!(routes.len(), 4);
        for r in &routes {
            assert!(r.waypoints.len() >= 2);
            // Brute-force containment: sample densely along the whole route.
            let len = r.length();
            for i in 0..=1000 {
                let p = r.point_at(len * i as f64 / 1000.0).unwrap();
                assert!(
                    scene.contains_planar(p[0], p[1]),
                    "point {p:?} of route escaped the street"
                );
            }
        }
    }

    #[test]
    fn single_route_is_monotone() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let routes = generate_routes(&scene, 1, 11).unwrap();
        assert_eq!(routes.len(), 1);
        let r = &routes[0];
        let xs: Vec<f64> = (0..=100)
            .map(|i| r.point_at(r.length() * i as f64 / 100.0).unwrap()[0])
            .collect();
        assert!(xs.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn zero_routes_rejected() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        assert!(matches!(
            generate_routes(&scene, 0, 11),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn los_blocked_trivial_cases() {
        let scene = Scene {
            street_width: 30.0,
            street_length: 30.0,
            buildings: vec![Aabb::new(
                Vec3::new(10.0, 10.0, 10.0),
                Vec3::new(20.0, 20.0, 20.0),
            )
            .unwrap()],
            tx_pose: Vec3::new(0.0, 0.0, 1.5),
            carrier_frequency: 5.9e9,
            seed: 0,
            side_street: None,
            rx_height: 2.0,
            pathloss: PathLossParams::default(),
        };
        assert!(los_blocked(
            &scene,
            Vec3::new(0.0, 15.0, 15.0),
            Vec3::new(30.0, 15.0, 15.0)
        )
        .unwrap());
        assert!(!los_blocked(
            &scene,
            Vec3::new(0.0, 25.0, 25.0),
            Vec3::new(30.0, 25.0, 25.0)
        )
        .unwrap());
        assert!(los_blocked(&scene, Vec3::new(1.0, 1.0, 1.0), Vec3::new(1.0, 1.0, 1.0)).is_err());
    }

    /// Dense point-sampling occupancy oracle for the slab test.
    fn sampled_blocked(scene: &Scene, a: Vec3, b: Vec3) -> bool {
        let n = 10_000;
        for i in 1..n {
            let t = i as f64 / n as f64;
            let p = a.add(b.sub(a).scale(t));
            if scene.buildings.iter().any(|bb| bb.contains_interior(p)) {
                return true;
            }
        }
        false
    }

    #[test]
    fn los_agrees_with_sampling_oracle() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let mut rng = seeds::rng(123, stream::GRADCHECK, 0);
        for _ in 0..1000 {
            let a = Vec3::new(
                rng.random::<f64>() * 400.0 - 10.0,
                rng.random::<f64>() * 80.0 - 40.0,
                rng.random::<f64>() * 25.0,
            );
            let b = Vec3::new(
                rng.random::<f64>() * 400.0 - 10.0,
                rng.random::<f64>() * 80.0 - 40.0,
                rng.random::<f64>() * 25.0,
            );
            if a == b {
                continue;
            }
            assert_eq!(
                los_blocked(&scene, a, b).unwrap(),
                sampled_blocked(&scene, a, b),
                "slab test disagrees with sampling for {a:?} -> {b:?}"
            );
        }
    }

    #[test]
    fn free_space_intercept_at_5_9_ghz() {
        // 20*log10(4*pi*1*5.9e9 / 299792458) evaluated independently.
        let pl0 = free_space_intercept_db(1.0, 5.9e9);
        assert!((pl0 - 47.864823454726258).abs() < 1e-9);
        assert!((pl0 - 47.86).abs() < 0.01);
    }

    fn no_shadow_scene() -> Scene {
        let mut scene = build_scene(&SceneConfig::default()).unwrap();
        scene.pathloss.shadow_sigma_db = 0.0;
        scene.buildings.clear(); // open field: always LOS
        scene
    }

    #[test]
    fn exponent_times_decades_identity() {
        let scene = no_shadow_scene();
        let tx = Vec3::new(0.0, 0.0, 1.5);
        let at = |d: f64| {
            oracle_path_loss(&scene, tx, Vec3::new(d, 0.0, 1.5), 9)
                .unwrap()
                .pl_db
        };
        let pl0 = free_space_intercept_db(1.0, scene.carrier_frequency);
        assert!((at(1.0) - pl0).abs() < 1e-9);
        assert!((at(100.0) - (pl0 + 42.0)).abs() < 1e-9);
    }

    #[test]
    fn oracle_rejects_subreference_distance() {
        let scene = no_shadow_scene();
        let tx = Vec3::new(0.0, 0.0, 1.5);
        assert!(matches!(
            oracle_path_loss(&scene, tx, Vec3::new(0.5, 0.0, 1.5), 9),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn oracle_is_deterministic() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let tx = scene.tx_pose;
        let rx = Vec3::new(200.0, 2.0, 2.0);
        let a = oracle_path_loss(&scene, tx, rx, 42).unwrap();
        let b = oracle_path_loss(&scene, tx, rx, 42).unwrap();
        assert_eq!(a.pl_db.to_bits(), b.pl_db.to_bits());
        let c = oracle_path_loss(&scene, tx, rx, 43).unwrap();
        assert_ne!(a.pl_db.to_bits(), c.pl_db.to_bits());
    }

    #[test]
    fn monotone_in_distance_without_shadowing() {
        let scene = no_shadow_scene();
        let tx = Vec3::new(0.0, 0.0, 1.5);
        let mut last = f64::NEG_INFINITY;
        for i in 1..=200 {
            let d = i as f64 * 1.5;
            let pl = oracle_path_loss(&scene, tx, Vec3::new(d, 0.0, 1.5), 9)
                .unwrap()
                .pl_db;
            assert!(pl > last);
            last = pl;
        }
    }

    #[test]
    fn nlos_dominates_los_at_equal_distance() {
        let mut scene = build_scene(&SceneConfig::default()).unwrap();
        scene.pathloss.shadow_sigma_db = 0.0;
        let p = scene.pathloss;
        // Place rx behind a building vs in the open at the same distance.
        let tx = scene.tx_pose;
        let bb = scene.buildings[0];
        let behind = Vec3::new(
            (bb.min.x + bb.max.x) / 2.0,
            bb.min.y - 5.0,
            2.0,
        );
        let d = behind.sub(tx).norm();
        let open_dir = Vec3::new(1.0, 0.0, 0.0);
        let open = tx.add(open_dir.scale(d));
        let lab_n = oracle_path_loss(&scene, tx, behind, 9).unwrap();
        let lab_l = oracle_path_loss(&scene, tx, open, 9).unwrap();
        assert!(!lab_n.los);
        assert!(lab_l.los);
        let expected_gap = p.nlos_penalty_db
            + 10.0 * (p.nlos_exponent - p.los_exponent) * (d / p.reference_distance_m).log10();
        assert!((lab_n.pl_db - lab_l.pl_db - expected_gap).abs() < 1e-9);
        assert!(expected_gap > 0.0);
    }

    #[test]
    fn scene_config_from_kv() {
        let kv = KvConfig::parse("street_width_m = 20\nseed = 99\n").unwrap();
        let cfg = SceneConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.street_width_m, 20.0);
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.street_length_m, 375.0);
    }
}
