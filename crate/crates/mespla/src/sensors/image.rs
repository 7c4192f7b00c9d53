//! RGB image container and the pinhole ray-cast renderer.

use crate::error::{Error, Result};
use crate::scene::geometry::{ray_box_entry, Aabb, Vec3};
use crate::scene::Scene;

/// Row-major H x W x 3 image with channel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        })
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Format(format!(
                "image payload length {} does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    /// Check the [0, 1] channel range invariant.
    pub fn validate_values(&self) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::Domain(format!(
                    "image value {v} at flat index {i} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Planar sensor pose: position on the street plus heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    pub height_m: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            hfov_deg: 90.0,
            height_m: 3.1,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!(
                "camera resolution must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(Error::Config(format!(
                "camera hfov_deg must be in (0, 180), got {}",
                self.hfov_deg
            )));
        }
        Ok(())
    }
}

/// What a scene ray hits first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HitKind {
    Sky,
    Ground,
    Building(usize),
    TxMast,
}

/// Footprint of the transmitter mast drawn into both sensor views.
pub fn tx_mast_box(scene: &Scene) -> Aabb {
    let t = scene.tx_pose;
    Aabb::new(
        Vec3::new(t.x - 0.5, t.y - 0.5, 0.0),
        Vec3::new(t.x + 0.5, t.y + 0.5, t.z + 4.5),
    )
    .expect("mast box is well formed")
}

/// Nearest hit of `origin + t*dir` against buildings, the transmitter mast,
/// and the ground plane. `max_range` of `None` means unbounded.
pub fn raycast(
    scene: &Scene,
    origin: Vec3,
    dir: Vec3,
    max_range: Option<f64>,
    include_ground: bool,
) -> (HitKind, f64, usize, f64) {
    let mut best_t = max_range.unwrap_or(f64::INFINITY);
    let mut kind = HitKind::Sky;
    let mut face_axis = 2usize;
    let mut face_sign = 1.0f64;

    for (i, bb) in scene.buildings.iter().enumerate() {
        if let Some((t, axis, sign)) = ray_box_entry(origin, dir, bb) {
            if t < best_t {
                best_t = t;
                kind = HitKind::Building(i);
                face_axis = axis;
                face_sign = sign;
            }
        }
    }
    let mast = tx_mast_box(scene);
    if let Some((t, axis, sign)) = ray_box_entry(origin, dir, &mast) {
        if t < best_t {
            best_t = t;
            kind = HitKind::TxMast;
            face_axis = axis;
            face_sign = sign;
        }
    }
    if include_ground && dir.z < -1e-12 {
        let t = -origin.z / dir.z;
        if t > 1e-9 && t < best_t {
            best_t = t;
            kind = HitKind::Ground;
            face_axis = 2;
            face_sign = 1.0;
        }
    }
    (kind, best_t, face_axis, face_sign)
}

/// Camera ray for pixel (row, col): forward along `pose.yaw`, square pixels.
pub fn camera_ray(camera: &CameraConfig, pose: &Pose, row: usize, col: usize) -> (Vec3, Vec3) {
    let origin = Vec3::new(pose.x, pose.y, camera.height_m);
    let half_tan = (camera.hfov_deg.to_radians() / 2.0).tan();
    let aspect = camera.height as f64 / camera.width as f64;
    let ndc_x = 2.0 * (col as f64 + 0.5) / camera.width as f64 - 1.0;
    let ndc_y = 1.0 - 2.0 * (row as f64 + 0.5) / camera.height as f64;
    let forward = Vec3::new(pose.yaw.cos(), pose.yaw.sin(), 0.0);
    let right = Vec3::new(pose.yaw.sin(), -pose.yaw.cos(), 0.0);
    let up = Vec3::new(0.0, 0.0, 1.0);
    let dir = forward
        .add(right.scale(ndc_x * half_tan))
        .add(up.scale(ndc_y * half_tan * aspect))
        .normalized();
    (origin, dir)
}

const SKY_COLOR: [f64; 3] = [0.55, 0.72, 0.92];
const GROUND_COLOR: [f64; 3] = [0.34, 0.34, 0.37];
const MAST_COLOR: [f64; 3] = [1.0, 0.92, 0.25];

fn shade(kind: HitKind, t: f64, face_axis: usize, face_sign: f64, scene: &Scene) -> [f64; 3] {
    match kind {
        HitKind::Sky => SKY_COLOR,
        HitKind::TxMast => MAST_COLOR,
        HitKind::Ground => {
            let att = (1.0 / (1.0 + 0.01 * t)).max(0.25);
            [
                GROUND_COLOR[0] * att,
                GROUND_COLOR[1] * att,
                GROUND_COLOR[2] * att,
            ]
        }
        HitKind::Building(i) => {
            let albedo = scene.building_albedo(i);
            let face = match (face_axis, face_sign > 0.0) {
                (0, _) => 0.82,
                (1, true) => 1.0,
                (1, false) => 0.9,
                _ => 1.1,
            };
            let att = (1.0 / (1.0 + 0.008 * t)).max(0.3);
            let mut c = [0.0; 3];
            for ch in 0..3 {
                c[ch] = (albedo[ch] * face * att).clamp(0.0, 1.0);
            }
            c
        }
    }
}

/// Forward-facing pinhole render of the scene. Deterministic per
/// (scene, pose, camera); the transmitter mast appears as a bright marker
/// whenever it is visible.
pub fn render_image(scene: &Scene, pose: &Pose, camera: &CameraConfig) -> Result<Image> {
    camera.validate()?;
    if !scene.contains_planar(pose.x, pose.y) {
        return Err(Error::Domain(format!(
            "camera position ({}, {}) outside the street footprint",
            pose.x, pose.y
        )));
    }
    let mut img = Image::new(camera.width, camera.height)?;
    for row in 0..camera.height {
        for col in 0..camera.width {
            let (origin, dir) = camera_ray(camera, pose, row, col);
            let (kind, t, axis, sign) = raycast(scene, origin, dir, None, true);
            let c = shade(kind, t, axis, sign, scene);
            img.set_pixel(row, col, [c[0] as f32, c[1] as f32, c[2] as f32]);
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_scene, PathLossParams, SceneConfig};

    fn empty_scene() -> Scene {
        Scene {
            street_width: 40.0,
            street_length: 400.0,
            buildings: vec![],
            tx_pose: Vec3::new(5.0, 0.0, 1.5),
            carrier_frequency: 5.9e9,
            seed: 3,
            side_street: None,
            rx_height: 2.0,
            pathloss: PathLossParams::default(),
        }
    }

    #[test]
    fn empty_scene_renders_sky_over_ground() {
        let scene = empty_scene();
        // Face +x from beyond the mast so nothing but sky and ground shows.
        let pose = Pose {
            x: 50.0,
            y: 0.0,
            yaw: 0.0,
        };
        let cam = CameraConfig::default();
        let img = render_image(&scene, &pose, &cam).unwrap();
        img.validate_values().unwrap();
        let sky = [SKY_COLOR[0] as f32, SKY_COLOR[1] as f32, SKY_COLOR[2] as f32];
        for row in 0..cam.height {
            for col in 0..cam.width {
                let px = img.pixel(row, col);
                if row < cam.height / 2 {
                    assert_eq!(px, sky, "row {row} col {col} should be sky");
                } else {
                    assert!(px[0] < 0.5 && px[2] < 0.5, "row {row} should be ground");
                }
            }
        }
    }

    #[test]
    fn building_ahead_dominates_frame() {
        let mut scene = empty_scene();
        scene.buildings = vec![Aabb::new(
            Vec3::new(10.0, -60.0, 0.0),
            Vec3::new(30.0, 60.0, 40.0),
        )
        .unwrap()];
        let pose = Pose {
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
        };
        let cam = CameraConfig::default();
        let img = render_image(&scene, &pose, &cam).unwrap();
        // Count pixels whose ray reports the building id.
        let mut hits = 0usize;
        for row in 0..cam.height {
            for col in 0..cam.width {
                let (origin, dir) = camera_ray(&cam, &pose, row, col);
                let (kind, ..) = raycast(&scene, origin, dir, None, true);
                if kind == HitKind::Building(0) {
                    hits += 1;
                }
            }
        }
        assert!(
            hits * 2 > cam.width * cam.height,
            "only {hits} of {} pixels hit the building",
            cam.width * cam.height
        );
        img.validate_values().unwrap();
    }

    #[test]
    fn render_is_bit_deterministic() {
        let scene = build_scene(&SceneConfig::default()).unwrap();
        let pose = Pose {
            x: 100.0,
            y: 1.0,
            yaw: 0.3,
        };
        let cam = CameraConfig::default();
        let a = render_image(&scene, &pose, &cam).unwrap();
        let b = render_image(&scene, &pose, &cam).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_resolution_rejected() {
        let scene = empty_scene();
        let pose = Pose {
            x: 50.0,
            y: 0.0,
            yaw: 0.0,
        };
        let cam = CameraConfig {
            width: 0,
            ..Default::default()
        };
        assert!(matches!(
            render_image(&scene, &pose, &cam),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mast_visible_when_facing_tx() {
        let scene = empty_scene();
        let pose = Pose {
            x: 15.0,
            y: 0.0,
            yaw: std::f64::consts::PI, // facing -x, toward the mast at x=5
        };
        let img = render_image(&scene, &pose, &CameraConfig::default()).unwrap();
        let mast = [MAST_COLOR[0] as f32, MAST_COLOR[1] as f32, MAST_COLOR[2] as f32];
        let found = (0..img.height)
            .any(|r| (0..img.width).any(|c| img.pixel(r, c) == mast));
        assert!(found, "mast marker not visible in the frame");
    }
}
