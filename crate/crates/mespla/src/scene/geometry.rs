//! Minimal 3-D vector and axis-aligned box geometry used by the scene and
//! the sensor ray casters.

use crate::error::{Error, Result};

pub const GEOM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n < GEOM_EPS {
            Vec3::new(0.0, 0.0, 0.0)
        } else {
            self.scale(1.0 / n)
        }
    }

    pub fn axis(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

/// Axis-aligned box with strictly positive extent on every axis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !(min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(Error::Domain(format!(
                "box must have positive extent on all axes: min {min:?}, max {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    /// Strict interior test; points on a face are outside.
    pub fn contains_interior(&self, p: Vec3) -> bool {
        p.x > self.min.x
            && p.x < self.max.x
            && p.y > self.min.y
            && p.y < self.max.y
            && p.z > self.min.z
            && p.z < self.max.z
    }
}

/// Slab test for the open segment `a -> b` against the interior of `bb`.
///
/// Returns the parametric interval `(t_lo, t_hi)` within (0, 1) over which the
/// segment crosses the box interior, or `None` if the overlap has zero length.
/// Grazing contacts with faces, edges, or corners therefore do not count.
pub fn segment_box_interval(a: Vec3, b: Vec3, bb: &Aabb) -> Option<(f64, f64)> {
    let d = b.sub(a);
    let mut t_min = 0.0f64;
    let mut t_max = 1.0f64;
    for axis in 0..3 {
        let o = a.axis(axis);
        let dir = d.axis(axis);
        let lo = bb.min.axis(axis);
        let hi = bb.max.axis(axis);
        if dir.abs() < GEOM_EPS {
            // Parallel to this slab: inside strictly or no interior crossing.
            if o <= lo || o >= hi {
                return None;
            }
        } else {
            let inv = 1.0 / dir;
            let mut t1 = (lo - o) * inv;
            let mut t2 = (hi - o) * inv;
            if t1 > t2 {
                std::mem::swap(&mut t1, &mut t2);
            }
            t_min = t_min.max(t1);
            t_max = t_max.min(t2);
            if t_min >= t_max {
                return None;
            }
        }
    }
    if t_min < t_max {
        Some((t_min, t_max))
    } else {
        None
    }
}

/// First entry of the ray `origin + t*dir` (t > eps) into `bb`, with the axis
/// of the entered face and the sign of approach. Used by the renderers.
pub fn ray_box_entry(origin: Vec3, dir: Vec3, bb: &Aabb) -> Option<(f64, usize, f64)> {
    let mut t_min = f64::NEG_INFINITY;
    let mut t_max = f64::INFINITY;
    let mut enter_axis = 0usize;
    let mut enter_sign = 1.0f64;
    for axis in 0..3 {
        let o = origin.axis(axis);
        let d = dir.axis(axis);
        let lo = bb.min.axis(axis);
        let hi = bb.max.axis(axis);
        if d.abs() < GEOM_EPS {
            if o <= lo || o >= hi {
                return None;
            }
        } else {
            let inv = 1.0 / d;
            let mut t1 = (lo - o) * inv;
            let mut t2 = (hi - o) * inv;
            if t1 > t2 {
                std::mem::swap(&mut t1, &mut t2);
            }
            if t1 > t_min {
                t_min = t1;
                enter_axis = axis;
                enter_sign = if d > 0.0 { -1.0 } else { 1.0 };
            }
            t_max = t_max.min(t2);
            if t_min >= t_max {
                return None;
            }
        }
    }
    if t_min > 1e-9 && t_min < t_max {
        Some((t_min, enter_axis, enter_sign))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> Aabb {
        Aabb::new(Vec3::new(10.0, 10.0, 10.0), Vec3::new(20.0, 20.0, 20.0)).unwrap()
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 1.0)).is_err());
        assert!(Aabb::new(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn segment_through_center_intersects() {
        let bb = unit_box();
        let hit = segment_box_interval(
            Vec3::new(0.0, 15.0, 15.0),
            Vec3::new(30.0, 15.0, 15.0),
            &bb,
        );
        assert!(hit.is_some());
        let (lo, hi) = hit.unwrap();
        assert!(lo > 0.3 && hi < 0.7 && lo < hi);
    }

    #[test]
    fn segment_outside_misses() {
        let bb = unit_box();
        assert!(segment_box_interval(
            Vec3::new(0.0, 25.0, 25.0),
            Vec3::new(30.0, 25.0, 25.0),
            &bb
        )
        .is_none());
    }

    #[test]
    fn face_grazing_does_not_block() {
        let bb = unit_box();
        // Runs exactly along the y = 10 face plane.
        assert!(segment_box_interval(
            Vec3::new(0.0, 10.0, 15.0),
            Vec3::new(30.0, 10.0, 15.0),
            &bb
        )
        .is_none());
        // Touches a single corner.
        assert!(segment_box_interval(
            Vec3::new(0.0, 0.0, 10.0),
            Vec3::new(20.0, 20.0, 10.0),
            &bb
        )
        .is_none());
    }

    #[test]
    fn segment_ending_inside_intersects() {
        let bb = unit_box();
        let hit = segment_box_interval(
            Vec3::new(0.0, 15.0, 15.0),
            Vec3::new(15.0, 15.0, 15.0),
            &bb,
        );
        let (lo, hi) = hit.unwrap();
        assert!(lo < hi && (hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ray_entry_reports_face() {
        let bb = unit_box();
        let (t, axis, sign) =
            ray_box_entry(Vec3::new(0.0, 15.0, 15.0), Vec3::new(1.0, 0.0, 0.0), &bb).unwrap();
        assert!((t - 10.0).abs() < 1e-12);
        assert_eq!(axis, 0);
        assert_eq!(sign, -1.0);
    }
}
