//! Pinhole cameras on a horizontal ring around the ego origin.
//!
//! Ego frame: `x` to the right, `y` forward, `z` up; map geometry lies on the
//! ground plane `z = 0`. A camera with yaw `ψ` looks along
//! `(sin ψ, cos ψ, 0)`, so yaw grows clockwise seen from above and index
//! order around the ring runs left to right.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RigPreset {
    /// Six cameras, nuScenes-like: `[FL, F, FR, BR, B, BL]`.
    Ring6,
    /// Seven evenly spaced cameras, Argoverse2-like.
    Ring7,
}

impl std::str::FromStr for RigPreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ring6" => Ok(Self::Ring6),
            "ring7" => Ok(Self::Ring7),
            other => Err(format!("unknown rig {other:?} (expected ring6 or ring7)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub name: String,
    /// Heading in radians, clockwise from the ego `+y` axis.
    pub yaw: f64,
    /// Mounting height above the ground plane, meters.
    pub height: f64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
    pub image_h: usize,
    pub image_w: usize,
}

/// Pixel coordinates; pixel `(row i, col j)` covers `[j, j+1) × [i, i+1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

const DEFAULT_IMAGE: usize = 64;
const DEFAULT_FOCAL: f64 = 55.0;
const DEFAULT_HEIGHT: f64 = 5.0;
/// Principal row above the image top: the horizon sits just outside the
/// image so every row images the ground.
const DEFAULT_CY: f64 = -4.0;
const MIN_DEPTH: f64 = 1e-6;

impl CameraRig {
    pub fn preset(preset: RigPreset) -> Self {
        match preset {
            RigPreset::Ring6 => Self::ring(&["front_left", "front", "front_right", "back_right", "back", "back_left"]),
            RigPreset::Ring7 => Self::ring(&[
                "front_left",
                "front",
                "front_right",
                "side_right",
                "rear_right",
                "rear_left",
                "side_left",
            ]),
        }
    }

    /// Evenly spaced ring where camera 1 faces straight ahead.
    fn ring(names: &[&str]) -> Self {
        let n = names.len();
        let step = 2.0 * PI / n as f64;
        let cameras = names
            .iter()
            .enumerate()
            .map(|(i, name)| Camera {
                name: (*name).to_string(),
                yaw: (i as f64 - 1.0) * step,
                height: DEFAULT_HEIGHT,
                fx: DEFAULT_FOCAL,
                fy: DEFAULT_FOCAL,
                cx: DEFAULT_IMAGE as f64 / 2.0,
                cy: DEFAULT_CY,
            })
            .collect();
        Self { cameras, image_h: DEFAULT_IMAGE, image_w: DEFAULT_IMAGE }
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// Check the ring invariants: positive geometry, yaws strictly increasing
    /// around the ring, and horizontal fields of view covering 360°.
    pub fn validate(&self) -> Result<()> {
        let n = self.cameras.len();
        if n == 0 || self.image_h == 0 || self.image_w == 0 {
            return contract("camera rig needs at least one camera and a non-empty image");
        }
        for c in &self.cameras {
            if !(c.height > 0.0 && c.fx > 0.0 && c.fy > 0.0) {
                return contract(format!("camera {} has non-positive height or focal length", c.name));
            }
        }
        let mut total = 0.0;
        for i in 0..n {
            let a = self.cameras[i].yaw;
            let b = self.cameras[(i + 1) % n].yaw;
            let gap = (b - a).rem_euclid(2.0 * PI);
            if n > 1 && gap == 0.0 {
                return contract("camera yaws must be distinct");
            }
            total += if n == 1 { 2.0 * PI } else { gap };
            let (_, right) = self.cameras[i].half_fovs(self.image_w);
            let (left_next, _) = self.cameras[(i + 1) % n].half_fovs(self.image_w);
            if n > 1 && right + left_next < gap {
                return contract(format!("gap between cameras {i} and {} is not covered", (i + 1) % n));
            }
        }
        if (total - 2.0 * PI).abs() > 1e-9 {
            return contract("camera yaws do not increase monotonically once around the ring");
        }
        if n == 1 {
            let (l, r) = self.cameras[0].half_fovs(self.image_w);
            if l + r < 2.0 * PI {
                return contract("a single camera cannot cover 360°");
            }
        }
        Ok(())
    }

    /// Ring distance from `a` to `b` going left (decreasing index).
    pub fn left_distance(&self, from: usize, to: usize) -> usize {
        (from + self.len() - to) % self.len()
    }

    /// Ring distance from `a` to `b` going right (increasing index).
    pub fn right_distance(&self, from: usize, to: usize) -> usize {
        (to + self.len() - from) % self.len()
    }
}

impl Camera {
    fn forward(&self) -> (f64, f64) {
        (self.yaw.sin(), self.yaw.cos())
    }

    fn right(&self) -> (f64, f64) {
        (self.yaw.cos(), -self.yaw.sin())
    }

    /// Angular extents `(left, right)` of the horizontal field of view.
    pub fn half_fovs(&self, image_w: usize) -> (f64, f64) {
        ((self.cx / self.fx).atan(), ((image_w as f64 - self.cx) / self.fx).atan())
    }

    /// Camera-frame coordinates `(x right, y down, z forward)` of a ground point.
    pub fn to_camera(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (fx, fy) = self.forward();
        let (rx, ry) = self.right();
        (x * rx + y * ry, self.height, x * fx + y * fy)
    }

    /// Project a ground point; `None` behind the image plane or outside the image.
    pub fn project(&self, x: f64, y: f64, image_h: usize, image_w: usize) -> Option<Pixel> {
        let (xc, yc, zc) = self.to_camera(x, y);
        if zc <= MIN_DEPTH {
            return None;
        }
        let u = self.cx + self.fx * xc / zc;
        let v = self.cy + self.fy * yc / zc;
        let inside = u >= 0.0 && u < image_w as f64 && v >= 0.0 && v < image_h as f64;
        inside.then_some(Pixel { u, v })
    }

    /// Intersect the ray through `pixel` with the ground plane.
    pub fn back_project(&self, pixel: Pixel) -> Option<(f64, f64)> {
        let ry = (pixel.v - self.cy) / self.fy;
        if ry <= 0.0 {
            return None;
        }
        let zc = self.height / ry;
        let xc = zc * (pixel.u - self.cx) / self.fx;
        let (fx, fy) = self.forward();
        let (rx, ryy) = self.right();
        Some((xc * rx + zc * fx, xc * ryy + zc * fy))
    }
}

/// Project a ground point into camera `cam` of `rig`.
pub fn project_to_view(rig: &CameraRig, cam: usize, x: f64, y: f64) -> Option<Pixel> {
    rig.cameras[cam].project(x, y, rig.image_h, rig.image_w)
}
