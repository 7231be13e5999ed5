//! Grayscale rendering of ground-plane polylines into every camera.
//!
//! Each pixel's center ray is cast onto the ground; the pixel takes the
//! class intensity of the nearest element, faded linearly with ground
//! distance and cut off at [`LINE_RADIUS`]. Overlapping elements compose by
//! `max`, so the result does not depend on element order.

use super::camera::{CameraRig, Pixel};
use super::polyline::{self, Point};
use super::world::{ElementClass, SceneSpec};

/// Ground distance, meters, beyond which a pixel receives no ink.
pub const LINE_RADIUS: f64 = 0.5;

pub fn intensity(class: ElementClass) -> f32 {
    match class {
        ElementClass::PedestrianCrossing => 1.0,
        ElementClass::LaneDivider => 0.65,
        ElementClass::RoadBoundary => 0.35,
    }
}

/// `N` grayscale images, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedViewSet {
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RenderedViewSet {
    pub fn zeros(views: usize, height: usize, width: usize) -> Self {
        Self { views, height, width, data: vec![0.0; views * height * width] }
    }

    pub fn view(&self, i: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn view_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[i * n..(i + 1) * n]
    }
}

/// Ground intersection of every pixel center, per camera.
#[derive(Clone, Debug)]
pub struct GroundLut {
    pub footprints: Vec<Vec<Option<Point>>>,
}

impl GroundLut {
    pub fn new(rig: &CameraRig) -> Self {
        let footprints = rig
            .cameras
            .iter()
            .map(|cam| {
                (0..rig.image_h * rig.image_w)
                    .map(|k| {
                        let px = Pixel { u: (k % rig.image_w) as f64 + 0.5, v: (k / rig.image_w) as f64 + 0.5 };
                        cam.back_project(px).map(|(x, y)| [x, y])
                    })
                    .collect()
            })
            .collect();
        Self { footprints }
    }
}

fn bbox(points: &[Point], pad: f64) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in points {
        b[0] = b[0].min(p[0]);
        b[1] = b[1].min(p[1]);
        b[2] = b[2].max(p[0]);
        b[3] = b[3].max(p[1]);
    }
    [b[0] - pad, b[1] - pad, b[2] + pad, b[3] + pad]
}

pub fn render_views(scene: &SceneSpec, rig: &CameraRig) -> RenderedViewSet {
    render_with(scene, rig, &GroundLut::new(rig))
}

pub fn render_with(scene: &SceneSpec, rig: &CameraRig, lut: &GroundLut) -> RenderedViewSet {
    let mut out = RenderedViewSet::zeros(rig.len(), rig.image_h, rig.image_w);
    let boxes: Vec<[f64; 4]> = scene.elements.iter().map(|e| bbox(&e.points, LINE_RADIUS)).collect();
    for (cam, foot) in lut.footprints.iter().enumerate() {
        let img = out.view_mut(cam);
        for (pix, ground) in img.iter_mut().zip(foot) {
            let Some(g) = *ground else { continue };
            for (e, b) in scene.elements.iter().zip(&boxes) {
                if g[0] < b[0] || g[0] > b[2] || g[1] < b[1] || g[1] > b[3] {
                    continue;
                }
                let d = polyline::point_polyline_distance(g, &e.points);
                if d < LINE_RADIUS {
                    let v = intensity(e.class) * (1.0 - d / LINE_RADIUS) as f32;
                    *pix = pix.max(v);
                }
            }
        }
    }
    out
}
