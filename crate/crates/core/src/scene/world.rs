//! Synthetic vectorized worlds: a road with two boundaries, lane dividers
//! between them, and transverse pedestrian crossings.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::polyline::{self, Point};
use crate::error::{contract, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementClass {
    PedestrianCrossing,
    LaneDivider,
    RoadBoundary,
}

impl ElementClass {
    pub const ALL: [ElementClass; 3] = [Self::PedestrianCrossing, Self::LaneDivider, Self::RoadBoundary];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Short column label used in result tables.
    pub fn short(self) -> &'static str {
        match self {
            Self::PedestrianCrossing => "ped",
            Self::LaneDivider => "div",
            Self::RoadBoundary => "bou",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapElement {
    pub class: ElementClass,
    /// Ego-frame meters, ordered along the element.
    pub points: Vec<Point>,
}

pub const MAX_ELEMENTS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub elements: Vec<MapElement>,
}

/// Perception range `x ∈ [−half_x, half_x]`, `y ∈ [−half_y, half_y]` meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub half_x: f64,
    pub half_y: f64,
}

impl Default for Range {
    fn default() -> Self {
        Self { half_x: 15.0, half_y: 30.0 }
    }
}

impl Range {
    pub fn contains(&self, p: Point) -> bool {
        p[0].abs() <= self.half_x && p[1].abs() <= self.half_y
    }

    /// Map ego meters to `[0,1]²`.
    pub fn normalize(&self, p: Point) -> Point {
        [(p[0] + self.half_x) / (2.0 * self.half_x), (p[1] + self.half_y) / (2.0 * self.half_y)]
    }

    pub fn denormalize(&self, p: Point) -> Point {
        [p[0] * 2.0 * self.half_x - self.half_x, p[1] * 2.0 * self.half_y - self.half_y]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub range: Range,
    pub points_per_element: usize,
    /// Hard cap on elements per scene.
    pub max_elements: usize,
    /// Inclusive bounds on the lane count (dividers = lanes − 1).
    pub lanes: (usize, usize),
    pub lane_width: (f64, f64),
    /// Road centerline lateral offset is uniform in `±center_offset` meters.
    pub center_offset: f64,
    /// Heading uniform in `±heading` radians.
    pub heading: f64,
    /// Curvature uniform in `±curvature` 1/m.
    pub curvature: f64,
    /// Inclusive bounds on the number of crossings.
    pub crossings: (usize, usize),
    /// Crossing y positions are drawn with `|y| ≤ crossing_extent`.
    pub crossing_extent: f64,
    /// Elements shorter than this after clipping are discarded, meters.
    pub min_length: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            range: Range::default(),
            points_per_element: 20,
            max_elements: 12,
            lanes: (2, 4),
            lane_width: (3.0, 3.75),
            center_offset: 3.0,
            heading: 0.08,
            curvature: 0.004,
            crossings: (0, 2),
            crossing_extent: 24.0,
            min_length: 2.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let r = self.range;
        if !(r.half_x > 0.0 && r.half_y > 0.0) {
            return contract("perception range extents must be positive");
        }
        if self.points_per_element < 2 {
            return contract("elements need at least two points");
        }
        if self.max_elements > MAX_ELEMENTS {
            return contract(format!("at most {MAX_ELEMENTS} elements per scene"));
        }
        if self.lanes.0 == 0 || self.lanes.0 > self.lanes.1 || self.crossings.0 > self.crossings.1 {
            return contract("lane and crossing bounds must be ordered, with at least one lane");
        }
        if !(self.lane_width.0 > 0.0 && self.lane_width.0 <= self.lane_width.1) {
            return contract("lane width bounds must be positive and ordered");
        }
        Ok(())
    }
}

/// Road centerline `x(y) = c + tan(ψ)·y + κ·y²/2`.
struct Road {
    offset: f64,
    slope: f64,
    curvature: f64,
}

impl Road {
    fn x(&self, y: f64) -> f64 {
        self.offset + self.slope * y + 0.5 * self.curvature * y * y
    }

    fn slope_at(&self, y: f64) -> f64 {
        self.slope + self.curvature * y
    }
}

const TRACE_STEP: f64 = 0.25;

/// Keep the longest run of consecutive in-range points.
fn clip_longest(points: &[Point], range: &Range) -> Vec<Point> {
    let mut best: &[Point] = &[];
    let mut start = None;
    for (i, &p) in points.iter().enumerate() {
        match (range.contains(p), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s > best.len() {
                    best = &points[s..i];
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        if points.len() - s > best.len() {
            best = &points[s..];
        }
    }
    best.to_vec()
}

fn finish(class: ElementClass, trace: Vec<Point>, cfg: &GeneratorConfig) -> Option<MapElement> {
    let clipped = clip_longest(&trace, &cfg.range);
    if clipped.len() < 2 || polyline::length(&clipped) < cfg.min_length {
        return None;
    }
    Some(MapElement { class, points: polyline::resample(&clipped, cfg.points_per_element) })
}

fn longitudinal(road: &Road, lateral: f64, range: &Range) -> Vec<Point> {
    let n = (2.0 * range.half_y / TRACE_STEP).round() as usize;
    (0..=n)
        .map(|i| {
            let y = -range.half_y + 2.0 * range.half_y * i as f64 / n as f64;
            [road.x(y) + lateral, y]
        })
        .collect()
}

/// Straight strip across the road, perpendicular to the centerline at `y0`.
fn transverse(road: &Road, y0: f64, half_width: f64) -> Vec<Point> {
    let s = road.slope_at(y0);
    let norm = (1.0 + s * s).sqrt();
    let (nx, ny) = (1.0 / norm, -s / norm);
    let c = [road.x(y0), y0];
    let n = (2.0 * half_width / TRACE_STEP).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| {
            let t = -half_width + 2.0 * half_width * i as f64 / n as f64;
            [c[0] + t * nx, c[1] + t * ny]
        })
        .collect()
}

/// Draw one scene. Pure function of `(seed, cfg)`.
pub fn sample_scene(seed: u64, cfg: &GeneratorConfig) -> Result<SceneSpec> {
    cfg.validate()?;
    let mut rng: Rng = rng::stream(seed, &[rng::tag::SCENE]);
    let road = Road {
        offset: rng.random_range(-cfg.center_offset..=cfg.center_offset),
        slope: rng.random_range(-cfg.heading..=cfg.heading).tan(),
        curvature: rng.random_range(-cfg.curvature..=cfg.curvature),
    };
    let lanes = rng.random_range(cfg.lanes.0..=cfg.lanes.1);
    let lane_width = rng.random_range(cfg.lane_width.0..=cfg.lane_width.1);
    let half = lanes as f64 * lane_width / 2.0;
    let n_cross = rng.random_range(cfg.crossings.0..=cfg.crossings.1);
    let cross_y: Vec<f64> = (0..n_cross).map(|_| rng.random_range(-cfg.crossing_extent..=cfg.crossing_extent)).collect();

    let mut candidates = Vec::new();
    for side in [-1.0, 1.0] {
        candidates.push((ElementClass::RoadBoundary, longitudinal(&road, side * half, &cfg.range)));
    }
    for k in 1..lanes {
        let lateral = -half + k as f64 * lane_width;
        candidates.push((ElementClass::LaneDivider, longitudinal(&road, lateral, &cfg.range)));
    }
    for &y0 in &cross_y {
        candidates.push((ElementClass::PedestrianCrossing, transverse(&road, y0, half)));
    }
    let elements = candidates
        .into_iter()
        .filter_map(|(class, trace)| finish(class, trace, cfg))
        .take(cfg.max_elements)
        .collect();
    Ok(SceneSpec { seed, elements })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_element_config_gives_empty_scene() {
        let cfg = GeneratorConfig { max_elements: 0, ..Default::default() };
        assert!(sample_scene(3, &cfg).unwrap().elements.is_empty());
    }

    #[test]
    fn zero_range_is_rejected() {
        let cfg = GeneratorConfig { range: Range { half_x: 0.0, half_y: 30.0 }, ..Default::default() };
        assert!(sample_scene(3, &cfg).is_err());
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = GeneratorConfig::default();
        assert_eq!(sample_scene(42, &cfg).unwrap(), sample_scene(42, &cfg).unwrap());
        assert_ne!(sample_scene(42, &cfg).unwrap(), sample_scene(43, &cfg).unwrap());
    }

    #[test]
    fn scenes_respect_range_point_count_and_structure() {
        let cfg = GeneratorConfig::default();
        for seed in 0..1000 {
            let s = sample_scene(seed, &cfg).unwrap();
            assert!(s.elements.len() <= cfg.max_elements);
            let boundaries = s.elements.iter().filter(|e| e.class == ElementClass::RoadBoundary).count();
            assert_eq!(boundaries, 2, "seed {seed}");
            for e in &s.elements {
                assert_eq!(e.points.len(), 20);
                for &p in &e.points {
                    assert!(cfg.range.contains(p), "seed {seed}: {p:?} outside range");
                }
                for w in e.points.windows(2) {
                    assert!(polyline::dist(w[0], w[1]) > 0.0);
                }
            }
        }
    }

    #[test]
    fn normalize_round_trip() {
        let r = Range::default();
        let p = [3.5, -12.25];
        let q = r.denormalize(r.normalize(p));
        assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        assert_eq!(r.normalize([-15.0, 30.0]), [0.0, 1.0]);
    }
}
