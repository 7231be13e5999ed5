//! Planar polyline helpers shared by generation, rendering and evaluation.

pub type Point = [f64; 2];

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Resample to `n ≥ 2` points spaced equally along arclength, keeping both
/// endpoints. A zero-length input yields `n` copies of its first point.
pub fn resample(points: &[Point], n: usize) -> Vec<Point> {
    assert!(points.len() >= 2 && n >= 2, "resample needs at least two input and output points");
    let mut cum = Vec::with_capacity(points.len());
    cum.push(0.0);
    for w in points.windows(2) {
        let last = *cum.last().unwrap_or(&0.0);
        cum.push(last + dist(w[0], w[1]));
    }
    let total = *cum.last().unwrap_or(&0.0);
    if total == 0.0 {
        return vec![points[0]; n];
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let s = total * i as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let span = cum[seg + 1] - cum[seg];
        let t = if span > 0.0 { ((s - cum[seg]) / span).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (points[seg], points[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out[n - 1] = points[points.len() - 1];
    out
}

/// Distance from `p` to segment `ab`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

pub fn point_polyline_distance(p: Point, line: &[Point]) -> f64 {
    match line {
        [] => f64::INFINITY,
        [only] => dist(p, *only),
        _ => line.windows(2).map(|w| point_segment_distance(p, w[0], w[1])).fold(f64::INFINITY, f64::min),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_straight_line_is_even() {
        let r = resample(&[[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]], 4);
        for (i, p) in r.iter().enumerate() {
            assert!((p[0] - i as f64).abs() < 1e-12 && p[1] == 0.0);
        }
    }

    #[test]
    fn resample_preserves_length_of_straight_chain() {
        let line = [[0.0, 0.0], [0.0, 2.0], [0.0, 2.5], [0.0, 7.0]];
        let r = resample(&line, 20);
        assert!((length(&r) - 7.0).abs() < 1e-12);
        assert_eq!(r[19], [0.0, 7.0]);
    }

    #[test]
    fn segment_distance() {
        assert_eq!(point_segment_distance([0.0, 1.0], [-1.0, 0.0], [1.0, 0.0]), 1.0);
        assert_eq!(point_segment_distance([3.0, 0.0], [-1.0, 0.0], [1.0, 0.0]), 2.0);
    }
}
