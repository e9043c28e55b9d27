//! Planar primitives in image coordinates (origin top-left, x right, y down).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(self, other: Point) -> Point {
        Point::new(self.x + other.x, self.y + other.y)
    }

    pub fn scale(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point::new(v[0], v[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned box as (x, y, w, h).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn bottom_center(&self) -> Point {
        Point::new(self.x + self.w / 2.0, self.y + self.h)
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        match self.intersect(other) {
            Some(i) => {
                let inter = i.area();
                inter / (self.area() + other.area() - inter)
            }
            None => 0.0,
        }
    }
}

/// Distance from `p` to the closed segment `a`-`b`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a.add(ab.scale(t)))
}

/// Distance from `p` to a polyline, with the index of the closest segment.
pub fn point_polyline_distance(p: Point, line: &[Point]) -> Option<(f64, usize)> {
    match line.len() {
        0 => None,
        1 => Some((p.dist(line[0]), 0)),
        _ => line
            .windows(2)
            .enumerate()
            .map(|(i, w)| (point_segment_distance(p, w[0], w[1]), i))
            .min_by(|a, b| a.0.total_cmp(&b.0)),
    }
}

/// Distance to `line` with sign: positive when `p` lies to the right of the
/// closest segment's direction in image coordinates.
pub fn signed_polyline_distance(p: Point, line: &[Point]) -> Option<f64> {
    let (d, i) = point_polyline_distance(p, line)?;
    if line.len() < 2 {
        return Some(d);
    }
    let dir = line[i + 1].sub(line[i]);
    let side = dir.cross(p.sub(line[i]));
    Some(if side < 0.0 { -d } else { d })
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    b.sub(a).cross(c.sub(a))
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed segment intersection test (touching counts).
pub fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

pub fn segment_crosses_polyline(a: Point, b: Point, line: &[Point]) -> bool {
    line.windows(2).any(|w| segments_intersect(a, b, w[0], w[1]))
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Sorted y-coordinates where the vertical line `x` crosses polygon edges.
/// Consecutive pairs bound the inside intervals under the even-odd rule.
pub fn vertical_crossings(x: f64, poly: &[Point]) -> Vec<f64> {
    let n = poly.len();
    let mut ys = Vec::new();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a.x > x) != (b.x > x) {
            ys.push(a.y + (x - a.x) * (b.y - a.y) / (b.x - a.x));
        }
    }
    ys.sort_by(f64::total_cmp);
    ys
}

/// Sorted x-coordinates where the horizontal line `y` crosses polygon edges.
pub fn horizontal_crossings(y: f64, poly: &[Point]) -> Vec<f64> {
    let n = poly.len();
    let mut xs = Vec::new();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a.y > y) != (b.y > y) {
            xs.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
        }
    }
    xs.sort_by(f64::total_cmp);
    xs
}

/// Shoelace area (absolute).
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        s += poly[i].cross(poly[(i + 1) % n]);
    }
    s.abs() / 2.0
}

/// Sutherland-Hodgman clip of `poly` against an axis-aligned rectangle.
pub fn clip_polygon_to_rect(poly: &[Point], rect: &Rect) -> Vec<Point> {
    type Inside = fn(Point, &Rect) -> bool;
    type Cut = fn(Point, Point, &Rect) -> Point;
    let planes: [(Inside, Cut); 4] = [
        (|p, r| p.x >= r.x, |a, b, r| lerp_x(a, b, r.x)),
        (|p, r| p.x <= r.right(), |a, b, r| lerp_x(a, b, r.right())),
        (|p, r| p.y >= r.y, |a, b, r| lerp_y(a, b, r.y)),
        (|p, r| p.y <= r.bottom(), |a, b, r| lerp_y(a, b, r.bottom())),
    ];
    let mut out = poly.to_vec();
    for (inside, cut) in planes {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let mut prev = *input.last().unwrap();
        for &cur in &input {
            match (inside(cur, rect), inside(prev, rect)) {
                (true, true) => out.push(cur),
                (true, false) => {
                    out.push(cut(prev, cur, rect));
                    out.push(cur);
                }
                (false, true) => out.push(cut(prev, cur, rect)),
                (false, false) => {}
            }
            prev = cur;
        }
    }
    out
}

fn lerp_x(a: Point, b: Point, x: f64) -> Point {
    let t = (x - a.x) / (b.x - a.x);
    Point::new(x, a.y + t * (b.y - a.y))
}

fn lerp_y(a: Point, b: Point, y: f64) -> Point {
    let t = (y - a.y) / (b.y - a.y);
    Point::new(a.x + t * (b.x - a.x), y)
}

/// True when no two non-adjacent edges of the closed polygon intersect.
pub fn polygon_is_simple(poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a1, a2) = (poly[i], poly[(i + 1) % n]);
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (b1, b2) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    true
}

pub fn polyline_length(line: &[Point]) -> f64 {
    line.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Symmetric Hausdorff distance between two point sets.
pub fn hausdorff(a: &[Point], b: &[Point]) -> f64 {
    let directed = |from: &[Point], to: &[Point]| {
        from.iter()
            .map(|p| to.iter().map(|q| p.dist(*q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// Resamples a polyline at (at most) `step` spacing, keeping its vertices.
pub fn densify(line: &[Point], step: f64) -> Vec<Point> {
    let mut out = Vec::new();
    for w in line.windows(2) {
        let n = (w[0].dist(w[1]) / step).ceil().max(1.0) as usize;
        for k in 0..n {
            let t = k as f64 / n as f64;
            out.push(w[0].add(w[1].sub(w[0]).scale(t)));
        }
    }
    if let Some(last) = line.last() {
        out.push(*last);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance_projects_and_clamps() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(10.0, 0.0);
        assert_eq!(point_segment_distance(Point::new(5.0, 3.0), a, b), 3.0);
        assert_eq!(point_segment_distance(Point::new(13.0, 4.0), a, b), 5.0);
    }

    #[test]
    fn crossing_and_touching() {
        let p = |x, y| Point::new(x, y);
        assert!(segments_intersect(p(0., 0.), p(2., 2.), p(0., 2.), p(2., 0.)));
        assert!(segments_intersect(p(0., 0.), p(1., 1.), p(1., 1.), p(2., 0.)));
        assert!(!segments_intersect(p(0., 0.), p(1., 0.), p(0., 1.), p(1., 1.)));
        assert!(segments_intersect(p(0., 0.), p(2., 0.), p(1., 0.), p(3., 0.)));
    }

    #[test]
    fn clip_square_partially_outside() {
        let sq = [
            Point::new(-5.0, -5.0),
            Point::new(5.0, -5.0),
            Point::new(5.0, 5.0),
            Point::new(-5.0, 5.0),
        ];
        let clipped = clip_polygon_to_rect(&sq, &Rect::new(0.0, 0.0, 10.0, 10.0));
        assert!((polygon_area(&clipped) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn bowtie_is_not_simple() {
        let bowtie = [
            Point::new(0.0, 0.0),
            Point::new(4.0, 4.0),
            Point::new(4.0, 0.0),
            Point::new(0.0, 4.0),
        ];
        assert!(!polygon_is_simple(&bowtie));
        let square = [
            Point::new(0.0, 0.0),
            Point::new(4.0, 0.0),
            Point::new(4.0, 4.0),
            Point::new(0.0, 4.0),
        ];
        assert!(polygon_is_simple(&square));
    }
}
