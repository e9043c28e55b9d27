//! Lane geometry per key frame: centerlines from lane masks, classified
//! boundaries and a lane-width estimate for pixel-to-meter calibration.

pub mod grid;
pub mod skeleton;

use std::collections::HashMap;
use std::sync::Mutex;

use thiserror::Error;

use crate::config::LaneConfig;
use crate::geom::{densify, point_in_polygon, Point};
use crate::scene::{BoundaryStyle, LaneBoundary, MaskClass, MaskInstance, ScenePriors};

pub use grid::{rasterize_polygon, BinaryGrid};
pub use skeleton::{douglas_peucker, extract_centerline, extract_extended_centerline, thin};

/// Masks with fewer set cells than this cannot support a width estimate.
pub const MIN_LANE_CELLS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LaneError {
    #[error("degenerate polygon: {0}")]
    Geometry(String),
    #[error("lane mask too small ({cells} cells)")]
    DegenerateLane { cells: usize },
    #[error("no usable lane mask at frame {frame}")]
    NoLaneMasks { frame: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLine {
    pub polyline: Vec<Point>,
    pub style: BoundaryStyle,
    /// True when inferred from adjacent lane masks instead of declared.
    pub derived: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneGeometry {
    pub frame: usize,
    pub centerlines: Vec<Vec<Point>>,
    pub boundaries: Vec<BoundaryLine>,
    pub lane_width_px: f64,
    pub px_per_meter: f64,
    /// Lane polygons (ego and other) present at this frame.
    pub road_polygons: Vec<Vec<Point>>,
    pub ego_lane_polygons: Vec<Vec<Point>>,
}

impl LaneGeometry {
    pub fn on_road(&self, p: Point) -> bool {
        self.road_polygons.iter().any(|poly| point_in_polygon(p, poly))
    }

    /// Inside any ego-lane polygon; true everywhere when the frame has none.
    pub fn in_ego_lane(&self, p: Point) -> bool {
        self.ego_lane_polygons.is_empty() || self.ego_lane_polygons.iter().any(|poly| point_in_polygon(p, poly))
    }

    pub fn solid_boundaries(&self) -> impl Iterator<Item = &BoundaryLine> {
        self.boundaries.iter().filter(|b| b.style.is_solid())
    }
}

/// Extent of `grid` through `p` along `dir` (unit), both directions.
fn perpendicular_extent(grid: &BinaryGrid, p: Point, dir: Point) -> Option<f64> {
    const STEP: f64 = 0.25;
    if !grid.contains_point(p) {
        return None;
    }
    let exit = |sign: f64| {
        let mut t = STEP;
        while grid.contains_point(p.add(dir.scale(sign * t))) {
            t += STEP;
        }
        t - STEP / 2.0
    };
    Some(exit(1.0) + exit(-1.0))
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn centerline_width(grid: &BinaryGrid, centerlines: &[Vec<Point>]) -> Option<f64> {
    let mut extents = Vec::new();
    for line in centerlines {
        for seg in line.windows(2) {
            let d = seg[1].sub(seg[0]);
            let len = d.norm();
            if len == 0.0 {
                continue;
            }
            let normal = Point::new(-d.y / len, d.x / len);
            let samples = densify(seg, 1.0);
            // Shared vertices are sampled once, by the segment that starts there.
            for p in &samples[..samples.len() - 1] {
                if let Some(e) = perpendicular_extent(grid, *p, normal) {
                    extents.push(e);
                }
            }
        }
        if let Some(last) = line.last() {
            let n = line.len();
            let d = line[n - 1].sub(line[n - 2]);
            let len = d.norm();
            if len > 0.0 {
                if let Some(e) = perpendicular_extent(grid, *last, Point::new(-d.y / len, d.x / len)) {
                    extents.push(e);
                }
            }
        }
    }
    median(extents)
}

/// Median perpendicular extent of an ego-lane mask, sampled every pixel
/// along its (end-extended) centerline.
pub fn estimate_lane_width(ego_lane: &BinaryGrid, eps: f64) -> Result<f64, LaneError> {
    let cells = ego_lane.count();
    if cells < MIN_LANE_CELLS {
        return Err(LaneError::DegenerateLane { cells });
    }
    let lines = extract_extended_centerline(ego_lane, eps);
    centerline_width(ego_lane, &lines).ok_or(LaneError::DegenerateLane { cells })
}

/// Orders scattered points along their principal axis.
fn order_along_principal_axis(points: &mut [Point]) {
    let n = points.len() as f64;
    let mean = points.iter().fold(Point::new(0.0, 0.0), |a, p| a.add(*p)).scale(1.0 / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points.iter() {
        let d = p.sub(mean);
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let axis = Point::new(theta.cos(), theta.sin());
    points.sort_by(|a, b| a.dot(axis).total_cmp(&b.dot(axis)).then(a.x.total_cmp(&b.x)).then(a.y.total_cmp(&b.y)));
}

/// Declared boundaries at `frame` pass through unchanged. Without any, each
/// other-lane mask touching the ego lane yields one solid boundary along the
/// shared raster edge.
pub fn derive_boundaries(
    masks: &[MaskInstance],
    declared: &[LaneBoundary],
    frame: usize,
    width: usize,
    height: usize,
    eps: f64,
) -> Vec<BoundaryLine> {
    let declared_here: Vec<BoundaryLine> = declared
        .iter()
        .filter_map(|b| {
            b.at_frame(frame)
                .map(|f| BoundaryLine { polyline: f.polyline.clone(), style: b.style, derived: false })
        })
        .collect();
    if !declared_here.is_empty() {
        return declared_here;
    }
    let raster = |m: &MaskInstance| m.at_frame(frame).and_then(|f| rasterize_polygon(&f.polygon, width, height).ok());
    let mut ego = BinaryGrid::new(width, height);
    let mut any_ego = false;
    for g in masks.iter().filter(|m| m.class == MaskClass::EgoLane).filter_map(raster) {
        ego.union_with(&g);
        any_ego = true;
    }
    if !any_ego {
        return Vec::new();
    }
    let mut out = Vec::new();
    for other in masks.iter().filter(|m| m.class == MaskClass::OtherLane).filter_map(raster) {
        let mut pts = Vec::new();
        for (c, r) in ego.iter_set() {
            for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                let (nc, nr) = (c as i64 + dx, r as i64 + dy);
                if other.get_signed(nc, nr) && !ego.get_signed(nc, nr) {
                    pts.push(Point::new(c as f64 + 0.5 + dx as f64 / 2.0, r as f64 + 0.5 + dy as f64 / 2.0));
                }
            }
        }
        if pts.len() < 2 {
            continue;
        }
        order_along_principal_axis(&mut pts);
        out.push(BoundaryLine { polyline: douglas_peucker(&pts, eps), style: BoundaryStyle::Solid, derived: true });
    }
    out
}

type PolygonKey = (usize, usize, Vec<(u64, u64)>);

/// Memoizes per-polygon centerline extraction; synthetic and static scenes
/// repeat the same lane polygon on every key frame.
#[derive(Default)]
pub struct GeometryCache {
    centerlines: Mutex<HashMap<PolygonKey, Vec<Vec<Point>>>>,
    widths: Mutex<HashMap<PolygonKey, Result<f64, LaneError>>>,
}

impl GeometryCache {
    fn key(poly: &[Point], w: usize, h: usize) -> PolygonKey {
        (w, h, poly.iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect())
    }

    fn lane(&self, poly: &[Point], w: usize, h: usize, eps: f64) -> (Vec<Vec<Point>>, Result<f64, LaneError>) {
        let key = Self::key(poly, w, h);
        if let (Some(c), Some(wd)) = (
            self.centerlines.lock().unwrap().get(&key).cloned(),
            self.widths.lock().unwrap().get(&key).cloned(),
        ) {
            return (c, wd);
        }
        let (lines, width) = match rasterize_polygon(poly, w, h) {
            Ok(grid) => {
                let lines = extract_extended_centerline(&grid, eps);
                let cells = grid.count();
                let width = if cells < MIN_LANE_CELLS {
                    Err(LaneError::DegenerateLane { cells })
                } else {
                    centerline_width(&grid, &lines).ok_or(LaneError::DegenerateLane { cells })
                };
                (lines, width)
            }
            Err(e) => (Vec::new(), Err(e)),
        };
        self.centerlines.lock().unwrap().insert(key.clone(), lines.clone());
        self.widths.lock().unwrap().insert(key, width.clone());
        (lines, width)
    }
}

/// Lane geometry of one frame from the scene's lane masks.
pub fn frame_geometry(
    priors: &ScenePriors,
    frame: usize,
    cfg: &LaneConfig,
    cache: &GeometryCache,
) -> Result<LaneGeometry, LaneError> {
    let (w, h) = (priors.meta.width as usize, priors.meta.height as usize);
    let mut centerlines = Vec::new();
    let mut road_polygons = Vec::new();
    let mut ego_lane_polygons = Vec::new();
    let mut ego_widths = Vec::new();
    let mut other_widths = Vec::new();
    for m in priors.masks.iter().filter(|m| m.class.is_lane()) {
        let Some(f) = m.at_frame(frame) else { continue };
        let (lines, width) = cache.lane(&f.polygon, w, h, cfg.simplify_eps);
        centerlines.extend(lines);
        road_polygons.push(f.polygon.clone());
        if m.class == MaskClass::EgoLane {
            ego_lane_polygons.push(f.polygon.clone());
            if let Ok(wd) = width {
                ego_widths.push(wd);
            }
        } else if let Ok(wd) = width {
            other_widths.push(wd);
        }
    }
    let lane_width_px = median(ego_widths)
        .or_else(|| median(other_widths))
        .ok_or(LaneError::NoLaneMasks { frame })?;
    let boundaries = derive_boundaries(&priors.masks, &priors.boundaries, frame, w, h, cfg.simplify_eps);
    Ok(LaneGeometry {
        frame,
        centerlines,
        boundaries,
        lane_width_px,
        px_per_meter: lane_width_px / cfg.nominal_width_m,
        road_polygons,
        ego_lane_polygons,
    })
}
