//! Per-tracklet motion statistics and their discrete tokens.

use serde::Serialize;

use crate::config::BinsConfig;
use crate::geom::{point_polyline_distance, signed_polyline_distance, Point};
use crate::lane::LaneGeometry;
use crate::scene::{ActorClass, Tracklet};

/// Displacements shorter than this (pixels) carry no usable heading.
pub const MIN_HEADING_DISPLACEMENT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Kinematics {
    pub track_id: i64,
    pub class: ActorClass,
    /// m/s
    pub mean_speed: f64,
    /// radians per frame
    pub max_heading_change: f64,
    /// signed lane widths per second
    pub lateral_drift: f64,
    /// mean |acceleration| in m/s^2
    pub smoothness: f64,
    /// Net bottom-center displacement in pixels, first box to last.
    pub net_displacement: (f64, f64),
    pub samples: usize,
    pub single_sample: bool,
}

/// Motion statistics of `t`. Lateral drift needs `geom` (centerlines and
/// lane width); without it drift is zero.
pub fn tracklet_kinematics(t: &Tracklet, fps: f64, px_per_meter: f64, geom: Option<&LaneGeometry>) -> Kinematics {
    let pts: Vec<(f64, Point)> = t.boxes.iter().map(|b| (b.frame as f64, b.bottom_center())).collect();
    let mut k = Kinematics {
        track_id: t.track_id,
        class: t.class,
        mean_speed: 0.0,
        max_heading_change: 0.0,
        lateral_drift: 0.0,
        smoothness: 0.0,
        net_displacement: (0.0, 0.0),
        samples: pts.len(),
        single_sample: pts.len() < 2,
    };
    if pts.len() < 2 {
        return k;
    }
    let (first, last) = (pts[0].1, pts[pts.len() - 1].1);
    k.net_displacement = (last.x - first.x, last.y - first.y);

    // Velocity in m/s per consecutive pair, stamped at the pair's end frame.
    let vel: Vec<(f64, Point)> = pts
        .windows(2)
        .map(|w| {
            let dt = (w[1].0 - w[0].0) / fps;
            (w[1].0, w[1].1.sub(w[0].1).scale(1.0 / (dt * px_per_meter)))
        })
        .collect();
    k.mean_speed = vel.iter().map(|(_, v)| v.norm()).sum::<f64>() / vel.len() as f64;

    let headings: Vec<(f64, Point)> = pts
        .windows(2)
        .map(|w| (w[1].0, w[1].1.sub(w[0].1)))
        .filter(|(_, d)| d.norm() >= MIN_HEADING_DISPLACEMENT)
        .collect();
    k.max_heading_change = headings
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].1, w[1].1);
            a.cross(b).atan2(a.dot(b)).abs() / (w[1].0 - w[0].0)
        })
        .fold(0.0, f64::max);

    if vel.len() >= 2 {
        let acc: Vec<f64> = vel
            .windows(2)
            .map(|w| w[1].1.sub(w[0].1).norm() / ((w[1].0 - w[0].0) / fps))
            .collect();
        k.smoothness = acc.iter().sum::<f64>() / acc.len() as f64;
    }

    if let Some(g) = geom {
        let samples: Vec<(f64, f64)> = pts
            .iter()
            .filter_map(|&(f, p)| signed_lane_offset(p, g).map(|d| (f / fps, d / g.lane_width_px)))
            .collect();
        k.lateral_drift = ls_slope(&samples);
    }
    k
}

/// Signed distance from `p` to its nearest centerline.
pub fn signed_lane_offset(p: Point, g: &LaneGeometry) -> Option<f64> {
    let nearest = g
        .centerlines
        .iter()
        .filter_map(|c| point_polyline_distance(p, c).map(|(d, _)| (d, c)))
        .min_by(|a, b| a.0.total_cmp(&b.0))?;
    signed_polyline_distance(p, nearest.1)
}

/// Least-squares slope of y over x; zero when x has no spread.
pub fn ls_slope(samples: &[(f64, f64)]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mx) * (s.0 - mx)).sum();
    if sxx == 0.0 {
        return 0.0;
    }
    let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
    sxy / sxx
}

/// Restricts a tracklet to frames in `range`.
pub fn restrict(t: &Tracklet, range: std::ops::Range<usize>) -> Tracklet {
    Tracklet {
        track_id: t.track_id,
        class: t.class,
        boxes: t.boxes.iter().filter(|b| range.contains(&b.frame)).cloned().collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedRegime {
    Stationary,
    Slow,
    Moderate,
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftLevel {
    None,
    Slight,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    Smooth,
    Jerky,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Static,
    Away,
    Toward,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MotionTokens {
    pub direction: Direction,
    pub speed: SpeedRegime,
    pub drift: DriftLevel,
    pub smoothness: Smoothness,
}

impl SpeedRegime {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stationary => "stationary",
            Self::Slow => "slow",
            Self::Moderate => "moderate",
            Self::Fast => "fast",
        }
    }
}

impl DriftLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Slight => "slight",
            Self::Strong => "strong",
        }
    }
}

impl Smoothness {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Smooth => "smooth",
            Self::Jerky => "jerky",
        }
    }
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Static => "static",
            Self::Away => "moving away",
            Self::Toward => "approaching",
            Self::Left => "moving left",
            Self::Right => "moving right",
        }
    }
}

/// Bins are half-open `[lo, hi)`, so a value exactly on an edge belongs to
/// the bin that starts there.
pub fn discretize(k: &Kinematics, bins: &BinsConfig) -> MotionTokens {
    let speed = if k.mean_speed < bins.speed_stationary {
        SpeedRegime::Stationary
    } else if k.mean_speed < bins.speed_slow {
        SpeedRegime::Slow
    } else if k.mean_speed < bins.speed_moderate {
        SpeedRegime::Moderate
    } else {
        SpeedRegime::Fast
    };
    let d = k.lateral_drift.abs();
    let drift = if d < bins.drift_none {
        DriftLevel::None
    } else if d < bins.drift_slight {
        DriftLevel::Slight
    } else {
        DriftLevel::Strong
    };
    let smoothness = if k.smoothness < bins.jerk { Smoothness::Smooth } else { Smoothness::Jerky };
    let (dx, dy) = k.net_displacement;
    let direction = if speed == SpeedRegime::Stationary {
        Direction::Static
    } else if dy.abs() >= dx.abs() {
        if dy < 0.0 {
            Direction::Away
        } else {
            Direction::Toward
        }
    } else if dx < 0.0 {
        Direction::Left
    } else {
        Direction::Right
    };
    MotionTokens { direction, speed, drift, smoothness }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rect;
    use crate::scene::Detection;

    fn track(pts: &[(usize, f64, f64)]) -> Tracklet {
        Tracklet {
            track_id: 1,
            class: ActorClass::Vehicle,
            boxes: pts
                .iter()
                .map(|&(frame, x, y)| Detection {
                    frame,
                    rect: Rect::new(x - 4.0, y - 8.0, 8.0, 8.0),
                    class: ActorClass::Vehicle,
                    conf: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn stationary_box() {
        let t = track(&(0..10).map(|f| (f, 50.0, 50.0)).collect::<Vec<_>>());
        let k = tracklet_kinematics(&t, 10.0, 12.0, None);
        assert_eq!((k.mean_speed, k.lateral_drift, k.max_heading_change), (0.0, 0.0, 0.0));
        assert_eq!(discretize(&k, &BinsConfig::default()).speed, SpeedRegime::Stationary);
    }

    #[test]
    fn constant_horizontal_motion() {
        let t = track(&(0..10).map(|f| (f, 2.0 * f as f64, 50.0)).collect::<Vec<_>>());
        let k = tracklet_kinematics(&t, 24.0, 12.0, None);
        assert!((k.mean_speed - 4.0).abs() < 1e-12);
        assert!(k.smoothness.abs() < 1e-12);
        assert_eq!(discretize(&k, &BinsConfig::default()).direction, Direction::Right);
    }

    #[test]
    fn single_box_is_flagged() {
        let k = tracklet_kinematics(&track(&[(3, 1.0, 1.0)]), 10.0, 10.0, None);
        assert!(k.single_sample);
        assert_eq!(k.mean_speed, 0.0);
    }

    #[test]
    fn bin_edges_are_half_open() {
        let bins = BinsConfig::default();
        let mut k = tracklet_kinematics(&track(&[(0, 0.0, 0.0)]), 1.0, 1.0, None);
        k.mean_speed = bins.speed_slow;
        k.smoothness = bins.jerk;
        k.lateral_drift = -bins.drift_none;
        let tok = discretize(&k, &bins);
        assert_eq!(tok.speed, SpeedRegime::Moderate);
        assert_eq!(tok.smoothness, Smoothness::Jerky);
        assert_eq!(tok.drift, DriftLevel::Slight);
    }

    #[test]
    fn slope_of_line() {
        let s: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3.0 * i as f64 + 1.0)).collect();
        assert!((ls_slope(&s) - 3.0).abs() < 1e-12);
        assert_eq!(ls_slope(&[(1.0, 2.0), (1.0, 5.0)]), 0.0);
    }
}
