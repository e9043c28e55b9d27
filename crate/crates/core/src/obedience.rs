//! Rule-based lane obedience: lane centering, solid-line respect and
//! crosswalk yielding, combined into `s_lane`.

use serde::Serialize;
use thiserror::Error;

use crate::clips::{clip_of, ClipRange};
use crate::config::LaneConfig;
use crate::geom::{point_polyline_distance, segment_crosses_polyline, vertical_crossings, Point};
use crate::lane::{BoundaryLine, LaneGeometry};
use crate::scene::{ActorClass, MaskInstance, ScenePriors, Tracklet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObedienceError {
    #[error("no valid samples for {0}")]
    NoEvidence(&'static str),
    #[error("lane weights must be nonnegative and sum to 1 (got {0})")]
    WeightError(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKindDiag {
    SolidLineCrossing,
    CrosswalkNotYielding,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKindDiag,
    pub frame: usize,
    pub track_id: i64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenteringScore {
    pub d_norm: f64,
    pub s_center: f64,
    pub samples: usize,
}

/// Mean lane-width-normalized distance from each track's bottom-center to
/// the nearest centerline, sampled at the key frames the geometries
/// describe. Off-road samples are skipped.
pub fn lane_centering_score(
    tracks: &[&Tracklet],
    geoms: &[&LaneGeometry],
    alpha: f64,
) -> Result<CenteringScore, ObedienceError> {
    let mut sum = 0.0;
    let mut samples = 0usize;
    for g in geoms {
        if g.centerlines.is_empty() {
            continue;
        }
        for t in tracks {
            let Some(det) = t.at_frame(g.frame) else { continue };
            let p = det.bottom_center();
            if !g.on_road(p) {
                continue;
            }
            let d = g
                .centerlines
                .iter()
                .filter_map(|c| point_polyline_distance(p, c).map(|(d, _)| d))
                .fold(f64::INFINITY, f64::min);
            sum += d / g.lane_width_px;
            samples += 1;
        }
    }
    if samples == 0 {
        return Err(ObedienceError::NoEvidence("lane centering"));
    }
    let d_norm = sum / samples as f64;
    Ok(CenteringScore { d_norm, s_center: centering_from_distance(d_norm, alpha), samples })
}

pub fn centering_from_distance(d_norm: f64, alpha: f64) -> f64 {
    (-alpha * d_norm).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolidScore {
    pub s_solid: f64,
    pub violating: usize,
    pub total: usize,
    pub no_evidence: bool,
    pub violations: Vec<Violation>,
}

/// Fraction of trajectory segments (consecutive bottom-centers) that touch a
/// solid or double-solid boundary. `boundaries_at(frame)` gives the boundary
/// set in force for a segment starting at `frame`; `None` marks the segment
/// invalid.
pub fn solid_line_score<'a>(
    tracks: &[&Tracklet],
    boundaries_at: impl Fn(usize) -> Option<&'a [BoundaryLine]>,
) -> SolidScore {
    let mut total = 0;
    let mut violations = Vec::new();
    for t in tracks {
        for w in t.boxes.windows(2) {
            let Some(lines) = boundaries_at(w[0].frame) else { continue };
            total += 1;
            let (a, b) = (w[0].bottom_center(), w[1].bottom_center());
            if lines.iter().filter(|l| l.style.is_solid()).any(|l| segment_crosses_polyline(a, b, &l.polyline)) {
                violations.push(Violation { kind: ViolationKindDiag::SolidLineCrossing, frame: w[0].frame, track_id: t.track_id });
            }
        }
    }
    let violating = violations.len();
    if total == 0 {
        return SolidScore { s_solid: 1.0, violating, total, no_evidence: true, violations };
    }
    let s_solid = (1.0 - violating as f64 / total as f64).clamp(0.0, 1.0);
    SolidScore { s_solid, violating, total, no_evidence: false, violations }
}

/// Same boundary set for every segment.
pub fn solid_line_score_static(tracks: &[&Tracklet], boundaries: &[BoundaryLine]) -> SolidScore {
    solid_line_score(tracks, |_| Some(boundaries))
}

/// Whether `p` lies within `depth` pixels below (toward the camera) of, or
/// inside, `crosswalk`: some `s` in `[0, depth]` puts `(p.x, p.y - s)` in it.
pub fn in_upstream_region(p: Point, crosswalk: &[Point], depth: f64) -> bool {
    let ys = vertical_crossings(p.x, crosswalk);
    let (lo, hi) = (p.y - depth, p.y);
    ys.chunks_exact(2).any(|iv| iv[0] <= hi && lo <= iv[1])
}

/// Ego speed in m/s at the box index `i`, from the backward displacement
/// (forward for the first box).
pub fn speed_at(track: &Tracklet, i: usize, fps: f64, px_per_meter: f64) -> f64 {
    let b = &track.boxes;
    if b.len() < 2 {
        return 0.0;
    }
    let (a, z) = if i == 0 { (&b[0], &b[1]) } else { (&b[i - 1], &b[i]) };
    let frames = (z.frame - a.frame) as f64;
    a.bottom_center().dist(z.bottom_center()) / frames * fps / px_per_meter
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossScore {
    pub s_cross: f64,
    pub encounters: usize,
    pub violating: usize,
    pub no_evidence: bool,
    pub violations: Vec<Violation>,
}

/// Encounters are maximal frame runs in which the ego bottom-center sits in
/// a crosswalk's upstream region while a pedestrian stands inside it; an
/// encounter violates when the ego moves faster than the yield speed at any
/// of its frames.
pub fn crosswalk_score<'a>(
    ego: &Tracklet,
    pedestrians: &[&Tracklet],
    crosswalks: &[&MaskInstance],
    geom_at: impl Fn(usize) -> Option<&'a LaneGeometry>,
    fps: f64,
    cfg: &LaneConfig,
) -> CrossScore {
    let mut encounters = 0;
    let mut violations = Vec::new();
    for cw in crosswalks {
        let mut active: Option<(usize, bool)> = None;
        let mut close = |run: Option<(usize, bool)>, violations: &mut Vec<Violation>| {
            if let Some((start, violated)) = run {
                encounters += 1;
                if violated {
                    violations.push(Violation {
                        kind: ViolationKindDiag::CrosswalkNotYielding,
                        frame: start,
                        track_id: ego.track_id,
                    });
                }
            }
        };
        for (i, det) in ego.boxes.iter().enumerate() {
            let t = det.frame;
            let state = (|| {
                let poly = &cw.at_frame(t)?.polygon;
                let g = geom_at(t)?;
                let p = det.bottom_center();
                let occupied = pedestrians
                    .iter()
                    .filter_map(|ped| ped.at_frame(t))
                    .any(|d| crate::geom::point_in_polygon(d.bottom_center(), poly));
                let depth = cfg.cross_approach_m * g.px_per_meter;
                let near = g.in_ego_lane(p) && in_upstream_region(p, poly, depth);
                (occupied && near).then(|| speed_at(ego, i, fps, g.px_per_meter) > cfg.yield_speed_mps)
            })();
            // A gap in ego frames also ends a run.
            let contiguous = i == 0 || ego.boxes[i - 1].frame + 1 == t;
            match (state, active) {
                (Some(fast), Some((start, violated))) if contiguous => active = Some((start, violated || fast)),
                (Some(fast), prev) => {
                    close(prev, &mut violations);
                    active = Some((t, fast));
                }
                (None, prev) => {
                    close(prev, &mut violations);
                    active = None;
                }
            }
        }
        close(active, &mut violations);
    }
    let violating = violations.len();
    if encounters == 0 {
        return CrossScore { s_cross: 1.0, encounters, violating, no_evidence: true, violations };
    }
    let s_cross = (1.0 - violating as f64 / encounters as f64).clamp(0.0, 1.0);
    CrossScore { s_cross, encounters, violating, no_evidence: false, violations }
}

/// Weighted sum of the three components.
pub fn lane_obedience(components: (f64, f64, f64), weights: (f64, f64, f64)) -> Result<f64, ObedienceError> {
    let (wc, ws, wx) = weights;
    let sum = wc + ws + wx;
    if wc < 0.0 || ws < 0.0 || wx < 0.0 || (sum - 1.0).abs() > 1e-9 {
        return Err(ObedienceError::WeightError(sum));
    }
    let (c, s, x) = components;
    Ok(wc * c + ws * s + wx * x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaneScores {
    pub d_norm: Option<f64>,
    pub s_center: f64,
    pub s_solid: f64,
    pub s_cross: f64,
    pub s_lane: f64,
    pub no_evidence_center: bool,
    pub no_evidence_solid: bool,
    pub no_evidence_cross: bool,
    pub solid_segments: usize,
    pub solid_violating: usize,
    pub encounters: usize,
    pub encounters_violating: usize,
    pub violations: Vec<Violation>,
}

/// All three components for one video. `geoms[m]` is the geometry of clip
/// `m`'s key frame (absent when the frame has no usable lane mask); segments
/// and frames inside clip `m` use it. `ego` is the real ego track or its
/// proxy; `real_ego` says which.
pub fn score_video_lanes(
    priors: &ScenePriors,
    clips: &[ClipRange],
    geoms: &[Option<LaneGeometry>],
    ego: &Tracklet,
    real_ego: bool,
    cfg: &LaneConfig,
) -> Result<LaneScores, ObedienceError> {
    let present: Vec<&LaneGeometry> = geoms.iter().flatten().collect();
    let geom_for_frame = |frame: usize| clip_of(clips, frame).and_then(|m| geoms[m].as_ref());

    let mut center_tracks: Vec<&Tracklet> = priors.tracks_of(ActorClass::Vehicle).collect();
    center_tracks.push(ego);
    let centering = lane_centering_score(&center_tracks, &present, cfg.alpha);

    let mut solid_tracks: Vec<&Tracklet> = priors.tracks_of(ActorClass::Vehicle).collect();
    if real_ego {
        solid_tracks.push(ego);
    }
    let solid = solid_line_score(&solid_tracks, |f| geom_for_frame(f).map(|g| g.boundaries.as_slice()));

    let peds: Vec<&Tracklet> = priors.tracks_of(ActorClass::Pedestrian).collect();
    let crosswalks: Vec<&MaskInstance> = priors.crosswalks().collect();
    let cross = crosswalk_score(ego, &peds, &crosswalks, geom_for_frame, priors.meta.fps, cfg);

    let (d_norm, s_center, no_ev_center) = match centering {
        Ok(c) => (Some(c.d_norm), c.s_center, false),
        Err(_) => (None, 1.0, true),
    };
    let s_lane = lane_obedience((s_center, solid.s_solid, cross.s_cross), (cfg.w_center, cfg.w_solid, cfg.w_cross))?;
    let mut violations = solid.violations;
    violations.extend(cross.violations);
    Ok(LaneScores {
        d_norm,
        s_center,
        s_solid: solid.s_solid,
        s_cross: cross.s_cross,
        s_lane,
        no_evidence_center: no_ev_center,
        no_evidence_solid: solid.no_evidence,
        no_evidence_cross: cross.no_evidence,
        solid_segments: solid.total,
        solid_violating: solid.violating,
        encounters: cross.encounters,
        encounters_violating: cross.violating,
        violations,
    })
}
