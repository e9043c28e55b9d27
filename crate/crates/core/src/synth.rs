//! Synthetic driving scenes with planted, exactly-labeled violations, and
//! structured instruction generation from the factor vocabulary.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Point, Rect};
use crate::scene::{
    ActorClass, BoundaryFrame, BoundaryStyle, Detection, LaneBoundary, MaskClass, MaskFrame, MaskInstance,
    ScenePriors, Tracklet, VideoMeta,
};

pub const IMAGE_W: u32 = 320;
pub const IMAGE_H: u32 = 240;
pub const FPS: f64 = 10.0;
pub const LANE_PX: f64 = 60.0;
const SIDEWALK_PX: f64 = 30.0;
const DIVIDER_X: f64 = 130.0;
const CURVE_AMP: f64 = 60.0;
const CROSSWALK_Y: (f64, f64) = (60.0, 80.0);
const EGO_BOX: (f64, f64) = (36.0, 30.0);
const CAR_BOX: (f64, f64) = (30.0, 24.0);
const PED_BOX: (f64, f64) = (8.0, 20.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("invalid scenario spec: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> SpecError {
    SpecError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Straight,
    Curve,
    Crosswalk,
    TwoLane,
}

impl Layout {
    pub const ALL: [Layout; 4] = [Layout::Straight, Layout::Curve, Layout::Crosswalk, Layout::TwoLane];

    pub fn as_str(self) -> &'static str {
        match self {
            Layout::Straight => "straight",
            Layout::Curve => "curve",
            Layout::Crosswalk => "crosswalk",
            Layout::TwoLane => "two_lane",
        }
    }

    fn divider_style(self) -> BoundaryStyle {
        match self {
            Layout::Straight | Layout::Crosswalk => BoundaryStyle::Dashed,
            Layout::TwoLane => BoundaryStyle::Solid,
            Layout::Curve => BoundaryStyle::DoubleSolid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Flicker,
    Teleport,
    SolidCross,
    OffCenterDrift,
    NonYield,
    SidewalkDrive,
    JerkyEgo,
}

impl ViolationKind {
    pub const ALL: [ViolationKind; 7] = [
        ViolationKind::Flicker,
        ViolationKind::Teleport,
        ViolationKind::SolidCross,
        ViolationKind::OffCenterDrift,
        ViolationKind::NonYield,
        ViolationKind::SidewalkDrive,
        ViolationKind::JerkyEgo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::Flicker => "flicker",
            ViolationKind::Teleport => "teleport",
            ViolationKind::SolidCross => "solid_cross",
            ViolationKind::OffCenterDrift => "off_center_drift",
            ViolationKind::NonYield => "non_yield",
            ViolationKind::SidewalkDrive => "sidewalk_drive",
            ViolationKind::JerkyEgo => "jerky_ego",
        }
    }

    /// Failure-taxonomy label the kind instantiates.
    pub fn taxonomy(self) -> &'static str {
        match self {
            ViolationKind::Flicker => "1.1 temporal instability",
            ViolationKind::Teleport => "1.1 temporal instability (identity jump)",
            ViolationKind::SolidCross | ViolationKind::NonYield | ViolationKind::SidewalkDrive => {
                "2.1 agent behavior violation"
            }
            ViolationKind::OffCenterDrift | ViolationKind::JerkyEgo => "2.3 ego vehicle impossibility",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViolationSpec {
    pub kind: ViolationKind,
    /// Kind-specific size: conf drop (flicker), jump in lane widths
    /// (teleport), offset in lane widths (drift, sidewalk), pixel jitter
    /// (jerky ego).
    #[serde(default)]
    pub magnitude: Option<f64>,
    /// Frame window `[start, end)`.
    #[serde(default)]
    pub window: Option<[usize; 2]>,
    /// Segment indices of the crossing agent's track (solid_cross).
    #[serde(default)]
    pub segments: Option<Vec<usize>>,
    /// Crosswalk encounters and how many of them violate (non_yield).
    #[serde(default)]
    pub encounters: Option<usize>,
    #[serde(default)]
    pub violating: Option<usize>,
}

impl ViolationSpec {
    pub fn new(kind: ViolationKind) -> Self {
        Self { kind, magnitude: None, window: None, segments: None, encounters: None, violating: None }
    }
}

fn default_frames() -> usize {
    48
}
fn default_true() -> bool {
    true
}
fn default_vehicles() -> usize {
    2
}
fn default_pedestrians() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub layout: Layout,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default)]
    pub violations: Vec<ViolationSpec>,
    #[serde(default = "default_true")]
    pub ego: bool,
    #[serde(default = "default_vehicles")]
    pub vehicles: usize,
    #[serde(default = "default_pedestrians")]
    pub pedestrians: usize,
    #[serde(default)]
    pub cyclists: usize,
    #[serde(default)]
    pub video_id: Option<String>,
}

impl ScenarioSpec {
    pub fn new(seed: u64, layout: Layout) -> Self {
        Self {
            seed,
            layout,
            frames: default_frames(),
            violations: vec![],
            ego: true,
            vehicles: default_vehicles(),
            pedestrians: default_pedestrians(),
            cyclists: 0,
            video_id: None,
        }
    }

    pub fn with(mut self, v: ViolationSpec) -> Self {
        self.violations.push(v);
        self
    }

    /// The same scene with every violation removed.
    pub fn clean_twin(&self) -> Self {
        Self { violations: vec![], ..self.clone() }
    }

    fn get(&self, kind: ViolationKind) -> Option<&ViolationSpec> {
        self.violations.iter().find(|v| v.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthViolation {
    pub kind: ViolationKind,
    /// `[start, end)` frames where the violation is visible.
    pub frames: [usize; 2],
}

/// Exact expected lane-rule outcomes of a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video_id: String,
    pub violations: Vec<TruthViolation>,
    pub solid_segments: usize,
    pub solid_violating: usize,
    pub s_solid: f64,
    pub encounters: usize,
    pub encounters_violating: usize,
    pub s_cross: f64,
    pub quality: f64,
}

impl GroundTruth {
    /// Kinds whose window overlaps any of `frames`.
    pub fn kinds_in(&self, frames: &[usize]) -> Vec<ViolationKind> {
        let mut out: Vec<ViolationKind> = self
            .violations
            .iter()
            .filter(|v| frames.iter().any(|f| (v.frames[0]..v.frames[1]).contains(f)))
            .map(|v| v.kind)
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Sidecar path holding the ground truth of an annotation file.
pub fn truth_path(annotation: &Path) -> PathBuf {
    let stem = annotation.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    annotation.with_file_name(format!("{stem}.truth.json"))
}

pub fn load_truth(annotation: &Path) -> Option<GroundTruth> {
    let text = std::fs::read_to_string(truth_path(annotation)).ok()?;
    serde_json::from_str(&text).ok()
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Side {
    Left,
    Right,
}

impl Side {
    fn flip(self) -> Self {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// Outward direction (away from the divider).
    fn sign(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }
}

struct Road {
    amp: f64,
}

impl Road {
    fn divider_x(&self, y: f64) -> f64 {
        let u = (IMAGE_H as f64 - y) / IMAGE_H as f64;
        DIVIDER_X + self.amp * u * u
    }

    fn lane_center(&self, side: Side, y: f64) -> f64 {
        self.divider_x(y) + side.sign() * LANE_PX / 2.0
    }

    fn sample_ys(&self) -> Vec<f64> {
        if self.amp == 0.0 {
            vec![0.0, IMAGE_H as f64]
        } else {
            (0..=24).map(|i| i as f64 * 10.0).collect()
        }
    }

    /// Band between horizontal offsets `a < b` from the divider.
    fn band(&self, a: f64, b: f64) -> Vec<Point> {
        let ys = self.sample_ys();
        let mut poly: Vec<Point> = ys.iter().map(|&y| Point::new(self.divider_x(y) + a, y)).collect();
        poly.extend(ys.iter().rev().map(|&y| Point::new(self.divider_x(y) + b, y)));
        poly
    }

    fn divider(&self) -> Vec<Point> {
        self.sample_ys().into_iter().map(|y| Point::new(self.divider_x(y), y)).collect()
    }
}

fn window_of(v: &ViolationSpec, t: usize, default: (usize, usize)) -> Result<(usize, usize), SpecError> {
    let (s, e) = v.window.map(|w| (w[0], w[1])).unwrap_or(default);
    if s >= e || e > t {
        return Err(invalid(format!("{} window [{s}, {e}) outside [0, {t})", v.kind.as_str())));
    }
    Ok((s, e))
}

fn magnitude(v: &ViolationSpec, default: f64, range: (f64, f64)) -> Result<f64, SpecError> {
    let m = v.magnitude.unwrap_or(default);
    if !(range.0..=range.1).contains(&m) {
        return Err(invalid(format!("{} magnitude {m} outside [{}, {}]", v.kind.as_str(), range.0, range.1)));
    }
    Ok(m)
}

fn boxed(frame: usize, class: ActorClass, p: Point, size: (f64, f64), conf: f64) -> Detection {
    Detection { frame, rect: Rect::new(p.x - size.0 / 2.0, p.y - size.1, size.0, size.1), class, conf }
}

fn static_mask(id: i64, class: MaskClass, subtype: Option<&str>, polygon: Vec<Point>, t: usize) -> MaskInstance {
    MaskInstance {
        instance_id: id,
        class,
        subtype: subtype.map(str::to_string),
        frames: (0..t).map(|frame| MaskFrame { frame, polygon: polygon.clone(), conf: 1.0 }).collect(),
    }
}

/// Crosswalk-layout ego timeline: approach speed (px/frame), the y at which
/// the ego waits, and the encounter windows `(start, violating)`.
struct CrossPlan {
    approach_speed: f64,
    dwell_y: f64,
    dwell_start: usize,
    windows: Vec<(usize, bool)>,
}

const ENCOUNTER_GAP: usize = 2;
const ENCOUNTER_LEN: usize = 3;
/// Ego step during a violating encounter: about 3 m/s at the nominal scale.
const VIOLATING_STEP_PX: f64 = 5.1;

fn cross_plan(spec: &ScenarioSpec) -> Result<Option<CrossPlan>, SpecError> {
    if spec.layout != Layout::Crosswalk || !spec.ego {
        if spec.get(ViolationKind::NonYield).is_some() {
            return Err(invalid("non_yield needs the crosswalk layout and an ego track"));
        }
        return Ok(None);
    }
    let (n, k) = match spec.get(ViolationKind::NonYield) {
        Some(v) => {
            let n = v.encounters.unwrap_or(4);
            let k = v.violating.unwrap_or(n.div_ceil(2));
            if n == 0 || k == 0 || k > n || k > 5 {
                return Err(invalid(format!("non_yield needs 1 <= violating <= min(encounters, 5); got {k} of {n}")));
            }
            (n, k)
        }
        None => (2, 0),
    };
    let approach_speed = 5.0;
    let dwell_y = 156.0;
    let dwell_start = ((236.0 - dwell_y) / approach_speed) as usize;
    let windows: Vec<(usize, bool)> =
        (0..n).map(|i| (dwell_start + ENCOUNTER_GAP + i * (ENCOUNTER_GAP + ENCOUNTER_LEN), i >= n - k)).collect();
    let last = windows.last().map(|w| w.0 + ENCOUNTER_LEN).unwrap_or(dwell_start);
    if last + 1 > spec.frames {
        return Err(invalid(format!("{n} crosswalk encounters need at least {} frames", last + 1)));
    }
    Ok(Some(CrossPlan { approach_speed, dwell_y, dwell_start, windows }))
}

/// Generates a scene and its exact ground truth. Deterministic in the spec.
pub fn gen_scenario(spec: &ScenarioSpec) -> Result<(ScenePriors, GroundTruth), SpecError> {
    let t = spec.frames;
    if !(8..=400).contains(&t) {
        return Err(invalid(format!("frames must be in [8, 400], got {t}")));
    }
    if spec.vehicles > 6 || spec.pedestrians > 4 || spec.cyclists > 4 {
        return Err(invalid("at most 6 vehicles, 4 pedestrians and 4 cyclists"));
    }
    let mut kinds = HashSet::new();
    for v in &spec.violations {
        if !kinds.insert(v.kind) {
            return Err(invalid(format!("duplicate violation {}", v.kind.as_str())));
        }
    }
    let needs_agent = [ViolationKind::SolidCross, ViolationKind::Teleport, ViolationKind::SidewalkDrive];
    if spec.vehicles == 0 && spec.violations.iter().any(|v| needs_agent.contains(&v.kind)) {
        return Err(invalid("violation needs at least one non-ego vehicle"));
    }
    if spec.get(ViolationKind::JerkyEgo).is_some() && !spec.ego {
        return Err(invalid("jerky_ego needs an ego track"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let road = Road { amp: if spec.layout == Layout::Curve { CURVE_AMP } else { 0.0 } };
    let tf = t as f64;
    let mut truth_violations = Vec::new();

    // Masks and declared boundaries.
    let mut masks = vec![
        static_mask(1, MaskClass::EgoLane, None, road.band(0.0, LANE_PX), t),
        static_mask(2, MaskClass::OtherLane, None, road.band(-LANE_PX, 0.0), t),
        static_mask(3, MaskClass::Sidewalk, None, road.band(-LANE_PX - SIDEWALK_PX, -LANE_PX), t),
        static_mask(4, MaskClass::Sidewalk, None, road.band(LANE_PX, LANE_PX + SIDEWALK_PX), t),
    ];
    if spec.layout == Layout::Crosswalk {
        let (y0, y1) = CROSSWALK_Y;
        let (x0, x1) = (DIVIDER_X - LANE_PX, DIVIDER_X + LANE_PX);
        let cw = vec![Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)];
        masks.push(static_mask(5, MaskClass::Crosswalk, None, cw, t));
        let sx = DIVIDER_X + LANE_PX + 5.0;
        let sig = vec![Point::new(sx, 38.0), Point::new(sx + 15.0, 38.0), Point::new(sx + 15.0, 56.0), Point::new(sx, 56.0)];
        masks.push(static_mask(6, MaskClass::HardObject, Some("signal"), sig, t));
    }
    let solid_cross = spec.get(ViolationKind::SolidCross);
    let mut style = spec.layout.divider_style();
    if solid_cross.is_some() && !style.is_solid() {
        style = BoundaryStyle::Solid;
    }
    let divider = road.divider();
    let boundaries = vec![LaneBoundary {
        boundary_id: 1,
        style,
        frames: (0..t).map(|frame| BoundaryFrame { frame, polyline: divider.clone() }).collect(),
    }];

    // Violation parameters.
    let switch_segments: Vec<usize> = match solid_cross {
        Some(v) => {
            let mut segs = v.segments.clone().unwrap_or_else(|| vec![t / 3, 2 * t / 3]);
            segs.sort_unstable();
            segs.dedup();
            if segs.is_empty() || segs.iter().any(|&s| s + 1 >= t) {
                return Err(invalid(format!("solid_cross segments must be in [0, {})", t - 1)));
            }
            truth_violations.push(TruthViolation {
                kind: ViolationKind::SolidCross,
                frames: [segs[0], segs[segs.len() - 1] + 2],
            });
            segs
        }
        None => vec![],
    };
    let teleport = match spec.get(ViolationKind::Teleport) {
        Some(v) => {
            let jump = magnitude(v, 0.8, (0.2, 1.5))? * LANE_PX;
            let (s, _) = window_of(v, t, (t / 2, t / 2 + 1))?;
            let at = s.max(1);
            truth_violations.push(TruthViolation { kind: ViolationKind::Teleport, frames: [at - 1, at + 1] });
            Some((at, jump))
        }
        None => None,
    };
    let drift = match spec.get(ViolationKind::OffCenterDrift) {
        Some(v) => {
            let m = magnitude(v, 0.35, (0.05, 0.45))?;
            let w = window_of(v, t, (t / 4, t))?;
            truth_violations.push(TruthViolation { kind: ViolationKind::OffCenterDrift, frames: [w.0, w.1] });
            Some((m * LANE_PX, w))
        }
        None => None,
    };
    let sidewalk = match spec.get(ViolationKind::SidewalkDrive) {
        Some(v) => {
            let m = magnitude(v, 0.8, (0.55, 1.0))?;
            let w = window_of(v, t, (t / 3, 2 * t / 3))?;
            truth_violations.push(TruthViolation { kind: ViolationKind::SidewalkDrive, frames: [w.0, w.1] });
            Some((m * LANE_PX, w))
        }
        None => None,
    };
    let flicker = match spec.get(ViolationKind::Flicker) {
        Some(v) => {
            let m = magnitude(v, 0.7, (0.1, 1.0))?;
            let w = window_of(v, t, (0, t))?;
            truth_violations.push(TruthViolation { kind: ViolationKind::Flicker, frames: [w.0, w.1] });
            Some((m, w))
        }
        None => None,
    };
    let jerky = match spec.get(ViolationKind::JerkyEgo) {
        Some(v) => {
            let m = magnitude(v, 3.0, (1.0, 6.0))?;
            let w = window_of(v, t, (0, t))?;
            truth_violations.push(TruthViolation { kind: ViolationKind::JerkyEgo, frames: [w.0, w.1] });
            Some((m, w))
        }
        None => None,
    };
    let plan = cross_plan(spec)?;
    if let Some(p) = &plan {
        if spec.get(ViolationKind::NonYield).is_some() {
            let first = p.windows.iter().find(|w| w.1).unwrap().0;
            let last = p.windows.last().unwrap().0 + ENCOUNTER_LEN;
            truth_violations.push(TruthViolation { kind: ViolationKind::NonYield, frames: [first, last] });
        }
    }
    truth_violations.sort_by_key(|v| v.kind);
    let in_window = |w: (usize, usize), f: usize| (w.0..w.1).contains(&f);
    let ramp = |w: (usize, usize), f: usize| -> f64 {
        if !in_window(w, f) {
            return 0.0;
        }
        ((f - w.0 + 1) as f64 / 5.0).min(1.0)
    };

    // Ego.
    let ego_track = if spec.ego {
        let base_speed = rng.gen_range(1.0..1.6f64).min(116.0 / tf);
        let mut y_prev = 236.0;
        let mut boxes = Vec::with_capacity(t);
        for f in 0..t {
            let mut y = match &plan {
                None => 236.0 - base_speed * f as f64,
                Some(p) if f <= p.dwell_start => (236.0 - p.approach_speed * f as f64).max(p.dwell_y),
                Some(p) => {
                    let moving = p.windows.iter().any(|&(s, v)| v && (s..s + ENCOUNTER_LEN).contains(&f));
                    if moving {
                        y_prev - VIOLATING_STEP_PX
                    } else {
                        y_prev
                    }
                }
            };
            y_prev = y;
            if let Some((m, w)) = jerky {
                // Jitter only outside the crosswalk dwell so encounter speeds stay exact.
                let free = plan.as_ref().is_none_or(|p| f < p.dwell_start.saturating_sub(1));
                if in_window(w, f) && free {
                    y += if f % 2 == 0 { m } else { -m };
                }
            }
            let mut x = road.lane_center(Side::Right, y);
            if let Some((m, w)) = drift {
                x += m * ramp(w, f);
            }
            boxes.push(boxed(f, ActorClass::Vehicle, Point::new(x, y), EGO_BOX, 1.0));
        }
        Some(Tracklet { track_id: 0, class: ActorClass::Vehicle, boxes })
    } else {
        None
    };

    // Other vehicles.
    let mut tracklets = Vec::new();
    let jump_px = teleport.map(|t| t.1).unwrap_or(0.0);
    for i in 0..spec.vehicles {
        let side = if i % 2 == 0 { Side::Right } else { Side::Left };
        let oncoming = side == Side::Left && spec.layout == Layout::TwoLane;
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let (y0, v) = if i == 0 {
            let y0 = rng.gen_range(110.0..140.0f64);
            (y0, rng.gen_range(0.6..1.2f64).min((y0 - 30.0 - jump_px).max(0.0) / tf))
        } else if oncoming {
            let y0 = rng.gen_range(30.0..60.0f64) + 12.0 * (i / 2) as f64;
            (y0, -rng.gen_range(1.5..2.5f64).min((230.0 - y0) / tf))
        } else {
            let y0 = rng.gen_range(190.0..220.0f64) - 15.0 * (i / 2) as f64;
            (y0, rng.gen_range(1.5..2.5f64).min((y0 - 30.0) / tf))
        };
        let mut cur_side = side;
        let mut boxes = Vec::with_capacity(t);
        for f in 0..t {
            if i == 0 && f > 0 && switch_segments.contains(&(f - 1)) {
                cur_side = cur_side.flip();
            }
            let mut y = y0 - v * f as f64;
            if let Some((at, jump)) = teleport {
                if i == 0 && f >= at {
                    y -= jump;
                }
            }
            let mut x = road.lane_center(cur_side, y) + 1.5 * (0.3 * f as f64 + phase).sin();
            let sidewalk_agent = if spec.vehicles > 1 { 1 } else { 0 };
            if let Some((m, w)) = sidewalk {
                if i == sidewalk_agent {
                    x += cur_side.sign() * m * ramp(w, f);
                }
            }
            if let (Some((m, w)), false) = (drift, spec.ego) {
                if i == 0 {
                    x += cur_side.sign() * m * ramp(w, f);
                }
            }
            let conf = match flicker {
                Some((m, w)) if in_window(w, f) && f % 2 == 1 => 1.0 - m,
                _ => 1.0,
            };
            boxes.push(boxed(f, ActorClass::Vehicle, Point::new(x, y), CAR_BOX, conf));
        }
        tracklets.push(Tracklet { track_id: 1 + i as i64, class: ActorClass::Vehicle, boxes });
    }

    // Pedestrians and cyclists.
    for j in 0..spec.pedestrians {
        let id = 100 + j as i64;
        let boxes: Vec<Detection> = if let (0, Some(p)) = (j, plan.as_ref()) {
            let x = DIVIDER_X + 20.0;
            (0..t)
                .map(|f| {
                    let inside = p.windows.iter().any(|&(s, _)| (s..s + ENCOUNTER_LEN).contains(&f));
                    let y = if inside { CROSSWALK_Y.0 + 10.0 } else { CROSSWALK_Y.0 - 2.0 };
                    boxed(f, ActorClass::Pedestrian, Point::new(x, y), PED_BOX, 1.0)
                })
                .collect()
        } else {
            let x = road.divider_x(200.0) + LANE_PX + SIDEWALK_PX / 2.0 - 8.0 * j as f64;
            let y0 = rng.gen_range(180.0..230.0f64);
            let v = rng.gen_range(0.2..0.6f64).min((y0 - 40.0) / tf);
            (0..t).map(|f| boxed(f, ActorClass::Pedestrian, Point::new(x, y0 - v * f as f64), PED_BOX, 1.0)).collect()
        };
        tracklets.push(Tracklet { track_id: id, class: ActorClass::Pedestrian, boxes });
    }
    for j in 0..spec.cyclists {
        let y0 = rng.gen_range(150.0..220.0f64);
        let v = rng.gen_range(0.8..1.5f64).min((y0 - 40.0) / tf);
        let boxes = (0..t)
            .map(|f| {
                let y = y0 - v * f as f64;
                let x = road.divider_x(y) - LANE_PX - SIDEWALK_PX / 2.0 + 6.0 * j as f64;
                boxed(f, ActorClass::Cyclist, Point::new(x, y), (10.0, 18.0), 1.0)
            })
            .collect();
        tracklets.push(Tracklet { track_id: 200 + j as i64, class: ActorClass::Cyclist, boxes });
    }

    // Exact lane-rule truth.
    let mut solid_segments: usize =
        tracklets.iter().filter(|t| t.class == ActorClass::Vehicle).map(|t| t.boxes.len() - 1).sum();
    if spec.ego {
        solid_segments += t - 1;
    }
    let solid_violating = switch_segments.len();
    let s_solid = if solid_segments == 0 { 1.0 } else { 1.0 - solid_violating as f64 / solid_segments as f64 };
    let (encounters, encounters_violating) = match &plan {
        Some(p) => (p.windows.len(), p.windows.iter().filter(|w| w.1).count()),
        None => (0, 0),
    };
    let s_cross = if encounters == 0 { 1.0 } else { 1.0 - encounters_violating as f64 / encounters as f64 };

    let quality = if spec.violations.is_empty() {
        0.85 + rng.gen_range(-0.05..0.05)
    } else {
        (0.12 - 0.03 * (spec.violations.len() - 1) as f64 + rng.gen_range(-0.03..0.03)).clamp(0.01, 1.0)
    };
    let video_id = spec.video_id.clone().unwrap_or_else(|| {
        let tag: Vec<&str> = spec.violations.iter().map(|v| v.kind.as_str()).collect();
        if tag.is_empty() {
            format!("synth-{}-{}", spec.layout.as_str(), spec.seed)
        } else {
            format!("synth-{}-{}-{}", spec.layout.as_str(), spec.seed, tag.join("+"))
        }
    });
    let priors = ScenePriors {
        meta: VideoMeta { video_id: video_id.clone(), width: IMAGE_W, height: IMAGE_H, fps: FPS, num_frames: t },
        tracklets,
        masks,
        boundaries,
        ego_track,
        human_score: Some(quality),
    };
    let truth = GroundTruth {
        video_id,
        violations: truth_violations,
        solid_segments,
        solid_violating,
        s_solid,
        encounters,
        encounters_violating,
        s_cross,
        quality,
    };
    Ok((priors, truth))
}

/// A random spec: layout and 0 to 2 violations compatible with it.
pub fn random_spec(seed: u64, violation_rate: f64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let layout = Layout::ALL[rng.gen_range(0..4)];
    let mut spec = ScenarioSpec::new(seed, layout);
    if rng.gen_bool(violation_rate.clamp(0.0, 1.0)) {
        let count = rng.gen_range(1..=2);
        let mut pool: Vec<ViolationKind> = ViolationKind::ALL
            .into_iter()
            .filter(|k| *k != ViolationKind::NonYield || layout == Layout::Crosswalk)
            .collect();
        for _ in 0..count {
            let k = pool.remove(rng.gen_range(0..pool.len()));
            spec.violations.push(ViolationSpec::new(k));
        }
    }
    spec
}

/// `n` specs alternating clean scenes and single-violation scenes; the
/// violation kind cycles so every kind appears once per 14 specs.
pub fn balanced_specs(n: usize, base_seed: u64) -> Vec<ScenarioSpec> {
    (0..n)
        .map(|i| {
            let seed = base_seed + i as u64;
            if i % 2 == 0 {
                return random_spec(seed, 0.0);
            }
            let kind = ViolationKind::ALL[(i / 2) % ViolationKind::ALL.len()];
            let layout =
                if kind == ViolationKind::NonYield { Layout::Crosswalk } else { Layout::ALL[(i / 14) % Layout::ALL.len()] };
            ScenarioSpec::new(seed, layout).with(ViolationSpec::new(kind))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Instructions

/// (value, prior weight) per factor; weights 3/2/1 for high/medium/low.
pub const ENVIRONMENTS: &[(&str, u32)] = &[
    ("urban", 3),
    ("residential", 3),
    ("highway", 3),
    ("suburban", 2),
    ("rural", 2),
    ("mountain", 1),
    ("tunnel", 1),
    ("bridge", 1),
    ("roundabout", 1),
    ("parking lot", 1),
];
pub const WEATHER: &[(&str, u32)] = &[
    ("sunny", 3),
    ("overcast", 3),
    ("rainy", 2),
    ("night", 2),
    ("snowy", 1),
    ("foggy", 1),
    ("heavy rain/snow", 1),
];
pub const EGO_BEHAVIORS: &[(&str, u32)] = &[
    ("cruising straight", 3),
    ("lane keeping", 3),
    ("braking", 2),
    ("overtaking", 2),
    ("merging", 2),
    ("navigating traffic", 2),
    ("stop-and-go traffic", 2),
    ("approaching traffic light", 2),
    ("U-turn", 1),
    ("emergency braking", 1),
    ("exiting highway", 1),
];
pub const SCENE_DYNAMICS: &[(&str, u32)] = &[
    ("sparse traffic", 3),
    ("heavy traffic", 3),
    ("parked cars", 3),
    ("roadwork cones", 2),
    ("temporary barriers", 2),
    ("glare", 2),
    ("strong headlights", 2),
    ("smoke", 2),
    ("pedestrians at crosswalk", 2),
    ("bus stopping", 2),
    ("truck blocking lane", 2),
    ("emergency vehicle", 1),
    ("jaywalker", 1),
    ("cyclist in ego lane", 1),
    ("animal presence", 1),
    ("small obstacle on road", 1),
];

/// Factor pairs rejected as physically or legally contradictory.
pub const CONFLICTS: &[(&str, &str)] = &[
    ("night", "glare"),
    ("tunnel", "snowy"),
    ("tunnel", "heavy rain/snow"),
    ("tunnel", "sunny"),
    ("highway", "U-turn"),
    ("highway", "pedestrians at crosswalk"),
    ("highway", "jaywalker"),
    ("parking lot", "exiting highway"),
    ("parking lot", "heavy traffic"),
    ("parking lot", "merging"),
    ("residential", "exiting highway"),
    ("roundabout", "exiting highway"),
    ("bridge", "parked cars"),
    ("tunnel", "U-turn"),
];

pub const TEMPLATES: [&str; 3] = [
    "In the driver\u{2019}s front\u{2013}camera view of a {E} under {W}, the ego vehicle {B} while the scene shows {D}.",
    "Under {W} in a {E} scene, the ego car {B} as {D} unfolds.",
    "{D} occurs in a {E} setting; with {W} conditions, the ego vehicle {B}.",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Instruction {
    pub text: String,
    pub environment: String,
    pub weather: String,
    pub behavior: String,
    pub dynamics: String,
    pub template: usize,
}

pub fn fill_template(template: usize, e: &str, w: &str, b: &str, d: &str) -> String {
    let s = TEMPLATES[template].replace("{E}", e).replace("{W}", w).replace("{B}", b).replace("{D}", d);
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => s,
    }
}

pub fn conflicts(factors: &[&str]) -> bool {
    CONFLICTS.iter().any(|(a, b)| factors.contains(a) && factors.contains(b))
}

fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Prior-weighted draws of (environment, weather, behavior, dynamics,
/// template), before any rejection.
pub struct FactorSampler {
    rng: ChaCha8Rng,
    dists: [WeightedIndex<u32>; 4],
}

impl FactorSampler {
    pub fn new(seed: u64) -> Self {
        let dist = |vocab: &[(&str, u32)]| WeightedIndex::new(vocab.iter().map(|v| v.1)).expect("nonempty vocabulary");
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dists: [dist(ENVIRONMENTS), dist(WEATHER), dist(EGO_BEHAVIORS), dist(SCENE_DYNAMICS)],
        }
    }

    pub fn draw(&mut self) -> ([&'static str; 4], usize) {
        let e = ENVIRONMENTS[self.dists[0].sample(&mut self.rng)].0;
        let w = WEATHER[self.dists[1].sample(&mut self.rng)].0;
        let b = EGO_BEHAVIORS[self.dists[2].sample(&mut self.rng)].0;
        let d = SCENE_DYNAMICS[self.dists[3].sample(&mut self.rng)].0;
        ([e, w, b, d], self.rng.gen_range(0..TEMPLATES.len()))
    }
}

/// Samples `n` distinct instructions. Stops early if the rejection rules
/// exhaust the attempt budget (`n * 1000` draws).
pub fn gen_instructions(n: usize, seed: u64) -> Vec<Instruction> {
    let mut sampler = FactorSampler::new(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n && attempts < n.saturating_mul(1000) {
        attempts += 1;
        let ([e, w, b, d], template) = sampler.draw();
        if conflicts(&[e, w, b, d]) {
            continue;
        }
        let text = fill_template(template, e, w, b, d);
        if !seen.insert(normalize_text(&text)) {
            continue;
        }
        out.push(Instruction {
            text,
            environment: e.into(),
            weather: w.into(),
            behavior: b.into(),
            dynamics: d.into(),
            template,
        });
    }
    out
}
