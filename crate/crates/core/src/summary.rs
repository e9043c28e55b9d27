//! Deterministic scene summaries injected into every prompt.

use serde::Serialize;

use crate::clips::ClipRange;
use crate::config::BinsConfig;
use crate::kinematics::{discretize, Kinematics};
use crate::lane::LaneGeometry;
use crate::scene::{ActorClass, BoundaryStyle, Detection, MaskClass, ScenePriors, Tracklet, EGO_PROXY_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Frame(usize),
    Clip(ClipRange),
}

impl Scope {
    /// Frame whose masks and geometry describe the scope.
    pub fn anchor_frame(&self) -> usize {
        match self {
            Scope::Frame(f) => *f,
            Scope::Clip(c) => c.key_frame,
        }
    }

    fn contains(&self, frame: usize) -> bool {
        match self {
            Scope::Frame(f) => *f == frame,
            Scope::Clip(c) => c.contains(frame),
        }
    }
}

pub const COLUMNS: [&str; 3] = ["left", "center", "right"];
pub const ROWS: [&str; 3] = ["far", "mid", "near"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeBin {
    Small,
    Medium,
    Large,
}

impl SizeBin {
    pub fn as_str(self) -> &'static str {
        match self {
            SizeBin::Small => "small",
            SizeBin::Medium => "medium",
            SizeBin::Large => "large",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayoutEntry {
    pub track_id: i64,
    pub class: ActorClass,
    pub col: usize,
    pub row: usize,
    pub size: SizeBin,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneSummary {
    /// vehicle, pedestrian, cyclist
    pub counts: [usize; 3],
    /// `grid[row][col]`, rows far to near, columns left to right.
    pub grid: [[usize; 3]; 3],
    pub layout: Vec<LayoutEntry>,
    pub lane_attributes: Vec<String>,
    pub motion_descriptors: Vec<String>,
    pub rendered_text: String,
}

/// Grid cell (column, row) of a reference point by image thirds.
pub fn grid_cell(x: f64, y: f64, width: f64, height: f64) -> (usize, usize) {
    let third = |v: f64, extent: f64| ((v / extent * 3.0).floor().clamp(0.0, 2.0)) as usize;
    (third(x, width), third(y, height))
}

pub fn size_bin(area_fraction: f64, bins: &BinsConfig) -> SizeBin {
    if area_fraction < bins.size_small {
        SizeBin::Small
    } else if area_fraction < bins.size_medium {
        SizeBin::Medium
    } else {
        SizeBin::Large
    }
}

/// The box that represents a track within a scope: the frame itself, or the
/// middle in-clip box for a clip.
pub fn representative<'a>(t: &'a Tracklet, scope: &Scope) -> Option<&'a Detection> {
    match scope {
        Scope::Frame(f) => t.at_frame(*f),
        Scope::Clip(_) => {
            let inside: Vec<&Detection> = t.boxes.iter().filter(|b| scope.contains(b.frame)).collect();
            inside.get(inside.len() / 2).copied()
        }
    }
}

fn is_ego(id: i64, priors: &ScenePriors) -> bool {
    id == EGO_PROXY_ID || priors.ego_track.as_ref().is_some_and(|e| e.track_id == id)
}

fn lane_attributes(priors: &ScenePriors, geom: Option<&LaneGeometry>, frame: usize) -> Vec<String> {
    let mut attrs = Vec::new();
    let lanes = priors.masks.iter().filter(|m| m.class.is_lane() && m.at_frame(frame).is_some()).count();
    if lanes > 0 {
        attrs.push(format!("{lanes} {}", if lanes == 1 { "lane" } else { "lanes" }));
    }
    if let Some(g) = geom {
        for style in [BoundaryStyle::Solid, BoundaryStyle::Dashed, BoundaryStyle::DoubleSolid] {
            let n = g.boundaries.iter().filter(|b| b.style == style).count();
            if n > 0 {
                let derived = g.boundaries.iter().any(|b| b.style == style && b.derived);
                let noun = if n == 1 { "boundary" } else { "boundaries" };
                let tag = if derived { " (inferred)" } else { "" };
                attrs.push(format!("{n} {} {noun}{tag}", style.as_str().replace('_', "-")));
            }
        }
    }
    let present = |pred: &dyn Fn(&crate::scene::MaskInstance) -> bool| {
        priors.masks.iter().any(|m| m.at_frame(frame).is_some() && pred(m))
    };
    if present(&|m| m.is_crosswalk()) {
        attrs.push("crosswalk".into());
    }
    if present(&|m| m.class == MaskClass::HardObject && m.has_subtype("arrow")) {
        attrs.push("arrow".into());
    }
    if present(&|m| m.class == MaskClass::HardObject && m.has_subtype("signal")) {
        attrs.push("signal".into());
    }
    attrs
}

/// Summary of what is visible in `scope`. Motion tokens come from `kin`
/// (already restricted to the scope by the caller) for tracks visible in it.
pub fn build_summary(
    priors: &ScenePriors,
    geom: Option<&LaneGeometry>,
    kin: &[Kinematics],
    scope: Scope,
    bins: &BinsConfig,
) -> SceneSummary {
    let (w, h) = (priors.meta.width as f64, priors.meta.height as f64);
    let mut counts = [0usize; 3];
    let mut grid = [[0usize; 3]; 3];
    let mut layout = Vec::new();
    for class in ActorClass::ALL {
        for t in priors.tracks_of(class) {
            let Some(b) = representative(t, &scope) else { continue };
            let p = b.bottom_center();
            let (col, row) = grid_cell(p.x, p.y, w, h);
            counts[class.index()] += 1;
            grid[row][col] += 1;
            let size = size_bin(b.rect.area() / (w * h), bins);
            layout.push(LayoutEntry { track_id: t.track_id, class, col, row, size });
        }
    }

    let lane_attributes = lane_attributes(priors, geom, scope.anchor_frame());

    let visible = |id: i64| is_ego(id, priors) || layout.iter().any(|e| e.track_id == id);
    let motion_descriptors: Vec<String> = kin
        .iter()
        .filter(|k| !k.single_sample && visible(k.track_id))
        .map(|k| {
            let tok = discretize(k, bins);
            let who = if is_ego(k.track_id, priors) { "ego".to_string() } else { format!("{} {}", k.class, k.track_id) };
            format!(
                "{who} {} {} drift-{} {}",
                tok.direction.as_str(),
                tok.speed.as_str(),
                tok.drift.as_str(),
                tok.smoothness.as_str()
            )
        })
        .collect();

    let layout_text = if layout.is_empty() {
        "none".to_string()
    } else {
        layout
            .iter()
            .map(|e| format!("{} {}-{} {}", e.class, COLUMNS[e.col], ROWS[e.row], e.size.as_str()))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let lanes_text =
        if lane_attributes.is_empty() { "no lane markings detected".to_string() } else { lane_attributes.join(", ") };
    let motion_text = if motion_descriptors.is_empty() { "none".to_string() } else { motion_descriptors.join("; ") };
    let rendered_text = format!(
        "Scene: {} vehicles, {} pedestrians, {} cyclists. Layout: {layout_text}. Lanes: {lanes_text}. Motion: {motion_text}.",
        counts[0], counts[1], counts[2]
    );
    SceneSummary { counts, grid, layout, lane_attributes, motion_descriptors, rendered_text }
}
