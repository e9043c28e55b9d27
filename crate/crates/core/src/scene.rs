//! Canonical data model for videos, perception priors and labels, plus the
//! annotation file format (one JSON document per video).

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{polygon_is_simple, Point, Rect};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotationError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("range error at {path}: {message}")]
    Range { path: String, message: String },
    #[error("geometry error at {path}: {message}")]
    Geometry { path: String, message: String },
}

impl AnnotationError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Schema { path: path.into(), message: message.into() }
    }

    fn range(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Range { path: path.into(), message: message.into() }
    }

    fn geometry(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Geometry { path: path.into(), message: message.into() }
    }

    pub fn path(&self) -> &str {
        match self {
            Self::Schema { path, .. } | Self::Range { path, .. } | Self::Geometry { path, .. } => path,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Schema { message, .. }
            | Self::Range { message, .. }
            | Self::Geometry { message, .. } => message,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorClass {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl ActorClass {
    pub const ALL: [ActorClass; 3] = [ActorClass::Vehicle, ActorClass::Pedestrian, ActorClass::Cyclist];

    pub fn as_str(self) -> &'static str {
        match self {
            ActorClass::Vehicle => "vehicle",
            ActorClass::Pedestrian => "pedestrian",
            ActorClass::Cyclist => "cyclist",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ActorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskClass {
    EgoLane,
    OtherLane,
    Sidewalk,
    Curb,
    HardObject,
    Crosswalk,
}

impl MaskClass {
    pub const ALL: [MaskClass; 6] = [
        MaskClass::EgoLane,
        MaskClass::OtherLane,
        MaskClass::Sidewalk,
        MaskClass::Curb,
        MaskClass::HardObject,
        MaskClass::Crosswalk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskClass::EgoLane => "ego_lane",
            MaskClass::OtherLane => "other_lane",
            MaskClass::Sidewalk => "sidewalk",
            MaskClass::Curb => "curb",
            MaskClass::HardObject => "hard_object",
            MaskClass::Crosswalk => "crosswalk",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_lane(self) -> bool {
        matches!(self, MaskClass::EgoLane | MaskClass::OtherLane)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryStyle {
    Solid,
    Dashed,
    DoubleSolid,
}

impl BoundaryStyle {
    /// Solid and double-solid lines must not be crossed.
    pub fn is_solid(self) -> bool {
        matches!(self, BoundaryStyle::Solid | BoundaryStyle::DoubleSolid)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryStyle::Solid => "solid",
            BoundaryStyle::Dashed => "dashed",
            BoundaryStyle::DoubleSolid => "double_solid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoMeta {
    pub video_id: String,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub num_frames: usize,
}

impl VideoMeta {
    pub fn image_rect(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width as f64, self.height as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: usize,
    pub rect: Rect,
    pub class: ActorClass,
    pub conf: f64,
}

impl Detection {
    pub fn bottom_center(&self) -> Point {
        self.rect.bottom_center()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub track_id: i64,
    pub class: ActorClass,
    pub boxes: Vec<Detection>,
}

impl Tracklet {
    pub fn at_frame(&self, frame: usize) -> Option<&Detection> {
        self.boxes
            .binary_search_by_key(&frame, |d| d.frame)
            .ok()
            .map(|i| &self.boxes[i])
    }

    pub fn first_frame(&self) -> Option<usize> {
        self.boxes.first().map(|d| d.frame)
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.boxes.last().map(|d| d.frame)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskFrame {
    pub frame: usize,
    pub polygon: Vec<Point>,
    pub conf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskInstance {
    pub instance_id: i64,
    pub class: MaskClass,
    /// Free-form refinement; `crosswalk`, `arrow` and `signal` are understood
    /// on `hard_object` masks.
    pub subtype: Option<String>,
    pub frames: Vec<MaskFrame>,
}

impl MaskInstance {
    pub fn is_crosswalk(&self) -> bool {
        self.class == MaskClass::Crosswalk
            || (self.class == MaskClass::HardObject && self.subtype.as_deref() == Some("crosswalk"))
    }

    pub fn has_subtype(&self, name: &str) -> bool {
        self.subtype.as_deref() == Some(name)
    }

    pub fn at_frame(&self, frame: usize) -> Option<&MaskFrame> {
        self.frames
            .binary_search_by_key(&frame, |f| f.frame)
            .ok()
            .map(|i| &self.frames[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFrame {
    pub frame: usize,
    pub polyline: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneBoundary {
    pub boundary_id: i64,
    pub style: BoundaryStyle,
    pub frames: Vec<BoundaryFrame>,
}

impl LaneBoundary {
    pub fn at_frame(&self, frame: usize) -> Option<&BoundaryFrame> {
        self.frames
            .binary_search_by_key(&frame, |f| f.frame)
            .ok()
            .map(|i| &self.frames[i])
    }
}

/// Everything the pipeline knows about one video. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePriors {
    pub meta: VideoMeta,
    pub tracklets: Vec<Tracklet>,
    pub masks: Vec<MaskInstance>,
    pub boundaries: Vec<LaneBoundary>,
    pub ego_track: Option<Tracklet>,
    pub human_score: Option<f64>,
}

impl ScenePriors {
    pub fn tracks_of(&self, class: ActorClass) -> impl Iterator<Item = &Tracklet> {
        self.tracklets.iter().filter(move |t| t.class == class)
    }

    pub fn masks_of(&self, class: MaskClass) -> impl Iterator<Item = &MaskInstance> {
        self.masks.iter().filter(move |m| m.class == class)
    }

    pub fn crosswalks(&self) -> impl Iterator<Item = &MaskInstance> {
        self.masks.iter().filter(|m| m.is_crosswalk())
    }
}

/// Track id used for the synthesized ego stand-in.
pub const EGO_PROXY_ID: i64 = -1;

/// Fixed-size box anchored at the bottom-center of every frame, standing in
/// for the ego vehicle when the annotation carries no ego track.
pub fn ego_proxy_track(meta: &VideoMeta, lane_width_px: f64) -> Tracklet {
    let w = 0.6 * lane_width_px;
    let h = 0.25 * meta.height as f64;
    let x = meta.width as f64 / 2.0 - w / 2.0;
    let y = meta.height as f64 - h;
    Tracklet {
        track_id: EGO_PROXY_ID,
        class: ActorClass::Vehicle,
        boxes: (0..meta.num_frames)
            .map(|frame| Detection { frame, rect: Rect::new(x, y, w, h), class: ActorClass::Vehicle, conf: 1.0 })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Serialize, Deserialize)]
struct DocBox {
    frame: usize,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conf: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocTrack {
    track_id: i64,
    class: ActorClass,
    boxes: Vec<DocBox>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocEgo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    track_id: Option<i64>,
    boxes: Vec<DocBox>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocMaskFrame {
    frame: usize,
    polygon: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conf: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocMask {
    instance_id: i64,
    class: MaskClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subtype: Option<String>,
    frames: Vec<DocMaskFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocBoundaryFrame {
    frame: usize,
    polyline: Vec<Point>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocBoundary {
    boundary_id: i64,
    style: BoundaryStyle,
    frames: Vec<DocBoundaryFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Document {
    video_id: String,
    width: u32,
    height: u32,
    fps: f64,
    num_frames: usize,
    tracks: Vec<DocTrack>,
    #[serde(default)]
    masks: Vec<DocMask>,
    #[serde(default)]
    lane_boundaries: Vec<DocBoundary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ego_track: Option<DocEgo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quality_score: Option<f64>,
}

fn boxes_from_doc(
    raw: Vec<DocBox>,
    class: ActorClass,
    path: &str,
) -> Result<Vec<Detection>, AnnotationError> {
    let mut boxes: Vec<Detection> = raw
        .into_iter()
        .map(|b| Detection { frame: b.frame, rect: Rect::new(b.x, b.y, b.w, b.h), class, conf: b.conf.unwrap_or(1.0) })
        .collect();
    boxes.sort_by_key(|d| d.frame);
    if let Some(w) = boxes.windows(2).find(|w| w[0].frame == w[1].frame) {
        return Err(AnnotationError::schema(
            format!("{path}.boxes"),
            format!("duplicate box for frame {}", w[0].frame),
        ));
    }
    Ok(boxes)
}

fn priors_from_doc(doc: Document) -> Result<ScenePriors, AnnotationError> {
    let meta = VideoMeta {
        video_id: doc.video_id,
        width: doc.width,
        height: doc.height,
        fps: doc.fps,
        num_frames: doc.num_frames,
    };
    let mut tracklets = Vec::with_capacity(doc.tracks.len());
    for (i, t) in doc.tracks.into_iter().enumerate() {
        let boxes = boxes_from_doc(t.boxes, t.class, &format!("tracks[{i}]"))?;
        tracklets.push(Tracklet { track_id: t.track_id, class: t.class, boxes });
    }
    let mut masks = Vec::with_capacity(doc.masks.len());
    for (i, m) in doc.masks.into_iter().enumerate() {
        let mut frames: Vec<MaskFrame> = m
            .frames
            .into_iter()
            .map(|f| MaskFrame { frame: f.frame, polygon: f.polygon, conf: f.conf.unwrap_or(1.0) })
            .collect();
        frames.sort_by_key(|f| f.frame);
        if let Some(w) = frames.windows(2).find(|w| w[0].frame == w[1].frame) {
            return Err(AnnotationError::schema(
                format!("masks[{i}].frames"),
                format!("duplicate polygon for frame {}", w[0].frame),
            ));
        }
        masks.push(MaskInstance { instance_id: m.instance_id, class: m.class, subtype: m.subtype, frames });
    }
    let mut boundaries = Vec::with_capacity(doc.lane_boundaries.len());
    for (i, b) in doc.lane_boundaries.into_iter().enumerate() {
        let mut frames: Vec<BoundaryFrame> = b
            .frames
            .into_iter()
            .map(|f| BoundaryFrame { frame: f.frame, polyline: f.polyline })
            .collect();
        frames.sort_by_key(|f| f.frame);
        if let Some(w) = frames.windows(2).find(|w| w[0].frame == w[1].frame) {
            return Err(AnnotationError::schema(
                format!("lane_boundaries[{i}].frames"),
                format!("duplicate polyline for frame {}", w[0].frame),
            ));
        }
        boundaries.push(LaneBoundary { boundary_id: b.boundary_id, style: b.style, frames });
    }
    let ego_track = match doc.ego_track {
        Some(e) => Some(Tracklet {
            track_id: e.track_id.unwrap_or(EGO_PROXY_ID),
            class: ActorClass::Vehicle,
            boxes: boxes_from_doc(e.boxes, ActorClass::Vehicle, "ego_track")?,
        }),
        None => None,
    };
    Ok(ScenePriors { meta, tracklets, masks, boundaries, ego_track, human_score: doc.quality_score })
}

/// Parses and validates one annotation document.
pub fn parse_annotation(bytes: &[u8]) -> Result<ScenePriors, AnnotationError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| AnnotationError::schema("$", format!("invalid UTF-8: {e}")))?;
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: Document = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        AnnotationError::schema(if path.is_empty() { "$".into() } else { path }, e.into_inner().to_string())
    })?;
    let priors = priors_from_doc(doc)?;
    let report = validate_priors(&priors);
    match report.errors.into_iter().next() {
        Some(err) => Err(err),
        None => Ok(priors),
    }
}

fn doc_boxes(boxes: &[Detection]) -> Vec<DocBox> {
    boxes
        .iter()
        .map(|d| DocBox { frame: d.frame, x: d.rect.x, y: d.rect.y, w: d.rect.w, h: d.rect.h, conf: Some(d.conf) })
        .collect()
}

/// Canonical serialization: fixed key order, explicit confidences, numbers at
/// full round-trip precision. `parse_annotation(serialize_annotation(p)) == p`.
pub fn serialize_annotation(priors: &ScenePriors) -> String {
    let doc = Document {
        video_id: priors.meta.video_id.clone(),
        width: priors.meta.width,
        height: priors.meta.height,
        fps: priors.meta.fps,
        num_frames: priors.meta.num_frames,
        tracks: priors
            .tracklets
            .iter()
            .map(|t| DocTrack { track_id: t.track_id, class: t.class, boxes: doc_boxes(&t.boxes) })
            .collect(),
        masks: priors
            .masks
            .iter()
            .map(|m| DocMask {
                instance_id: m.instance_id,
                class: m.class,
                subtype: m.subtype.clone(),
                frames: m
                    .frames
                    .iter()
                    .map(|f| DocMaskFrame { frame: f.frame, polygon: f.polygon.clone(), conf: Some(f.conf) })
                    .collect(),
            })
            .collect(),
        lane_boundaries: priors
            .boundaries
            .iter()
            .map(|b| DocBoundary {
                boundary_id: b.boundary_id,
                style: b.style,
                frames: b
                    .frames
                    .iter()
                    .map(|f| DocBoundaryFrame { frame: f.frame, polyline: f.polyline.clone() })
                    .collect(),
            })
            .collect(),
        ego_track: priors
            .ego_track
            .as_ref()
            .map(|e| DocEgo { track_id: Some(e.track_id), boxes: doc_boxes(&e.boxes) }),
        quality_score: priors.human_score,
    };
    serde_json::to_string(&doc).expect("annotation documents always serialize")
}

/// Parse followed by canonical serialization.
pub fn normalize_annotation(bytes: &[u8]) -> Result<String, AnnotationError> {
    parse_annotation(bytes).map(|p| serialize_annotation(&p))
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub errors: Vec<AnnotationError>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

fn check_conf(conf: f64, path: &str, errors: &mut Vec<AnnotationError>) {
    if !(0.0..=1.0).contains(&conf) {
        errors.push(AnnotationError::range(format!("{path}.conf"), format!("confidence {conf} outside [0,1]")));
    }
}

fn check_track(t: &Tracklet, path: &str, meta: &VideoMeta, errors: &mut Vec<AnnotationError>) {
    if t.boxes.is_empty() {
        errors.push(AnnotationError::schema(format!("{path}.boxes"), "tracklet has no boxes"));
    }
    let image = meta.image_rect();
    for (j, b) in t.boxes.iter().enumerate() {
        let bp = format!("{path}.boxes[{j}]");
        if b.frame >= meta.num_frames {
            errors.push(AnnotationError::range(
                format!("{bp}.frame"),
                format!("frame {} not below num_frames {}", b.frame, meta.num_frames),
            ));
        }
        check_conf(b.conf, &bp, errors);
        let r = b.rect;
        if ![r.x, r.y, r.w, r.h].iter().all(|v| v.is_finite()) {
            errors.push(AnnotationError::range(bp.clone(), "non-finite box coordinate"));
        } else if r.w <= 0.0 || r.h <= 0.0 {
            errors.push(AnnotationError::geometry(bp.clone(), "box width and height must be positive"));
        } else if r.intersect(&image).is_none() {
            errors.push(AnnotationError::geometry(bp.clone(), "box does not intersect the image"));
        }
        if b.class != t.class {
            errors.push(AnnotationError::schema(
                bp.clone(),
                format!("box class {} differs from tracklet class {}", b.class, t.class),
            ));
        }
    }
    if t.boxes.windows(2).any(|w| w[0].frame >= w[1].frame) {
        errors.push(AnnotationError::schema(format!("{path}.boxes"), "frames not strictly increasing"));
    }
}

/// Checks every invariant of a programmatically built `ScenePriors`.
pub fn validate_priors(p: &ScenePriors) -> ValidationReport {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let meta = &p.meta;

    if meta.video_id.is_empty() {
        errors.push(AnnotationError::schema("video_id", "empty video id"));
    }
    if meta.width == 0 {
        errors.push(AnnotationError::range("width", "width must be positive"));
    }
    if meta.height == 0 {
        errors.push(AnnotationError::range("height", "height must be positive"));
    }
    if !(meta.fps.is_finite() && meta.fps > 0.0) {
        errors.push(AnnotationError::range("fps", "fps must be positive"));
    }
    if meta.num_frames == 0 {
        errors.push(AnnotationError::range("num_frames", "num_frames must be positive"));
    }

    let mut ids = HashSet::new();
    for (i, t) in p.tracklets.iter().enumerate() {
        let path = format!("tracks[{i}]");
        if !ids.insert(t.track_id) {
            errors.push(AnnotationError::schema(format!("{path}.track_id"), format!("duplicate track id {}", t.track_id)));
        }
        check_track(t, &path, meta, &mut errors);
        if t.boxes.len() == 1 {
            warnings.push(format!("single-frame tracklet {}", t.track_id));
        }
    }
    match &p.ego_track {
        Some(ego) => {
            if ego.class != ActorClass::Vehicle {
                errors.push(AnnotationError::schema("ego_track", "ego track must be a vehicle"));
            }
            check_track(ego, "ego_track", meta, &mut errors);
        }
        None => warnings.push("ego scores use camera-footprint proxy".to_string()),
    }

    let (w, h) = (meta.width as f64, meta.height as f64);
    let mut mask_ids = HashSet::new();
    for (i, m) in p.masks.iter().enumerate() {
        let path = format!("masks[{i}]");
        if !mask_ids.insert(m.instance_id) {
            errors.push(AnnotationError::schema(
                format!("{path}.instance_id"),
                format!("duplicate instance id {}", m.instance_id),
            ));
        }
        if m.frames.windows(2).any(|f| f[0].frame >= f[1].frame) {
            errors.push(AnnotationError::schema(format!("{path}.frames"), "frames not strictly increasing"));
        }
        for (j, f) in m.frames.iter().enumerate() {
            let fp = format!("{path}.frames[{j}]");
            if f.frame >= meta.num_frames {
                errors.push(AnnotationError::range(
                    format!("{fp}.frame"),
                    format!("frame {} not below num_frames {}", f.frame, meta.num_frames),
                ));
            }
            check_conf(f.conf, &fp, &mut errors);
            if f.polygon.len() < 3 {
                errors.push(AnnotationError::geometry(
                    format!("{fp}.polygon"),
                    format!("polygon has {} vertices, need at least 3", f.polygon.len()),
                ));
                continue;
            }
            let in_bounds = f.polygon.iter().all(|v| {
                v.is_finite() && v.x >= -0.5 * w && v.x <= 1.5 * w && v.y >= -0.5 * h && v.y <= 1.5 * h
            });
            if !in_bounds {
                errors.push(AnnotationError::range(format!("{fp}.polygon"), "vertex outside the allowed overshoot band"));
            } else if !polygon_is_simple(&f.polygon) {
                errors.push(AnnotationError::geometry(format!("{fp}.polygon"), "polygon self-intersects"));
            }
        }
    }
    if p.masks.is_empty() {
        warnings.push("no masks; lane geometry unavailable".to_string());
    }

    let mut boundary_ids = HashSet::new();
    for (i, b) in p.boundaries.iter().enumerate() {
        let path = format!("lane_boundaries[{i}]");
        if !boundary_ids.insert(b.boundary_id) {
            errors.push(AnnotationError::schema(
                format!("{path}.boundary_id"),
                format!("duplicate boundary id {}", b.boundary_id),
            ));
        }
        for (j, f) in b.frames.iter().enumerate() {
            let fp = format!("{path}.frames[{j}]");
            if f.frame >= meta.num_frames {
                errors.push(AnnotationError::range(
                    format!("{fp}.frame"),
                    format!("frame {} not below num_frames {}", f.frame, meta.num_frames),
                ));
            }
            if f.polyline.len() < 2 {
                errors.push(AnnotationError::geometry(format!("{fp}.polyline"), "polyline needs at least 2 points"));
            } else if !f.polyline.iter().all(|v| v.is_finite()) {
                errors.push(AnnotationError::range(format!("{fp}.polyline"), "non-finite polyline point"));
            }
        }
    }

    if let Some(score) = p.human_score {
        if !(0.0..=1.0).contains(&score) {
            errors.push(AnnotationError::range("quality_score", format!("quality score {score} outside [0,1]")));
        }
    }

    ValidationReport { errors, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"video_id":"v0","width":64,"height":48,"fps":10,"num_frames":1,
        "tracks":[{"track_id":1,"class":"vehicle","boxes":[{"frame":0,"x":4,"y":4,"w":10,"h":8}]}],
        "masks":[],"lane_boundaries":[]}"#;

    #[test]
    fn minimal_document() {
        let p = parse_annotation(MINIMAL.as_bytes()).unwrap();
        assert_eq!(p.tracklets.len(), 1);
        assert!(p.masks.is_empty());
        assert_eq!(p.tracklets[0].boxes[0].conf, 1.0);
    }

    #[test]
    fn frame_equal_to_num_frames_is_range_error() {
        let doc = MINIMAL.replace("\"num_frames\":1", "\"num_frames\":5").replace("\"frame\":0", "\"frame\":5");
        let err = parse_annotation(doc.as_bytes()).unwrap_err();
        assert!(matches!(err, AnnotationError::Range { .. }), "{err}");
        assert_eq!(err.path(), "tracks[0].boxes[0].frame");
    }

    #[test]
    fn missing_field_names_path() {
        let doc = MINIMAL.replace("\"w\":10,", "");
        let err = parse_annotation(doc.as_bytes()).unwrap_err();
        match err {
            AnnotationError::Schema { path, .. } => assert!(path.starts_with("tracks[0].boxes[0]"), "{path}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn wrong_type_is_schema_error() {
        let doc = MINIMAL.replace("\"fps\":10", "\"fps\":\"ten\"");
        assert!(matches!(parse_annotation(doc.as_bytes()), Err(AnnotationError::Schema { .. })));
    }

    #[test]
    fn conf_outside_unit_interval() {
        let doc = MINIMAL.replace("\"h\":8", "\"h\":8,\"conf\":1.5");
        assert!(matches!(parse_annotation(doc.as_bytes()), Err(AnnotationError::Range { .. })));
    }

    #[test]
    fn degenerate_polygon_is_geometry_error() {
        let doc = MINIMAL.replace(
            "\"masks\":[]",
            r#""masks":[{"instance_id":1,"class":"ego_lane","frames":[{"frame":0,"polygon":[[0,0],[5,5]]}]}]"#,
        );
        let err = parse_annotation(doc.as_bytes()).unwrap_err();
        assert!(matches!(err, AnnotationError::Geometry { .. }), "{err}");
        assert_eq!(err.path(), "masks[0].frames[0].polygon");
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let doc = MINIMAL.replace("\"fps\":10", "\"fps\":10,\"camera\":\"front\"");
        assert!(parse_annotation(doc.as_bytes()).is_ok());
    }

    #[test]
    fn boxes_are_sorted_and_duplicates_rejected() {
        let doc = r#"{"video_id":"v","width":64,"height":48,"fps":10,"num_frames":4,
            "tracks":[{"track_id":1,"class":"cyclist","boxes":[
                {"frame":2,"x":4,"y":4,"w":10,"h":8},{"frame":0,"x":4,"y":4,"w":10,"h":8}]}]}"#;
        let p = parse_annotation(doc.as_bytes()).unwrap();
        let frames: Vec<_> = p.tracklets[0].boxes.iter().map(|b| b.frame).collect();
        assert_eq!(frames, vec![0, 2]);
        let dup = doc.replace("\"frame\":0", "\"frame\":2");
        assert!(matches!(parse_annotation(dup.as_bytes()), Err(AnnotationError::Schema { .. })));
    }

    #[test]
    fn duplicate_track_id_and_proxy_warning() {
        let mut p = parse_annotation(MINIMAL.as_bytes()).unwrap();
        p.tracklets.push(p.tracklets[0].clone());
        let report = validate_priors(&p);
        assert!(report.errors.iter().any(|e| e.message().contains("duplicate track id")));
        assert!(report.warnings.iter().any(|w| w == "ego scores use camera-footprint proxy"));
    }

    #[test]
    fn hard_object_crosswalk_subtype() {
        let m = MaskInstance { instance_id: 1, class: MaskClass::HardObject, subtype: Some("crosswalk".into()), frames: vec![] };
        assert!(m.is_crosswalk());
    }

    #[test]
    fn proxy_box_geometry() {
        let meta = VideoMeta { video_id: "v".into(), width: 320, height: 240, fps: 10.0, num_frames: 3 };
        let t = ego_proxy_track(&meta, 50.0);
        assert_eq!(t.boxes.len(), 3);
        let r = t.boxes[0].rect;
        assert_eq!((r.w, r.h), (30.0, 60.0));
        assert_eq!(r.bottom_center(), Point::new(160.0, 240.0));
    }
}
