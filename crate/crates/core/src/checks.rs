//! Visual evidence for the three check groups and the concurrent query loop
//! that turns VLM answers into per-check distributions.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::clips::ClipRange;
use crate::config::{RenderConfig, VlmConfig};
use crate::geom::{Point, Rect};
use crate::lane::LaneGeometry;
use crate::prompt::{check_to_scalar, normalize_confidences, parse_response, Catalog, CheckGroup, PromptError, VlmAnswer};
use crate::render::{
    crop_roi, draw_track_overlay, fit_frame, overlay_lanes, render_keyframe_triplet, schematic_frame, sub_clips,
    RasterImage,
};
use crate::scene::{ActorClass, Detection, MaskClass, ScenePriors, Tracklet};
use crate::synth::GroundTruth;
use crate::vlm::{PayloadKind, QueryPayload, VlmBackend, VlmError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckError {
    #[error("VLM backend unavailable: {failed} of {total} queries failed after retries (last error: {last})")]
    BackendUnavailable { failed: usize, total: usize, last: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// One rendered piece of visual evidence, shared by every question asked
/// about it.
#[derive(Debug, Clone)]
pub struct Evidence {
    pub payload_id: String,
    pub kind: PayloadKind,
    pub images: Vec<Arc<RasterImage>>,
    /// Frames the evidence shows; ground-truth tags come from these.
    pub frames: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Frame { clip: usize },
    Clip { clip: usize, sub: usize },
    Roi { clip: usize, roi: usize },
}

/// One check asked about one piece of evidence under one summary.
#[derive(Debug, Clone)]
pub struct CheckUnit {
    pub check: usize,
    pub evidence: usize,
    pub summary: String,
    pub slot: Slot,
}

#[derive(Debug, Clone)]
pub struct CheckPlan {
    pub evidence: Vec<Evidence>,
    pub units: Vec<CheckUnit>,
    pub clips: usize,
}

/// Scene text for each clip: the key-frame summary (Group A) and the clip
/// summary (Groups B and C).
#[derive(Debug, Clone)]
pub struct ClipSummaries {
    pub frame: Vec<String>,
    pub clip: Vec<String>,
}

struct FrameImages<'a> {
    priors: &'a ScenePriors,
    clips: &'a [ClipRange],
    geoms: &'a [Option<LaneGeometry>],
    ego: Option<&'a Tracklet>,
    catalog: &'a Catalog,
    render: &'a RenderConfig,
    raw: HashMap<usize, Arc<RasterImage>>,
    fitted: HashMap<(usize, u8), Arc<RasterImage>>,
}

impl<'a> FrameImages<'a> {
    fn target(&self) -> (u32, u32) {
        (self.render.target_w, self.render.target_h)
    }

    fn geom(&self, frame: usize) -> Option<&'a LaneGeometry> {
        crate::clips::clip_of(self.clips, frame).and_then(|m| self.geoms[m].as_ref())
    }

    fn raw(&mut self, frame: usize) -> Arc<RasterImage> {
        let (p, c) = (self.priors, self.catalog);
        self.raw.entry(frame).or_insert_with(|| Arc::new(schematic_frame(p, frame, c))).clone()
    }

    /// Letterboxed frame: 0 plain, 1 lane overlay, 2 track overlay.
    fn fitted(&mut self, frame: usize, variant: u8) -> Arc<RasterImage> {
        if let Some(img) = self.fitted.get(&(frame, variant)) {
            return img.clone();
        }
        let mut img = (*self.raw(frame)).clone();
        match variant {
            1 => {
                if let Some(g) = self.geom(frame) {
                    overlay_lanes(&mut img, &g.ego_lane_polygons, &g.boundaries, self.catalog);
                }
            }
            2 => {
                let mut tracks: Vec<&Tracklet> = self.priors.tracklets.iter().collect();
                tracks.extend(self.ego);
                draw_track_overlay(&mut img, &tracks, frame, self.render.fade_window, self.catalog);
            }
            _ => {}
        }
        let out = Arc::new(fit_frame(&img, self.target()));
        self.fitted.insert((frame, variant), out.clone());
        out
    }

    fn detections(&self, frame: usize) -> Vec<&'a Detection> {
        self.priors.tracklets.iter().filter_map(|t| t.at_frame(frame)).collect()
    }

    fn triplet(&mut self, frame: usize) -> (RasterImage, RasterImage, RasterImage) {
        let raw = self.raw(frame);
        let boxes = self.detections(frame);
        let masks: Vec<(MaskClass, &[Point])> = self
            .priors
            .masks
            .iter()
            .filter_map(|m| m.at_frame(frame).map(|f| (m.class, f.polygon.as_slice())))
            .collect();
        render_keyframe_triplet(&raw, &boxes, &masks, self.catalog)
    }

    /// Key-frame context for ROI crops: masks, boxes and lane lines.
    fn roi_context(&mut self, frame: usize) -> RasterImage {
        let (_, _, masked) = self.triplet(frame);
        let mut img = masked;
        for d in self.detections(frame) {
            crate::render::draw_box(&mut img, &d.rect, self.catalog.color(d.class.as_str()));
        }
        if let Some(g) = self.geom(frame) {
            overlay_lanes(&mut img, &[], &g.boundaries, self.catalog);
        }
        img
    }
}

fn polygon_bbox(poly: &[Point]) -> Option<Rect> {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in poly {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    (x1 > x0 && y1 > y0).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
}

/// Regions a Group C check looks at in `frame`, labeled for payload ids.
fn roi_targets(check_id: &str, priors: &ScenePriors, frame: usize, max_rois: usize) -> Vec<(String, Rect)> {
    let boxes_of = |classes: &[ActorClass], tag: &str| -> Vec<(String, Rect)> {
        let mut v: Vec<(i64, Rect)> = priors
            .tracklets
            .iter()
            .filter(|t| classes.contains(&t.class))
            .filter_map(|t| t.at_frame(frame).map(|d| (t.track_id, d.rect)))
            .collect();
        v.sort_by(|a, b| b.1.area().total_cmp(&a.1.area()).then(a.0.cmp(&b.0)));
        v.into_iter().take(max_rois).map(|(id, r)| (format!("{tag}{id}"), r)).collect()
    };
    let masks_of = |pred: &dyn Fn(&crate::scene::MaskInstance) -> bool, tag: &str| -> Vec<(String, Rect)> {
        priors
            .masks
            .iter()
            .filter(|m| pred(m))
            .filter_map(|m| m.at_frame(frame).and_then(|f| polygon_bbox(&f.polygon)).map(|r| (m.instance_id, r)))
            .take(max_rois)
            .map(|(id, r)| (format!("{tag}{id}"), r))
            .collect()
    };
    match check_id {
        "C1" | "C6" | "C7" => boxes_of(&[ActorClass::Vehicle], "veh"),
        "C2" => boxes_of(&[ActorClass::Pedestrian, ActorClass::Cyclist], "vru"),
        "C3" => masks_of(&|m| m.class == MaskClass::EgoLane, "lane"),
        "C4" => masks_of(&|m| m.class == MaskClass::HardObject && !m.is_crosswalk(), "obj"),
        "C5" => masks_of(&|m| m.is_crosswalk(), "cw"),
        _ => vec![],
    }
}

/// Renders every piece of evidence and lists the checks to ask about it.
#[allow(clippy::too_many_arguments)]
pub fn plan_checks(
    priors: &ScenePriors,
    clips: &[ClipRange],
    geoms: &[Option<LaneGeometry>],
    ego: Option<&Tracklet>,
    summaries: &ClipSummaries,
    catalog: &Catalog,
    render: &RenderConfig,
) -> CheckPlan {
    let vid = &priors.meta.video_id;
    let mut images =
        FrameImages { priors, clips, geoms, ego, catalog, render, raw: HashMap::new(), fitted: HashMap::new() };
    let target = images.target();
    let mut evidence: Vec<Evidence> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut units = Vec::new();
    let mut add = |ev: Evidence, evidence: &mut Vec<Evidence>| -> usize {
        *index.entry(ev.payload_id.clone()).or_insert_with(|| {
            evidence.push(ev);
            evidence.len() - 1
        })
    };

    for (m, clip) in clips.iter().enumerate() {
        let key = clip.key_frame;
        let (raw, boxed, masked) = images.triplet(key);
        let frame_ev = add(
            Evidence {
                payload_id: format!("{vid}/clip{m}/key{key}"),
                kind: PayloadKind::Image,
                images: [raw, boxed, masked].iter().map(|i| Arc::new(fit_frame(i, target))).collect(),
                frames: vec![key],
            },
            &mut evidence,
        );
        for (ci, spec) in catalog.checks.iter().enumerate() {
            if spec.group == CheckGroup::Frame {
                units.push(CheckUnit {
                    check: ci,
                    evidence: frame_ev,
                    summary: summaries.frame[m].clone(),
                    slot: Slot::Frame { clip: m },
                });
            }
        }

        for (j, sub) in sub_clips(clip).iter().enumerate() {
            for (ci, spec) in catalog.checks.iter().enumerate() {
                if spec.group != CheckGroup::Clip {
                    continue;
                }
                let (tag, imgs): (&str, Vec<Arc<RasterImage>>) = match spec.evidence.as_str() {
                    "subclip_lane" => ("lane", sub.iter().map(|&f| images.fitted(f, 1)).collect()),
                    "clip_overlay" => {
                        let mut v: Vec<Arc<RasterImage>> = sub.iter().map(|&f| images.fitted(f, 0)).collect();
                        v.extend(sub.iter().map(|&f| images.fitted(f, 2)));
                        ("tracks", v)
                    }
                    _ => ("plain", sub.iter().map(|&f| images.fitted(f, 0)).collect()),
                };
                let ev = add(
                    Evidence {
                        payload_id: format!("{vid}/clip{m}/sub{j}/{tag}"),
                        kind: PayloadKind::Clip,
                        images: imgs,
                        frames: sub.clone(),
                    },
                    &mut evidence,
                );
                units.push(CheckUnit {
                    check: ci,
                    evidence: ev,
                    summary: summaries.clip[m].clone(),
                    slot: Slot::Clip { clip: m, sub: j },
                });
            }
        }

        let context = images.roi_context(key);
        for (ci, spec) in catalog.checks.iter().enumerate() {
            if spec.group != CheckGroup::Roi {
                continue;
            }
            let mut targets = roi_targets(&spec.check_id, priors, key, render.max_rois);
            let mut crops: Vec<(String, RasterImage)> = targets
                .drain(..)
                .filter_map(|(label, r)| crop_roi(&context, &r, render.roi_margin, target).ok().map(|img| (label, img)))
                .collect();
            if crops.is_empty() {
                crops.push(("frame".into(), fit_frame(&context, target)));
            }
            for (r, (label, img)) in crops.into_iter().enumerate() {
                let ev = add(
                    Evidence {
                        payload_id: format!("{vid}/clip{m}/roi/{label}"),
                        kind: PayloadKind::Image,
                        images: vec![Arc::new(img)],
                        frames: clip.frames().collect(),
                    },
                    &mut evidence,
                );
                units.push(CheckUnit {
                    check: ci,
                    evidence: ev,
                    summary: summaries.clip[m].clone(),
                    slot: Slot::Roi { clip: m, roi: r },
                });
            }
        }
    }
    CheckPlan { evidence, units, clips: clips.len() }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutputs {
    pub psi_frame: Vec<f64>,
    pub psi_clip: Vec<f64>,
    pub s_clip: Vec<f64>,
    /// Scalar of each check's pooled distribution, keyed by check id.
    pub check_scores: BTreeMap<String, f64>,
    pub degraded: bool,
    pub queries: usize,
    pub failed_queries: usize,
    pub unparsed_queries: usize,
}

enum Outcome {
    Answer(VlmAnswer),
    Unparsed,
    Failed(VlmError),
}

fn query_with_retry(backend: &dyn VlmBackend, p: &QueryPayload, cfg: &VlmConfig) -> Outcome {
    let mut attempt = 0;
    loop {
        match backend.query(p) {
            Ok(text) => {
                return match parse_response(&text) {
                    Ok(a) => Outcome::Answer(a),
                    Err(_) => Outcome::Unparsed,
                }
            }
            Err(e @ VlmError::Replay { .. }) | Err(e @ VlmError::Transcript(_)) => return Outcome::Failed(e),
            Err(e) => {
                if attempt >= cfg.retries {
                    return Outcome::Failed(e);
                }
                let wait = cfg.backoff_ms.saturating_mul(1 << attempt.min(20)).min(cfg.backoff_cap_ms);
                if wait > 0 {
                    std::thread::sleep(Duration::from_millis(wait));
                }
                attempt += 1;
            }
        }
    }
}

/// Runs `jobs` on up to `workers` threads; results come back in job order.
fn run_parallel<T: Sync, R: Send>(jobs: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every job ran")).collect()
}

fn mean_into(acc: &mut [f64], v: &[f64], count: &mut usize) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += x;
    }
    *count += 1;
}

/// Asks every planned question and pools the answers: Group A averaged over
/// key frames, Group B per clip (scalar) and over all sub-clips (vector),
/// Group C over ROIs then clips.
pub fn run_checks(
    plan: &CheckPlan,
    truth: Option<&GroundTruth>,
    catalog: &Catalog,
    backend: &dyn VlmBackend,
    cfg: &VlmConfig,
) -> Result<CheckOutputs, CheckError> {
    struct Job {
        unit: usize,
        payload: QueryPayload,
    }
    let mut jobs = Vec::new();
    let mut unit_sizes = Vec::with_capacity(plan.units.len());
    for (ui, u) in plan.units.iter().enumerate() {
        let spec = &catalog.checks[u.check];
        let ev = &plan.evidence[u.evidence];
        let tags = truth.map(|t| t.kinds_in(&ev.frames)).unwrap_or_default();
        let prompts = catalog.instantiate(spec, &u.summary)?;
        unit_sizes.push(prompts.len());
        for (candidate, prompt) in prompts {
            jobs.push(Job {
                unit: ui,
                payload: QueryPayload {
                    payload_id: ev.payload_id.clone(),
                    kind: ev.kind,
                    images: ev.images.clone(),
                    prompt,
                    check_id: spec.check_id.clone(),
                    candidate,
                    truth: tags.clone(),
                },
            });
        }
    }
    let outcomes = run_parallel(&jobs, cfg.max_inflight, |j| query_with_retry(backend, &j.payload, cfg));

    let failed = outcomes.iter().filter(|o| matches!(o, Outcome::Failed(_))).count();
    let unparsed = outcomes.iter().filter(|o| matches!(o, Outcome::Unparsed)).count();
    if !jobs.is_empty() && 2 * failed > jobs.len() {
        let last = outcomes
            .iter()
            .rev()
            .find_map(|o| match o {
                Outcome::Failed(e) => Some(e.to_string()),
                _ => None,
            })
            .unwrap_or_default();
        return Err(CheckError::BackendUnavailable { failed, total: jobs.len(), last });
    }

    // Per-unit distributions.
    let mut dists: Vec<Vec<f64>> = unit_sizes.iter().map(|&n| vec![0.0; n]).collect();
    let mut unit_ok = vec![true; plan.units.len()];
    for (j, o) in jobs.iter().zip(&outcomes) {
        let cand = catalog.checks[plan.units[j.unit].check].index_of(&j.payload.candidate).expect("own candidate");
        match o {
            Outcome::Answer(a) => dists[j.unit][cand] = a.yes_confidence(),
            _ => unit_ok[j.unit] = false,
        }
    }
    let mut degraded = false;
    for (d, ok) in dists.iter_mut().zip(&unit_ok) {
        *d = if *ok { normalize_confidences(d) } else { vec![1.0 / d.len() as f64; d.len()] };
        degraded |= !ok;
    }

    // Pooling.
    let m = plan.clips;
    let n_checks = catalog.checks.len();
    let mut frame_acc: Vec<(Vec<f64>, usize)> =
        catalog.checks.iter().map(|c| (vec![0.0; c.candidates.len()], 0)).collect();
    let mut clip_acc = frame_acc.clone();
    let mut roi_acc: Vec<Vec<(Vec<f64>, usize)>> = vec![frame_acc.clone(); m];
    let mut s_clip_acc = vec![(0.0, 0usize); m];
    for (u, d) in plan.units.iter().zip(&dists) {
        let spec = &catalog.checks[u.check];
        match u.slot {
            Slot::Frame { .. } => {
                let (acc, n) = &mut frame_acc[u.check];
                mean_into(acc, d, n);
            }
            Slot::Clip { clip, .. } => {
                let (acc, n) = &mut clip_acc[u.check];
                mean_into(acc, d, n);
                s_clip_acc[clip].0 += check_to_scalar(d, spec);
                s_clip_acc[clip].1 += 1;
            }
            Slot::Roi { clip, .. } => {
                let (acc, n) = &mut roi_acc[clip][u.check];
                mean_into(acc, d, n);
            }
        }
    }
    let finish = |(acc, n): &(Vec<f64>, usize)| -> Vec<f64> {
        if *n == 0 {
            vec![1.0 / acc.len() as f64; acc.len()]
        } else {
            acc.iter().map(|x| x / *n as f64).collect()
        }
    };
    let mut pooled: Vec<Vec<f64>> = vec![vec![]; n_checks];
    for (ci, spec) in catalog.checks.iter().enumerate() {
        pooled[ci] = match spec.group {
            CheckGroup::Frame => finish(&frame_acc[ci]),
            CheckGroup::Clip => finish(&clip_acc[ci]),
            CheckGroup::Roi => {
                let per_clip: Vec<Vec<f64>> = roi_acc.iter().map(|c| finish(&c[ci])).collect();
                let mut acc = vec![0.0; spec.candidates.len()];
                let mut n = 0;
                for v in &per_clip {
                    mean_into(&mut acc, v, &mut n);
                }
                finish(&(acc, n))
            }
        };
    }
    let block = |g: CheckGroup| -> Vec<f64> {
        catalog.checks.iter().enumerate().filter(|(_, c)| c.group == g).flat_map(|(i, _)| pooled[i].clone()).collect()
    };
    let psi_frame = block(CheckGroup::Frame);
    let mut psi_clip = block(CheckGroup::Clip);
    psi_clip.extend(block(CheckGroup::Roi));
    let s_clip = s_clip_acc.iter().map(|(s, n)| if *n == 0 { 0.5 } else { s / *n as f64 }).collect();
    let check_scores =
        catalog.checks.iter().zip(&pooled).map(|(c, p)| (c.check_id.clone(), check_to_scalar(p, c))).collect();
    Ok(CheckOutputs {
        psi_frame,
        psi_clip,
        s_clip,
        check_scores,
        degraded,
        queries: jobs.len(),
        failed_queries: failed,
        unparsed_queries: unparsed,
    })
}
