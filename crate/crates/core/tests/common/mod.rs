//! Fixed synthetic scene and committed reference renders shared by the
//! golden-file and acceptance targets. Set `ADGVE_BLESS=1` to rewrite the
//! fixtures after an intentional change.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::PathBuf;

use adgve_core::checks::{plan_checks, ClipSummaries};
use adgve_core::clips::split_clips;
use adgve_core::config::Config;
use adgve_core::lane::{frame_geometry, GeometryCache};
use adgve_core::prompt::Catalog;
use adgve_core::render::{crop_roi, render_clip_pair, render_keyframe_triplet, schematic_frame, RasterImage};
use adgve_core::scene::{Detection, ScenePriors};
use adgve_core::synth::{gen_scenario, GroundTruth, Layout, ScenarioSpec, ViolationKind, ViolationSpec};
use sha2::{Digest, Sha256};

pub fn fixture() -> (ScenePriors, GroundTruth) {
    let spec = ScenarioSpec::new(42, Layout::Crosswalk).with(ViolationSpec::new(ViolationKind::NonYield));
    gen_scenario(&spec).unwrap()
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares `actual` with the committed fixture `name` (or rewrites it when
/// blessing).
pub fn check_golden(name: &str, actual: &[u8]) -> Result<(), String> {
    let path = golden_path(name);
    if std::env::var_os("ADGVE_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected != actual {
        let out = std::env::temp_dir().join(format!("actual.{name}"));
        std::fs::write(&out, actual).unwrap();
        return Err(format!("{name} differs from its fixture; actual output written to {}", out.display()));
    }
    Ok(())
}

fn digest(img: &RasterImage) -> String {
    hex::encode(Sha256::digest(img.to_ppm()))
}

/// Key-frame triplet and one ROI crop.
pub fn keyframe_renders() -> Vec<(&'static str, Vec<u8>)> {
    let (p, _) = fixture();
    let cat = Catalog::builtin();
    let frame = p.meta.num_frames / 2;
    let raw = schematic_frame(&p, frame, cat);
    let boxes: Vec<&Detection> = p.tracklets.iter().filter_map(|t| t.at_frame(frame)).collect();
    let masks: Vec<_> = p.masks.iter().filter_map(|m| m.at_frame(frame).map(|f| (m.class, f.polygon.as_slice()))).collect();
    assert!(!boxes.is_empty() && !masks.is_empty());
    let (raw, boxed, masked) = render_keyframe_triplet(&raw, &boxes, &masks, cat);
    let roi = crop_roi(&raw, &boxes[0].rect, 0.25, (64, 64)).unwrap();
    let mut lines = String::new();
    for (name, img) in [("raw", &raw), ("boxed", &boxed), ("masked", &masked), ("roi", &roi)] {
        writeln!(lines, "{name}\t{}", digest(img)).unwrap();
    }
    vec![("keyframe_masked.ppm", masked.to_ppm()), ("keyframe_digests.txt", lines.into_bytes())]
}

/// Eight consecutive frames with faded track overlays.
pub fn clip_renders() -> Vec<(&'static str, Vec<u8>)> {
    let (p, _) = fixture();
    let cat = Catalog::builtin();
    let frames: Vec<(usize, RasterImage)> = (20..28).map(|f| (f, schematic_frame(&p, f, cat))).collect();
    let tracks: Vec<_> = p.tracklets.iter().collect();
    let (raw, overlaid) = render_clip_pair(&frames, &tracks, 16, cat);
    let mut lines = String::new();
    for (i, (r, o)) in raw.iter().zip(&overlaid).enumerate() {
        writeln!(lines, "{}\t{}\t{}", frames[i].0, digest(r), digest(o)).unwrap();
    }
    vec![("clip_last_overlay.ppm", overlaid.last().unwrap().to_ppm()), ("clip_digests.txt", lines.into_bytes())]
}

/// Digest of every evidence payload the check planner renders.
pub fn evidence_renders() -> Vec<(&'static str, Vec<u8>)> {
    let (p, _) = fixture();
    let cfg = Config::default();
    let cache = GeometryCache::default();
    let clips = split_clips(p.meta.num_frames, cfg.num_clips).unwrap();
    let geoms: Vec<_> = clips.iter().map(|c| frame_geometry(&p, c.key_frame, &cfg.lane, &cache).ok()).collect();
    let sums = ClipSummaries { frame: vec!["A road.".into(); clips.len()], clip: vec!["A road.".into(); clips.len()] };
    let plan = plan_checks(&p, &clips, &geoms, None, &sums, Catalog::builtin(), &cfg.render);
    let mut lines = String::new();
    for e in &plan.evidence {
        let mut h = Sha256::new();
        for img in &e.images {
            h.update(img.to_ppm());
        }
        writeln!(lines, "{}\t{}\t{}", e.payload_id, e.images.len(), hex::encode(h.finalize())).unwrap();
    }
    vec![("evidence_digests.txt", lines.into_bytes())]
}
