mod common;

use std::fmt::Write as _;

use adgve_core::config::Config;
use adgve_core::fusion::{fuse, statistics_features, FusionModel, OperandLayout};
use adgve_core::kinematics::{restrict, tracklet_kinematics, Kinematics};
use adgve_core::lane::GeometryCache;
use adgve_core::pipeline::{analyze_video, lane_stage, summarize, QualityReport, Scorer};
use adgve_core::prompt::Catalog;
use adgve_core::summary::{build_summary, Scope};
use adgve_core::synth::{gen_scenario, random_spec};
use adgve_core::vlm::OracleStub;
use common::{check_golden, fixture, golden_path};

fn check_all(fixtures: Vec<(&str, Vec<u8>)>) {
    for (name, bytes) in fixtures {
        check_golden(name, &bytes).unwrap();
    }
}

#[test]
fn keyframe_renders() {
    check_all(common::keyframe_renders());
}

#[test]
fn clip_pair_renders() {
    check_all(common::clip_renders());
}

#[test]
fn evidence_plan_digests() {
    check_all(common::evidence_renders());
}

#[test]
fn summaries_and_descriptors() {
    let (p, _) = fixture();
    let cfg = Config::default();
    let cat = Catalog::builtin();
    let stage = lane_stage(&p, &cfg, &GeometryCache::default()).unwrap();
    let mut out = String::new();
    for (clip, geom) in stage.clips.iter().zip(&stage.geoms) {
        let geom = geom.as_ref();
        let kin: Vec<Kinematics> = p
            .tracklets
            .iter()
            .map(|t| tracklet_kinematics(&restrict(t, clip.frames()), p.meta.fps, stage.px_per_meter, geom))
            .filter(|k| k.samples > 0)
            .collect();
        let key = Scope::Frame(clip.key_frame);
        let s = build_summary(&p, geom, &kin, key, &cfg.bins);
        let phi = statistics_features(&p, geom, &kin, &key, &cfg.bins, cat);
        writeln!(out, "clip {} key {}\n{}", clip.index, clip.key_frame, s.rendered_text).unwrap();
        writeln!(out, "phi_obj {:?}\nphi_sem {:?}\nphi_mot {:?}\n", phi.obj, phi.sem, phi.mot).unwrap();
    }
    check_golden("summaries.txt", out.as_bytes()).unwrap();
}

#[test]
fn fused_score_matches_reference_value() {
    let (p, g) = fixture();
    let cat = Catalog::builtin();
    let a = analyze_video(&p, Some(&g), &Config::default(), cat, &OracleStub::default(), &GeometryCache::default()).unwrap();
    let s = fuse(&a.bundle, &FusionModel::default_for(cat), &OperandLayout::for_catalog(cat)).unwrap();
    check_golden("bundle.json", serde_json::to_string_pretty(&a.bundle).unwrap().as_bytes()).unwrap();

    let path = golden_path("fused.txt");
    if std::env::var_os("ADGVE_BLESS").is_some() {
        std::fs::write(&path, format!("{s:.17e}\n")).unwrap();
    }
    let reference: f64 = std::fs::read_to_string(&path).unwrap().trim().parse().unwrap();
    assert!((s - reference).abs() <= 1e-12, "{s} vs {reference}");
}

#[test]
fn batch_summary() {
    let catalog = Catalog::builtin().clone();
    let model = FusionModel::default_for(&catalog);
    let scorer = Scorer::new(Config::default(), catalog, model, Box::new(OracleStub::default())).unwrap();
    let scenes: Vec<_> =
        (0..6).map(|s| gen_scenario(&random_spec(900 + s, 0.5)).map(|(p, g)| (p, Some(g))).unwrap()).collect();
    let reports: Vec<QualityReport> = scorer.score_scenes(&scenes, 1).into_iter().map(|s| s.report).collect();
    let s = summarize(&reports).unwrap();
    check_golden("batch_summary.txt", s.to_text().as_bytes()).unwrap();
    check_golden("batch_histogram.tsv", s.plot_data().as_bytes()).unwrap();
}
