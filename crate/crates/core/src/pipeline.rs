//! End-to-end scoring: annotation in, one report line out.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::checks::{plan_checks, run_checks, CheckError, CheckOutputs, ClipSummaries};
use crate::clips::{split_clips, ClipError, ClipRange};
use crate::config::{Config, VlmConfig, VlmMode};
use crate::fusion::{
    fuse_detail, srcc, statistics_features, FeatureBundle, FusionError, FusionModel, Module, OperandLayout,
    EVIDENCE_DIM, PHI_DIM,
};
use crate::kinematics::{restrict, tracklet_kinematics, Kinematics};
use crate::lane::{frame_geometry, GeometryCache, LaneGeometry};
use crate::obedience::{score_video_lanes, LaneScores, ObedienceError};
use crate::prompt::{Catalog, CheckGroup};
use crate::scene::{ego_proxy_track, parse_annotation, validate_priors, AnnotationError, ScenePriors, Tracklet};
use crate::summary::{build_summary, Scope};
use crate::synth::{load_truth, GroundTruth};
use crate::vlm::{HashStub, OracleStub, Remote, Replay, VlmBackend, VlmError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("invalid annotation: {0}")]
    Invalid(String),
    #[error(transparent)]
    Clips(#[from] ClipError),
    #[error(transparent)]
    Lane(#[from] ObedienceError),
    #[error(transparent)]
    Checks(#[from] CheckError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Backend(#[from] VlmError),
    #[error("features file {path}: {message}")]
    Features { path: String, message: String },
    #[error("no input")]
    EmptyInput,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Lane width assumed when no frame yields lane geometry: a quarter of the
/// image width.
pub fn fallback_px_per_meter(priors: &ScenePriors, nominal_width_m: f64) -> f64 {
    priors.meta.width as f64 / 4.0 / nominal_width_m
}

#[derive(Debug, Clone)]
pub struct VideoAnalysis {
    pub video_id: String,
    pub lane: LaneScores,
    pub checks: CheckOutputs,
    pub bundle: FeatureBundle,
    pub px_per_meter: f64,
    pub geometry_fallback: bool,
    pub features_override: bool,
}

/// Externally supplied descriptors; any missing block keeps the computed one.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureOverride {
    #[serde(default)]
    pub phi_obj: Option<Vec<f64>>,
    #[serde(default)]
    pub phi_sem: Option<Vec<f64>>,
    #[serde(default)]
    pub phi_mot: Option<Vec<f64>>,
}

fn load_override(dir: &Path, video_id: &str) -> Result<Option<FeatureOverride>, PipelineError> {
    let path = dir.join(format!("{video_id}.phi.json"));
    let Ok(text) = std::fs::read_to_string(&path) else { return Ok(None) };
    let bad = |message: String| PipelineError::Features { path: path.display().to_string(), message };
    let o: FeatureOverride = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    for v in [&o.phi_obj, &o.phi_sem, &o.phi_mot].into_iter().flatten() {
        if v.len() != PHI_DIM || v.iter().any(|x| !x.is_finite()) {
            return Err(bad(format!("expected {PHI_DIM} finite values")));
        }
    }
    Ok(Some(o))
}

fn mean_of(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; PHI_DIM];
    for r in rows {
        for (o, x) in out.iter_mut().zip(r) {
            *o += x / rows.len() as f64;
        }
    }
    out
}

/// Clip split, key-frame geometry and the lane-obedience components.
#[derive(Debug, Clone)]
pub struct LaneStage {
    pub clips: Vec<ClipRange>,
    pub geoms: Vec<Option<LaneGeometry>>,
    pub px_per_meter: f64,
    pub geometry_fallback: bool,
    /// The real ego track, or the static proxy when the scene has none.
    pub ego: Tracklet,
    pub real_ego: bool,
    pub scores: LaneScores,
}

pub fn lane_stage(priors: &ScenePriors, cfg: &Config, cache: &GeometryCache) -> Result<LaneStage, PipelineError> {
    let clips = split_clips(priors.meta.num_frames, cfg.num_clips)?;
    let geoms: Vec<Option<LaneGeometry>> =
        clips.iter().map(|c| frame_geometry(priors, c.key_frame, &cfg.lane, cache).ok()).collect();
    let known = geoms.iter().flatten().next();
    let geometry_fallback = known.is_none();
    let ppm = known.map(|g| g.px_per_meter).unwrap_or_else(|| fallback_px_per_meter(priors, cfg.lane.nominal_width_m));
    let (ego, real_ego) = match &priors.ego_track {
        Some(t) => (t.clone(), true),
        None => (ego_proxy_track(&priors.meta, ppm * cfg.lane.nominal_width_m), false),
    };
    let scores = score_video_lanes(priors, &clips, &geoms, &ego, real_ego, &cfg.lane)?;
    Ok(LaneStage { clips, geoms, px_per_meter: ppm, geometry_fallback, ego, real_ego, scores })
}

/// Everything up to (not including) fusion for one video.
pub fn analyze_video(
    priors: &ScenePriors,
    truth: Option<&GroundTruth>,
    cfg: &Config,
    catalog: &Catalog,
    backend: &dyn VlmBackend,
    cache: &GeometryCache,
) -> Result<VideoAnalysis, PipelineError> {
    let report = validate_priors(priors);
    if let Some(e) = report.errors.first() {
        return Err(PipelineError::Invalid(format!("{e} ({} errors)", report.errors.len())));
    }
    let LaneStage { clips, geoms, px_per_meter: ppm, geometry_fallback, ego, real_ego, scores: lane } =
        lane_stage(priors, cfg, cache)?;
    let ego = &ego;

    let fps = priors.meta.fps;
    let mut summaries = ClipSummaries { frame: vec![], clip: vec![] };
    let (mut obj, mut sem, mut mot) = (vec![], vec![], vec![]);
    for (clip, geom) in clips.iter().zip(&geoms) {
        let geom = geom.as_ref();
        let mut kin: Vec<Kinematics> = priors
            .tracklets
            .iter()
            .map(|t| tracklet_kinematics(&restrict(t, clip.frames()), fps, ppm, geom))
            .filter(|k| k.samples > 0)
            .collect();
        if real_ego {
            let k = tracklet_kinematics(&restrict(ego, clip.frames()), fps, ppm, geom);
            if k.samples > 0 {
                kin.push(k);
            }
        }
        let key = Scope::Frame(clip.key_frame);
        let whole = Scope::Clip(*clip);
        summaries.frame.push(build_summary(priors, geom, &kin, key, &cfg.bins).rendered_text);
        summaries.clip.push(build_summary(priors, geom, &kin, whole, &cfg.bins).rendered_text);
        let at_key = statistics_features(priors, geom, &kin, &key, &cfg.bins, catalog);
        let over_clip = statistics_features(priors, geom, &kin, &whole, &cfg.bins, catalog);
        obj.push(at_key.obj);
        sem.push(at_key.sem);
        mot.push(over_clip.mot);
    }

    let plan = plan_checks(priors, &clips, &geoms, real_ego.then_some(ego), &summaries, catalog, &cfg.render);
    let checks = run_checks(&plan, truth, catalog, backend, &cfg.vlm)?;

    let mut phi_obj = mean_of(&obj);
    let mut phi_sem = mean_of(&sem);
    let mut phi_mot = mean_of(&mot);
    let mut features_override = false;
    if let Some(dir) = &cfg.features_path {
        if let Some(o) = load_override(dir, &priors.meta.video_id)? {
            features_override = true;
            if let Some(v) = o.phi_obj {
                phi_obj = v;
            }
            if let Some(v) = o.phi_sem {
                phi_sem = v;
            }
            if let Some(v) = o.phi_mot {
                mot = vec![v.clone(); mot.len()];
                phi_mot = v;
            }
        }
    }
    let bit = |b: bool| if b { 1.0 } else { 0.0 };
    let evidence = vec![
        bit(lane.no_evidence_center),
        bit(lane.no_evidence_solid),
        bit(lane.no_evidence_cross),
        bit(checks.degraded),
    ];
    debug_assert_eq!(evidence.len(), EVIDENCE_DIM);
    let bundle = FeatureBundle {
        psi_frame: checks.psi_frame.clone(),
        psi_clip: checks.psi_clip.clone(),
        s_clip: checks.s_clip.clone(),
        phi_mot_clip: mot,
        s_lane: lane.s_lane,
        phi_obj,
        phi_sem,
        phi_mot,
        evidence,
    };
    bundle.validate(&OperandLayout::for_catalog(catalog))?;
    Ok(VideoAnalysis {
        video_id: priors.meta.video_id.clone(),
        lane,
        checks,
        bundle,
        px_per_meter: ppm,
        geometry_fallback,
        features_override,
    })
}

pub fn make_backend(cfg: &VlmConfig) -> Result<Box<dyn VlmBackend>, VlmError> {
    Ok(match cfg.mode {
        VlmMode::HashStub => Box::new(HashStub { seed: cfg.seed }),
        VlmMode::OracleStub => Box::new(OracleStub::default()),
        VlmMode::Remote => Box::new(Remote::new(&cfg.endpoint, cfg.timeout_ms)),
        VlmMode::Replay => {
            let path = cfg
                .transcript_path
                .as_ref()
                .ok_or_else(|| VlmError::Transcript("replay mode needs vlm.transcript_path".into()))?;
            Box::new(Replay::load(path)?)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiStats {
    pub frame_mean: f64,
    pub clip_mean: f64,
    pub roi_mean: f64,
    pub min: f64,
    pub worst_check: String,
}

/// One line of the report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub video_id: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub d_norm: Option<f64>,
    pub s_center: Option<f64>,
    pub s_solid: Option<f64>,
    pub s_cross: Option<f64>,
    pub s_lane: Option<f64>,
    pub s_clip: Option<f64>,
    #[serde(default)]
    pub s_clip_per_clip: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<PsiStats>,
    #[serde(default)]
    pub check_scores: BTreeMap<String, f64>,
    pub s_overall: Option<f64>,
    pub decision: Decision,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default)]
    pub lane_violations: Vec<String>,
    pub queries: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<f64>,
    pub config_checksum: String,
    pub catalog_checksum: String,
    pub model_checksum: String,
}

impl QualityReport {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    /// Strict threshold rule; errored videos are always dropped.
    pub fn decide(&self, tau: f64) -> Decision {
        match self.s_overall {
            Some(s) if s > tau => Decision::Keep,
            _ => Decision::Drop,
        }
    }
}

pub fn model_checksum(model: &FusionModel) -> String {
    hex::encode(Sha256::digest(model.to_text().as_bytes()))
}

/// Shared state for scoring many videos.
pub struct Scorer {
    pub cfg: Config,
    pub catalog: Catalog,
    pub model: FusionModel,
    pub backend: Box<dyn VlmBackend>,
    pub cache: GeometryCache,
    layout: OperandLayout,
    config_checksum: String,
    model_checksum: String,
}

/// A scored video: its report line plus the bundle when scoring succeeded.
#[derive(Debug, Clone)]
pub struct Scored {
    pub report: QualityReport,
    pub bundle: Option<FeatureBundle>,
}

impl Scorer {
    pub fn new(cfg: Config, catalog: Catalog, model: FusionModel, backend: Box<dyn VlmBackend>) -> Result<Self, PipelineError> {
        let layout = OperandLayout::for_catalog(&catalog);
        model.check_dims(&layout)?;
        if model.catalog_checksum != catalog.checksum {
            return Err(FusionError::Model("model was trained against a different catalog".into()).into());
        }
        Ok(Self {
            layout,
            config_checksum: cfg.checksum(),
            model_checksum: model_checksum(&model),
            cfg,
            catalog,
            model,
            backend,
            cache: GeometryCache::default(),
        })
    }

    pub fn layout(&self) -> &OperandLayout {
        &self.layout
    }

    fn blank(&self, video_id: String, source: String) -> QualityReport {
        QualityReport {
            video_id,
            source,
            error: None,
            d_norm: None,
            s_center: None,
            s_solid: None,
            s_cross: None,
            s_lane: None,
            s_clip: None,
            s_clip_per_clip: vec![],
            psi: None,
            check_scores: BTreeMap::new(),
            s_overall: None,
            decision: Decision::Drop,
            flags: vec![],
            lane_violations: vec![],
            queries: 0,
            label: None,
            config_checksum: self.config_checksum.clone(),
            catalog_checksum: self.catalog.checksum.clone(),
            model_checksum: self.model_checksum.clone(),
        }
    }

    fn failed(&self, video_id: String, source: String, e: &PipelineError) -> Scored {
        let mut r = self.blank(video_id, source);
        r.error = Some(e.to_string());
        r.flags.push("error".into());
        Scored { report: r, bundle: None }
    }

    pub fn score_priors(&self, priors: &ScenePriors, truth: Option<&GroundTruth>, source: &str) -> Scored {
        let id = priors.meta.video_id.clone();
        let label = priors.human_score.or(truth.map(|t| t.quality));
        let analysis = analyze_video(priors, truth, &self.cfg, &self.catalog, self.backend.as_ref(), &self.cache);
        let fused = analysis.and_then(|a| {
            let f = fuse_detail(&a.bundle, &self.model, &self.layout)?;
            Ok((a, f))
        });
        let (a, fused) = match fused {
            Ok(x) => x,
            Err(e) => {
                let mut s = self.failed(id, source.to_string(), &e);
                s.report.label = label;
                return s;
            }
        };
        let mut r = self.blank(id, source.to_string());
        r.d_norm = a.lane.d_norm;
        r.s_center = Some(a.lane.s_center);
        r.s_solid = Some(a.lane.s_solid);
        r.s_cross = Some(a.lane.s_cross);
        r.s_lane = Some(a.lane.s_lane);
        r.s_clip = Some(fused.s_clip);
        r.s_clip_per_clip = a.checks.s_clip.clone();
        r.psi = Some(psi_stats(&a.checks, &self.catalog));
        r.check_scores = a.checks.check_scores.clone();
        r.s_overall = Some(fused.s_overall);
        r.decision = r.decide(self.cfg.threshold);
        for (on, name) in [
            (a.lane.no_evidence_center, "no_evidence_center"),
            (a.lane.no_evidence_solid, "no_evidence_solid"),
            (a.lane.no_evidence_cross, "no_evidence_cross"),
            (a.checks.degraded, "degraded"),
            (a.geometry_fallback, "geometry_fallback"),
            (a.features_override, "features_override"),
        ] {
            if on {
                r.flags.push(name.into());
            }
        }
        r.lane_violations = a.lane.violations.iter().map(|v| format!("{:?}@{}#{}", v.kind, v.frame, v.track_id)).collect();
        r.queries = a.checks.queries;
        r.label = label;
        Scored { report: r, bundle: Some(a.bundle) }
    }

    /// Reads and scores one annotation file; the sibling truth file is
    /// used when present. Never panics on bad input.
    pub fn score_path(&self, path: &Path) -> Scored {
        let source = path.display().to_string();
        let fallback_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let priors = std::fs::read(path)
            .map_err(|e| io_err(path, e))
            .and_then(|bytes| parse_annotation(&bytes).map_err(PipelineError::from));
        match priors {
            Ok(p) => {
                let truth = load_truth(path);
                self.score_priors(&p, truth.as_ref(), &source)
            }
            Err(e) => self.failed(fallback_id, source, &e),
        }
    }

    /// Scores in-memory scenes on `jobs` threads, in input order.
    pub fn score_scenes(&self, scenes: &[(ScenePriors, Option<GroundTruth>)], jobs: usize) -> Vec<Scored> {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().expect("thread pool");
        pool.install(|| {
            scenes.par_iter().map(|(p, t)| self.score_priors(p, t.as_ref(), &p.meta.video_id)).collect()
        })
    }

    /// Scores `paths` on `jobs` threads; output order matches input order.
    pub fn score_batch(&self, paths: &[PathBuf], jobs: usize) -> Vec<Scored> {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().expect("thread pool");
        pool.install(|| paths.par_iter().map(|p| self.score_path(p)).collect())
    }
}

fn psi_stats(c: &CheckOutputs, catalog: &Catalog) -> PsiStats {
    let group_mean = |g: CheckGroup| {
        let v: Vec<f64> = catalog.group(g).filter_map(|s| c.check_scores.get(&s.check_id)).copied().collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let (worst_check, min) = c
        .check_scores
        .iter()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(b.0)))
        .map(|(k, v)| (k.clone(), *v))
        .unwrap_or_default();
    PsiStats {
        frame_mean: group_mean(CheckGroup::Frame),
        clip_mean: group_mean(CheckGroup::Clip),
        roi_mean: group_mean(CheckGroup::Roi),
        min,
        worst_check,
    }
}

/// Manifest: one annotation path per line, relative to the manifest's
/// directory; blank lines and `#` comments are skipped. Returns each entry as
/// written alongside its resolved path.
pub fn read_manifest_entries(path: &Path) -> Result<Vec<(String, PathBuf)>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| (l.to_string(), base.join(l)))
        .collect())
}

pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    Ok(read_manifest_entries(path)?.into_iter().map(|(_, p)| p).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterOutcome {
    pub kept: Vec<usize>,
    pub total: usize,
    pub coverage: f64,
}

pub fn filter_reports(reports: &[QualityReport], tau: f64) -> FilterOutcome {
    let kept: Vec<usize> = reports.iter().enumerate().filter(|(_, r)| r.decide(tau) == Decision::Keep).map(|(i, _)| i).collect();
    let total = reports.len();
    let coverage = if total == 0 { 0.0 } else { kept.len() as f64 / total as f64 };
    FilterOutcome { kept, total, coverage }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub tau: f64,
    pub kept: usize,
    pub total: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModuleRow {
    pub dropped: String,
    pub n: usize,
    pub srcc: f64,
    /// Set when scores or labels are constant; `srcc` is then 0.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub coverage: Vec<CoverageRow>,
    pub modules: Vec<ModuleRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let mut s = String::from("tau\tkept\ttotal\tcoverage\n");
        for r in &self.coverage {
            let _ = writeln!(s, "{}\t{}\t{}\t{:.4}", r.tau, r.kept, r.total, r.coverage);
        }
        s.push_str("\ndropped\tn\tsrcc\n");
        for r in &self.modules {
            let v = if r.undefined { "undefined".to_string() } else { format!("{:.4}", r.srcc) };
            let _ = writeln!(s, "{}\t{}\t{v}", r.dropped, r.n);
        }
        s
    }
}

/// Coverage over `taus` plus SRCC against labels with each module in `drops`
/// removed. `none` scores the full model and `all` drops every module.
pub fn ablate(
    scored: &[(FeatureBundle, Option<f64>)],
    model: &FusionModel,
    layout: &OperandLayout,
    taus: &[f64],
    drops: &[&str],
) -> Result<AblationTable, PipelineError> {
    let full: Vec<Option<f64>> =
        scored.iter().map(|(b, _)| fuse_detail(b, model, layout).ok().map(|f| f.s_overall)).collect();
    let coverage = taus
        .iter()
        .map(|&tau| {
            let kept = full.iter().filter(|s| s.is_some_and(|s| s > tau)).count();
            let total = full.len();
            CoverageRow { tau, kept, total, coverage: if total == 0 { 0.0 } else { kept as f64 / total as f64 } }
        })
        .collect();
    let mut modules = Vec::new();
    for name in drops {
        let removed: Vec<Module> = match *name {
            "none" => vec![],
            "all" => Module::ALL.to_vec(),
            other => vec![Module::parse(other).ok_or_else(|| PipelineError::Invalid(format!("unknown module `{other}`")))?],
        };
        let (mut s, mut y) = (vec![], vec![]);
        for (b, label) in scored {
            let Some(label) = label else { continue };
            let mut b = b.clone();
            for m in &removed {
                b.drop_module(*m);
            }
            s.push(fuse_detail(&b, model, layout)?.s_overall);
            y.push(*label);
        }
        let r = srcc(&s, &y).ok();
        modules.push(ModuleRow { dropped: name.to_string(), n: s.len(), srcc: r.unwrap_or(0.0), undefined: r.is_none() });
    }
    Ok(AblationTable { coverage, modules })
}

pub const HIST_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub videos: usize,
    pub errors: usize,
    pub kept: usize,
    pub mean_s_overall: Option<f64>,
    pub mean_s_lane: Option<f64>,
    pub mean_s_clip: Option<f64>,
    /// Counts over [i/10, (i+1)/10), the last bin closed.
    pub hist_s_overall: [usize; HIST_BINS],
    pub hist_s_lane: [usize; HIST_BINS],
    pub flags: BTreeMap<String, usize>,
}

fn bin_of(x: f64) -> usize {
    ((x.clamp(0.0, 1.0) * HIST_BINS as f64) as usize).min(HIST_BINS - 1)
}

pub fn summarize(reports: &[QualityReport]) -> Result<ReportSummary, PipelineError> {
    if reports.is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    let mean = |f: &dyn Fn(&QualityReport) -> Option<f64>| {
        let v: Vec<f64> = reports.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let mut hist_s_overall = [0; HIST_BINS];
    let mut hist_s_lane = [0; HIST_BINS];
    let mut flags = BTreeMap::new();
    for r in reports {
        if let Some(s) = r.s_overall {
            hist_s_overall[bin_of(s)] += 1;
        }
        if let Some(s) = r.s_lane {
            hist_s_lane[bin_of(s)] += 1;
        }
        for f in &r.flags {
            *flags.entry(f.clone()).or_insert(0) += 1;
        }
    }
    Ok(ReportSummary {
        videos: reports.len(),
        errors: reports.iter().filter(|r| r.is_error()).count(),
        kept: reports.iter().filter(|r| r.decision == Decision::Keep).count(),
        mean_s_overall: mean(&|r| r.s_overall),
        mean_s_lane: mean(&|r| r.s_lane),
        mean_s_clip: mean(&|r| r.s_clip),
        hist_s_overall,
        hist_s_lane,
        flags,
    })
}

impl ReportSummary {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let mut s = String::new();
        let _ = writeln!(s, "videos       {}", self.videos);
        let _ = writeln!(s, "errors       {}", self.errors);
        let _ = writeln!(s, "kept         {}", self.kept);
        let _ = writeln!(s, "mean S       {}", opt(self.mean_s_overall));
        let _ = writeln!(s, "mean s_lane  {}", opt(self.mean_s_lane));
        let _ = writeln!(s, "mean S_clip  {}", opt(self.mean_s_clip));
        s.push_str("\nflag\tcount\n");
        for (k, v) in &self.flags {
            let _ = writeln!(s, "{k}\t{v}");
        }
        s
    }

    /// Histogram rows for plotting: bin edges and both score counts.
    pub fn plot_data(&self) -> String {
        let mut s = String::from("lo\thi\ts_overall\ts_lane\n");
        for i in 0..HIST_BINS {
            let lo = i as f64 / HIST_BINS as f64;
            let hi = (i + 1) as f64 / HIST_BINS as f64;
            let _ = writeln!(s, "{lo:.1}\t{hi:.1}\t{}\t{}", self.hist_s_overall[i], self.hist_s_lane[i]);
        }
        s
    }
}
