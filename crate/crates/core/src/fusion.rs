//! Feature pooling, clip attention, the logistic fusion head, its training
//! loop and Spearman rank correlation.

use std::fmt::Write as _;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BinsConfig, FusionConfig};
use crate::geom::{clip_polygon_to_rect, polygon_area, polyline_length};
use crate::kinematics::Kinematics;
use crate::lane::LaneGeometry;
use crate::prompt::{Catalog, CheckGroup};
use crate::scene::{MaskClass, ScenePriors};
use crate::summary::{representative, Scope};

pub const PHI_DIM: usize = 16;
pub const EVIDENCE_DIM: usize = 4;
/// Evidence bit order.
pub const EVIDENCE_NAMES: [&str; EVIDENCE_DIM] = ["no_evidence_center", "no_evidence_solid", "no_evidence_cross", "degraded"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("need at least 2 labeled videos, got {0}")]
    InsufficientData(usize),
    #[error("label {0} outside [0, 1]")]
    InvalidLabel(f64),
    #[error("loss diverged at epoch {epoch}; lower fusion.lr")]
    NonFiniteLoss { epoch: usize },
    #[error("rank correlation undefined for constant input")]
    DegenerateInput,
    #[error("model file: {0}")]
    Model(String),
}

fn dim_err(what: &str, want: usize, got: usize) -> FusionError {
    FusionError::Dimension(format!("{what}: expected {want}, got {got}"))
}

// ---------------------------------------------------------------------------
// Statistics descriptors

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiFeatures {
    pub obj: Vec<f64>,
    pub sem: Vec<f64>,
    pub mot: Vec<f64>,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

/// Deterministic stand-ins for pooled object, semantic and motion features.
/// Slot meaning follows the catalog's slot names; `pad` and unknown names
/// are zero. `kin` should already be restricted to the scope.
pub fn statistics_features(
    priors: &ScenePriors,
    geom: Option<&LaneGeometry>,
    kin: &[Kinematics],
    scope: &Scope,
    bins: &BinsConfig,
    catalog: &Catalog,
) -> PhiFeatures {
    let image = priors.meta.image_rect();
    let image_area = image.area().max(1.0);
    let frame = scope.anchor_frame();

    let boxes: Vec<_> = priors.tracklets.iter().filter_map(|t| representative(t, scope)).collect();
    let areas: Vec<f64> =
        boxes.iter().map(|d| d.rect.intersect(&image).map(|r| r.area()).unwrap_or(0.0) / image_area).collect();
    let (area_mean, area_var) = mean_var(&areas);
    let (conf_mean, _) = mean_var(&boxes.iter().map(|d| d.conf).collect::<Vec<_>>());
    let (aspect_mean, _) = mean_var(&boxes.iter().map(|d| d.rect.w / d.rect.h).collect::<Vec<_>>());
    let overlapping = (0..boxes.len())
        .filter(|&i| (0..boxes.len()).any(|j| j != i && boxes[i].rect.iou(&boxes[j].rect) > 0.0))
        .count();
    let overlap_rate = if boxes.is_empty() { 0.0 } else { overlapping as f64 / boxes.len() as f64 };
    let count = |name: &str| (boxes.iter().filter(|d| d.class.as_str() == name).count() as f64 / 10.0).min(1.0);
    let obj = catalog
        .slots_obj
        .iter()
        .map(|s| match s.as_str() {
            "area_mean" => area_mean,
            "area_var" => area_var,
            "conf_mean" => conf_mean,
            "aspect_mean" => aspect_mean,
            "overlap_rate" => overlap_rate,
            s => s.strip_prefix("count_").map(count).unwrap_or(0.0),
        })
        .collect();

    let mask_area = |pred: &dyn Fn(&crate::scene::MaskInstance) -> bool| -> f64 {
        priors
            .masks
            .iter()
            .filter(|m| pred(m))
            .filter_map(|m| m.at_frame(frame))
            .map(|f| polygon_area(&clip_polygon_to_rect(&f.polygon, &image)))
            .sum::<f64>()
            / image_area
    };
    let lanes = priors.masks.iter().filter(|m| m.class.is_lane() && m.at_frame(frame).is_some()).count();
    let crosswalk_present = priors.crosswalks().any(|m| m.at_frame(frame).is_some());
    let (boundary_len, solid_fraction) = match geom {
        Some(g) if !g.boundaries.is_empty() => (
            g.boundaries.iter().map(|b| polyline_length(&b.polyline)).sum::<f64>(),
            g.boundaries.iter().filter(|b| b.style.is_solid()).count() as f64 / g.boundaries.len() as f64,
        ),
        _ => (0.0, 0.0),
    };
    let sem = catalog
        .slots_sem
        .iter()
        .map(|s| match s.as_str() {
            "boundary_density" => boundary_len / (image.w + image.h),
            "lane_count" => (lanes as f64 / 4.0).min(1.0),
            "solid_fraction" => solid_fraction,
            "crosswalk_present" => f64::from(u8::from(crosswalk_present)),
            "area_crosswalk" => mask_area(&|m| m.is_crosswalk()),
            s => match s.strip_prefix("area_") {
                Some(name) => {
                    match MaskClass::ALL.into_iter().find(|c| c.as_str() == name) {
                        Some(class) => mask_area(&|m| m.class == class && !m.is_crosswalk()),
                        None => 0.0,
                    }
                }
                None => 0.0,
            },
        })
        .collect();

    let scope_len = match scope {
        Scope::Frame(_) => 1.0,
        Scope::Clip(c) => c.len() as f64,
    };
    let col = |f: fn(&Kinematics) -> f64| mean_var(&kin.iter().map(f).collect::<Vec<_>>());
    let speed = col(|k| k.mean_speed / 10.0);
    let heading = col(|k| k.max_heading_change);
    let drift = col(|k| k.lateral_drift);
    let smooth = col(|k| k.smoothness / 10.0);
    let track_len = mean_var(&kin.iter().map(|k| k.samples as f64 / scope_len).collect::<Vec<_>>());
    let moving = if kin.is_empty() {
        0.0
    } else {
        kin.iter().filter(|k| k.mean_speed >= bins.speed_stationary).count() as f64 / kin.len() as f64
    };
    let mot = catalog
        .slots_mot
        .iter()
        .map(|s| match s.as_str() {
            "speed_mean" => speed.0,
            "speed_var" => speed.1,
            "heading_mean" => heading.0,
            "heading_var" => heading.1,
            "drift_mean" => drift.0,
            "drift_var" => drift.1,
            "smooth_mean" => smooth.0,
            "smooth_var" => smooth.1,
            "track_len_mean" => track_len.0,
            "track_len_var" => track_len.1,
            "moving_fraction" => moving,
            _ => 0.0,
        })
        .collect();
    PhiFeatures { obj, sem, mot }
}

// ---------------------------------------------------------------------------
// Bundles and operand layout

/// Everything the fusion head reads for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    /// Group A probabilities, catalog order, averaged over key frames.
    pub psi_frame: Vec<f64>,
    /// Group B then Group C probabilities, averaged over clips (and ROIs).
    pub psi_clip: Vec<f64>,
    /// Per-clip scalar check score.
    pub s_clip: Vec<f64>,
    /// Per-clip motion descriptor; with `s_clip` it forms the attention input.
    pub phi_mot_clip: Vec<Vec<f64>>,
    pub s_lane: f64,
    pub phi_obj: Vec<f64>,
    pub phi_sem: Vec<f64>,
    pub phi_mot: Vec<f64>,
    pub evidence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperandLayout {
    pub frame: Range<usize>,
    pub clip: Range<usize>,
    pub s_clip: usize,
    pub s_lane: usize,
    pub obj: Range<usize>,
    pub sem: Range<usize>,
    pub mot: Range<usize>,
    pub evidence: Range<usize>,
}

impl OperandLayout {
    pub fn for_catalog(catalog: &Catalog) -> Self {
        let a = catalog.group_dim(CheckGroup::Frame);
        let bc = catalog.group_dim(CheckGroup::Clip) + catalog.group_dim(CheckGroup::Roi);
        let s_clip = a + bc;
        let obj = s_clip + 2..s_clip + 2 + PHI_DIM;
        let sem = obj.end..obj.end + PHI_DIM;
        let mot = sem.end..sem.end + PHI_DIM;
        let evidence = mot.end..mot.end + EVIDENCE_DIM;
        Self { frame: 0..a, clip: a..a + bc, s_clip, s_lane: s_clip + 1, obj, sem, mot, evidence }
    }

    pub fn dim(&self) -> usize {
        self.evidence.end
    }

    /// Attention input width: motion descriptor plus the clip scalar.
    pub fn attention_dim(&self) -> usize {
        PHI_DIM + 1
    }
}

/// Operand blocks that ablations can remove.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    FrameChecks,
    ClipChecks,
    Lane,
    Objects,
    Semantics,
    Motion,
}

impl Module {
    pub const ALL: [Module; 6] =
        [Module::FrameChecks, Module::ClipChecks, Module::Lane, Module::Objects, Module::Semantics, Module::Motion];

    pub fn as_str(self) -> &'static str {
        match self {
            Module::FrameChecks => "frame_checks",
            Module::ClipChecks => "clip_checks",
            Module::Lane => "lane",
            Module::Objects => "objects",
            Module::Semantics => "semantics",
            Module::Motion => "motion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

fn zero(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = 0.0);
}

impl FeatureBundle {
    pub fn validate(&self, layout: &OperandLayout) -> Result<(), FusionError> {
        let checks = [
            ("psi_frame", layout.frame.len(), self.psi_frame.len()),
            ("psi_clip", layout.clip.len(), self.psi_clip.len()),
            ("phi_obj", PHI_DIM, self.phi_obj.len()),
            ("phi_sem", PHI_DIM, self.phi_sem.len()),
            ("phi_mot", PHI_DIM, self.phi_mot.len()),
            ("evidence", EVIDENCE_DIM, self.evidence.len()),
            ("phi_mot_clip", self.s_clip.len(), self.phi_mot_clip.len()),
        ];
        for (what, want, got) in checks {
            if want != got {
                return Err(dim_err(what, want, got));
            }
        }
        if self.s_clip.is_empty() {
            return Err(dim_err("s_clip (at least)", 1, 0));
        }
        if let Some(r) = self.phi_mot_clip.iter().find(|r| r.len() != PHI_DIM) {
            return Err(dim_err("phi_mot_clip row", PHI_DIM, r.len()));
        }
        let finite = self.psi_frame.iter().chain(&self.psi_clip).chain(&self.s_clip).chain(&self.phi_obj)
            .chain(&self.phi_sem).chain(&self.phi_mot).chain(&self.evidence).chain(self.phi_mot_clip.iter().flatten())
            .all(|x| x.is_finite())
            && self.s_lane.is_finite();
        if !finite {
            return Err(FusionError::Dimension("non-finite feature".into()));
        }
        Ok(())
    }

    /// Attention inputs `r_m = [phi_mot^m, s_clip^m]`.
    pub fn attention_inputs(&self) -> Vec<Vec<f64>> {
        self.phi_mot_clip
            .iter()
            .zip(&self.s_clip)
            .map(|(m, s)| {
                let mut r = m.clone();
                r.push(*s);
                r
            })
            .collect()
    }

    /// Operand vector with `s_clip_agg` in the aggregate slot.
    pub fn operand(&self, layout: &OperandLayout, s_clip_agg: f64) -> Vec<f64> {
        let mut z = Vec::with_capacity(layout.dim());
        z.extend_from_slice(&self.psi_frame);
        z.extend_from_slice(&self.psi_clip);
        z.push(s_clip_agg);
        z.push(self.s_lane);
        z.extend_from_slice(&self.phi_obj);
        z.extend_from_slice(&self.phi_sem);
        z.extend_from_slice(&self.phi_mot);
        z.extend_from_slice(&self.evidence);
        z
    }

    /// Zeroes a module's operand block and its evidence bits.
    pub fn drop_module(&mut self, m: Module) {
        match m {
            Module::FrameChecks => zero(&mut self.psi_frame),
            Module::ClipChecks => {
                zero(&mut self.psi_clip);
                zero(&mut self.s_clip);
                self.evidence[3] = 0.0;
            }
            Module::Lane => {
                self.s_lane = 0.0;
                zero(&mut self.evidence[..3]);
            }
            Module::Objects => zero(&mut self.phi_obj),
            Module::Semantics => zero(&mut self.phi_sem),
            Module::Motion => {
                zero(&mut self.phi_mot);
                self.phi_mot_clip.iter_mut().for_each(|r| zero(r));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Model

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub hyper: FusionConfig,
    pub catalog_checksum: String,
}

const MODEL_MAGIC: &str = "adgve-fusion-model 1";

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

impl FusionModel {
    pub fn zeros(catalog: &Catalog) -> Self {
        let layout = OperandLayout::for_catalog(catalog);
        Self {
            u: vec![0.0; layout.attention_dim()],
            w: vec![0.0; layout.dim()],
            hyper: FusionConfig::default(),
            catalog_checksum: catalog.checksum.clone(),
        }
    }

    /// Hand-set weights used before any training: clip checks and lane
    /// obedience push up, and a constant offset rides on the first check's
    /// probability block (which always sums to one).
    pub fn default_for(catalog: &Catalog) -> Self {
        let layout = OperandLayout::for_catalog(catalog);
        let mut m = Self::zeros(catalog);
        m.w[layout.s_clip] = 6.0;
        m.w[layout.s_lane] = 4.0;
        let first = catalog.group(CheckGroup::Frame).next().map(|c| c.candidates.len()).unwrap_or(0);
        for i in 0..first {
            m.w[layout.frame.start + i] = -6.0;
        }
        m
    }

    pub fn check_dims(&self, layout: &OperandLayout) -> Result<(), FusionError> {
        if self.u.len() != layout.attention_dim() {
            return Err(dim_err("u", layout.attention_dim(), self.u.len()));
        }
        if self.w.len() != layout.dim() {
            return Err(dim_err("w", layout.dim(), self.w.len()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let h = &self.hyper;
        let mut s = String::new();
        writeln!(s, "{MODEL_MAGIC}").unwrap();
        writeln!(s, "catalog_checksum = {}", self.catalog_checksum).unwrap();
        writeln!(s, "lr = {}", h.lr).unwrap();
        writeln!(s, "epochs = {}", h.epochs).unwrap();
        writeln!(s, "lambda = {}", h.lambda).unwrap();
        writeln!(s, "pair_margin = {}", h.pair_margin).unwrap();
        writeln!(s, "seed = {}", h.seed).unwrap();
        writeln!(s, "holdout = {}", h.holdout).unwrap();
        writeln!(s, "u = {}", join(&self.u)).unwrap();
        writeln!(s, "w = {}", join(&self.w)).unwrap();
        s
    }

    /// Parses a model file and checks it against `catalog`.
    pub fn from_text(text: &str, catalog: &Catalog) -> Result<Self, FusionError> {
        let bad = |m: String| FusionError::Model(m);
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MODEL_MAGIC) {
            return Err(bad(format!("missing header `{MODEL_MAGIC}`")));
        }
        let mut m = Self { u: vec![], w: vec![], hyper: FusionConfig::default(), catalog_checksum: String::new() };
        for line in lines.map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad line `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number for {k}: `{v}`")));
            let vec = |v: &str| v.split_whitespace().map(num).collect::<Result<Vec<f64>, _>>();
            match k {
                "catalog_checksum" => m.catalog_checksum = v.to_string(),
                "lr" => m.hyper.lr = num(v)?,
                "epochs" => m.hyper.epochs = v.parse().map_err(|_| bad(format!("bad epochs `{v}`")))?,
                "lambda" => m.hyper.lambda = num(v)?,
                "pair_margin" => m.hyper.pair_margin = num(v)?,
                "seed" => m.hyper.seed = v.parse().map_err(|_| bad(format!("bad seed `{v}`")))?,
                "holdout" => m.hyper.holdout = num(v)?,
                "u" => m.u = vec(v)?,
                "w" => m.w = vec(v)?,
                _ => return Err(bad(format!("unknown key `{k}`"))),
            }
        }
        if m.catalog_checksum != catalog.checksum {
            return Err(bad(format!(
                "trained against catalog {} but the loaded catalog is {}",
                m.catalog_checksum, catalog.checksum
            )));
        }
        m.check_dims(&OperandLayout::for_catalog(catalog))?;
        if m.u.iter().chain(&m.w).any(|x| !x.is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(m)
    }
}

// ---------------------------------------------------------------------------
// Attention and fusion

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax attention over clips: `alpha_m ∝ exp(u·r_m)`, returned with the
/// weighted clip score.
pub fn attention_aggregate(r: &[Vec<f64>], s_clip: &[f64], u: &[f64]) -> Result<(Vec<f64>, f64), FusionError> {
    if r.is_empty() {
        return Err(dim_err("clips (at least)", 1, 0));
    }
    if r.len() != s_clip.len() {
        return Err(dim_err("s_clip", r.len(), s_clip.len()));
    }
    if let Some(bad) = r.iter().find(|rm| rm.len() != u.len()) {
        return Err(dim_err("r_m", u.len(), bad.len()));
    }
    let logits: Vec<f64> = r.iter().map(|rm| rm.iter().zip(u).map(|(a, b)| a * b).sum()).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    let alpha: Vec<f64> = e.iter().map(|x| x / z).collect();
    let agg = alpha.iter().zip(s_clip).map(|(a, s)| a * s).sum();
    Ok((alpha, agg))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fused {
    pub s_overall: f64,
    pub s_clip: f64,
    pub alpha: Vec<f64>,
}

pub fn fuse_detail(bundle: &FeatureBundle, model: &FusionModel, layout: &OperandLayout) -> Result<Fused, FusionError> {
    model.check_dims(layout)?;
    bundle.validate(layout)?;
    let (alpha, s_clip) = attention_aggregate(&bundle.attention_inputs(), &bundle.s_clip, &model.u)?;
    let z = bundle.operand(layout, s_clip);
    let s_overall = sigmoid(z.iter().zip(&model.w).map(|(a, b)| a * b).sum());
    Ok(Fused { s_overall, s_clip, alpha })
}

pub fn fuse(bundle: &FeatureBundle, model: &FusionModel, layout: &OperandLayout) -> Result<f64, FusionError> {
    fuse_detail(bundle, model, layout).map(|f| f.s_overall)
}

// ---------------------------------------------------------------------------
// Training

/// A bundle prepared for repeated forward passes.
struct Prepared {
    r: Vec<Vec<f64>>,
    s_clip: Vec<f64>,
    z: Vec<f64>,
}

fn prepare(b: &FeatureBundle, layout: &OperandLayout) -> Prepared {
    Prepared { r: b.attention_inputs(), s_clip: b.s_clip.clone(), z: b.operand(layout, 0.0) }
}

/// Training loss and its gradient with respect to `(u, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_u: Vec<f64>,
    pub grad_w: Vec<f64>,
}

/// `-log σ(d)` without overflow.
fn neg_log_sigmoid(d: f64) -> f64 {
    if d >= 0.0 {
        (-d).exp().ln_1p()
    } else {
        -d + d.exp().ln_1p()
    }
}

fn ranking_pairs(y: &[f64], margin: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] - y[j] > margin {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

fn loss_grad_prepared(
    data: &[Prepared],
    y: &[f64],
    pairs: &[(usize, usize)],
    u: &[f64],
    w: &[f64],
    bias: f64,
    s_idx: usize,
    lambda: f64,
) -> (LossGrad, f64) {
    let n = data.len();
    let mut s = Vec::with_capacity(n);
    let mut dsclip_du = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    for p in data {
        let (alpha, agg) = attention_aggregate(&p.r, &p.s_clip, u).expect("dimensions checked");
        let mut g = vec![0.0; u.len()];
        for ((a, sm), rm) in alpha.iter().zip(&p.s_clip).zip(&p.r) {
            let c = a * (sm - agg);
            for (gk, rk) in g.iter_mut().zip(rm) {
                *gk += c * rk;
            }
        }
        let mut z = p.z.clone();
        z[s_idx] = agg;
        s.push(sigmoid(z.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + bias));
        dsclip_du.push(g);
        zs.push(z);
    }

    let mut loss = 0.0;
    let mut dl_ds = vec![0.0; n];
    for i in 0..n {
        let d = s[i] - y[i];
        loss += d.abs() / n as f64;
        dl_ds[i] += if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        } / n as f64;
    }
    if !pairs.is_empty() && lambda != 0.0 {
        let k = lambda / pairs.len() as f64;
        for &(i, j) in pairs {
            let d = s[i] - s[j];
            loss += k * neg_log_sigmoid(d);
            let g = k * sigmoid(-d);
            dl_ds[i] -= g;
            dl_ds[j] += g;
        }
    }

    let mut grad_u = vec![0.0; u.len()];
    let mut grad_w = vec![0.0; w.len()];
    let mut grad_bias = 0.0;
    for i in 0..n {
        let c = dl_ds[i] * s[i] * (1.0 - s[i]);
        if c == 0.0 {
            continue;
        }
        grad_bias += c;
        for (gw, zk) in grad_w.iter_mut().zip(&zs[i]) {
            *gw += c * zk;
        }
        let cu = c * w[s_idx];
        for (gu, dk) in grad_u.iter_mut().zip(&dsclip_du[i]) {
            *gu += cu * dk;
        }
    }
    (LossGrad { loss, grad_u, grad_w }, grad_bias)
}

fn check_dataset(data: &[(FeatureBundle, f64)], layout: &OperandLayout) -> Result<(), FusionError> {
    if data.len() < 2 {
        return Err(FusionError::InsufficientData(data.len()));
    }
    let m = data[0].0.s_clip.len();
    for (b, y) in data {
        b.validate(layout)?;
        if b.s_clip.len() != m {
            return Err(dim_err("clips per video", m, b.s_clip.len()));
        }
        if !(0.0..=1.0).contains(y) {
            return Err(FusionError::InvalidLabel(*y));
        }
    }
    Ok(())
}

/// Loss and analytic gradient of the training objective at `(u, w)`.
pub fn loss_and_grad(
    data: &[(FeatureBundle, f64)],
    u: &[f64],
    w: &[f64],
    hyper: &FusionConfig,
    layout: &OperandLayout,
) -> Result<LossGrad, FusionError> {
    check_dataset(data, layout)?;
    if u.len() != layout.attention_dim() || w.len() != layout.dim() {
        return Err(FusionError::Dimension("parameter vector sizes".into()));
    }
    let prepared: Vec<Prepared> = data.iter().map(|(b, _)| prepare(b, layout)).collect();
    let y: Vec<f64> = data.iter().map(|d| d.1).collect();
    let pairs = ranking_pairs(&y, hyper.pair_margin);
    Ok(loss_grad_prepared(&prepared, &y, &pairs, u, w, 0.0, layout.s_clip, hyper.lambda).0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub train_size: usize,
    pub holdout_size: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub train_srcc: Option<f64>,
    pub holdout_srcc: Option<f64>,
}

/// Seeded split into (train, holdout) indices. Holdouts smaller than two
/// videos are folded back into training.
pub fn split_indices(n: usize, holdout: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0051_1700);
    for i in (1..n).rev() {
        idx.swap(i, rng.gen_range(0..=i));
    }
    let mut h = (n as f64 * holdout.clamp(0.0, 1.0)).floor() as usize;
    if h < 2 || n - h < 2 {
        h = 0;
    }
    let hold = idx.split_off(n - h);
    (idx, hold)
}

/// Per-dimension affine standardization of the training operand. The bias
/// it introduces is folded into a probability block whose entries sum to one
/// on every bundle, so the exported model keeps the bias-free form. Without
/// such a block only scaling is applied.
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
    bias_block: Option<Range<usize>>,
}

impl Standardizer {
    fn fit(data: &[Prepared], layout: &OperandLayout, catalog: &Catalog) -> Self {
        let dim = layout.dim();
        let n = data.len() as f64;
        let operand = |p: &Prepared| {
            let mut z = p.z.clone();
            z[layout.s_clip] = p.s_clip.iter().sum::<f64>() / p.s_clip.len() as f64;
            z
        };
        let zs: Vec<Vec<f64>> = data.iter().map(operand).collect();
        let first = catalog.checks.first().map(|c| c.candidates.len()).unwrap_or(0);
        let block_start = if catalog.checks.first().map(|c| c.group) == Some(CheckGroup::Frame) {
            layout.frame.start
        } else {
            layout.clip.start
        };
        let block = block_start..block_start + first;
        let sums_to_one = first > 0 && zs.iter().all(|z| (z[block.clone()].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let bias_block = sums_to_one.then_some(block);
        let mut mean = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        for k in 0..dim {
            let m = zs.iter().map(|z| z[k]).sum::<f64>() / n;
            let var = zs.iter().map(|z| (z[k] - m) * (z[k] - m)).sum::<f64>() / n;
            if bias_block.is_some() {
                mean[k] = m;
            }
            let sd = if bias_block.is_some() { var.sqrt() } else { (var + m * m).sqrt() };
            if sd > 1e-9 {
                scale[k] = sd;
            }
        }
        Self { mean, scale, bias_block }
    }

    /// Raw weights and the additive bias they imply.
    fn to_raw(&self, v: &[f64], b: f64) -> (Vec<f64>, f64) {
        let w: Vec<f64> = v.iter().zip(&self.scale).map(|(x, s)| x / s).collect();
        let c = b - w.iter().zip(&self.mean).map(|(x, m)| x * m).sum::<f64>();
        (w, c)
    }

    fn fold(&self, v: &[f64], b: f64) -> Vec<f64> {
        let (mut w, c) = self.to_raw(v, b);
        if let Some(block) = &self.bias_block {
            w[block.clone()].iter_mut().for_each(|x| *x += c);
        }
        w
    }
}

/// Full-batch gradient descent on mean absolute error plus the pairwise
/// ranking loss. Deterministic in the data, seed and hyperparameters.
pub fn train_fusion(
    data: &[(FeatureBundle, f64)],
    hyper: &FusionConfig,
    catalog: &Catalog,
) -> Result<(FusionModel, TrainReport), FusionError> {
    let layout = OperandLayout::for_catalog(catalog);
    check_dataset(data, &layout)?;
    let (train_idx, hold_idx) = split_indices(data.len(), hyper.holdout, hyper.seed);
    let train: Vec<Prepared> = train_idx.iter().map(|&i| prepare(&data[i].0, &layout)).collect();
    let y: Vec<f64> = train_idx.iter().map(|&i| data[i].1).collect();
    let pairs = ranking_pairs(&y, hyper.pair_margin);

    let std = Standardizer::fit(&train, &layout, catalog);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut u: Vec<f64> = (0..layout.attention_dim()).map(|_| rng.gen_range(-0.01..0.01)).collect();
    // Descent runs on standardized coordinates `v` (plus a bias) and maps
    // back to `w` every step; see `Standardizer`.
    let mut v: Vec<f64> = (0..layout.dim()).map(|_| rng.gen_range(-0.01..0.01)).collect();
    let mut b = 0.0;
    let mut final_loss = f64::NAN;
    for epoch in 0..=hyper.epochs {
        let (w, c) = std.to_raw(&v, b);
        let (g, g_c) = loss_grad_prepared(&train, &y, &pairs, &u, &w, c, layout.s_clip, hyper.lambda);
        if !g.loss.is_finite() || g.grad_w.iter().chain(&g.grad_u).any(|x| !x.is_finite()) {
            return Err(FusionError::NonFiniteLoss { epoch });
        }
        final_loss = g.loss;
        if epoch == hyper.epochs {
            break;
        }
        for (p, d) in u.iter_mut().zip(&g.grad_u) {
            *p -= hyper.lr * d;
        }
        for (k, p) in v.iter_mut().enumerate() {
            *p -= hyper.lr * (g.grad_w[k] - std.mean[k] * g_c) / std.scale[k];
        }
        b -= hyper.lr * g_c;
    }
    let w = std.fold(&v, b);
    let model = FusionModel { u, w, hyper: hyper.clone(), catalog_checksum: catalog.checksum.clone() };
    let corr = |idx: &[usize]| -> Option<f64> {
        let pred: Vec<f64> = idx.iter().map(|&i| fuse(&data[i].0, &model, &layout).unwrap()).collect();
        let truth: Vec<f64> = idx.iter().map(|&i| data[i].1).collect();
        srcc(&pred, &truth).ok()
    };
    let report = TrainReport {
        train_size: train_idx.len(),
        holdout_size: hold_idx.len(),
        epochs: hyper.epochs,
        final_loss,
        train_srcc: corr(&train_idx),
        holdout_srcc: if hold_idx.is_empty() { None } else { corr(&hold_idx) },
    };
    Ok((model, report))
}

// ---------------------------------------------------------------------------
// Rank correlation

/// 1-based ranks with ties sharing their mean rank.
pub fn fractional_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of fractional ranks.
pub fn srcc(a: &[f64], b: &[f64]) -> Result<f64, FusionError> {
    if a.len() != b.len() {
        return Err(dim_err("srcc inputs", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(FusionError::DegenerateInput);
    }
    let (ra, rb) = (fractional_ranks(a), fractional_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(FusionError::DegenerateInput);
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_examples() {
        let (a, s) = attention_aggregate(&[vec![0.0], vec![3f64.ln()]], &[0.0, 1.0], &[1.0]).unwrap();
        assert!((a[0] - 0.25).abs() < 1e-15 && (a[1] - 0.75).abs() < 1e-15);
        assert!((s - 0.75).abs() < 1e-15);
        let (a, s) = attention_aggregate(&[vec![5.0], vec![-2.0], vec![1.0]], &[0.1, 0.2, 0.6], &[0.0]).unwrap();
        assert!(a.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert!((s - 0.3).abs() < 1e-15);
        assert!(attention_aggregate(&[vec![1.0, 2.0]], &[0.5], &[1.0]).is_err());
        assert!(attention_aggregate(&[], &[], &[1.0]).is_err());
    }

    #[test]
    fn srcc_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(srcc(&a, &a).unwrap(), 1.0);
        assert_eq!(srcc(&a, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((srcc(&a, &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(srcc(&a, &[2.0; 5]), Err(FusionError::DegenerateInput));
        assert_eq!(fractional_ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn model_text_round_trip() {
        let cat = Catalog::builtin();
        let mut m = FusionModel::default_for(cat);
        m.u[3] = 0.1 + 0.2;
        m.w[7] = -1e-300;
        let back = FusionModel::from_text(&m.to_text(), cat).unwrap();
        assert_eq!(back, m);
        let other = m.to_text().replace(&cat.checksum, "deadbeef");
        assert!(matches!(FusionModel::from_text(&other, cat), Err(FusionError::Model(_))));
    }

    #[test]
    fn layout_widths() {
        let l = OperandLayout::for_catalog(Catalog::builtin());
        assert_eq!((l.frame.len(), l.clip.len()), (23, 42));
        assert_eq!(l.dim(), 23 + 42 + 2 + 3 * PHI_DIM + EVIDENCE_DIM);
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let (a, b) = split_indices(10, 0.2, 4);
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(10, 0.2, 4), (a, b));
        assert_eq!(split_indices(6, 0.2, 4).1.len(), 0);
    }
}
