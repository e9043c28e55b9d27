//! Python bindings: scenes, synthetic generation, lane scores, the check
//! catalog, fusion and end-to-end scoring.

use std::path::PathBuf;

use adgve_core::clips::split_clips as core_split_clips;
use adgve_core::config::{Config, VlmMode};
use adgve_core::fusion::{self, FeatureBundle, FusionModel, Module, OperandLayout};
use adgve_core::lane::GeometryCache;
use adgve_core::pipeline::{lane_stage, make_backend, Scorer};
use adgve_core::prompt::{parse_response as core_parse_response, Catalog};
use adgve_core::scene::{parse_annotation, serialize_annotation, validate_priors, ScenePriors};
use adgve_core::synth::{self, GroundTruth, ScenarioSpec};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Config", module = "adgve", from_py_object)]
#[derive(Clone, Default)]
struct PyConfig {
    inner: Config,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text=None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let inner = match text {
            Some(t) => Config::parse(t).map_err(value_err)?,
            None => Config::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Config::load(&path).map_err(value_err)? })
    }

    /// Sets one `section.key` entry from its text form.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(value_err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn checksum(&self) -> String {
        self.inner.checksum()
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold
    }

    #[setter]
    fn set_threshold(&mut self, v: f64) {
        self.inner.threshold = v;
    }

    #[getter]
    fn vlm_mode(&self) -> &'static str {
        self.inner.vlm.mode.as_str()
    }

    #[setter]
    fn set_vlm_mode(&mut self, v: &str) -> PyResult<()> {
        self.inner.vlm.mode = v.parse::<VlmMode>().map_err(PyValueError::new_err)?;
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!("Config(threshold={}, vlm_mode='{}')", self.inner.threshold, self.inner.vlm.mode.as_str())
    }
}

/// Per-video priors: tracklets, masks and lane boundaries.
#[pyclass(name = "Scene", module = "adgve", from_py_object)]
#[derive(Clone)]
struct PyScene {
    inner: ScenePriors,
}

#[pymethods]
impl PyScene {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: parse_annotation(text.as_bytes()).map_err(value_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(|e| value_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&String::from_utf8_lossy(&bytes))
    }

    fn to_json(&self) -> String {
        serialize_annotation(&self.inner)
    }

    /// Validation errors as strings; empty when the scene is usable.
    fn validate(&self) -> Vec<String> {
        validate_priors(&self.inner).errors.iter().map(|e| e.to_string()).collect()
    }

    #[getter]
    fn video_id(&self) -> &str {
        &self.inner.meta.video_id
    }

    #[getter]
    fn num_frames(&self) -> usize {
        self.inner.meta.num_frames
    }

    #[getter]
    fn size(&self) -> (u32, u32) {
        (self.inner.meta.width, self.inner.meta.height)
    }

    #[getter]
    fn fps(&self) -> f64 {
        self.inner.meta.fps
    }

    #[getter]
    fn num_tracks(&self) -> usize {
        self.inner.tracklets.len()
    }

    fn __repr__(&self) -> String {
        let m = &self.inner.meta;
        format!("Scene('{}', {}x{}, {} frames)", m.video_id, m.width, m.height, m.num_frames)
    }
}

#[pyclass(name = "GroundTruth", module = "adgve", from_py_object)]
#[derive(Clone)]
struct PyTruth {
    inner: GroundTruth,
}

#[pymethods]
impl PyTruth {
    #[getter]
    fn quality(&self) -> f64 {
        self.inner.quality
    }

    #[getter]
    fn s_solid(&self) -> f64 {
        self.inner.s_solid
    }

    #[getter]
    fn s_cross(&self) -> f64 {
        self.inner.s_cross
    }

    /// `(kind, start, end)` with `end` exclusive.
    #[getter]
    fn violations(&self) -> Vec<(&'static str, usize, usize)> {
        self.inner.violations.iter().map(|v| (v.kind.as_str(), v.frames[0], v.frames[1])).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }
}

#[pyclass(name = "FusionModel", module = "adgve", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: FusionModel,
}

#[pymethods]
impl PyModel {
    /// The untrained default model.
    #[staticmethod]
    fn default() -> Self {
        Self { inner: FusionModel::default_for(Catalog::builtin()) }
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self { inner: FusionModel::from_text(text, Catalog::builtin()).map_err(value_err)? })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.w.clone()
    }
}

#[pyclass(name = "FeatureBundle", module = "adgve", from_py_object)]
#[derive(Clone)]
struct PyBundle {
    inner: FeatureBundle,
}

#[pymethods]
impl PyBundle {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: FeatureBundle = serde_json::from_str(text).map_err(value_err)?;
        inner.validate(&OperandLayout::for_catalog(Catalog::builtin())).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }

    /// Copy with one module (e.g. `"lane"`) zeroed out.
    fn without(&self, module: &str) -> PyResult<Self> {
        let m = Module::parse(module).ok_or_else(|| value_err(format!("unknown module `{module}`")))?;
        let mut inner = self.inner.clone();
        inner.drop_module(m);
        Ok(Self { inner })
    }

    #[getter]
    fn s_lane(&self) -> f64 {
        self.inner.s_lane
    }

    #[getter]
    fn s_clip(&self) -> Vec<f64> {
        self.inner.s_clip.clone()
    }
}

/// Scores scenes end to end with one config, model and VLM backend.
#[pyclass(name = "Scorer", module = "adgve")]
struct PyScorer {
    inner: Scorer,
}

#[pymethods]
impl PyScorer {
    #[new]
    #[pyo3(signature = (config=None, model=None))]
    fn new(config: Option<PyConfig>, model: Option<PyModel>) -> PyResult<Self> {
        let cfg = config.unwrap_or_default().inner;
        let catalog = Catalog::builtin().clone();
        let model = model.map(|m| m.inner).unwrap_or_else(|| FusionModel::default_for(&catalog));
        let backend = make_backend(&cfg.vlm).map_err(value_err)?;
        Ok(Self { inner: Scorer::new(cfg, catalog, model, backend).map_err(value_err)? })
    }

    /// Report dict and feature bundle (None when scoring failed).
    #[pyo3(signature = (scene, truth=None))]
    fn score<'py>(
        &self,
        py: Python<'py>,
        scene: &PyScene,
        truth: Option<&PyTruth>,
    ) -> PyResult<(Bound<'py, PyAny>, Option<PyBundle>)> {
        let (priors, truth) = (&scene.inner, truth.map(|t| &t.inner));
        let scored = py.detach(|| self.inner.score_priors(priors, truth, &priors.meta.video_id));
        Ok((json_to_py(py, &scored.report.to_line())?, scored.bundle.map(|inner| PyBundle { inner })))
    }

    /// Scores annotation files (sibling truth files are picked up) and
    /// returns report dicts in input order.
    #[pyo3(signature = (paths, jobs=1))]
    fn score_files<'py>(&self, py: Python<'py>, paths: Vec<PathBuf>, jobs: usize) -> PyResult<Vec<Bound<'py, PyAny>>> {
        let scored = py.detach(|| self.inner.score_batch(&paths, jobs));
        scored.iter().map(|s| json_to_py(py, &s.report.to_line())).collect()
    }

    fn fuse(&self, bundle: &PyBundle) -> PyResult<f64> {
        fusion::fuse(&bundle.inner, &self.inner.model, self.inner.layout()).map_err(value_err)
    }
}

/// Generates a synthetic scene from a JSON scenario spec.
#[pyfunction]
fn gen_scenario(spec_json: &str) -> PyResult<(PyScene, PyTruth)> {
    let spec: ScenarioSpec = serde_json::from_str(spec_json).map_err(value_err)?;
    let (p, t) = synth::gen_scenario(&spec).map_err(value_err)?;
    Ok((PyScene { inner: p }, PyTruth { inner: t }))
}

/// A random scenario spec as JSON.
#[pyfunction]
#[pyo3(signature = (seed, violation_rate=0.4))]
fn random_spec(seed: u64, violation_rate: f64) -> PyResult<String> {
    serde_json::to_string(&synth::random_spec(seed, violation_rate)).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (n, seed=0))]
fn gen_instructions(n: usize, seed: u64) -> Vec<String> {
    synth::gen_instructions(n, seed).into_iter().map(|i| i.text).collect()
}

/// `(start, end, key_frame)` per clip.
#[pyfunction]
fn split_clips(frames: usize, clips: usize) -> PyResult<Vec<(usize, usize, usize)>> {
    Ok(core_split_clips(frames, clips).map_err(value_err)?.iter().map(|c| (c.start, c.end, c.key_frame)).collect())
}

/// Lane-obedience components of a scene as a dict.
#[pyfunction]
#[pyo3(signature = (scene, config=None))]
fn lane_scores<'py>(py: Python<'py>, scene: &PyScene, config: Option<PyConfig>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.unwrap_or_default().inner;
    let stage = lane_stage(&scene.inner, &cfg, &GeometryCache::default()).map_err(value_err)?;
    let s = &stage.scores;
    let v = serde_json::json!({
        "d_norm": s.d_norm,
        "s_center": s.s_center,
        "s_solid": s.s_solid,
        "s_cross": s.s_cross,
        "s_lane": s.s_lane,
        "solid_segments": s.solid_segments,
        "solid_violating": s.solid_violating,
        "encounters": s.encounters,
        "encounters_violating": s.encounters_violating,
        "no_evidence": [s.no_evidence_center, s.no_evidence_solid, s.no_evidence_cross],
        "px_per_meter": stage.px_per_meter,
    });
    json_to_py(py, &v.to_string())
}

#[pyfunction]
fn srcc(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    fusion::srcc(&a, &b).map_err(value_err)
}

/// `(yes, confidence)` from a VLM answer string.
#[pyfunction]
fn parse_response(text: &str) -> PyResult<(bool, f64)> {
    let a = core_parse_response(text).map_err(value_err)?;
    Ok((a.yes, a.confidence))
}

#[pyfunction]
fn check_ids() -> Vec<String> {
    Catalog::builtin().checks.iter().map(|c| c.check_id.clone()).collect()
}

#[pyfunction]
fn catalog_checksum() -> String {
    Catalog::builtin().checksum.clone()
}

/// Trains the fusion head; returns the model and the training report dict.
#[pyfunction]
#[pyo3(signature = (bundles, labels, config=None))]
fn train_fusion<'py>(
    py: Python<'py>,
    bundles: Vec<PyBundle>,
    labels: Vec<f64>,
    config: Option<PyConfig>,
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    if bundles.len() != labels.len() {
        return Err(value_err(format!("{} bundles but {} labels", bundles.len(), labels.len())));
    }
    let hyper = config.unwrap_or_default().inner.fusion;
    let data: Vec<(FeatureBundle, f64)> = bundles.into_iter().map(|b| b.inner).zip(labels).collect();
    let (model, report) =
        py.detach(|| fusion::train_fusion(&data, &hyper, Catalog::builtin())).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let report = serde_json::to_string(&report).map_err(value_err)?;
    Ok((PyModel { inner: model }, json_to_py(py, &report)?))
}

#[pymodule]
fn adgve(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyTruth>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyBundle>()?;
    m.add_class::<PyScorer>()?;
    m.add_function(wrap_pyfunction!(gen_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(random_spec, m)?)?;
    m.add_function(wrap_pyfunction!(gen_instructions, m)?)?;
    m.add_function(wrap_pyfunction!(split_clips, m)?)?;
    m.add_function(wrap_pyfunction!(lane_scores, m)?)?;
    m.add_function(wrap_pyfunction!(srcc, m)?)?;
    m.add_function(wrap_pyfunction!(parse_response, m)?)?;
    m.add_function(wrap_pyfunction!(check_ids, m)?)?;
    m.add_function(wrap_pyfunction!(catalog_checksum, m)?)?;
    m.add_function(wrap_pyfunction!(train_fusion, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
