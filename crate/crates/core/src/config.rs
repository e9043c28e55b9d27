//! Flat `section.key = value` configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `section.key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {value}")]
    BadValue { key: String, value: String },
    #[error("reading config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneConfig {
    pub simplify_eps: f64,
    pub nominal_width_m: f64,
    pub alpha: f64,
    pub w_center: f64,
    pub w_solid: f64,
    pub w_cross: f64,
    pub cross_approach_m: f64,
    pub yield_speed_mps: f64,
}

impl Default for LaneConfig {
    fn default() -> Self {
        Self {
            simplify_eps: 2.0,
            nominal_width_m: 3.5,
            alpha: 1.0,
            w_center: 0.4,
            w_solid: 0.3,
            w_cross: 0.3,
            cross_approach_m: 5.25,
            yield_speed_mps: 1.0,
        }
    }
}

/// Bin edges for the motion tokens; every bin is half-open `[lo, hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinsConfig {
    pub speed_stationary: f64,
    pub speed_slow: f64,
    pub speed_moderate: f64,
    pub drift_none: f64,
    pub drift_slight: f64,
    pub jerk: f64,
    pub size_small: f64,
    pub size_medium: f64,
}

impl Default for BinsConfig {
    fn default() -> Self {
        Self {
            speed_stationary: 0.5,
            speed_slow: 5.0,
            speed_moderate: 15.0,
            drift_none: 0.05,
            drift_slight: 0.2,
            jerk: 2.0,
            size_small: 0.005,
            size_medium: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VlmMode {
    Remote,
    HashStub,
    OracleStub,
    Replay,
}

impl FromStr for VlmMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(VlmMode::Remote),
            "hash_stub" => Ok(VlmMode::HashStub),
            "oracle_stub" => Ok(VlmMode::OracleStub),
            "replay" => Ok(VlmMode::Replay),
            other => Err(format!("unknown vlm mode `{other}`")),
        }
    }
}

impl VlmMode {
    pub fn as_str(self) -> &'static str {
        match self {
            VlmMode::Remote => "remote",
            VlmMode::HashStub => "hash_stub",
            VlmMode::OracleStub => "oracle_stub",
            VlmMode::Replay => "replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VlmConfig {
    pub mode: VlmMode,
    pub endpoint: String,
    pub transcript_path: Option<PathBuf>,
    pub seed: u64,
    pub max_inflight: usize,
    pub retries: u32,
    pub backoff_ms: u64,
    pub backoff_cap_ms: u64,
    pub timeout_ms: u64,
}

impl Default for VlmConfig {
    fn default() -> Self {
        Self {
            mode: VlmMode::HashStub,
            endpoint: "http://127.0.0.1:8080/v1/query".into(),
            transcript_path: None,
            seed: 0,
            max_inflight: 4,
            retries: 2,
            backoff_ms: 100,
            backoff_cap_ms: 2000,
            timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub target_w: u32,
    pub target_h: u32,
    pub fade_window: usize,
    pub roi_margin: f64,
    pub max_rois: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { target_w: 448, target_h: 448, fade_window: 16, roi_margin: 0.25, max_rois: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub lr: f64,
    pub epochs: usize,
    pub lambda: f64,
    pub pair_margin: f64,
    pub seed: u64,
    pub holdout: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { lr: 0.01, epochs: 2000, lambda: 1.0, pair_margin: 0.05, seed: 0, holdout: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub num_clips: usize,
    pub threshold: f64,
    pub lane: LaneConfig,
    pub bins: BinsConfig,
    pub vlm: VlmConfig,
    pub render: RenderConfig,
    pub fusion: FusionConfig,
    pub features_path: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            num_clips: 8,
            threshold: 0.2,
            lane: LaneConfig::default(),
            bins: BinsConfig::default(),
            vlm: VlmConfig::default(),
            render: RenderConfig::default(),
            fusion: FusionConfig::default(),
            features_path: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        match key {
            "pipeline.num_clips" => self.num_clips = parse_value(key, v)?,
            "pipeline.threshold" => self.threshold = parse_value(key, v)?,
            "lane.simplify_eps" => self.lane.simplify_eps = parse_value(key, v)?,
            "lane.nominal_width_m" => self.lane.nominal_width_m = parse_value(key, v)?,
            "lane.alpha" => self.lane.alpha = parse_value(key, v)?,
            "lane.w_center" => self.lane.w_center = parse_value(key, v)?,
            "lane.w_solid" => self.lane.w_solid = parse_value(key, v)?,
            "lane.w_cross" => self.lane.w_cross = parse_value(key, v)?,
            "lane.cross_approach_m" => self.lane.cross_approach_m = parse_value(key, v)?,
            "lane.yield_speed_mps" => self.lane.yield_speed_mps = parse_value(key, v)?,
            "bins.speed_stationary" => self.bins.speed_stationary = parse_value(key, v)?,
            "bins.speed_slow" => self.bins.speed_slow = parse_value(key, v)?,
            "bins.speed_moderate" => self.bins.speed_moderate = parse_value(key, v)?,
            "bins.drift_none" => self.bins.drift_none = parse_value(key, v)?,
            "bins.drift_slight" => self.bins.drift_slight = parse_value(key, v)?,
            "bins.jerk" => self.bins.jerk = parse_value(key, v)?,
            "bins.size_small" => self.bins.size_small = parse_value(key, v)?,
            "bins.size_medium" => self.bins.size_medium = parse_value(key, v)?,
            "vlm.mode" => {
                self.vlm.mode = v.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: v.into() })?
            }
            "vlm.endpoint" => self.vlm.endpoint = v.to_string(),
            "vlm.transcript_path" => {
                self.vlm.transcript_path = (!v.is_empty()).then(|| PathBuf::from(v));
            }
            "vlm.seed" => self.vlm.seed = parse_value(key, v)?,
            "vlm.max_inflight" => self.vlm.max_inflight = parse_value(key, v)?,
            "vlm.retries" => self.vlm.retries = parse_value(key, v)?,
            "vlm.backoff_ms" => self.vlm.backoff_ms = parse_value(key, v)?,
            "vlm.backoff_cap_ms" => self.vlm.backoff_cap_ms = parse_value(key, v)?,
            "vlm.timeout_ms" => self.vlm.timeout_ms = parse_value(key, v)?,
            "render.target_w" => self.render.target_w = parse_value(key, v)?,
            "render.target_h" => self.render.target_h = parse_value(key, v)?,
            "render.fade_window" => self.render.fade_window = parse_value(key, v)?,
            "render.roi_margin" => self.render.roi_margin = parse_value(key, v)?,
            "render.max_rois" => self.render.max_rois = parse_value(key, v)?,
            "fusion.lr" => self.fusion.lr = parse_value(key, v)?,
            "fusion.epochs" => self.fusion.epochs = parse_value(key, v)?,
            "fusion.lambda" => self.fusion.lambda = parse_value(key, v)?,
            "fusion.pair_margin" => self.fusion.pair_margin = parse_value(key, v)?,
            "fusion.seed" => self.fusion.seed = parse_value(key, v)?,
            "fusion.holdout" => self.fusion.holdout = parse_value(key, v)?,
            "features.path" => self.features_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies a config text on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let key = key.trim();
            if !key.contains('.') {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            cfg.set(key, value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }

    /// Every resolved key in sorted order.
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        BTreeMap::from([
            ("pipeline.num_clips", self.num_clips.to_string()),
            ("pipeline.threshold", self.threshold.to_string()),
            ("lane.simplify_eps", self.lane.simplify_eps.to_string()),
            ("lane.nominal_width_m", self.lane.nominal_width_m.to_string()),
            ("lane.alpha", self.lane.alpha.to_string()),
            ("lane.w_center", self.lane.w_center.to_string()),
            ("lane.w_solid", self.lane.w_solid.to_string()),
            ("lane.w_cross", self.lane.w_cross.to_string()),
            ("lane.cross_approach_m", self.lane.cross_approach_m.to_string()),
            ("lane.yield_speed_mps", self.lane.yield_speed_mps.to_string()),
            ("bins.speed_stationary", self.bins.speed_stationary.to_string()),
            ("bins.speed_slow", self.bins.speed_slow.to_string()),
            ("bins.speed_moderate", self.bins.speed_moderate.to_string()),
            ("bins.drift_none", self.bins.drift_none.to_string()),
            ("bins.drift_slight", self.bins.drift_slight.to_string()),
            ("bins.jerk", self.bins.jerk.to_string()),
            ("bins.size_small", self.bins.size_small.to_string()),
            ("bins.size_medium", self.bins.size_medium.to_string()),
            ("vlm.mode", self.vlm.mode.as_str().to_string()),
            ("vlm.endpoint", self.vlm.endpoint.clone()),
            ("vlm.transcript_path", path(&self.vlm.transcript_path)),
            ("vlm.seed", self.vlm.seed.to_string()),
            ("vlm.max_inflight", self.vlm.max_inflight.to_string()),
            ("vlm.retries", self.vlm.retries.to_string()),
            ("vlm.backoff_ms", self.vlm.backoff_ms.to_string()),
            ("vlm.backoff_cap_ms", self.vlm.backoff_cap_ms.to_string()),
            ("vlm.timeout_ms", self.vlm.timeout_ms.to_string()),
            ("render.target_w", self.render.target_w.to_string()),
            ("render.target_h", self.render.target_h.to_string()),
            ("render.fade_window", self.render.fade_window.to_string()),
            ("render.roi_margin", self.render.roi_margin.to_string()),
            ("render.max_rois", self.render.max_rois.to_string()),
            ("fusion.lr", self.fusion.lr.to_string()),
            ("fusion.epochs", self.fusion.epochs.to_string()),
            ("fusion.lambda", self.fusion.lambda.to_string()),
            ("fusion.pair_margin", self.fusion.pair_margin.to_string()),
            ("fusion.seed", self.fusion.seed.to_string()),
            ("fusion.holdout", self.fusion.holdout.to_string()),
            ("features.path", path(&self.features_path)),
        ])
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 over the canonical rendering of every resolved key. Transport
    /// settings (endpoint, transcript path, concurrency, timeouts) are left
    /// out since they never change scores.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if matches!(
                k,
                "vlm.endpoint"
                    | "vlm.transcript_path"
                    | "vlm.max_inflight"
                    | "vlm.backoff_ms"
                    | "vlm.backoff_cap_ms"
                    | "vlm.timeout_ms"
            ) {
                continue;
            }
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = Config::default();
        assert_eq!(c.num_clips, 8);
        assert_eq!((c.lane.w_center, c.lane.w_solid, c.lane.w_cross), (0.4, 0.3, 0.3));
        assert_eq!(c.lane.alpha, 1.0);
        assert_eq!(c.threshold, 0.2);
    }

    #[test]
    fn parse_overrides_and_comments() {
        let c = Config::parse("# tuned\nlane.alpha = 2.0\nvlm.mode = oracle_stub # stub\n\n").unwrap();
        assert_eq!(c.lane.alpha, 2.0);
        assert_eq!(c.vlm.mode, VlmMode::OracleStub);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(Config::parse("lane.nope = 1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(Config::parse("lane.alpha"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(Config::parse("lane.alpha = x"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn text_round_trip_preserves_checksum() {
        let mut c = Config::default();
        c.lane.alpha = 1.25;
        let back = Config::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.checksum(), c.checksum());
        assert_ne!(Config::default().checksum(), c.checksum());
    }
}
