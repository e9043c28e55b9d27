//! Visual-question backends: a remote HTTP client, a hash stub, an oracle
//! stub driven by synthetic ground truth, and transcript replay.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::Catalog;
use crate::render::RasterImage;
use crate::synth::ViolationKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned status {status}")]
    Backend { status: u16 },
    #[error("no recorded response for payload {payload_id}")]
    Replay { payload_id: String },
    #[error("transcript: {0}")]
    Transcript(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Image,
    Clip,
}

/// One visual question. `payload_id` names the visual evidence; the same
/// evidence is asked one question per candidate.
#[derive(Debug, Clone)]
pub struct QueryPayload {
    pub payload_id: String,
    pub kind: PayloadKind,
    pub images: Vec<Arc<RasterImage>>,
    pub prompt: String,
    pub check_id: String,
    pub candidate: String,
    /// Ground-truth violations overlapping this evidence; only the oracle
    /// stub reads them.
    pub truth: Vec<ViolationKind>,
}

pub trait VlmBackend: Send + Sync {
    fn query(&self, payload: &QueryPayload) -> Result<String, VlmError>;
}

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub fn format_answer(yes: bool, confidence: f64) -> String {
    format!("{{'answer': {}, 'confidence': {confidence:.2}}}", if yes { "Yes" } else { "No" })
}

/// Confidence is a pure function of (seed, payload id, prompt).
#[derive(Debug, Clone)]
pub struct HashStub {
    pub seed: u64,
}

impl VlmBackend for HashStub {
    fn query(&self, p: &QueryPayload) -> Result<String, VlmError> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((p.payload_id.len() as u64).to_le_bytes());
        h.update(p.payload_id.as_bytes());
        h.update(p.prompt.as_bytes());
        let d = h.finalize();
        let v = u64::from_le_bytes(d[..8].try_into().unwrap());
        let conf = (v % 101) as f64 / 100.0;
        Ok(format_answer(true, conf))
    }
}

/// Which (check, bad candidate) pairs each violation kind should trigger.
pub fn oracle_table(kind: ViolationKind) -> &'static [(&'static str, &'static str)] {
    match kind {
        ViolationKind::Flicker => &[("B1", "strong-flicker"), ("A1", "overexposed")],
        ViolationKind::Teleport => &[("B2", "highly-inconsistent"), ("B6", "highly-unnatural-or-teleporting")],
        ViolationKind::SolidCross => &[("C6", "clear-or-prolonged-crossing")],
        ViolationKind::OffCenterDrift => &[("B5", "frequently-out-of-lane")],
        ViolationKind::NonYield => &[("C5", "vehicles-not-yielding")],
        ViolationKind::SidewalkDrive => &[("C1", "partly-on-sidewalk")],
        ViolationKind::JerkyEgo => &[("B3", "strongly-shaky")],
    }
}

/// Answers from the payload's ground-truth tags: a present violation puts
/// 0.95 on its bad candidate, otherwise 0.95 goes to the best candidate.
#[derive(Debug, Clone)]
pub struct OracleStub {
    catalog: &'static Catalog,
}

impl Default for OracleStub {
    fn default() -> Self {
        Self { catalog: Catalog::builtin() }
    }
}

impl VlmBackend for OracleStub {
    fn query(&self, p: &QueryPayload) -> Result<String, VlmError> {
        let bad: Option<&str> = p
            .truth
            .iter()
            .flat_map(|k| oracle_table(*k).iter())
            .find(|(check, _)| *check == p.check_id)
            .map(|(_, cand)| *cand);
        let target = match bad {
            Some(c) => c,
            None => self.catalog.check(&p.check_id).map(|s| s.best_candidate()).unwrap_or(""),
        };
        Ok(format_answer(p.candidate == target, 0.95))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub payload_id: String,
    pub prompt_sha256: String,
    pub response: String,
}

/// Serves responses recorded in a transcript file (one JSON record per line).
#[derive(Debug, Clone, Default)]
pub struct Replay {
    records: HashMap<(String, String), String>,
}

impl Replay {
    pub fn from_records(records: impl IntoIterator<Item = TranscriptRecord>) -> Self {
        Self { records: records.into_iter().map(|r| ((r.payload_id, r.prompt_sha256), r.response)).collect() }
    }

    pub fn load(path: &Path) -> Result<Self, VlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| VlmError::Transcript(format!("{}: {e}", path.display())))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str::<TranscriptRecord>(l).map_err(|e| VlmError::Transcript(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_records(records))
    }
}

impl VlmBackend for Replay {
    fn query(&self, p: &QueryPayload) -> Result<String, VlmError> {
        self.records
            .get(&(p.payload_id.clone(), prompt_sha256(&p.prompt)))
            .cloned()
            .ok_or_else(|| VlmError::Replay { payload_id: p.payload_id.clone() })
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    payload_id: &'a str,
    kind: PayloadKind,
    prompt: &'a str,
    /// Base64 binary PPM frames, in order.
    images: Vec<String>,
}

/// POSTs a JSON request to `endpoint` and returns the body verbatim.
#[derive(Debug, Clone)]
pub struct Remote {
    endpoint: String,
    agent: ureq::Agent,
}

impl Remote {
    pub fn new(endpoint: &str, timeout_ms: u64) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint: endpoint.to_string(), agent }
    }
}

impl VlmBackend for Remote {
    fn query(&self, p: &QueryPayload) -> Result<String, VlmError> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let req = RemoteRequest {
            payload_id: &p.payload_id,
            kind: p.kind,
            prompt: &p.prompt,
            images: p.images.iter().map(|img| b64.encode(img.to_ppm())).collect(),
        };
        let body = serde_json::to_string(&req).map_err(|e| VlmError::Transport(e.to_string()))?;
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json")
            .send(body.as_str())
            .map_err(|e| VlmError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(VlmError::Backend { status });
        }
        resp.body_mut().read_to_string().map_err(|e| VlmError::Transport(e.to_string()))
    }
}

/// Wraps a backend and keeps every successful exchange for later replay.
pub struct Recorder<B> {
    inner: B,
    log: Mutex<Vec<TranscriptRecord>>,
}

impl<B: VlmBackend> Recorder<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    /// Records sorted by (payload id, prompt hash) so the file does not
    /// depend on query scheduling.
    pub fn records(&self) -> Vec<TranscriptRecord> {
        let mut r = self.log.lock().unwrap().clone();
        r.sort_by(|a, b| (&a.payload_id, &a.prompt_sha256).cmp(&(&b.payload_id, &b.prompt_sha256)));
        r.dedup();
        r
    }

    pub fn write(&self, path: &Path) -> Result<(), VlmError> {
        let io = |e: std::io::Error| VlmError::Transcript(format!("{}: {e}", path.display()));
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for r in self.records() {
            let line = serde_json::to_string(&r).map_err(|e| VlmError::Transcript(e.to_string()))?;
            writeln!(f, "{line}").map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

impl<B: VlmBackend> VlmBackend for Recorder<B> {
    fn query(&self, p: &QueryPayload) -> Result<String, VlmError> {
        let resp = self.inner.query(p)?;
        self.log.lock().unwrap().push(TranscriptRecord {
            payload_id: p.payload_id.clone(),
            prompt_sha256: prompt_sha256(&p.prompt),
            response: resp.clone(),
        });
        Ok(resp)
    }
}

impl<B: VlmBackend + ?Sized> VlmBackend for Arc<B> {
    fn query(&self, p: &QueryPayload) -> Result<String, VlmError> {
        (**self).query(p)
    }
}

impl<B: VlmBackend + ?Sized> VlmBackend for Box<B> {
    fn query(&self, p: &QueryPayload) -> Result<String, VlmError> {
        (**self).query(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::parse_response;

    fn payload(check: &str, candidate: &str, truth: Vec<ViolationKind>) -> QueryPayload {
        QueryPayload {
            payload_id: "v/clip0".into(),
            kind: PayloadKind::Image,
            images: vec![Arc::new(RasterImage::new(2, 2, [0, 0, 0]))],
            prompt: format!("{check} {candidate}"),
            check_id: check.into(),
            candidate: candidate.into(),
            truth,
        }
    }

    #[test]
    fn hash_stub_is_deterministic_and_parseable() {
        let s = HashStub { seed: 7 };
        let p = payload("A1", "clear", vec![]);
        let a = s.query(&p).unwrap();
        assert_eq!(a, s.query(&p).unwrap());
        assert!(parse_response(&a).is_ok());
        let other = HashStub { seed: 8 };
        let differs = (0..20).any(|i| {
            let mut q = p.clone();
            q.payload_id = format!("p{i}");
            s.query(&q).unwrap() != other.query(&q).unwrap()
        });
        assert!(differs);
    }

    #[test]
    fn oracle_flags_solid_crossing() {
        let o = OracleStub::default();
        let p = payload("C6", "clear-or-prolonged-crossing", vec![ViolationKind::SolidCross]);
        assert_eq!(o.query(&p).unwrap(), "{'answer': Yes, 'confidence': 0.95}");
        let p = payload("C6", "no-solid-line-crossing", vec![ViolationKind::SolidCross]);
        assert_eq!(o.query(&p).unwrap(), "{'answer': No, 'confidence': 0.95}");
        let p = payload("C6", "no-solid-line-crossing", vec![]);
        assert_eq!(o.query(&p).unwrap(), "{'answer': Yes, 'confidence': 0.95}");
    }

    #[test]
    fn every_violation_maps_to_a_catalog_candidate() {
        let cat = Catalog::builtin();
        for k in ViolationKind::ALL {
            assert!(!oracle_table(k).is_empty());
            for (check, cand) in oracle_table(k) {
                assert!(cat.check(check).unwrap().index_of(cand).is_some(), "{check} {cand}");
            }
        }
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let r = Remote::new("http://127.0.0.1:9/", 500);
        assert!(matches!(r.query(&payload("A1", "clear", vec![])), Err(VlmError::Transport(_))));
    }

    #[test]
    fn replay_reproduces_recording() {
        let rec = Recorder::new(HashStub { seed: 1 });
        let p = payload("B1", "no-flicker", vec![]);
        let first = rec.query(&p).unwrap();
        let replay = Replay::from_records(rec.records());
        assert_eq!(replay.query(&p).unwrap(), first);
        let mut q = p.clone();
        q.prompt.push('!');
        assert!(matches!(replay.query(&q), Err(VlmError::Replay { .. })));
    }
}
