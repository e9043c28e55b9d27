//! The check catalog, prompt instantiation, response parsing and the
//! conversion of per-candidate confidences into feature vectors.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ANSWER_TOKEN: &str = "[ANSWER]";

const BUILTIN: &str = include_str!("../assets/catalog.txt");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error("template of {check} must contain {ANSWER_TOKEN} exactly once (found {found})")]
    Template { check: String, found: usize },
    #[error("catalog line {line}: {message}")]
    Catalog { line: usize, message: String },
    #[error("no answer of the form {{'answer': Yes/No, 'confidence': x.xx}} in response")]
    Parse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CheckGroup {
    Frame,
    Clip,
    Roi,
}

impl CheckGroup {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "frame" => Some(Self::Frame),
            "clip" => Some(Self::Clip),
            "roi" => Some(Self::Roi),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSpec {
    pub check_id: String,
    pub group: CheckGroup,
    pub evidence: String,
    pub targets: Vec<String>,
    pub template: String,
    /// Worst to best.
    pub candidates: Vec<String>,
    pub values: Vec<f64>,
}

impl CheckSpec {
    pub fn validate(&self) -> Result<(), PromptError> {
        let found = self.template.matches(ANSWER_TOKEN).count();
        if found != 1 {
            return Err(PromptError::Template { check: self.check_id.clone(), found });
        }
        Ok(())
    }

    pub fn index_of(&self, candidate: &str) -> Option<usize> {
        self.candidates.iter().position(|c| c == candidate)
    }

    /// Highest-valued candidate (first one on ties).
    pub fn best_candidate(&self) -> &str {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        &self.candidates[best]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub version: u32,
    pub instruction: String,
    pub colors: BTreeMap<String, [u8; 3]>,
    pub slots_obj: Vec<String>,
    pub slots_sem: Vec<String>,
    pub slots_mot: Vec<String>,
    pub checks: Vec<CheckSpec>,
    /// Hex SHA-256 of the catalog text.
    pub checksum: String,
}

fn list(v: &str) -> Vec<String> {
    v.split(" | ").map(|s| s.trim().to_string()).collect()
}

fn linspace(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

impl Catalog {
    pub fn builtin() -> &'static Catalog {
        static CAT: OnceLock<Catalog> = OnceLock::new();
        CAT.get_or_init(|| Catalog::parse(BUILTIN).expect("built-in catalog is valid"))
    }

    pub fn builtin_text() -> &'static str {
        BUILTIN
    }

    pub fn parse(text: &str) -> Result<Catalog, PromptError> {
        let err = |line: usize, message: String| PromptError::Catalog { line, message };
        let mut cat = Catalog {
            version: 0,
            instruction: String::new(),
            colors: BTreeMap::new(),
            slots_obj: vec![],
            slots_sem: vec![],
            slots_mot: vec![],
            checks: vec![],
            checksum: hex::encode(Sha256::digest(text.as_bytes())),
        };
        let mut explicit_values = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(" = ").ok_or_else(|| err(line_no, "expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "check" {
                cat.checks.push(CheckSpec {
                    check_id: value.to_string(),
                    group: CheckGroup::Frame,
                    evidence: String::new(),
                    targets: vec![],
                    template: String::new(),
                    candidates: vec![],
                    values: vec![],
                });
                explicit_values.push(false);
                continue;
            }
            if let Some(name) = key.strip_prefix("color.") {
                let parts: Vec<u8> = list(value)
                    .iter()
                    .map(|p| p.parse::<u8>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| err(line_no, format!("bad color: {e}")))?;
                let rgb: [u8; 3] = parts.try_into().map_err(|_| err(line_no, "color needs 3 channels".into()))?;
                cat.colors.insert(name.to_string(), rgb);
                continue;
            }
            match key {
                "version" => cat.version = value.parse().map_err(|_| err(line_no, "bad version".into()))?,
                "instruction" => cat.instruction = value.to_string(),
                "slots.obj" => cat.slots_obj = list(value),
                "slots.sem" => cat.slots_sem = list(value),
                "slots.mot" => cat.slots_mot = list(value),
                _ => {
                    let spec = cat.checks.last_mut().ok_or_else(|| err(line_no, format!("`{key}` outside a check")))?;
                    match key {
                        "group" => {
                            spec.group =
                                CheckGroup::parse(value).ok_or_else(|| err(line_no, format!("unknown group {value}")))?
                        }
                        "evidence" => spec.evidence = value.to_string(),
                        "targets" => spec.targets = list(value),
                        "template" => spec.template = value.to_string(),
                        "candidates" => spec.candidates = list(value),
                        "values" => {
                            spec.values = list(value)
                                .iter()
                                .map(|v| v.parse::<f64>())
                                .collect::<Result<_, _>>()
                                .map_err(|e| err(line_no, format!("bad value: {e}")))?;
                            *explicit_values.last_mut().unwrap() = true;
                        }
                        _ => return Err(err(line_no, format!("unknown key {key}"))),
                    }
                }
            }
        }
        for (spec, explicit) in cat.checks.iter_mut().zip(explicit_values) {
            spec.validate()?;
            if spec.candidates.len() < 2 {
                return Err(err(0, format!("{} needs at least 2 candidates", spec.check_id)));
            }
            if !explicit {
                spec.values = linspace(spec.candidates.len());
            }
            if spec.values.len() != spec.candidates.len() || spec.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(err(0, format!("{} values do not match its candidates", spec.check_id)));
            }
        }
        Ok(cat)
    }

    pub fn check(&self, id: &str) -> Option<&CheckSpec> {
        self.checks.iter().find(|c| c.check_id == id)
    }

    pub fn group(&self, g: CheckGroup) -> impl Iterator<Item = &CheckSpec> {
        self.checks.iter().filter(move |c| c.group == g)
    }

    /// Total candidate count of a group, i.e. the width of its feature block.
    pub fn group_dim(&self, g: CheckGroup) -> usize {
        self.group(g).map(|c| c.candidates.len()).sum()
    }

    pub fn color(&self, name: &str) -> [u8; 3] {
        self.colors.get(name).copied().unwrap_or([255, 255, 255])
    }

    /// One prompt per candidate, in candidate order.
    pub fn instantiate(&self, spec: &CheckSpec, summary: &str) -> Result<Vec<(String, String)>, PromptError> {
        spec.validate()?;
        Ok(spec
            .candidates
            .iter()
            .map(|c| {
                let question = spec.template.replacen(ANSWER_TOKEN, c, 1);
                (c.clone(), format!("{}\n\n{}\n\n{}", self.instruction, summary, question))
            })
            .collect())
    }
}

/// Prompts for `spec` under the built-in instruction.
pub fn instantiate_prompts(spec: &CheckSpec, summary: &str) -> Result<Vec<(String, String)>, PromptError> {
    Catalog::builtin().instantiate(spec, summary)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VlmAnswer {
    pub yes: bool,
    pub confidence: f64,
}

impl VlmAnswer {
    /// Confidence that the candidate description holds.
    pub fn yes_confidence(&self) -> f64 {
        if self.yes {
            self.confidence
        } else {
            1.0 - self.confidence
        }
    }
}

struct Cursor<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn ws(&mut self) {
        while self.s[self.pos..].starts_with(|c: char| c.is_whitespace()) {
            self.pos += self.s[self.pos..].chars().next().unwrap().len_utf8();
        }
    }

    fn lit(&mut self, l: &str) -> Option<()> {
        self.ws();
        self.s[self.pos..].starts_with(l).then(|| self.pos += l.len())
    }

    fn word(&mut self) -> Option<bool> {
        self.ws();
        let rest = &self.s[self.pos..];
        for (w, v) in [("yes", true), ("no", false)] {
            if rest.len() >= w.len() && rest[..w.len()].eq_ignore_ascii_case(w) {
                let after = rest[w.len()..].chars().next();
                if !after.is_some_and(|c| c.is_ascii_alphanumeric()) {
                    self.pos += w.len();
                    return Some(v);
                }
            }
        }
        None
    }

    fn number(&mut self) -> Option<f64> {
        self.ws();
        let rest = &self.s.as_bytes()[self.pos..];
        let mut n = 0;
        if n < rest.len() && (rest[n] == b'+' || rest[n] == b'-') {
            n += 1;
        }
        let digits_start = n;
        while n < rest.len() && (rest[n].is_ascii_digit() || rest[n] == b'.') {
            n += 1;
        }
        if !rest[digits_start..n].iter().any(u8::is_ascii_digit) {
            return None;
        }
        if n < rest.len() && (rest[n] == b'e' || rest[n] == b'E') {
            let mut m = n + 1;
            if m < rest.len() && (rest[m] == b'+' || rest[m] == b'-') {
                m += 1;
            }
            if m < rest.len() && rest[m].is_ascii_digit() {
                while m < rest.len() && rest[m].is_ascii_digit() {
                    m += 1;
                }
                n = m;
            }
        }
        let v: f64 = self.s[self.pos..self.pos + n].parse().ok()?;
        self.pos += n;
        v.is_finite().then_some(v)
    }
}

fn answer_at(s: &str, start: usize) -> Option<VlmAnswer> {
    let mut c = Cursor { s, pos: start };
    c.lit("{")?;
    c.lit("'answer'")?;
    c.lit(":")?;
    let yes = c.word()?;
    c.lit(",")?;
    c.lit("'confidence'")?;
    c.lit(":")?;
    let confidence = c.number()?.clamp(0.0, 1.0);
    c.lit("}")?;
    Some(VlmAnswer { yes, confidence })
}

/// First well-formed `{'answer': Yes|No, 'confidence': <number>}` in `text`.
pub fn parse_response(text: &str) -> Result<VlmAnswer, PromptError> {
    text.match_indices('{').find_map(|(i, _)| answer_at(text, i)).ok_or(PromptError::Parse)
}

/// Sum-normalizes; an all-zero vector becomes uniform.
pub fn normalize_confidences(conf: &[f64]) -> Vec<f64> {
    let sum: f64 = conf.iter().sum();
    if sum <= 0.0 {
        return vec![1.0 / conf.len() as f64; conf.len()];
    }
    conf.iter().map(|c| c / sum).collect()
}

pub fn check_to_scalar(probs: &[f64], spec: &CheckSpec) -> f64 {
    probs.iter().zip(&spec.values).map(|(p, v)| p * v).sum::<f64>().clamp(0.0, 1.0)
}
