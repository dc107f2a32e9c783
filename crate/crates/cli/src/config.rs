//! JSON run configuration.
//!
//! Expression variables: `alpha`, `beta` and every `synthesis` function are
//! written in `V`; `alpha_lower`, `alpha_upper`, `phi`, `delta`, `xi` in `s`;
//! envelope functions in the variable named by `envelope.var` (default `y`).
//! Free names other than the variable are looked up in `params`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub bounds: Option<BoundsSection>,
    pub boundary: Option<BoundarySection>,
    pub certificate: Option<CertificateSection>,
    pub sweep: Option<SweepSection>,
    pub synthesis: Option<SynthesisSection>,
    pub envelope: Option<EnvelopeSection>,
    pub system: Option<SystemSection>,
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub alpha_lower: String,
    pub alpha_upper: String,
    pub alpha: String,
    pub beta: String,
    pub phi: String,
    pub delta: String,
    #[serde(default = "zero")]
    pub xi: String,
    pub v_max: f64,
}

fn zero() -> String {
    "0".to_string()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySection {
    Linear { p: f64 },
    Sqrt { r: f64 },
    Expression { psi: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Lemma1,
    Lemma2,
    Escape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxTag {
    Max,
}

/// A fixed level, or `"max"` for the largest feasible one.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Level {
    Value(f64),
    Max(MaxTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EscapeArgsChoice {
    Signed,
    Clamp,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSection {
    pub kind: Kind,
    pub a: Level,
    /// Upper end of the search when `a` is `"max"`; defaults to `bounds.v_max`.
    pub a_hi: Option<f64>,
    #[serde(default = "default_a_tol")]
    pub a_tol: f64,
    pub grid_n: Option<usize>,
    #[serde(default)]
    pub slack: f64,
    #[serde(default)]
    pub epsilon: f64,
    pub lipschitz: Option<f64>,
    pub escape_args: Option<EscapeArgsChoice>,
}

fn default_a_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub p_lo: f64,
    pub p_hi: f64,
    pub n: usize,
    pub union_points: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeChoice {
    Star,
    Convex,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    pub alpha0: String,
    pub beta: String,
    pub phi: String,
    pub phi_lipschitz: f64,
    pub a_init: f64,
    #[serde(default = "default_envelope")]
    pub envelope: EnvelopeChoice,
}

fn default_envelope() -> EnvelopeChoice {
    EnvelopeChoice::Star
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSection {
    pub function: String,
    #[serde(default = "default_var")]
    pub var: String,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub base: f64,
    pub tol: Option<f64>,
    pub n0: Option<usize>,
    /// Output grid intervals.
    pub nodes: Option<usize>,
    #[serde(default = "default_envelope")]
    pub kind: EnvelopeChoice,
}

fn default_var() -> String {
    "y".to_string()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// `prototype`, `cascade_abs` or `regulation`.
    pub builtin: Option<String>,
    pub x_rhs: Option<Vec<String>>,
    pub lambda_rhs: Option<String>,
    pub v: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Dopri45,
    Rk4,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    /// One `[lo, hi]` range per state component, `λ` last.
    #[serde(rename = "box")]
    pub ranges: Vec<[f64; 2]>,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSection {
    /// `ψ(V) <= λ <= ψ(a)`, `V <= a`, with `ψ` from `boundary`.
    Bounded { a: f64 },
    /// `λ >= ψ(V) - ε`.
    Escape { epsilon: f64 },
    /// The certified domain of the `synthesis` section.
    Synthesized,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub t_end: f64,
    #[serde(default = "default_method")]
    pub method: MethodChoice,
    pub h: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub initial: Vec<Vec<f64>>,
    pub sampler: Option<SamplerSection>,
    pub domain: Option<DomainSection>,
}

fn default_method() -> MethodChoice {
    MethodChoice::Dopri45
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: None,
            formats: default_formats(),
        }
    }
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

/// A configuration error located by a JSON pointer.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{pointer}: {message}")]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    pub fn at(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}

fn escape_token(t: &str) -> String {
    t.replace('~', "~0").replace('/', "~1")
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", escape_token(key))),
            Segment::Enum { variant } => out.push_str(&format!("/{}", escape_token(variant))),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        "/".to_string()
    } else {
        out
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Config, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = pointer_of(e.path());
            ConfigError::at(pointer, e.into_inner().to_string())
        })?;
        if cfg.version != CONFIG_VERSION {
            return Err(ConfigError::at(
                "/version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", cfg.version),
            ));
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form (sorted keys, no whitespace).
    pub fn hash(&self) -> String {
        canonical_hash(self)
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }
}

pub fn canonical_hash<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("config serializes");
    let bytes = serde_json::to_vec(&v).expect("value serializes");
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_located() {
        let err = Config::from_json(r#"{"version": 1, "certificate": {"kind": "lemma1", "a": 1, "gird_n": 3}}"#).unwrap_err();
        assert_eq!(err.pointer, "/certificate/gird_n");
        assert!(err.message.contains("unknown field"), "{}", err.message);
    }

    #[test]
    fn wrong_type_is_located() {
        let err = Config::from_json(r#"{"version": 1, "sweep": {"p_lo": 0.1, "p_hi": "x", "n": 3}}"#).unwrap_err();
        assert_eq!(err.pointer, "/sweep/p_hi");
    }

    #[test]
    fn level_accepts_number_or_max() {
        let c = Config::from_json(r#"{"version": 1, "certificate": {"kind": "lemma2", "a": "max"}}"#).unwrap();
        assert_eq!(c.certificate.unwrap().a, Level::Max(MaxTag::Max));
        let c = Config::from_json(r#"{"version": 1, "certificate": {"kind": "lemma2", "a": 0.5}}"#).unwrap();
        assert_eq!(c.certificate.unwrap().a, Level::Value(0.5));
    }

    #[test]
    fn boundary_families() {
        let c = Config::from_json(r#"{"version": 1, "boundary": {"family": "sqrt", "r": 2}}"#).unwrap();
        assert!(matches!(c.boundary, Some(BoundarySection::Sqrt { r }) if r == 2.0));
        assert!(Config::from_json(r#"{"version": 1, "boundary": {"family": "linear", "p": 1, "q": 2}}"#).is_err());
    }

    #[test]
    fn version_is_checked() {
        assert_eq!(Config::from_json(r#"{"version": 7}"#).unwrap_err().pointer, "/version");
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = Config::from_json(r#"{"version":1,"sweep":{"p_lo":0.1,"p_hi":1,"n":3}}"#).unwrap();
        let b = Config::from_json("{\n  \"sweep\": {\"n\": 3, \"p_hi\": 1, \"p_lo\": 0.1},\n  \"version\": 1\n}").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
