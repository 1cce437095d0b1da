//! TOML run configuration. Every table rejects unknown keys; command-line
//! flags override file values.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context as _};
use offpolicy_core::experiments::StudySpec;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::policy::PolicySpec;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub delta: Option<f64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub evaluate: Option<EvaluateFile>,
    pub select: Option<SelectFile>,
    pub learn: Option<LearnFile>,
    pub study: Option<StudyFile>,
    pub convert: Option<ConvertFile>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateFile {
    pub data: Option<PathBuf>,
    pub actions: Option<usize>,
    pub policy: Option<PolicySpec>,
    pub bounds: Option<Vec<String>>,
    pub lambda: Option<LambdaChoice>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectFile {
    pub data: Option<PathBuf>,
    pub actions: Option<usize>,
    pub candidates: Option<BTreeMap<String, PolicySpec>>,
    pub method: Option<String>,
    pub lambda: Option<LambdaChoice>,
    pub behavior: Option<String>,
    pub oracle_epsilon: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnFile {
    pub data: Option<PathBuf>,
    pub actions: Option<usize>,
    pub method: Option<String>,
    pub prior: Option<PathBuf>,
    pub prior_sigma: Option<f64>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub mc_samples: Option<usize>,
    pub grid_size: Option<usize>,
    pub grid_min: Option<f64>,
    pub grid_max: Option<f64>,
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub preset: Option<String>,
    pub data_dir: Option<PathBuf>,
    /// A full study definition, used when no preset is named.
    pub spec: Option<StudySpec>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvertFile {
    pub input: Option<PathBuf>,
    pub label_column: Option<String>,
    pub behavior: Option<PolicySpec>,
    pub epsilon: Option<f64>,
    pub standardize: Option<bool>,
    pub bias: Option<bool>,
    pub output: Option<PathBuf>,
}

pub fn load(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

/// How λ is chosen: a fixed value or a named rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LambdaInput", into = "String")]
pub enum LambdaChoice {
    Fixed(f64),
    /// `1/√n`.
    InvSqrtN,
    /// `√(2 ln(2m/δ)/n)`.
    UnionBound,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LambdaInput {
    Number(f64),
    Name(String),
}

impl TryFrom<LambdaInput> for LambdaChoice {
    type Error = anyhow::Error;

    fn try_from(v: LambdaInput) -> anyhow::Result<Self> {
        match v {
            LambdaInput::Number(x) => LambdaChoice::fixed(x),
            LambdaInput::Name(s) => s.parse(),
        }
    }
}

impl LambdaChoice {
    fn fixed(x: f64) -> anyhow::Result<Self> {
        if !(x > 0.0 && x.is_finite()) {
            bail!("lambda must be positive and finite, got {x}");
        }
        Ok(LambdaChoice::Fixed(x))
    }
}

impl FromStr for LambdaChoice {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "inv-sqrt-n" => Ok(LambdaChoice::InvSqrtN),
            "union-bound" | "lambda-s" => Ok(LambdaChoice::UnionBound),
            _ => match s.parse::<f64>() {
                Ok(x) => LambdaChoice::fixed(x),
                Err(_) => bail!("bad lambda {s:?}; expected a positive number, inv-sqrt-n or union-bound"),
            },
        }
    }
}

impl fmt::Display for LambdaChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaChoice::Fixed(x) => write!(f, "{x:?}"),
            LambdaChoice::InvSqrtN => f.write_str("inv-sqrt-n"),
            LambdaChoice::UnionBound => f.write_str("union-bound"),
        }
    }
}

impl From<LambdaChoice> for String {
    fn from(l: LambdaChoice) -> String {
        l.to_string()
    }
}

impl From<LambdaChoice> for offpolicy_core::selection::LambdaRule {
    fn from(l: LambdaChoice) -> Self {
        use offpolicy_core::selection::LambdaRule;
        match l {
            LambdaChoice::Fixed(x) => LambdaRule::Fixed(x),
            LambdaChoice::InvSqrtN => LambdaRule::InvSqrtN,
            LambdaChoice::UnionBound => LambdaRule::UnionBound,
        }
    }
}

pub fn check_delta(delta: f64) -> anyhow::Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        bail!("delta must lie in (0, 1], got {delta}");
    }
    Ok(())
}

pub fn check_file(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("file not found: {}", path.display());
    }
    Ok(())
}
