//! Policy specifications given on the command line or in a config file.
//!
//! | form                  | policy                                         |
//! |-----------------------|------------------------------------------------|
//! | `uniform`             | uniform over the `K` actions                   |
//! | `ideal:TAU`           | peaked on the true label                       |
//! | `faulty:TAU[:L1,L2]`  | peaked on a wrong action for the listed labels |
//! | `table:PATH`          | JSON `K × K` table, row per label              |
//! | `softmax:PATH`        | JSON softmax-linear weights                    |
//! | `lgp:PATH`            | JSON Gaussian posterior or learn checkpoint    |

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context as _};
use offpolicy_core::datagen::{default_faulty_set, faulty_policy, ideal_policy};
use offpolicy_core::io::{read_json, Checkpoint};
use offpolicy_core::lgp::{GaussianPosterior, LgpPolicy};
use offpolicy_core::policies::{SoftmaxLinear, TabularByLabel, UniformPolicy};
use offpolicy_core::Policy;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicySpec {
    Uniform,
    Ideal { tau: f64 },
    Faulty { tau: f64, labels: Option<Vec<usize>> },
    Table(PathBuf),
    Softmax(PathBuf),
    Lgp(PathBuf),
}

impl FromStr for PolicySpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        let mut parts = s.splitn(2, ':');
        let kind = parts.next().unwrap_or_default();
        let rest = parts.next();
        let tau = |t: &str| -> anyhow::Result<f64> {
            let v: f64 = t.parse().with_context(|| format!("bad temperature {t:?} in policy {s:?}"))?;
            if !(v > 0.0) {
                bail!("temperature must be positive in policy {s:?}");
            }
            Ok(v)
        };
        let path = |r: Option<&str>| -> anyhow::Result<PathBuf> {
            match r {
                Some(p) if !p.is_empty() => Ok(PathBuf::from(p)),
                _ => bail!("policy {s:?} needs a path, e.g. {kind}:file.json"),
            }
        };
        Ok(match (kind, rest) {
            ("uniform", None) => PolicySpec::Uniform,
            ("ideal", Some(t)) => PolicySpec::Ideal { tau: tau(t)? },
            ("faulty", Some(r)) => {
                let mut it = r.splitn(2, ':');
                let t = tau(it.next().unwrap_or_default())?;
                let labels = it
                    .next()
                    .map(|list| {
                        list.split(',')
                            .map(|l| l.trim().parse::<usize>().with_context(|| format!("bad label {l:?} in policy {s:?}")))
                            .collect::<anyhow::Result<Vec<_>>>()
                    })
                    .transpose()?;
                PolicySpec::Faulty { tau: t, labels }
            }
            ("table", r) => PolicySpec::Table(path(r)?),
            ("softmax", r) => PolicySpec::Softmax(path(r)?),
            ("lgp", r) => PolicySpec::Lgp(path(r)?),
            _ => bail!("unknown policy {s:?}; expected uniform, ideal:TAU, faulty:TAU[:LABELS], table:PATH, softmax:PATH or lgp:PATH"),
        })
    }
}

impl TryFrom<String> for PolicySpec {
    type Error = anyhow::Error;

    fn try_from(s: String) -> anyhow::Result<Self> {
        s.parse()
    }
}

impl From<PolicySpec> for String {
    fn from(p: PolicySpec) -> String {
        p.to_string()
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Uniform => write!(f, "uniform"),
            PolicySpec::Ideal { tau } => write!(f, "ideal:{tau}"),
            PolicySpec::Faulty { tau, labels: None } => write!(f, "faulty:{tau}"),
            PolicySpec::Faulty { tau, labels: Some(l) } => {
                let list: Vec<String> = l.iter().map(ToString::to_string).collect();
                write!(f, "faulty:{tau}:{}", list.join(","))
            }
            PolicySpec::Table(p) => write!(f, "table:{}", p.display()),
            PolicySpec::Softmax(p) => write!(f, "softmax:{}", p.display()),
            PolicySpec::Lgp(p) => write!(f, "lgp:{}", p.display()),
        }
    }
}

impl PolicySpec {
    /// Files this policy reads, for up-front existence checks.
    pub fn file(&self) -> Option<&Path> {
        match self {
            PolicySpec::Table(p) | PolicySpec::Softmax(p) | PolicySpec::Lgp(p) => Some(p),
            _ => None,
        }
    }

    /// Whether the policy reads the context's label.
    pub fn needs_labels(&self) -> bool {
        matches!(self, PolicySpec::Ideal { .. } | PolicySpec::Faulty { .. } | PolicySpec::Table(_))
    }

    pub fn build(&self, k: usize, p: usize) -> anyhow::Result<Arc<dyn Policy>> {
        let check = |what: &str, got_k: usize, got_p: Option<usize>| -> anyhow::Result<()> {
            if got_k != k || got_p.is_some_and(|gp| gp != p) {
                bail!("{what} has K={got_k}, p={got_p:?}; the data has K={k}, p={p}");
            }
            Ok(())
        };
        Ok(match self {
            PolicySpec::Uniform => Arc::new(UniformPolicy::new(k)),
            PolicySpec::Ideal { tau } => Arc::new(ideal_policy(k, *tau)?),
            PolicySpec::Faulty { tau, labels } => {
                let set = labels.clone().unwrap_or_else(|| default_faulty_set(k));
                Arc::new(faulty_policy(k, *tau, &set, None)?)
            }
            PolicySpec::Table(path) => {
                let rows: Vec<Vec<f64>> = read_json(path)?;
                let t = TabularByLabel::from_rows(rows)?;
                check(&path.display().to_string(), t.action_count(), None)?;
                Arc::new(t)
            }
            PolicySpec::Softmax(path) => {
                let s: SoftmaxLinear = read_json(path)?;
                let s = SoftmaxLinear::new(s.k, s.p, s.weights, s.tau)?;
                check(&path.display().to_string(), s.k, Some(s.p))?;
                Arc::new(s)
            }
            PolicySpec::Lgp(path) => {
                let posterior = load_posterior(path)?;
                check(&path.display().to_string(), posterior.k, Some(posterior.p))?;
                Arc::new(LgpPolicy::quadrature(posterior)?)
            }
        })
    }
}

/// Reads either a bare posterior or a learn checkpoint.
pub fn load_posterior(path: &Path) -> anyhow::Result<GaussianPosterior> {
    let value: serde_json::Value = read_json(path)?;
    let posterior = if value.get("format").is_some() {
        let ck = Checkpoint::load(path)?;
        ck.state()?.posterior
    } else {
        serde_json::from_value::<GaussianPosterior>(value)
            .with_context(|| format!("{}: not a Gaussian posterior", path.display()))?
    };
    posterior.validate()?;
    Ok(posterior)
}
