//! On-disk formats: logged-feedback CSV with a JSON sidecar, and training
//! checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandit::{ActionId, Context, LoggedDataset, LoggedRecord};
use crate::error::{Error, Result};
use crate::lgp::GaussianPosterior;
use crate::optim::Adam;
use crate::pac::LearnState;

/// Describes a logged CSV; stored next to it as `<file>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggedMetadata {
    #[serde(rename = "K")]
    pub k: usize,
    pub p: usize,
    pub seed: Option<u64>,
    pub scenario: Option<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes `feature_0..feature_{p−1}, action, cost, propensity[, label]`.
pub fn write_logged_csv(path: &Path, data: &LoggedDataset, meta: &LoggedMetadata) -> Result<()> {
    let labeled = data.has_labels();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_to_io(path, e))?;
    let mut header: Vec<String> = (0..data.feature_dim()).map(|j| format!("feature_{j}")).collect();
    header.extend(["action", "cost", "propensity"].map(String::from));
    if labeled {
        header.push("label".into());
    }
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for r in data.records() {
        row.clear();
        row.extend(r.context.features.iter().map(|v| format_f64(*v)));
        row.push(r.action.0.to_string());
        row.push(format_f64(r.cost));
        row.push(format_f64(r.propensity));
        if labeled {
            row.push(r.context.label()?.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    write_json(&sidecar_path(path), meta)
}

/// Shortest representation that parses back to the same bits.
fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_to_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            row: 0,
            reason: format!("{other:?}"),
        },
    }
}

/// Reads a logged CSV. `K` comes from the sidecar when present, else from
/// `action_count`, else from the largest logged action.
pub fn read_logged_csv(path: &Path, action_count: Option<usize>) -> Result<LoggedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_to_io(path, e))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (ia, ic, ip) = (col("action")?, col("cost")?, col("propensity")?);
    let il = headers.iter().position(|h| h == "label");
    let feature_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("feature_"))
        .map(|(i, _)| i)
        .collect();
    let mut records = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row,
            reason: e.to_string(),
        })?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    row,
                    reason: format!("column {:?} is not numeric", &headers[i]),
                })
        };
        let int = |i: usize| -> Result<usize> {
            rec.get(i)
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::Parse {
                    row,
                    reason: format!("column {:?} is not a non-negative integer", &headers[i]),
                })
        };
        let features = feature_cols.iter().map(|&i| num(i)).collect::<Result<Vec<_>>>()?;
        let context = match il {
            Some(i) => Context::labeled(features, int(i)?),
            None => Context::new(features),
        };
        records.push(LoggedRecord {
            context,
            action: ActionId(int(ia)?),
            cost: num(ic)?,
            propensity: num(ip)?,
        });
    }
    let sidecar = sidecar_path(path);
    let k = if sidecar.exists() {
        let meta: LoggedMetadata = read_json(&sidecar)?;
        if meta.p != feature_cols.len() {
            return Err(Error::param(format!(
                "sidecar declares p = {} but the file has {} feature columns",
                meta.p,
                feature_cols.len()
            )));
        }
        meta.k
    } else if let Some(k) = action_count {
        k
    } else {
        records.iter().map(|r| r.action.0 + 1).max().unwrap_or(0)
    };
    LoggedDataset::new(records, k)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub const CHECKPOINT_FORMAT: &str = "offpolicy-lgp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    #[serde(rename = "K")]
    pub k: usize,
    pub p: usize,
    pub mu: Vec<f64>,
    pub rho: f64,
    pub prior_mu: Vec<f64>,
    pub prior_rho: f64,
    pub seed: u64,
    pub epoch: usize,
    pub optimizer: Adam,
}

impl Checkpoint {
    pub fn new(state: &LearnState, prior: &GaussianPosterior, seed: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            k: prior.k,
            p: prior.p,
            mu: state.posterior.mu.clone(),
            rho: state.rho,
            prior_mu: prior.mu.clone(),
            prior_rho: prior.rho(),
            seed,
            epoch: state.epoch,
            optimizer: state.optimizer.clone(),
        }
    }

    pub fn prior(&self) -> Result<GaussianPosterior> {
        GaussianPosterior::new(self.k, self.p, self.prior_mu.clone(), self.prior_rho.exp())
    }

    pub fn state(&self) -> Result<LearnState> {
        Ok(LearnState {
            posterior: GaussianPosterior::new(self.k, self.p, self.mu.clone(), self.rho.exp())?,
            rho: self.rho,
            optimizer: self.optimizer.clone(),
            epoch: self.epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = read_json(path)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::param(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        Ok(ck)
    }
}
