//! Scenario matrices for the evaluation, coverage, selection and learning
//! studies.
//!
//! Each cell owns a random stream derived from the matrix seed and the cell's
//! scenario id, runs on the rayon pool, and its rows are merged in cell
//! order. Output is therefore identical for any thread count. A failing cell
//! is recorded and never aborts the matrix.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bandit::{true_risk, Environment, LoggedDataset, Policy};
use crate::bounds::{
    empirical_bernstein_bound_scored, empirical_s_lambda, ix_bound_scored, ls_bound_scored,
    second_moment_bound_scored, subgaussian_interval_scored, ScoredData,
};
use crate::datagen::{
    bandit_feedback, faulty_policy, fit_supervised, gaussian_blobs, ideal_policy,
    learned_softmax_policy, load_multiclass_csv, split, FitConfig, MulticlassDataset, PointObjective,
};
use crate::error::{Error, Result};
use crate::estimators::s_lambda_oracle;
use crate::lgp::{GaussianPosterior, LgpPolicy};
use crate::pac::{learn, log_spaced_grid, relative_improvement, LearnConfig, PacMethod};
use crate::rng::SeedStream;
use crate::selection::{
    candidate_risks, classify_by_risks, select_with, CandidateSet, LambdaRule, Outcome, SelectionMethod,
};

/// `|U/R − 1|`.
pub fn relative_radius(upper: f64, true_risk: f64) -> Result<f64> {
    if true_risk == 0.0 {
        return Err(Error::UndefinedRadius);
    }
    Ok((upper / true_risk - 1.0).abs())
}

/// One output line: `(scenario_id, dataset, method, metric, value, stderr)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario_id: String,
    pub dataset: String,
    pub method: String,
    pub metric: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

impl MetricRow {
    fn new(scenario: &Scenario, method: &str, metric: &str, value: f64) -> Self {
        Self {
            scenario_id: scenario.id(),
            dataset: scenario.dataset.clone(),
            method: method.to_string(),
            metric: metric.to_string(),
            value,
            stderr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub scenario_id: String,
    pub error: String,
}

/// Coordinates of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub dataset: String,
    pub epsilon: f64,
    pub tau0: Option<f64>,
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub n: Option<usize>,
    pub seed: u64,
}

impl Scenario {
    pub fn id(&self) -> String {
        let mut s = format!("{}/eps={}", self.dataset, self.epsilon);
        if let Some(t) = self.tau0 {
            let _ = write!(s, "/tau0={t}");
        }
        if let Some(t) = self.tau {
            let _ = write!(s, "/tau={t}");
        }
        if let Some(a) = self.alpha {
            let _ = write!(s, "/alpha={a}");
        }
        if let Some(n) = self.n {
            let _ = write!(s, "/n={n}");
        }
        let _ = write!(s, "/seed={}", self.seed);
        s
    }
}

/// Where a multiclass dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Csv {
        name: String,
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
    },
    Blobs {
        name: String,
        k: usize,
        p: usize,
        n: usize,
        separation: f64,
        seed: u64,
    },
}

fn default_label_column() -> String {
    "label".into()
}

impl DatasetSpec {
    pub fn name(&self) -> &str {
        match self {
            DatasetSpec::Csv { name, .. } | DatasetSpec::Blobs { name, .. } => name,
        }
    }

    pub fn load(&self) -> Result<MulticlassDataset> {
        match self {
            DatasetSpec::Csv { path, label_column, .. } => load_multiclass_csv(path, label_column),
            DatasetSpec::Blobs { k, p, n, separation, seed, .. } => {
                gaussian_blobs(*k, *p, *n, *separation, SeedStream::new(*seed).child_str("blobs"))
            }
        }
    }
}

/// Bounds that the evaluation and coverage studies can compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundKind {
    #[serde(rename = "cIPS-EB")]
    CipsEb,
    #[serde(rename = "IX")]
    Ix,
    #[serde(rename = "cIPS-L=1")]
    CipsL1,
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "sub-Gaussian")]
    SubGaussian,
}

impl BoundKind {
    pub const TABLE: [BoundKind; 4] = [BoundKind::CipsEb, BoundKind::Ix, BoundKind::CipsL1, BoundKind::Ls];
    pub const ALL: [BoundKind; 5] = [
        BoundKind::CipsEb,
        BoundKind::Ix,
        BoundKind::CipsL1,
        BoundKind::Ls,
        BoundKind::SubGaussian,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BoundKind::CipsEb => "cIPS-EB",
            BoundKind::Ix => "IX",
            BoundKind::CipsL1 => "cIPS-L=1",
            BoundKind::Ls => "LS",
            BoundKind::SubGaussian => "sub-Gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "cips-eb" | "eb" => BoundKind::CipsEb,
            "ix" => BoundKind::Ix,
            "cips-l=1" | "cips-l1" | "l1" => BoundKind::CipsL1,
            "ls" => BoundKind::Ls,
            "sub-gaussian" | "subgaussian" => BoundKind::SubGaussian,
            _ => return Err(Error::param(format!("unknown bound {s:?}"))),
        })
    }

    /// `(lower, upper)` at `λ = 1/√n` (and `M = √n` for clipping). Only the
    /// sub-Gaussian interval has a lower end; it uses `s_lambda`, or the
    /// empirical plug-in when `None`.
    pub fn interval(&self, scored: &ScoredData, delta: f64, s_lambda: Option<f64>) -> Result<(f64, f64)> {
        let lambda = 1.0 / (scored.len() as f64).sqrt();
        let row = self.evaluate(scored, lambda, delta, s_lambda)?;
        Ok((row.lower.unwrap_or(f64::NEG_INFINITY), row.upper))
    }

    /// The bound at an explicit `λ`; clipping uses `M = 1/λ`.
    pub fn evaluate(&self, scored: &ScoredData, lambda: f64, delta: f64, s_lambda: Option<f64>) -> Result<BoundRow> {
        let one_sided = |r: crate::bounds::BoundReport| (r.estimate, None, r.upper);
        let (estimate, lower, upper) = match self {
            BoundKind::CipsEb => one_sided(empirical_bernstein_bound_scored(scored, 1.0 / lambda, delta)?),
            BoundKind::Ix => one_sided(ix_bound_scored(scored, lambda, delta)?),
            BoundKind::CipsL1 => one_sided(second_moment_bound_scored(scored, lambda, delta)?),
            BoundKind::Ls => one_sided(ls_bound_scored(scored, lambda, delta)?),
            BoundKind::SubGaussian => {
                let s = s_lambda.unwrap_or_else(|| empirical_s_lambda(scored, lambda));
                let iv = subgaussian_interval_scored(scored, lambda, delta, s)?;
                (iv.estimate, Some(iv.lower), iv.upper)
            }
        };
        Ok(BoundRow {
            bound: self.name().to_string(),
            lambda,
            delta,
            n: scored.len(),
            estimate,
            lower,
            upper,
        })
    }
}

/// One evaluated bound, as written by the `evaluate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub bound: String,
    pub lambda: f64,
    pub delta: f64,
    pub n: usize,
    pub estimate: f64,
    pub lower: Option<f64>,
    pub upper: f64,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

/// Mean, stderr, median and count of `metric` grouped by `key`.
fn aggregate<K: Fn(&MetricRow, &Scenario) -> String>(
    rows: &[(Scenario, MetricRow)],
    metric: &str,
    key: K,
) -> Value {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (sc, r) in rows {
        if r.metric == metric && r.value.is_finite() {
            groups.entry(key(r, sc)).or_default().push(r.value);
        }
    }
    let mut out = serde_json::Map::new();
    for (k, v) in groups {
        let (m, se) = mean_stderr(&v);
        out.insert(
            k,
            json!({ "mean": finite_or_null(m), "stderr": finite_or_null(se), "median": finite_or_null(median(&v)), "count": v.len() }),
        );
    }
    Value::Object(out)
}

/// Rows, failures and a JSON summary of one study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub study: String,
    pub rows: Vec<MetricRow>,
    pub failures: Vec<CellFailure>,
    pub summary: Value,
}

impl StudyReport {
    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }

    /// CSV with the fixed column order; floats printed round-trip exact.
    pub fn metrics_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scenario_id", "dataset", "method", "metric", "value", "stderr"])?;
        for r in &self.rows {
            w.write_record([
                r.scenario_id.as_str(),
                r.dataset.as_str(),
                r.method.as_str(),
                r.metric.as_str(),
                &format!("{:?}", r.value),
                &r.stderr.map(|s| format!("{s:?}")).unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::param(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn summary_json(&self) -> Result<String> {
        let doc = json!({
            "study": self.study,
            "cells_failed": self.failures.len(),
            "failures": self.failures,
            "summary": self.summary,
        });
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    /// Writes `metrics.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("metrics.csv");
        std::fs::write(&csv_path, self.metrics_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let json_path = dir.join("summary.json");
        std::fs::write(&json_path, self.summary_json()?).map_err(|e| Error::io(&json_path, e))?;
        Ok(())
    }
}

type CellOutput = std::result::Result<Vec<(Scenario, MetricRow)>, CellFailure>;

fn run_cells<F>(cells: &[Scenario], f: F) -> (Vec<(Scenario, MetricRow)>, Vec<CellFailure>)
where
    F: Fn(&Scenario) -> Result<Vec<MetricRow>> + Sync,
{
    let results: Vec<CellOutput> = cells
        .par_iter()
        .map(|sc| match f(sc) {
            Ok(rows) => Ok(rows.into_iter().map(|r| (sc.clone(), r)).collect()),
            Err(e) => Err(CellFailure {
                scenario_id: sc.id(),
                error: e.to_string(),
            }),
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(v) => rows.extend(v),
            Err(e) => failures.push(e),
        }
    }
    (rows, failures)
}

/// Loads every dataset once; a load failure fails each of its cells.
fn load_all(specs: &[DatasetSpec]) -> BTreeMap<String, std::result::Result<Arc<MulticlassDataset>, String>> {
    specs
        .iter()
        .map(|s| (s.name().to_string(), s.load().map(Arc::new).map_err(|e| e.to_string())))
        .collect()
}

fn get_dataset(
    loaded: &BTreeMap<String, std::result::Result<Arc<MulticlassDataset>, String>>,
    name: &str,
) -> Result<Arc<MulticlassDataset>> {
    match loaded.get(name) {
        Some(Ok(d)) => Ok(d.clone()),
        Some(Err(e)) => Err(Error::param(format!("dataset {name}: {e}"))),
        None => Err(Error::param(format!("unknown dataset {name}"))),
    }
}

fn check_unique_names(specs: &[DatasetSpec]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for s in specs {
        if !seen.insert(s.name()) {
            return Err(Error::param(format!("dataset name {:?} used twice", s.name())));
        }
    }
    if specs.is_empty() {
        return Err(Error::param("no datasets configured"));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::param(format!("delta must lie in (0, 1], got {delta}")));
    }
    Ok(())
}

/// Evaluation study: a faulty behavior policy logs data, an ideal target is
/// bounded, and each bound's relative radius is reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TightnessMatrix {
    pub datasets: Vec<DatasetSpec>,
    pub epsilons: Vec<f64>,
    pub tau0s: Vec<f64>,
    pub taus: Vec<f64>,
    /// `None` logs one record per dataset row; `Some(n)` samples `n` contexts
    /// from the dataset with replacement.
    pub sample_sizes: Vec<Option<usize>>,
    pub seeds: Vec<u64>,
    pub bounds: Vec<BoundKind>,
    pub delta: f64,
    pub seed: u64,
}

impl TightnessMatrix {
    pub fn validate(&self) -> Result<()> {
        check_unique_names(&self.datasets)?;
        check_delta(self.delta)?;
        if self.bounds.is_empty() {
            return Err(Error::param("no bounds configured"));
        }
        for &e in &self.epsilons {
            if !(0.0..0.5).contains(&e) {
                return Err(Error::param(format!("epsilon must lie in [0, 0.5), got {e}")));
            }
        }
        if self.tau0s.iter().chain(&self.taus).any(|t| !(*t > 0.0)) {
            return Err(Error::param("temperatures must be positive"));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for d in &self.datasets {
            for &epsilon in &self.epsilons {
                for &tau0 in &self.tau0s {
                    for &tau in &self.taus {
                        for &n in &self.sample_sizes {
                            for &seed in &self.seeds {
                                out.push(Scenario {
                                    dataset: d.name().to_string(),
                                    epsilon,
                                    tau0: Some(tau0),
                                    tau: Some(tau),
                                    alpha: None,
                                    n,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn feedback_for(mc: &MulticlassDataset, env: &Environment, behavior: &dyn Policy, sc: &Scenario, stream: SeedStream) -> Result<LoggedDataset> {
    match sc.n {
        Some(n) => env.sample_dataset(behavior, n, &mut stream.rng()),
        None => bandit_feedback(mc, behavior, sc.epsilon, stream),
    }
}

pub fn run_tightness(matrix: &TightnessMatrix) -> Result<StudyReport> {
    matrix.validate()?;
    let loaded = load_all(&matrix.datasets);
    let root = SeedStream::new(matrix.seed);
    let cells = matrix.cells();
    let (rows, failures) = run_cells(&cells, |sc| {
        let mc = get_dataset(&loaded, &sc.dataset)?;
        let env = mc.environment(sc.epsilon)?;
        let behavior = faulty_policy(mc.k, sc.tau0.unwrap_or(1.0), &crate::datagen::default_faulty_set(mc.k), None)?;
        let target = ideal_policy(mc.k, sc.tau.unwrap_or(1.0))?;
        let data = feedback_for(&mc, &env, &behavior, sc, root.child_str(&sc.id()))?;
        let risk = true_risk(&target, &env)?;
        let scored = ScoredData::new(&data, &target)?;
        let mut out = vec![MetricRow::new(sc, "oracle", "true_risk", risk)];
        for b in &matrix.bounds {
            let (_, upper) = b.interval(&scored, matrix.delta, None)?;
            out.push(MetricRow::new(sc, b.name(), "bound_value", upper));
            out.push(MetricRow::new(sc, b.name(), "relative_radius", relative_radius(upper, risk)?));
        }
        Ok(out)
    });
    let summary = json!({
        "by_dataset": aggregate(&rows, "relative_radius", |r, _| format!("{}|{}", r.dataset, r.method)),
        "by_n": aggregate(&rows, "relative_radius", |r, s| format!("{}|n={}|{}", r.dataset, s.n.map_or("all".into(), |n| n.to_string()), r.method)),
        "by_tau": aggregate(&rows, "relative_radius", |r, s| format!("tau={}|{}", s.tau.unwrap_or(f64::NAN), r.method)),
        "by_method": aggregate(&rows, "relative_radius", |r, _| r.method.clone()),
    });
    Ok(StudyReport {
        study: "tightness".into(),
        rows: rows.into_iter().map(|(_, r)| r).collect(),
        failures,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub bound: String,
    pub covered: usize,
    pub replications: usize,
    pub rate: f64,
    pub stderr: f64,
}

/// Fraction of `replications` fresh datasets of size `n` for which each
/// bound covers the exact risk of `target`. Sub-Gaussian coverage means the
/// risk lies inside the two-sided interval (with the exact `S_λ`).
#[allow(clippy::too_many_arguments)]
pub fn run_coverage(
    env: &Environment,
    target: &dyn Policy,
    behavior: &dyn Policy,
    bounds: &[BoundKind],
    n: usize,
    replications: usize,
    delta: f64,
    stream: SeedStream,
) -> Result<Vec<CoverageResult>> {
    check_delta(delta)?;
    if replications == 0 || n < 2 {
        return Err(Error::param("coverage needs replications >= 1 and n >= 2"));
    }
    let risk = true_risk(target, env)?;
    let lambda = 1.0 / (n as f64).sqrt();
    let s_exact = if bounds.contains(&BoundKind::SubGaussian) {
        Some(s_lambda_oracle(target, behavior, env, lambda)?)
    } else {
        None
    };
    let hits: Vec<Vec<bool>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let data = env.sample_dataset(behavior, n, &mut stream.child(rep as u64).rng())?;
            let scored = ScoredData::new(&data, target)?;
            bounds
                .iter()
                .map(|b| {
                    let (lo, up) = b.interval(&scored, delta, s_exact)?;
                    Ok(lo <= risk && risk <= up)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(bounds
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let covered = hits.iter().filter(|h| h[j]).count();
            let rate = covered as f64 / replications as f64;
            CoverageResult {
                bound: b.name().into(),
                covered,
                replications,
                rate,
                stderr: (rate * (1.0 - rate) / replications as f64).sqrt(),
            }
        })
        .collect())
}

/// A finite labeled environment for coverage runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageConfig {
    pub k: usize,
    pub contexts: usize,
    pub epsilon: f64,
    pub tau0: f64,
    pub tau: f64,
    pub n: usize,
    pub replications: usize,
    pub delta: f64,
    pub bounds: Vec<BoundKind>,
    pub seed: u64,
}

impl CoverageConfig {
    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        if self.k < 2 || self.contexts == 0 || self.n < 2 || self.replications == 0 {
            return Err(Error::param("coverage needs K >= 2, contexts >= 1, n >= 2 and replications >= 1"));
        }
        if self.bounds.is_empty() {
            return Err(Error::param("no bounds configured"));
        }
        if !(0.0..0.5).contains(&self.epsilon) || !(self.tau0 > 0.0 && self.tau > 0.0) {
            return Err(Error::param("invalid epsilon or temperature"));
        }
        Ok(())
    }

    /// Environment, faulty behavior and ideal target.
    pub fn build(&self) -> Result<(Environment, Arc<dyn Policy>, Arc<dyn Policy>)> {
        let mc = gaussian_blobs(self.k, 2, self.contexts, 1.0, SeedStream::new(self.seed).child_str("contexts"))?;
        let env = mc.environment(self.epsilon)?;
        let behavior: Arc<dyn Policy> = Arc::new(faulty_policy(self.k, self.tau0, &crate::datagen::default_faulty_set(self.k), None)?);
        let target: Arc<dyn Policy> = Arc::new(ideal_policy(self.k, self.tau)?);
        Ok((env, behavior, target))
    }
}

pub fn run_coverage_study(cfg: &CoverageConfig) -> Result<StudyReport> {
    let (env, behavior, target) = cfg.build()?;
    let results = run_coverage(
        &env,
        target.as_ref(),
        behavior.as_ref(),
        &cfg.bounds,
        cfg.n,
        cfg.replications,
        cfg.delta,
        SeedStream::new(cfg.seed).child_str("replications"),
    )?;
    let sc = Scenario {
        dataset: format!("toy-K{}", cfg.k),
        epsilon: cfg.epsilon,
        tau0: Some(cfg.tau0),
        tau: Some(cfg.tau),
        alpha: None,
        n: Some(cfg.n),
        seed: cfg.seed,
    };
    let rows = results
        .iter()
        .map(|r| MetricRow {
            stderr: Some(r.stderr),
            ..MetricRow::new(&sc, &r.bound, "coverage_rate", r.rate)
        })
        .collect();
    let summary: BTreeMap<&str, Value> = results
        .iter()
        .map(|r| (r.bound.as_str(), json!({ "rate": r.rate, "stderr": r.stderr, "covered": r.covered, "replications": r.replications })))
        .collect();
    Ok(StudyReport {
        study: "coverage".into(),
        rows,
        failures: Vec::new(),
        summary: json!({ "delta": cfg.delta, "target": 1.0 - cfg.delta, "bounds": summary }),
    })
}

/// Selection study: choose among `{π_0, ideal, θ-IPS, θ-SN}` from logged data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionMatrix {
    pub datasets: Vec<DatasetSpec>,
    pub seeds: Vec<u64>,
    pub epsilon: f64,
    /// Behavior (faulty) temperature.
    pub tau0: f64,
    /// Temperature of the ideal and learned candidates.
    pub tau: f64,
    /// Fractions of (policy-training feedback, evaluation feedback, test).
    pub fractions: [f64; 3],
    pub methods: Vec<SelectionMethod>,
    pub lambda_rule: LambdaRule,
    pub delta: f64,
    pub seed: u64,
    /// Candidate-set override; `None` means all four.
    pub candidates: Option<Vec<String>>,
}

pub const BEHAVIOR_NAME: &str = "pi0";

impl SelectionMatrix {
    pub fn validate(&self) -> Result<()> {
        check_unique_names(&self.datasets)?;
        check_delta(self.delta)?;
        if self.methods.is_empty() {
            return Err(Error::param("no selection methods configured"));
        }
        if !(0.0..0.5).contains(&self.epsilon) || !(self.tau0 > 0.0 && self.tau > 0.0) {
            return Err(Error::param("invalid epsilon or temperature"));
        }
        if let Some(c) = &self.candidates {
            for name in c {
                if !["pi0", "ideal", "theta_ips", "theta_sn"].contains(&name.as_str()) {
                    return Err(Error::param(format!("unknown candidate {name:?}")));
                }
            }
            if !c.iter().any(|n| n == BEHAVIOR_NAME) {
                return Err(Error::param("candidate set must include pi0"));
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Scenario> {
        self.datasets
            .iter()
            .flat_map(|d| {
                self.seeds.iter().map(move |&seed| Scenario {
                    dataset: d.name().to_string(),
                    epsilon: self.epsilon,
                    tau0: Some(self.tau0),
                    tau: Some(self.tau),
                    alpha: None,
                    n: None,
                    seed,
                })
            })
            .collect()
    }
}

fn outcome_code(o: Outcome) -> f64 {
    match o {
        Outcome::Worse => 0.0,
        Outcome::Better => 1.0,
        Outcome::Best => 2.0,
    }
}

pub fn run_selection_study(matrix: &SelectionMatrix) -> Result<StudyReport> {
    matrix.validate()?;
    let loaded = load_all(&matrix.datasets);
    let root = SeedStream::new(matrix.seed);
    let cells = matrix.cells();
    let (rows, failures) = run_cells(&cells, |sc| {
        let mc = get_dataset(&loaded, &sc.dataset)?;
        let stream = root.child_str(&sc.id());
        let parts = split(&mc, &matrix.fractions, stream.child_str("split"))?;
        let (train, eval, test) = (&parts[0], &parts[1], &parts[2]);
        let pi0 = faulty_policy(mc.k, matrix.tau0, &crate::datagen::default_faulty_set(mc.k), None)?;
        let want = |n: &str| matrix.candidates.as_ref().is_none_or(|c| c.iter().any(|x| x == n));
        let mut pool: Vec<(String, Arc<dyn Policy>)> = vec![(BEHAVIOR_NAME.into(), Arc::new(pi0.clone()))];
        if want("ideal") {
            pool.push(("ideal".into(), Arc::new(ideal_policy(mc.k, matrix.tau)?)));
        }
        if want("theta_ips") || want("theta_sn") {
            let train_data = bandit_feedback(train, &pi0, matrix.epsilon, stream.child_str("train"))?;
            if want("theta_ips") {
                let (p, _) = learned_softmax_policy(&train_data, PointObjective::Ips, matrix.tau, FitConfig::off_policy())?;
                pool.push(("theta_ips".into(), Arc::new(p)));
            }
            if want("theta_sn") {
                let (p, _) = learned_softmax_policy(&train_data, PointObjective::Sn, matrix.tau, FitConfig::off_policy())?;
                pool.push(("theta_sn".into(), Arc::new(p)));
            }
        }
        let candidates = CandidateSet::new(pool)?;
        let eval_data = bandit_feedback(eval, &pi0, matrix.epsilon, stream.child_str("eval"))?;
        let env = test.environment(matrix.epsilon)?;
        let risks = candidate_risks(&candidates, &env)?;
        let best = risks.values().copied().fold(f64::INFINITY, f64::min);
        let mut out: Vec<MetricRow> = risks
            .iter()
            .map(|(name, r)| MetricRow::new(sc, &format!("candidate:{name}"), "true_risk", *r))
            .collect();
        for &m in &matrix.methods {
            let res = select_with(&eval_data, &candidates, m, matrix.lambda_rule, matrix.delta)?;
            let cls = classify_by_risks(&res.chosen, &risks, BEHAVIOR_NAME)?;
            out.push(MetricRow::new(sc, m.name(), "outcome", outcome_code(cls.outcome)));
            out.push(MetricRow::new(sc, m.name(), "tied_with_behavior", f64::from(u8::from(cls.tied_with_behavior))));
            out.push(MetricRow::new(sc, m.name(), "suboptimality", risks[&res.chosen] - best));
        }
        Ok(out)
    });
    let summary = selection_summary(&rows, &matrix.methods);
    Ok(StudyReport {
        study: "selection".into(),
        rows: rows.into_iter().map(|(_, r)| r).collect(),
        failures,
        summary,
    })
}

/// Outcome histograms per method and per (dataset, method).
fn selection_summary(rows: &[(Scenario, MetricRow)], methods: &[SelectionMethod]) -> Value {
    let mut per_method: BTreeMap<String, [usize; 4]> = methods.iter().map(|m| (m.name().to_string(), [0; 4])).collect();
    let mut per_dataset: BTreeMap<String, BTreeMap<String, [usize; 4]>> = BTreeMap::new();
    for (_, r) in rows {
        let slot = match r.metric.as_str() {
            "outcome" => r.value as usize,
            "tied_with_behavior" if r.value > 0.0 => 3,
            _ => continue,
        };
        per_method.entry(r.method.clone()).or_default()[slot] += 1;
        per_dataset
            .entry(r.dataset.clone())
            .or_default()
            .entry(r.method.clone())
            .or_default()[slot] += 1;
    }
    let hist = |c: &[usize; 4]| json!({ "Worse": c[0], "Better": c[1], "Best": c[2], "ties_with_behavior": c[3] });
    json!({
        "by_method": per_method.iter().map(|(k, v)| (k.clone(), hist(v))).collect::<serde_json::Map<_, _>>(),
        "by_dataset": per_dataset.iter().map(|(d, m)| (d.clone(), Value::Object(m.iter().map(|(k, v)| (k.clone(), hist(v))).collect()))).collect::<serde_json::Map<_, _>>(),
        "suboptimality": aggregate(rows, "suboptimality", |r, _| r.method.clone()),
    })
}

/// Learning study: minimize each PAC-Bayes bound from a prior fitted on a
/// small labeled split, then compare guaranteed and true risks with `π_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningMatrix {
    pub datasets: Vec<DatasetSpec>,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<PacMethod>,
    pub epsilon: f64,
    /// Fractions of (prior fit, logged feedback, test).
    pub fractions: [f64; 3],
    pub delta: f64,
    pub grid_size: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub mc_samples: usize,
    pub prior_sigma: f64,
    pub seed: u64,
}

impl LearningMatrix {
    pub fn validate(&self) -> Result<()> {
        check_unique_names(&self.datasets)?;
        check_delta(self.delta)?;
        if self.methods.is_empty() {
            return Err(Error::param("no learning methods configured"));
        }
        if !(self.prior_sigma > 0.0) {
            return Err(Error::param("prior sigma must be positive"));
        }
        if self.alphas.iter().any(|a| !a.is_finite()) {
            return Err(Error::param("alphas must be finite"));
        }
        log_spaced_grid(self.grid_size, self.grid_min, self.grid_max)?;
        Ok(())
    }

    pub fn cells(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for d in &self.datasets {
            for &alpha in &self.alphas {
                for &seed in &self.seeds {
                    out.push(Scenario {
                        dataset: d.name().to_string(),
                        epsilon: self.epsilon,
                        tau0: None,
                        tau: None,
                        alpha: Some(alpha),
                        n: None,
                        seed,
                    });
                }
            }
        }
        out
    }

    fn learn_config(&self, prior: GaussianPosterior, method: PacMethod, seed: u64) -> Result<LearnConfig> {
        let mut cfg = LearnConfig::new(prior);
        cfg.method = method;
        cfg.delta = self.delta;
        cfg.lambda_grid = log_spaced_grid(self.grid_size, self.grid_min, self.grid_max)?;
        cfg.learning_rate = self.learning_rate;
        cfg.epochs = self.epochs;
        cfg.batch_size = self.batch_size;
        cfg.mc_samples = self.mc_samples;
        cfg.seed = seed;
        Ok(cfg)
    }
}

/// Per-cell learning result.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCell {
    pub behavior_risk: f64,
    pub methods: Vec<(PacMethod, f64, f64)>,
}

/// Runs one learning cell: returns `R(π_0)` and per method the guaranteed
/// and true risk of the learned policy.
pub fn learning_cell(matrix: &LearningMatrix, mc: &MulticlassDataset, sc: &Scenario, stream: SeedStream) -> Result<LearningCell> {
    let mc = mc.clone().with_bias();
    let parts = split(&mc, &matrix.fractions, stream.child_str("split"))?;
    let (labeled, logged_rows, test) = (&parts[0], &parts[1], &parts[2]);
    let sup = fit_supervised(labeled, FitConfig::supervised(), stream.child_str("supervised"))?;
    let prior = GaussianPosterior::from_softmax(&sup, sc.alpha.unwrap_or(1.0), matrix.prior_sigma)?;
    let behavior = LgpPolicy::quadrature(prior.clone())?;
    let data = bandit_feedback(logged_rows, &behavior, matrix.epsilon, stream.child_str("feedback"))?;
    let env = test.environment(matrix.epsilon)?;
    let behavior_risk = true_risk(&behavior, &env)?;
    let mut methods = Vec::new();
    for &m in &matrix.methods {
        let cfg = matrix.learn_config(prior.clone(), m, stream.child_str(m.name()).key())?;
        let out = learn(&data, &cfg)?;
        methods.push((m, out.guaranteed_risk, true_risk(&out.policy, &env)?));
    }
    Ok(LearningCell { behavior_risk, methods })
}

pub fn run_learning_study(matrix: &LearningMatrix) -> Result<StudyReport> {
    matrix.validate()?;
    let loaded = load_all(&matrix.datasets);
    let root = SeedStream::new(matrix.seed);
    let cells = matrix.cells();
    let (rows, failures) = run_cells(&cells, |sc| {
        let mc = get_dataset(&loaded, &sc.dataset)?;
        let cell = learning_cell(matrix, &mc, sc, root.child_str(&sc.id()))?;
        let mut out = vec![MetricRow::new(sc, "pi0", "true_risk", cell.behavior_risk)];
        for (m, gr, r) in cell.methods {
            out.push(MetricRow::new(sc, m.name(), "guaranteed_risk", gr));
            out.push(MetricRow::new(sc, m.name(), "true_risk", r));
            out.push(MetricRow::new(sc, m.name(), "rI_U", relative_improvement(gr, cell.behavior_risk)?));
            out.push(MetricRow::new(sc, m.name(), "rI_R", relative_improvement(r, cell.behavior_risk)?));
        }
        Ok(out)
    });
    let summary = json!({
        "rI_U": aggregate(&rows, "rI_U", |r, _| format!("{}|{}", r.dataset, r.method)),
        "rI_R": aggregate(&rows, "rI_R", |r, _| format!("{}|{}", r.dataset, r.method)),
        "rI_U_by_alpha": aggregate(&rows, "rI_U", |r, s| format!("{}|alpha={}|{}", r.dataset, s.alpha.unwrap_or(f64::NAN), r.method)),
        "rI_R_by_alpha": aggregate(&rows, "rI_R", |r, s| format!("{}|alpha={}|{}", r.dataset, s.alpha.unwrap_or(f64::NAN), r.method)),
        "overall": {
            "rI_U": aggregate(&rows, "rI_U", |r, _| r.method.clone()),
            "rI_R": aggregate(&rows, "rI_R", |r, _| r.method.clone()),
        },
    });
    Ok(StudyReport {
        study: "learning".into(),
        rows: rows.into_iter().map(|(_, r)| r).collect(),
        failures,
        summary,
    })
}

/// A runnable study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case", deny_unknown_fields)]
pub enum StudySpec {
    Tightness(TightnessMatrix),
    Coverage(CoverageConfig),
    Selection(SelectionMatrix),
    Learning(LearningMatrix),
}

impl StudySpec {
    pub fn run(&self) -> Result<StudyReport> {
        match self {
            StudySpec::Tightness(m) => run_tightness(m),
            StudySpec::Coverage(c) => run_coverage_study(c),
            StudySpec::Selection(m) => run_selection_study(m),
            StudySpec::Learning(m) => run_learning_study(m),
        }
    }

    /// Checks the configuration without running any cell.
    pub fn validate(&self) -> Result<()> {
        match self {
            StudySpec::Tightness(m) => m.validate(),
            StudySpec::Coverage(c) => c.validate(),
            StudySpec::Selection(m) => m.validate(),
            StudySpec::Learning(m) => m.validate(),
        }
    }

    pub fn datasets(&self) -> &[DatasetSpec] {
        match self {
            StudySpec::Tightness(m) => &m.datasets,
            StudySpec::Coverage(_) => &[],
            StudySpec::Selection(m) => &m.datasets,
            StudySpec::Learning(m) => &m.datasets,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            StudySpec::Tightness(m) => m.seed = seed,
            StudySpec::Coverage(c) => c.seed = seed,
            StudySpec::Selection(m) => m.seed = seed,
            StudySpec::Learning(m) => m.seed = seed,
        }
    }

    pub fn set_delta(&mut self, delta: f64) {
        match self {
            StudySpec::Tightness(m) => m.delta = delta,
            StudySpec::Coverage(c) => c.delta = delta,
            StudySpec::Selection(m) => m.delta = delta,
            StudySpec::Learning(m) => m.delta = delta,
        }
    }
}

pub const PRESETS: [&str; 6] = [
    "tightness-desk",
    "tightness-grid",
    "coverage",
    "ops-desk",
    "ops-paper",
    "opl-desk",
];

/// Synthetic stand-in for an 18-class, 6-feature table.
pub fn kropt_like() -> DatasetSpec {
    DatasetSpec::Blobs {
        name: "kropt-like".into(),
        k: 18,
        p: 6,
        n: 4000,
        separation: 2.0,
        seed: 18,
    }
}

fn desk_blobs() -> Vec<DatasetSpec> {
    let mut out = Vec::new();
    for (k, p) in [(4, 8), (4, 32), (10, 8), (10, 32)] {
        out.push(DatasetSpec::Blobs {
            name: format!("blobs-K{k}-p{p}"),
            k,
            p,
            n: 2000,
            separation: 3.0,
            seed: (k * 100 + p) as u64,
        });
    }
    out
}

/// The bundled real datasets under `data_dir`.
pub fn bundled_datasets(data_dir: &Path) -> Vec<DatasetSpec> {
    ["iris", "wine", "breast_cancer", "digits"]
        .iter()
        .map(|name| DatasetSpec::Csv {
            name: (*name).to_string(),
            path: data_dir.join(format!("{name}.csv")),
            label_column: "label".into(),
        })
        .collect()
}

pub fn seeds(count: u64) -> Vec<u64> {
    (0..count).collect()
}

/// Named study configurations; `data_dir` holds the bundled CSVs.
pub fn preset(name: &str, data_dir: &Path) -> Result<StudySpec> {
    let pow2: Vec<Option<usize>> = (8..=13).map(|e| Some(1usize << e)).collect();
    Ok(match name {
        "tightness-desk" => StudySpec::Tightness(TightnessMatrix {
            datasets: std::iter::once(kropt_like()).chain(desk_blobs()).collect(),
            epsilons: vec![0.2],
            tau0s: vec![0.25],
            taus: vec![0.1],
            sample_sizes: pow2,
            seeds: seeds(10),
            bounds: BoundKind::TABLE.to_vec(),
            delta: 0.05,
            seed: 0,
        }),
        "tightness-grid" => StudySpec::Tightness(TightnessMatrix {
            datasets: bundled_datasets(data_dir),
            epsilons: vec![0.0, 0.1, 0.2],
            tau0s: vec![0.2, 0.25, 0.3],
            taus: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            sample_sizes: vec![None],
            seeds: seeds(1),
            bounds: BoundKind::TABLE.to_vec(),
            delta: 0.05,
            seed: 0,
        }),
        "coverage" => StudySpec::Coverage(CoverageConfig {
            k: 10,
            contexts: 200,
            epsilon: 0.2,
            tau0: 0.25,
            tau: 0.1,
            n: 1000,
            replications: 2000,
            delta: 0.05,
            bounds: BoundKind::ALL.to_vec(),
            seed: 0,
        }),
        "ops-desk" | "ops-paper" => StudySpec::Selection(SelectionMatrix {
            datasets: bundled_datasets(data_dir)
                .into_iter()
                .chain(std::iter::once(DatasetSpec::Blobs {
                    name: "blobs-K5-p10".into(),
                    k: 5,
                    p: 10,
                    n: 600,
                    separation: 1.5,
                    seed: 510,
                }))
                .collect(),
            seeds: seeds(10),
            epsilon: 0.2,
            tau0: 0.2,
            tau: 0.2,
            fractions: [0.14, 0.35, 0.3],
            methods: SelectionMethod::ALL.to_vec(),
            lambda_rule: if name == "ops-paper" { LambdaRule::InvSqrtN } else { LambdaRule::UnionBound },
            delta: 0.05,
            seed: 0,
            candidates: None,
        }),
        "opl-desk" => StudySpec::Learning(LearningMatrix {
            datasets: vec![
                DatasetSpec::Blobs {
                    name: "separable-K3-p5".into(),
                    k: 3,
                    p: 5,
                    n: 2000,
                    separation: 4.0,
                    seed: 35,
                },
                bundled_datasets(data_dir).swap_remove(0),
            ],
            alphas: vec![0.1, 0.3, 0.5, 0.7, 1.0],
            seeds: seeds(10),
            methods: PacMethod::ALL.to_vec(),
            epsilon: 0.0,
            fractions: [0.1, 0.6, 0.3],
            delta: 0.05,
            grid_size: 100,
            grid_min: 1e-4,
            grid_max: 1.0,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: Some(32),
            mc_samples: 32,
            prior_sigma: 1.0,
            seed: 0,
        }),
        _ => {
            return Err(Error::param(format!(
                "unknown preset {name:?}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn radius_examples() {
        assert_eq!(relative_radius(-0.3, -0.3).unwrap(), 0.0);
        assert_abs_diff_eq!(relative_radius(-0.5, -1.0).unwrap(), 0.5);
        assert!(matches!(relative_radius(-0.5, 0.0), Err(Error::UndefinedRadius)));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    fn tiny_blobs(name: &str) -> DatasetSpec {
        DatasetSpec::Blobs {
            name: name.into(),
            k: 3,
            p: 2,
            n: 90,
            separation: 3.0,
            seed: 1,
        }
    }

    #[test]
    fn single_cell_tightness_with_unit_delta() {
        let m = TightnessMatrix {
            datasets: vec![tiny_blobs("t")],
            epsilons: vec![0.0],
            tau0s: vec![0.3],
            taus: vec![0.1],
            sample_sizes: vec![None],
            seeds: vec![0],
            bounds: BoundKind::TABLE.to_vec(),
            delta: 1.0,
            seed: 0,
        };
        let rep = run_tightness(&m).unwrap();
        assert!(rep.failures.is_empty());
        let radii: Vec<f64> = rep.rows.iter().filter(|r| r.metric == "relative_radius").map(|r| r.value).collect();
        assert_eq!(radii.len(), 4);
        assert!(radii.iter().all(|r| r.is_finite() && *r >= 0.0));
    }

    #[test]
    fn failed_cells_do_not_abort() {
        let m = TightnessMatrix {
            datasets: vec![
                tiny_blobs("ok"),
                DatasetSpec::Csv {
                    name: "missing".into(),
                    path: "/nonexistent.csv".into(),
                    label_column: "label".into(),
                },
            ],
            epsilons: vec![0.1],
            tau0s: vec![0.3],
            taus: vec![0.1],
            sample_sizes: vec![Some(64)],
            seeds: vec![0, 1],
            bounds: vec![BoundKind::Ls],
            delta: 0.05,
            seed: 0,
        };
        let rep = run_tightness(&m).unwrap();
        assert_eq!(rep.failures.len(), 2);
        assert!(rep.has_failures());
        assert_eq!(rep.rows.iter().filter(|r| r.metric == "relative_radius").count(), 2);
    }

    #[test]
    fn single_candidate_selection_is_always_best() {
        let m = SelectionMatrix {
            datasets: vec![tiny_blobs("s")],
            seeds: vec![0, 1, 2],
            epsilon: 0.2,
            tau0: 0.2,
            tau: 0.2,
            fractions: [0.2, 0.5, 0.3],
            methods: SelectionMethod::ALL.to_vec(),
            lambda_rule: LambdaRule::UnionBound,
            delta: 0.05,
            seed: 0,
            candidates: Some(vec!["pi0".into()]),
        };
        let rep = run_selection_study(&m).unwrap();
        assert!(rep.failures.is_empty(), "{:?}", rep.failures);
        for meth in SelectionMethod::ALL {
            assert_eq!(rep.summary["by_method"][meth.name()]["Best"], 3);
        }
    }

    #[test]
    fn csv_has_fixed_columns() {
        let rep = StudyReport {
            study: "x".into(),
            rows: vec![MetricRow {
                scenario_id: "a".into(),
                dataset: "d".into(),
                method: "LS".into(),
                metric: "relative_radius".into(),
                value: 0.1,
                stderr: None,
            }],
            failures: vec![],
            summary: json!({}),
        };
        assert_eq!(
            rep.metrics_csv().unwrap(),
            "scenario_id,dataset,method,metric,value,stderr\na,d,LS,relative_radius,0.1,\n"
        );
    }

    #[test]
    fn presets_parse_and_validate() {
        for name in PRESETS {
            let spec = preset(name, Path::new("data")).unwrap();
            let text = serde_json::to_string(&spec).unwrap();
            let back: StudySpec = serde_json::from_str(&text).unwrap();
            assert_eq!(back, spec);
        }
        assert!(preset("nope", Path::new("data")).is_err());
    }
}
