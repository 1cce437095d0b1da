//! Multiclass data, the multiclass-to-bandit conversion, and the policies
//! used to build evaluation and selection scenarios.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bandit::{
    reward_probability, ActionId, Context, Environment, LoggedDataset, LoggedRecord, Policy,
};
use crate::error::{Error, Result};
use crate::numeric::softmax_tempered;
use crate::optim::Adam;
use crate::policies::{SoftmaxLinear, TabularByLabel};
use crate::rng::SeedStream;

const STD_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub k: usize,
    pub p: usize,
}

impl MulticlassDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, k: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if features.len() != labels.len() {
            return Err(Error::param("features and labels differ in length"));
        }
        let p = features[0].len();
        for (row, (x, &y)) in features.iter().zip(&labels).enumerate() {
            if x.len() != p {
                return Err(Error::InvalidRecord {
                    row,
                    reason: format!("{} features, expected {p}", x.len()),
                });
            }
            if y >= k {
                return Err(Error::InvalidRecord {
                    row,
                    reason: format!("label {y} >= K = {k}"),
                });
            }
        }
        Ok(Self { features, labels, k, p })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contexts(&self) -> Vec<Context> {
        self.features
            .iter()
            .zip(&self.labels)
            .map(|(x, &y)| Context::labeled(x.clone(), y))
            .collect()
    }

    /// The known-cost environment over these rows.
    pub fn environment(&self, epsilon: f64) -> Result<Environment> {
        Environment::new(self.contexts(), self.k, epsilon)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let features = indices.iter().map(|&i| self.features[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(features, labels, self.k)
    }

    /// Zero mean, unit variance per column; constant columns become zeros.
    pub fn standardize(&mut self) {
        let n = self.len() as f64;
        for j in 0..self.p {
            let mu = self.features.iter().map(|x| x[j]).sum::<f64>() / n;
            let var = self.features.iter().map(|x| (x[j] - mu).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt().max(STD_GUARD);
            for x in &mut self.features {
                x[j] = (x[j] - mu) / sd;
            }
        }
    }

    /// Appends a constant feature.
    pub fn with_bias(mut self) -> Self {
        for x in &mut self.features {
            x.push(1.0);
        }
        self.p += 1;
        self
    }
}

/// Reads a headered CSV; every column except `label_column` is a numeric
/// feature. Features are standardized and labels reindexed to `[0, K)` in
/// sorted order (numeric when all labels parse as numbers).
pub fn load_multiclass_csv(path: &Path, label_column: &str) -> Result<MulticlassDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                row: 0,
                reason: format!("{other:?}"),
            },
        })?;
    let headers = reader.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingColumn(label_column.to_string()))?;
    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row,
            reason: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                row,
                reason: format!("{} fields, expected {}", rec.len(), headers.len()),
            });
        }
        let mut x = Vec::with_capacity(headers.len() - 1);
        for (j, field) in rec.iter().enumerate() {
            if j == label_idx {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                reason: format!("column {:?} is not numeric: {field:?}", &headers[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    reason: format!("column {:?} is not finite", &headers[j]),
                });
            }
            x.push(v);
        }
        features.push(x);
        raw_labels.push(rec[label_idx].to_string());
    }
    if features.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (labels, k) = reindex_labels(&raw_labels);
    let mut mc = MulticlassDataset::new(features, labels, k)?;
    mc.standardize();
    Ok(mc)
}

fn reindex_labels(raw: &[String]) -> (Vec<usize>, usize) {
    let numeric: Option<Vec<f64>> = raw.iter().map(|s| s.parse::<f64>().ok()).collect();
    let order: BTreeMap<String, usize> = match numeric {
        Some(vals) => {
            let mut uniq: Vec<(f64, &String)> = vals.into_iter().zip(raw).collect();
            uniq.sort_by(|a, b| a.0.total_cmp(&b.0));
            uniq.dedup_by(|a, b| a.1 == b.1);
            uniq.into_iter()
                .enumerate()
                .map(|(i, (_, s))| (s.clone(), i))
                .collect()
        }
        None => raw
            .iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect(),
    };
    let k = order.len();
    (raw.iter().map(|s| order[s]).collect(), k)
}

/// Disjoint shuffled splits of sizes `⌊f_i·N⌋`.
pub fn split(mc: &MulticlassDataset, fractions: &[f64], stream: SeedStream) -> Result<Vec<MulticlassDataset>> {
    if fractions.iter().any(|f| !(*f >= 0.0)) {
        return Err(Error::param("split fractions must be non-negative"));
    }
    let total: f64 = fractions.iter().sum();
    if total > 1.0 + 1e-9 {
        return Err(Error::param(format!("split fractions sum to {total} > 1")));
    }
    let n = mc.len();
    let sizes: Vec<usize> = fractions
        .iter()
        .map(|f| ((f * n as f64) + 1e-9).floor() as usize)
        .collect();
    if let Some(index) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptySplit { index });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream.rng());
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        out.push(mc.subset(&order[start..start + s])?);
        start += s;
    }
    Ok(out)
}

/// One logged record per row: `a ∼ π_0(·|x)`, reward `∼ Bernoulli(ε + 1[a = y](1 − 2ε))`.
pub fn bandit_feedback(
    mc: &MulticlassDataset,
    behavior: &dyn Policy,
    epsilon: f64,
    stream: SeedStream,
) -> Result<LoggedDataset> {
    if !(0.0..=0.5).contains(&epsilon) {
        return Err(Error::param(format!("epsilon must lie in [0, 0.5], got {epsilon}")));
    }
    let mut rng = stream.rng();
    let mut records = Vec::with_capacity(mc.len());
    for (x, &y) in mc.features.iter().zip(&mc.labels) {
        let ctx = Context::labeled(x.clone(), y);
        let probs = behavior.full_probs(&ctx)?;
        let a = crate::bandit::sample_index(&probs, &mut rng);
        let r = rng.random::<f64>() < reward_probability(epsilon, a == y);
        records.push(LoggedRecord {
            context: ctx,
            action: ActionId(a),
            cost: if r { -1.0 } else { 0.0 },
            propensity: probs[a],
        });
    }
    LoggedDataset::new(records, mc.k)
}

/// `π(a|x) ∝ exp(1[a = y]/τ)`.
pub fn ideal_policy(k: usize, tau: f64) -> Result<TabularByLabel> {
    TabularByLabel::peaked(&(0..k).collect::<Vec<_>>(), k, tau)
}

/// The first `⌈K/2⌉` labels.
pub fn default_faulty_set(k: usize) -> Vec<usize> {
    (0..k.div_ceil(2)).collect()
}

/// Like [`ideal_policy`], but labels in `faulty` peak on `shift[label]`
/// (default: `label + 1 mod K`).
pub fn faulty_policy(
    k: usize,
    tau: f64,
    faulty: &[usize],
    shift: Option<&BTreeMap<usize, usize>>,
) -> Result<TabularByLabel> {
    let mut peaks: Vec<usize> = (0..k).collect();
    for &label in faulty {
        if label >= k {
            return Err(Error::param(format!("faulty label {label} >= K = {k}")));
        }
        let target = match shift {
            Some(map) => *map
                .get(&label)
                .ok_or_else(|| Error::param(format!("shift map misses label {label}")))?,
            None => (label + 1) % k,
        };
        if target == label || target >= k {
            return Err(Error::param(format!("shift maps label {label} onto {target}")));
        }
        peaks[label] = target;
    }
    TabularByLabel::peaked(&peaks, k, tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointObjective {
    #[serde(rename = "IPS")]
    Ips,
    #[serde(rename = "SN")]
    Sn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
}

impl FitConfig {
    /// Policy fit on logged feedback.
    pub fn off_policy() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 50,
            l2: 0.0,
            batch_size: None,
        }
    }

    /// Supervised fit of a behavior model on labeled rows.
    pub fn supervised() -> Self {
        Self {
            learning_rate: 1e-1,
            epochs: 10,
            l2: 1e-4,
            batch_size: Some(32),
        }
    }
}

fn softmax_row(theta: &[f64], p: usize, x: &[f64], tau: f64) -> Vec<f64> {
    let scores: Vec<f64> = theta
        .chunks_exact(p)
        .map(|t| t.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect();
    softmax_tempered(&scores, tau)
}

/// Empirical risk of a softmax policy and its gradient.
fn point_risk_grad(data: &LoggedDataset, theta: &[f64], tau: f64, objective: PointObjective) -> (f64, Vec<f64>) {
    let k = data.action_count();
    let p = data.feature_dim();
    let mut num = 0.0;
    let mut den = 0.0;
    let mut g_num = vec![0.0; k * p];
    let mut g_den = vec![0.0; k * p];
    for r in data.records() {
        let x = &r.context.features;
        let probs = softmax_row(theta, p, x, tau);
        let a = r.action.0;
        let pa = probs[a];
        let wc = r.cost / r.propensity;
        let w = 1.0 / r.propensity;
        num += pa * wc;
        den += pa * w;
        // ∂π_a/∂θ_b = π_a (1[a = b] − π_b) x / τ
        for b in 0..k {
            let d = pa * (f64::from(u8::from(a == b)) - probs[b]) / tau;
            if d == 0.0 {
                continue;
            }
            for j in 0..p {
                g_num[b * p + j] += d * wc * x[j];
                g_den[b * p + j] += d * w * x[j];
            }
        }
    }
    match objective {
        PointObjective::Ips => {
            let n = data.len() as f64;
            (num / n, g_num.into_iter().map(|g| g / n).collect())
        }
        PointObjective::Sn => {
            let grad = g_num
                .iter()
                .zip(&g_den)
                .map(|(gn, gd)| (gn * den - num * gd) / (den * den))
                .collect();
            (num / den, grad)
        }
    }
}

/// Fits `π_θ(a|x) ∝ exp(xᵀθ_a/τ)` by minimizing the IPS or SN risk from a
/// zero start. Returns the policy and the risk before each epoch and at the end.
pub fn learned_softmax_policy(
    data: &LoggedDataset,
    objective: PointObjective,
    tau: f64,
    cfg: FitConfig,
) -> Result<(SoftmaxLinear, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = data.action_count();
    let p = data.feature_dim();
    let mut theta = vec![0.0; k * p];
    let mut opt = Adam::new(k * p, cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let (risk, grad) = point_risk_grad(data, &theta, tau, objective);
        if !risk.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        trace.push(risk);
        if epoch == cfg.epochs {
            break;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { epoch });
        }
        opt.step(&mut theta, &grad);
    }
    Ok((SoftmaxLinear::new(k, p, theta, tau)?, trace))
}

/// Multinomial logistic regression on labeled rows (temperature 1).
pub fn fit_supervised(mc: &MulticlassDataset, cfg: FitConfig, stream: SeedStream) -> Result<SoftmaxLinear> {
    let (k, p) = (mc.k, mc.p);
    let mut theta = vec![0.0; k * p];
    let mut opt = Adam::new(k * p, cfg.learning_rate);
    let mut rng = stream.rng();
    let mut order: Vec<usize> = (0..mc.len()).collect();
    let batch = cfg.batch_size.unwrap_or(mc.len()).max(1);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(batch) {
            let mut grad: Vec<f64> = theta.iter().map(|t| cfg.l2 * t).collect();
            let m = idx.len() as f64;
            for &i in idx {
                let x = &mc.features[i];
                let probs = softmax_row(&theta, p, x, 1.0);
                for b in 0..k {
                    let d = (probs[b] - f64::from(u8::from(b == mc.labels[i]))) / m;
                    for j in 0..p {
                        grad[b * p + j] += d * x[j];
                    }
                }
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient { epoch });
            }
            opt.step(&mut theta, &grad);
        }
    }
    SoftmaxLinear::new(k, p, theta, 1.0)
}

/// Gaussian class clusters: class means of norm `separation` in random
/// directions, unit-variance isotropic noise, uniform labels.
pub fn gaussian_blobs(k: usize, p: usize, n: usize, separation: f64, stream: SeedStream) -> Result<MulticlassDataset> {
    if k < 2 || p == 0 || n == 0 {
        return Err(Error::param(format!("blobs need K >= 2, p >= 1, n >= 1 (got {k}, {p}, {n})")));
    }
    let mut rng = stream.rng();
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(STD_GUARD);
            v.into_iter().map(|a| a * separation / norm).collect()
        })
        .collect();
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_range(0..k);
        let x = means[y]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + z
            })
            .collect();
        features.push(x);
        labels.push(y);
    }
    MulticlassDataset::new(features, labels, k)
}

/// Scenario knobs shared by the evaluation and selection studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub epsilon: f64,
    pub tau0: f64,
    pub tau: f64,
    /// `None` uses [`default_faulty_set`].
    pub faulty_set: Option<Vec<usize>>,
    pub seed: u64,
    pub fractions: Vec<f64>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.epsilon) {
            return Err(Error::param(format!("epsilon must lie in [0, 0.5), got {}", self.epsilon)));
        }
        if !(self.tau0 > 0.0 && self.tau > 0.0) {
            return Err(Error::param("temperatures must be positive"));
        }
        Ok(())
    }

    pub fn faulty(&self, k: usize) -> Vec<usize> {
        self.faulty_set.clone().unwrap_or_else(|| default_faulty_set(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::true_risk;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_and_standardizes() {
        let f = csv_file("a,b,label\n1,5,7\n2,5,3\n3,5,7\n");
        let mc = load_multiclass_csv(f.path(), "label").unwrap();
        assert_eq!((mc.len(), mc.k, mc.p), (3, 2, 2));
        assert_eq!(mc.labels, vec![1, 0, 1]);
        assert!(mc.features.iter().all(|x| x[1] == 0.0));
        let col: Vec<f64> = mc.features.iter().map(|x| x[0]).collect();
        assert_abs_diff_eq!(col.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(col.iter().map(|v| v * v).sum::<f64>() / 3.0, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn csv_errors_are_typed() {
        let f = csv_file("a,label\n1,0\nx,1\n");
        assert!(matches!(load_multiclass_csv(f.path(), "label"), Err(Error::Parse { row: 1, .. })));
        let f = csv_file("a,b\n1,0\n");
        assert!(matches!(load_multiclass_csv(f.path(), "label"), Err(Error::MissingColumn(_))));
        assert!(matches!(
            load_multiclass_csv(Path::new("/nonexistent/file.csv"), "label"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn splits() {
        let mc = MulticlassDataset::new((0..100).map(|i| vec![i as f64]).collect(), vec![0; 100], 2).unwrap();
        assert!(matches!(
            split(&mc, &[0.05, 0.95, 0.0], SeedStream::new(1)),
            Err(Error::EmptySplit { index: 2 })
        ));
        let s = split(&mc, &[0.7 * 0.2, 0.7 * 0.5, 0.3], SeedStream::new(1)).unwrap();
        assert_eq!(s.iter().map(|d| d.len()).collect::<Vec<_>>(), vec![14, 35, 30]);
        let again = split(&mc, &[0.7 * 0.2, 0.7 * 0.5, 0.3], SeedStream::new(1)).unwrap();
        assert_eq!(s, again);
        let mut seen: Vec<f64> = s.iter().flat_map(|d| d.features.iter().map(|x| x[0])).collect();
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        assert_eq!(seen.len(), 79);
    }

    #[test]
    fn ideal_policy_probabilities() {
        let pol = ideal_policy(2, 1.0).unwrap();
        let e = std::f64::consts::E;
        let probs = pol.full_probs(&Context::labeled(vec![0.0], 0)).unwrap();
        assert_abs_diff_eq!(probs[0], e / (e + 1.0), epsilon = 1e-15);
        let sharp = ideal_policy(5, 1e-3).unwrap();
        assert!(sharp.full_probs(&Context::labeled(vec![0.0], 3)).unwrap()[3] > 1.0 - 1e-6);
        let flat = ideal_policy(5, 1e3).unwrap();
        for p in flat.full_probs(&Context::labeled(vec![0.0], 3)).unwrap() {
            assert_abs_diff_eq!(p, 0.2, epsilon = 1e-3);
        }
    }

    #[test]
    fn faulty_policy_construction() {
        assert_eq!(faulty_policy(4, 0.3, &[], None).unwrap(), ideal_policy(4, 0.3).unwrap());
        let bad: BTreeMap<usize, usize> = [(1, 1)].into_iter().collect();
        assert!(faulty_policy(4, 0.3, &[1], Some(&bad)).is_err());
        let mc = MulticlassDataset::new((0..6).map(|i| vec![i as f64]).collect(), (0..6).collect(), 6).unwrap();
        let env = mc.environment(0.0).unwrap();
        let always_wrong = faulty_policy(6, 1e-3, &(0..6).collect::<Vec<_>>(), None).unwrap();
        assert_abs_diff_eq!(true_risk(&always_wrong, &env).unwrap(), 0.0, epsilon = 1e-12);
        let half = true_risk(&faulty_policy(6, 0.2, &default_faulty_set(6), None).unwrap(), &env).unwrap();
        let ideal = true_risk(&ideal_policy(6, 0.2).unwrap(), &env).unwrap();
        assert!(ideal < half && half < 0.0);
    }

    #[test]
    fn feedback_costs_follow_rewards() {
        let mc = MulticlassDataset::new((0..50).map(|i| vec![i as f64]).collect(), (0..50).map(|i| i % 3).collect(), 3).unwrap();
        let correct = TabularByLabel::deterministic(vec![0, 1, 2], 3).unwrap();
        let data = bandit_feedback(&mc, &correct, 0.0, SeedStream::new(2)).unwrap();
        assert!(data.records().iter().all(|r| r.cost == -1.0 && r.propensity == 1.0));
        let uniform = crate::policies::UniformPolicy::new(3);
        let data = bandit_feedback(&mc, &uniform, 0.2, SeedStream::new(2)).unwrap();
        for r in data.records() {
            assert_eq!(r.propensity, uniform.prob(&r.context, r.action).unwrap());
        }
    }

    fn separable_feedback() -> LoggedDataset {
        let mc = gaussian_blobs(3, 4, 600, 4.0, SeedStream::new(5)).unwrap();
        bandit_feedback(&mc, &crate::policies::UniformPolicy::new(3), 0.1, SeedStream::new(6)).unwrap()
    }

    #[test]
    fn zero_cost_fit_stays_uniform() {
        let mc = gaussian_blobs(3, 2, 40, 1.0, SeedStream::new(1)).unwrap();
        let data = bandit_feedback(&mc, &crate::policies::UniformPolicy::new(3), 0.0, SeedStream::new(1)).unwrap();
        let zeroed: Vec<LoggedRecord> = data.records().iter().cloned().map(|mut r| {
            r.cost = 0.0;
            r
        }).collect();
        let data = LoggedDataset::new(zeroed, 3).unwrap();
        let (pol, _) = learned_softmax_policy(&data, PointObjective::Ips, 1.0, FitConfig::off_policy()).unwrap();
        assert!(pol.weights.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn off_policy_fits_reduce_training_risk() {
        let data = separable_feedback();
        let (_, ips) = learned_softmax_policy(&data, PointObjective::Ips, 1.0, FitConfig::off_policy()).unwrap();
        for w in ips.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "IPS training risk increased: {w:?}");
        }
        let (_, sn) = learned_softmax_policy(&data, PointObjective::Sn, 1.0, FitConfig::off_policy()).unwrap();
        assert!(sn.last().unwrap() <= &sn[0]);
    }

    #[test]
    fn point_gradient_matches_finite_differences() {
        let data = separable_feedback();
        let theta: Vec<f64> = (0..12).map(|i| ((i * 5 % 7) as f64 - 3.0) * 0.1).collect();
        for obj in [PointObjective::Ips, PointObjective::Sn] {
            let (_, g) = point_risk_grad(&data, &theta, 0.7, obj);
            for j in 0..theta.len() {
                let h = 1e-6;
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let fd = (point_risk_grad(&data, &tp, 0.7, obj).0 - point_risk_grad(&data, &tm, 0.7, obj).0) / (2.0 * h);
                assert_abs_diff_eq!(g[j], fd, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn supervised_fit_beats_chance() {
        let mc = gaussian_blobs(3, 4, 300, 4.0, SeedStream::new(9)).unwrap();
        let pol = fit_supervised(&mc, FitConfig::supervised(), SeedStream::new(10)).unwrap();
        let hits = mc
            .contexts()
            .iter()
            .filter(|c| {
                let probs = pol.full_probs(c).unwrap();
                let best = (0..3).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
                best == c.label().unwrap()
            })
            .count();
        assert!(hits > 200, "{hits}/300");
    }
}
