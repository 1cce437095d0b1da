//! Core bandit types: contexts, logged records, the policy interface and the
//! known-label environment used to compute exact risks.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

/// Feature vector of one context, optionally tagged with its true label.
///
/// The label is oracle information: it is only read by label-based policies
/// (ideal/faulty) and by [`Environment`], never by estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub features: Arc<[f64]>,
    pub label: Option<usize>,
}

impl Context {
    pub fn new(features: Vec<f64>) -> Self {
        Self {
            features: features.into(),
            label: None,
        }
    }

    pub fn labeled(features: Vec<f64>, label: usize) -> Self {
        Self {
            features: features.into(),
            label: Some(label),
        }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn label(&self) -> Result<usize> {
        self.label.ok_or(Error::MissingLabel)
    }

    pub fn norm(&self) -> f64 {
        self.features.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionId(pub usize);

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One logged interaction `(x, a, c, π_0(a|x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRecord {
    pub context: Context,
    pub action: ActionId,
    /// Cost in `[-1, 0]` (negative reward).
    pub cost: f64,
    /// Behavior probability of `action`, in `(0, 1]`.
    pub propensity: f64,
}

impl LoggedRecord {
    pub fn validate(&self, row: usize, action_count: usize, dim: usize) -> Result<()> {
        let bad = |reason: String| Error::InvalidRecord { row, reason };
        if self.action.0 >= action_count {
            return Err(bad(format!(
                "action {} outside [0, {action_count})",
                self.action.0
            )));
        }
        if !(-1.0..=0.0).contains(&self.cost) {
            return Err(bad(format!("cost {} outside [-1, 0]", self.cost)));
        }
        if self.propensity == 0.0 {
            return Err(Error::ZeroPropensity);
        }
        if !(self.propensity > 0.0 && self.propensity <= 1.0) {
            return Err(bad(format!("propensity {} outside (0, 1]", self.propensity)));
        }
        if self.context.dim() != dim {
            return Err(bad(format!(
                "context has {} features, expected {dim}",
                self.context.dim()
            )));
        }
        if self.context.features.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite feature".into()));
        }
        if let Some(l) = self.context.label {
            if l >= action_count {
                return Err(bad(format!("label {l} outside [0, {action_count})")));
            }
        }
        Ok(())
    }
}

/// Immutable logged bandit feedback `D_n`.
#[derive(Debug, Clone)]
pub struct LoggedDataset {
    records: Arc<[LoggedRecord]>,
    action_count: usize,
    feature_dim: usize,
}

impl LoggedDataset {
    pub fn new(records: Vec<LoggedRecord>, action_count: usize) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyDataset)?;
        if action_count == 0 {
            return Err(Error::param("action count must be positive"));
        }
        let feature_dim = first.context.dim();
        for (row, r) in records.iter().enumerate() {
            r.validate(row, action_count, feature_dim)?;
        }
        Ok(Self {
            records: records.into(),
            action_count,
            feature_dim,
        })
    }

    pub fn records(&self) -> &[LoggedRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn has_labels(&self) -> bool {
        self.records.iter().all(|r| r.context.label.is_some())
    }

    /// Copy of this dataset restricted to the rows selected by `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(records, self.action_count)
    }
}

/// A stochastic policy `π(·|x)` over `K` actions.
pub trait Policy: Send + Sync + fmt::Debug {
    fn action_count(&self) -> usize;

    /// Full action distribution for `ctx`; length `K`, non-negative.
    fn full_probs(&self, ctx: &Context) -> Result<Vec<f64>>;

    fn prob(&self, ctx: &Context, action: ActionId) -> Result<f64> {
        let probs = self.full_probs(ctx)?;
        probs
            .get(action.0)
            .copied()
            .ok_or_else(|| Error::param(format!("action {action} out of range")))
    }

    /// Inverse-CDF draw from `full_probs`.
    fn sample(&self, ctx: &Context, rng: &mut dyn RngCore) -> Result<ActionId> {
        let probs = self.full_probs(ctx)?;
        Ok(ActionId(sample_index(&probs, rng)))
    }
}

impl<P: Policy + ?Sized> Policy for Arc<P> {
    fn action_count(&self) -> usize {
        (**self).action_count()
    }
    fn full_probs(&self, ctx: &Context) -> Result<Vec<f64>> {
        (**self).full_probs(ctx)
    }
    fn prob(&self, ctx: &Context, action: ActionId) -> Result<f64> {
        (**self).prob(ctx, action)
    }
    fn sample(&self, ctx: &Context, rng: &mut dyn RngCore) -> Result<ActionId> {
        (**self).sample(ctx, rng)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn action_count(&self) -> usize {
        (**self).action_count()
    }
    fn full_probs(&self, ctx: &Context) -> Result<Vec<f64>> {
        (**self).full_probs(ctx)
    }
    fn prob(&self, ctx: &Context, action: ActionId) -> Result<f64> {
        (**self).prob(ctx, action)
    }
    fn sample(&self, ctx: &Context, rng: &mut dyn RngCore) -> Result<ActionId> {
        (**self).sample(ctx, rng)
    }
}

/// Draws an index from an (approximately) normalized probability vector.
pub fn sample_index(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let total: f64 = probs.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave `u` just above the last partial sum.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// `π(a|x) / π_0(a|x)` for a logged record.
pub fn importance_weight(record: &LoggedRecord, policy: &dyn Policy) -> Result<f64> {
    if record.propensity <= 0.0 {
        return Err(Error::ZeroPropensity);
    }
    Ok(policy.prob(&record.context, record.action)? / record.propensity)
}

/// Target-policy probabilities at the logged actions, in record order.
pub fn target_probs(data: &LoggedDataset, policy: &dyn Policy) -> Result<Vec<f64>> {
    data.records()
        .iter()
        .map(|r| policy.prob(&r.context, r.action))
        .collect()
}

/// Known-label environment: uniform distribution over a finite context set,
/// Bernoulli rewards with mean `1 − ε` for the true label and `ε` otherwise.
#[derive(Debug, Clone)]
pub struct Environment {
    contexts: Arc<[Context]>,
    action_count: usize,
    epsilon: f64,
}

impl Environment {
    pub fn new(contexts: Vec<Context>, action_count: usize, epsilon: f64) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::EmptyEnvironment);
        }
        if !(0.0..=0.5).contains(&epsilon) {
            return Err(Error::param(format!("noise {epsilon} outside [0, 0.5]")));
        }
        for c in &contexts {
            let l = c.label()?;
            if l >= action_count {
                return Err(Error::param(format!("label {l} >= K = {action_count}")));
            }
        }
        Ok(Self {
            contexts: contexts.into(),
            action_count,
            epsilon,
        })
    }

    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Probability that playing `action` on a context with label `label`
    /// yields reward 1 (cost −1).
    pub fn reward_prob(&self, label: usize, action: usize) -> f64 {
        reward_probability(self.epsilon, label == action)
    }

    /// `E[c | x, a]`.
    pub fn expected_cost(&self, ctx: &Context, action: usize) -> Result<f64> {
        Ok(-self.reward_prob(ctx.label()?, action))
    }

    /// Draws `n` i.i.d. logged records: contexts uniformly from the
    /// environment, actions from `behavior`, Bernoulli costs.
    pub fn sample_dataset(
        &self,
        behavior: &dyn Policy,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<LoggedDataset> {
        let table: Vec<Vec<f64>> = self
            .contexts
            .iter()
            .map(|c| behavior.full_probs(c))
            .collect::<Result<_>>()?;
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let i = rng.random_range(0..self.contexts.len());
            let ctx = &self.contexts[i];
            let a = sample_index(&table[i], rng);
            let r = rng.random::<f64>() < self.reward_prob(ctx.label()?, a);
            records.push(LoggedRecord {
                context: ctx.clone(),
                action: ActionId(a),
                cost: if r { -1.0 } else { 0.0 },
                propensity: table[i][a],
            });
        }
        LoggedDataset::new(records, self.action_count)
    }
}

/// `ε + 1[correct]·(1 − 2ε)`.
pub fn reward_probability(epsilon: f64, correct: bool) -> f64 {
    if correct {
        epsilon + (1.0 - 2.0 * epsilon)
    } else {
        epsilon
    }
}

/// Exact risk `E_x E_{a∼π}[c(x, a)]` under the environment's known costs.
pub fn true_risk(policy: &dyn Policy, env: &Environment) -> Result<f64> {
    if env.contexts.is_empty() {
        return Err(Error::EmptyEnvironment);
    }
    let per_context: Vec<f64> = env
        .contexts
        .par_iter()
        .map(|ctx| {
            let probs = policy.full_probs(ctx)?;
            let label = ctx.label()?;
            Ok(probs
                .iter()
                .enumerate()
                .map(|(a, p)| -p * env.reward_prob(label, a))
                .sum::<f64>())
        })
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&per_context) / per_context.len() as f64)
}
