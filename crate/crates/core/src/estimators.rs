//! Regularized importance-sampling estimators.
//!
//! Every estimator here is `(1/n) Σ h(π(a_i|x_i), π_0(a_i|x_i), c_i)` for a
//! per-sample transform `h` satisfying `p·c/q ≤ h(p, q, c) ≤ 0`. Logarithmic
//! smoothing (`LogSmoothing`) is the member whose bound is tightest; its
//! linearized variant is what the PAC-Bayesian learner optimizes.

use serde::{Deserialize, Serialize};

use crate::bandit::{importance_weight, target_probs, Environment, LoggedDataset, Policy};
use crate::error::{Error, Result};
use crate::numeric::{mean, pairwise_sum};

/// Relative slack allowed by the C1 check for floating-point rounding.
const C1_TOLERANCE: f64 = 1e-12;

/// The closed catalog of regularizers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    /// `p·c/q`.
    Ips,
    /// `min(p/q, M)·c`.
    Clipping { m: f64 },
    /// `p·c/q^α`.
    ExpSmoothing { alpha: f64 },
    /// `p·c/(q + γ)`.
    ImplicitExploration { gamma: f64 },
    /// `−min(p|c|/q, 1/λ)`, the minimizer of the second-moment bound.
    GlobalClipping { lambda: f64 },
    /// `−(1/λ)·ln(1 − λ·p·c/q)`; IPS at `λ = 0`.
    LogSmoothing { lambda: f64 },
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Regularizer::Ips => true,
            Regularizer::Clipping { m } => m > 0.0,
            Regularizer::ExpSmoothing { alpha } => (0.0..=1.0).contains(&alpha),
            Regularizer::ImplicitExploration { gamma } => gamma >= 0.0,
            Regularizer::GlobalClipping { lambda } => lambda > 0.0,
            Regularizer::LogSmoothing { lambda } => lambda >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("regularizer parameter out of range: {self:?}")))
        }
    }

    pub fn apply(&self, p: f64, q: f64, c: f64) -> f64 {
        match *self {
            Regularizer::Ips => p * c / q,
            Regularizer::Clipping { m } => (p / q).min(m) * c,
            Regularizer::ExpSmoothing { alpha } => p * c / q.powf(alpha),
            Regularizer::ImplicitExploration { gamma } => p * c / (q + gamma),
            Regularizer::GlobalClipping { lambda } => -(p * c.abs() / q).min(1.0 / lambda),
            Regularizer::LogSmoothing { lambda } => log_smooth(lambda, p * c / q),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regularizer::Ips => "IPS",
            Regularizer::Clipping { .. } => "Clipping",
            Regularizer::ExpSmoothing { .. } => "ES",
            Regularizer::ImplicitExploration { .. } => "IX",
            Regularizer::GlobalClipping { .. } => "GlobalClipping",
            Regularizer::LogSmoothing { .. } => "LS",
        }
    }
}

/// `−(1/λ)·ln(1 − λ·x)` for `x ≤ 0`, continuous at `λ = 0`.
pub fn log_smooth(lambda: f64, x: f64) -> f64 {
    if lambda == 0.0 {
        x
    } else {
        -(-lambda * x).ln_1p() / lambda
    }
}

/// The global clipping regularizer `h_{*,1}` for a given `λ`.
pub fn global_clipping_h(lambda: f64) -> Result<Regularizer> {
    if !(lambda > 0.0) {
        return Err(Error::param(format!("lambda must be positive, got {lambda}")));
    }
    Ok(Regularizer::GlobalClipping { lambda })
}

/// Checks `p·c/q ≤ h ≤ 0` up to rounding.
pub fn check_c1(index: usize, p: f64, q: f64, c: f64, h: f64) -> Result<()> {
    let lower = p * c / q;
    let slack = C1_TOLERANCE * lower.abs().max(1.0);
    if h > slack || h < lower - slack || h.is_nan() {
        return Err(Error::C1Violation {
            index,
            value: h,
            lower,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateBreakdown {
    pub value: f64,
    pub per_sample: Vec<f64>,
    pub n: usize,
}

impl EstimateBreakdown {
    pub fn from_samples(per_sample: Vec<f64>) -> Self {
        Self {
            value: mean(&per_sample),
            n: per_sample.len(),
            per_sample,
        }
    }
}

/// Estimator for an arbitrary per-sample transform `h(p, q, c)`.
///
/// `validate` turns on the C1 check for every sample.
pub fn estimate_with(
    data: &LoggedDataset,
    policy: &dyn Policy,
    h: impl Fn(f64, f64, f64) -> f64,
    validate: bool,
) -> Result<EstimateBreakdown> {
    let probs = target_probs(data, policy)?;
    let mut per_sample = Vec::with_capacity(data.len());
    for (i, (r, p)) in data.records().iter().zip(&probs).enumerate() {
        let v = h(*p, r.propensity, r.cost);
        if validate {
            check_c1(i, *p, r.propensity, r.cost, v)?;
        }
        per_sample.push(v);
    }
    Ok(EstimateBreakdown::from_samples(per_sample))
}

/// Regularized IPS estimate; C1 is checked in debug builds.
pub fn regularized_estimate(
    data: &LoggedDataset,
    policy: &dyn Policy,
    h: Regularizer,
) -> Result<EstimateBreakdown> {
    h.validate()?;
    estimate_with(data, policy, |p, q, c| h.apply(p, q, c), cfg!(debug_assertions))
}

/// Plain IPS value.
pub fn ips_estimate(data: &LoggedDataset, policy: &dyn Policy) -> Result<f64> {
    Ok(regularized_estimate(data, policy, Regularizer::Ips)?.value)
}

/// Self-normalized IPS, `Σ w_i c_i / Σ w_i`.
pub fn sn_estimate(data: &LoggedDataset, policy: &dyn Policy) -> Result<f64> {
    let mut wc = Vec::with_capacity(data.len());
    let mut w = Vec::with_capacity(data.len());
    for r in data.records() {
        let wi = importance_weight(r, policy)?;
        w.push(wi);
        wc.push(wi * r.cost);
    }
    let denom = pairwise_sum(&w);
    if !(denom > 0.0) {
        return Err(Error::DegenerateSnDenominator);
    }
    Ok(pairwise_sum(&wc) / denom)
}

/// `(1/n) Σ h_i^ℓ`.
pub fn empirical_moment(breakdown: &EstimateBreakdown, ell: u32) -> Result<f64> {
    if ell < 2 {
        return Err(Error::MomentOrder(ell));
    }
    let powers: Vec<f64> = breakdown
        .per_sample
        .iter()
        .map(|h| h.powi(ell as i32))
        .collect();
    Ok(mean(&powers))
}

/// Logarithmic smoothing estimate.
pub fn ls_estimate(data: &LoggedDataset, policy: &dyn Policy, lambda: f64) -> Result<EstimateBreakdown> {
    if !(lambda >= 0.0) {
        return Err(Error::param(format!("lambda must be >= 0, got {lambda}")));
    }
    regularized_estimate(data, policy, Regularizer::LogSmoothing { lambda })
}

/// Per-sample coefficients `g_i = −(1/λ)·ln(1 − λ c_i / π_0(a_i|x_i))`, so
/// that the linearized LS estimate is `(1/n) Σ π(a_i|x_i)·g_i`.
pub fn ls_lin_coefficients(data: &LoggedDataset, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::param(format!("lambda must be positive, got {lambda}")));
    }
    Ok(data
        .records()
        .iter()
        .map(|r| log_smooth(lambda, r.cost / r.propensity))
        .collect())
}

/// Linearized logarithmic smoothing, linear in the target propensities.
pub fn ls_lin_estimate(data: &LoggedDataset, policy: &dyn Policy, lambda: f64) -> Result<f64> {
    let g = ls_lin_coefficients(data, lambda)?;
    let probs = target_probs(data, policy)?;
    let terms: Vec<f64> = probs.iter().zip(&g).map(|(p, g)| p * g).collect();
    Ok(mean(&terms))
}

/// Enumerates `E[f(π(a|x), π_0(a|x), r(x, a))]` over the environment's
/// contexts (uniform), actions drawn from `behavior`, and binary costs with
/// `P(c = −1) = r`. `f` receives the cost-one term and must already account
/// for the `π_0` weighting of the action draw.
fn enumerate_env(
    policy: &dyn Policy,
    behavior: &dyn Policy,
    env: &Environment,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<f64> {
    let mut per_context = Vec::with_capacity(env.contexts().len());
    for ctx in env.contexts() {
        let label = ctx.label()?;
        let pi = policy.full_probs(ctx)?;
        let pi0 = behavior.full_probs(ctx)?;
        let mut acc = 0.0;
        for a in 0..env.action_count() {
            acc += f(pi[a], pi0[a], env.reward_prob(label, a));
        }
        per_context.push(acc);
    }
    if per_context.is_empty() {
        return Err(Error::EmptyEnvironment);
    }
    Ok(mean(&per_context))
}

/// Exact `S_λ(π) = E[(w c)² / (1 − λ w c)]` on an enumerable environment.
///
/// Returns `+∞` when `π` puts mass where `π_0` does not and the cost there
/// can be non-zero.
pub fn s_lambda_oracle(
    policy: &dyn Policy,
    behavior: &dyn Policy,
    env: &Environment,
    lambda: f64,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::param(format!("lambda must be >= 0, got {lambda}")));
    }
    enumerate_env(policy, behavior, env, |p, q, r| {
        if r == 0.0 || p == 0.0 {
            0.0
        } else if q == 0.0 {
            f64::INFINITY
        } else {
            let w = p / q;
            // c = −1 with probability r; c = 0 contributes nothing.
            q * r * w * w / (1.0 + lambda * w)
        }
    })
}

/// Exact `S^LIN_λ(π) = E[π c² / (π_0² − λ π_0 c)]`.
pub fn s_lin_oracle(
    policy: &dyn Policy,
    behavior: &dyn Policy,
    env: &Environment,
    lambda: f64,
) -> Result<f64> {
    enumerate_env(policy, behavior, env, |p, q, r| {
        if r == 0.0 || p == 0.0 {
            0.0
        } else if q == 0.0 {
            f64::INFINITY
        } else {
            q * r * p / (q * q + lambda * q)
        }
    })
}

/// Exact IX coverage ratio `C_λ(π) = E[π |c| / (π_0² + λ π_0)]`.
pub fn ix_coverage_oracle(
    policy: &dyn Policy,
    behavior: &dyn Policy,
    env: &Environment,
    lambda: f64,
) -> Result<f64> {
    enumerate_env(policy, behavior, env, |p, q, r| {
        if r == 0.0 || p == 0.0 {
            0.0
        } else if q == 0.0 {
            f64::INFINITY
        } else {
            q * r * p / (q * q + lambda * q)
        }
    })
}

/// Exact `E[w² c²]`, the second moment of the IPS term.
pub fn ips_second_moment_oracle(
    policy: &dyn Policy,
    behavior: &dyn Policy,
    env: &Environment,
) -> Result<f64> {
    s_lambda_oracle(policy, behavior, env, 0.0)
}
