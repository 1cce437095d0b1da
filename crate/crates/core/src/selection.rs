//! Pessimistic off-policy selection over a finite candidate set.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{true_risk, Environment, LoggedDataset, Policy};
use crate::bounds::{
    empirical_bernstein_bound_scored, ix_bound_scored, ls_bound_scored, second_moment_bound_scored,
    ScoredData,
};
use crate::error::{Error, Result};
use crate::estimators::{ix_coverage_oracle, s_lambda_oracle, Regularizer};
use crate::numeric::mean;

/// Named candidate policies; names are unique.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    policies: Vec<(String, Arc<dyn Policy>)>,
}

impl CandidateSet {
    pub fn new(policies: Vec<(String, Arc<dyn Policy>)>) -> Result<Self> {
        if policies.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let mut seen = std::collections::BTreeSet::new();
        for (name, _) in &policies {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateCandidate(name.clone()));
            }
        }
        Ok(Self { policies })
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &dyn Policy)> {
        self.policies.iter().map(|(n, p)| (n.as_str(), p.as_ref()))
    }

    pub fn get(&self, name: &str) -> Option<&dyn Policy> {
        self.policies
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p.as_ref())
    }
}

/// Scoring rule used to rank candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SelectionMethod {
    #[serde(rename = "IPS")]
    Ips,
    #[serde(rename = "SN")]
    Sn,
    #[serde(rename = "cIPS-EB")]
    CipsEb,
    #[serde(rename = "IX")]
    Ix,
    #[serde(rename = "cIPS-L=1")]
    CipsL1,
    #[serde(rename = "LS")]
    Ls,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 6] = [
        SelectionMethod::Ips,
        SelectionMethod::Sn,
        SelectionMethod::CipsEb,
        SelectionMethod::Ix,
        SelectionMethod::CipsL1,
        SelectionMethod::Ls,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SelectionMethod::Ips => "IPS",
            SelectionMethod::Sn => "SN",
            SelectionMethod::CipsEb => "cIPS-EB",
            SelectionMethod::Ix => "IX",
            SelectionMethod::CipsL1 => "cIPS-L=1",
            SelectionMethod::Ls => "LS",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Ok(match lower.as_str() {
            "ips" => SelectionMethod::Ips,
            "sn" | "snips" => SelectionMethod::Sn,
            "cips-eb" | "eb" => SelectionMethod::CipsEb,
            "ix" => SelectionMethod::Ix,
            "cips-l=1" | "cips-l1" | "l1" => SelectionMethod::CipsL1,
            "ls" => SelectionMethod::Ls,
            _ => return Err(Error::param(format!("unknown selection method {s:?}"))),
        })
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How λ (and the clipping cap `M = 1/λ`) is chosen for a selection run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    Fixed(f64),
    /// `1/√n`.
    InvSqrtN,
    /// `√(2 ln(2m/δ)/n)`, the rate-optimal choice for `m` candidates.
    UnionBound,
}

impl LambdaRule {
    pub fn resolve(&self, n: usize, m: usize, delta: f64) -> f64 {
        match *self {
            LambdaRule::Fixed(l) => l,
            LambdaRule::InvSqrtN => 1.0 / (n as f64).sqrt(),
            LambdaRule::UnionBound => selection_lambda(n, m, delta),
        }
    }
}

/// `λ_s = √(2·ln(2m/δ)/n)`.
pub fn selection_lambda(n: usize, m: usize, delta: f64) -> f64 {
    (2.0 * (2.0 * m as f64 / delta).ln() / n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: SelectionMethod,
    pub chosen: String,
    pub scores: BTreeMap<String, f64>,
    pub lambda_used: f64,
    pub delta: f64,
}

/// Argmin with lexicographic tie-break on name.
fn argmin(scores: &BTreeMap<String, f64>) -> String {
    let mut best: Option<(&String, f64)> = None;
    for (name, &s) in scores {
        match best {
            Some((_, b)) if !(s < b) => {}
            _ => best = Some((name, s)),
        }
    }
    best.map(|(n, _)| n.clone()).unwrap_or_default()
}

/// Scores one candidate under `method`.
pub fn score(
    data: &LoggedDataset,
    policy: &dyn Policy,
    method: SelectionMethod,
    lambda: f64,
    delta: f64,
) -> Result<f64> {
    let scored = ScoredData::new(data, policy)?;
    score_scored(&scored, method, lambda, delta)
}

pub fn score_scored(scored: &ScoredData, method: SelectionMethod, lambda: f64, delta: f64) -> Result<f64> {
    Ok(match method {
        SelectionMethod::Ips => mean(&scored.regularized(Regularizer::Ips)),
        SelectionMethod::Sn => {
            let w = scored.map(|p, q, _| p / q);
            let wc = scored.map(|p, q, c| p * c / q);
            let denom: f64 = crate::numeric::pairwise_sum(&w);
            if denom > 0.0 {
                crate::numeric::pairwise_sum(&wc) / denom
            } else {
                // A candidate never supported by the logs cannot be scored;
                // rank it last.
                f64::INFINITY
            }
        }
        SelectionMethod::CipsEb => empirical_bernstein_bound_scored(scored, 1.0 / lambda, delta)?.upper,
        SelectionMethod::Ix => ix_bound_scored(scored, lambda, delta)?.upper,
        SelectionMethod::CipsL1 => second_moment_bound_scored(scored, lambda, delta)?.upper,
        // The remaining LS bound terms do not depend on the candidate, so
        // ranking by the estimate and by the bound coincide.
        SelectionMethod::Ls => ls_bound_scored(scored, lambda, delta)?.estimate,
    })
}

/// Runs `method` over the candidates with λ from `rule`.
pub fn select_with(
    data: &LoggedDataset,
    candidates: &CandidateSet,
    method: SelectionMethod,
    rule: LambdaRule,
    delta: f64,
) -> Result<SelectionResult> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::param(format!("delta must lie in (0, 1], got {delta}")));
    }
    let lambda = rule.resolve(data.len(), candidates.len(), delta);
    let scores: Vec<(String, f64)> = candidates
        .policies
        .par_iter()
        .map(|(name, pol)| Ok((name.clone(), score(data, pol.as_ref(), method, lambda, delta)?)))
        .collect::<Result<_>>()?;
    let scores: BTreeMap<String, f64> = scores.into_iter().collect();
    Ok(SelectionResult {
        method,
        chosen: argmin(&scores),
        scores,
        lambda_used: lambda,
        delta,
    })
}

/// Pessimistic LS selection at `λ_s = √(2 ln(2m/δ)/n)`.
pub fn select(data: &LoggedDataset, candidates: &CandidateSet, delta: f64) -> Result<SelectionResult> {
    select_with(data, candidates, SelectionMethod::Ls, LambdaRule::UnionBound, delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Worse,
    Better,
    Best,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Worse => "Worse",
            Outcome::Better => "Better",
            Outcome::Best => "Best",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub outcome: Outcome,
    /// The chosen policy's risk equals the behavior policy's exactly and it
    /// is not the best; counted as `Better`.
    pub tied_with_behavior: bool,
}

/// Classifies a choice given exact risks of every candidate.
pub fn classify_by_risks(
    chosen: &str,
    risks: &BTreeMap<String, f64>,
    behavior_name: &str,
) -> Result<Classification> {
    let r_behavior = *risks
        .get(behavior_name)
        .ok_or_else(|| Error::UnknownPolicy(behavior_name.to_string()))?;
    let r_chosen = *risks
        .get(chosen)
        .ok_or_else(|| Error::UnknownPolicy(chosen.to_string()))?;
    let r_min = risks.values().copied().fold(f64::INFINITY, f64::min);
    let outcome = if r_chosen <= r_min {
        Outcome::Best
    } else if r_chosen <= r_behavior {
        Outcome::Better
    } else {
        Outcome::Worse
    };
    Ok(Classification {
        outcome,
        tied_with_behavior: outcome == Outcome::Better && r_chosen == r_behavior,
    })
}

/// Exact risks of all candidates under `env`.
pub fn candidate_risks(candidates: &CandidateSet, env: &Environment) -> Result<BTreeMap<String, f64>> {
    candidates
        .iter()
        .map(|(n, p)| Ok((n.to_string(), true_risk(p, env)?)))
        .collect()
}

pub fn classify_outcome(
    result: &SelectionResult,
    candidates: &CandidateSet,
    env: &Environment,
    behavior_name: &str,
) -> Result<Classification> {
    if candidates.get(behavior_name).is_none() {
        return Err(Error::UnknownPolicy(behavior_name.to_string()));
    }
    classify_by_risks(&result.chosen, &candidate_risks(candidates, env)?, behavior_name)
}

/// Suboptimality guarantee `λ·S_λ(π*) + 2 ln(2m/δ)/(λn)` for the LS
/// selection rule, with `π*` the true-risk minimizer and `S_λ` computed by
/// enumeration.
pub fn suboptimality_certificate(
    candidates: &CandidateSet,
    behavior: &dyn Policy,
    env: &Environment,
    n: usize,
    delta: f64,
    lambda: f64,
) -> Result<f64> {
    let risks = candidate_risks(candidates, env)?;
    let best = argmin(&risks);
    let pol = candidates.get(&best).ok_or(Error::EmptyCandidates)?;
    let s = s_lambda_oracle(pol, behavior, env, lambda)?;
    let m = candidates.len() as f64;
    Ok(lambda * s + 2.0 * (2.0 * m / delta).ln() / (lambda * n as f64))
}

/// The corresponding IX certificate `λ·C_{λ/2}(π*) + 2 ln(2m/δ)/(λn)`.
pub fn ix_suboptimality_certificate(
    candidates: &CandidateSet,
    behavior: &dyn Policy,
    env: &Environment,
    n: usize,
    delta: f64,
    lambda: f64,
) -> Result<f64> {
    let risks = candidate_risks(candidates, env)?;
    let best = argmin(&risks);
    let pol = candidates.get(&best).ok_or(Error::EmptyCandidates)?;
    let c = ix_coverage_oracle(pol, behavior, env, lambda / 2.0)?;
    let m = candidates.len() as f64;
    Ok(lambda * c + 2.0 * (2.0 * m / delta).ln() / (lambda * n as f64))
}
