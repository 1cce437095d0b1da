//! High-probability upper bounds on the risk of a fixed policy.
//!
//! All ψ-type bounds share the shape
//! `ψ_λ(estimate + Σ moment terms + ln(1/δ)/(λn))` with
//! `ψ_λ(x) = (1 − e^{−λx})/λ`. The IX and empirical Bernstein bounds are
//! additive and have no contraction.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bandit::{target_probs, LoggedDataset, Policy};
use crate::error::{Error, Result};
use crate::estimators::{check_c1, log_smooth, Regularizer};
use crate::numeric::{mean, CompensatedSum};

/// Target probability, behavior propensity and cost of each logged sample.
///
/// Computing this once lets several bounds share the policy evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredData {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub c: Vec<f64>,
}

impl ScoredData {
    pub fn new(data: &LoggedDataset, policy: &dyn Policy) -> Result<Self> {
        let p = target_probs(data, policy)?;
        let (q, c) = data.records().iter().map(|r| (r.propensity, r.cost)).unzip();
        Ok(Self { p, q, c })
    }

    /// Builds directly from `(p, q, c)` triples.
    pub fn from_triples(triples: &[(f64, f64, f64)]) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (i, &(p, q, c)) in triples.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) || !(q > 0.0 && q <= 1.0) || !(-1.0..=0.0).contains(&c) {
                return Err(Error::InvalidRecord {
                    row: i,
                    reason: format!("({p}, {q}, {c}) outside [0,1]x(0,1]x[-1,0]"),
                });
            }
        }
        Ok(Self {
            p: triples.iter().map(|t| t.0).collect(),
            q: triples.iter().map(|t| t.1).collect(),
            c: triples.iter().map(|t| t.2).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn regularized(&self, h: Regularizer) -> Vec<f64> {
        self.map(|p, q, c| h.apply(p, q, c))
    }

    pub fn map(&self, f: impl Fn(f64, f64, f64) -> f64) -> Vec<f64> {
        self.p
            .iter()
            .zip(&self.q)
            .zip(&self.c)
            .map(|((p, q), c)| f(*p, *q, *c))
            .collect()
    }

    fn check_c1(&self, values: &[f64]) -> Result<()> {
        for (i, v) in values.iter().enumerate() {
            check_c1(i, self.p[i], self.q[i], self.c[i], *v)?;
        }
        Ok(())
    }
}

/// Number of moments used by a bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentOrder {
    Finite(u32),
    Infinite,
}

impl fmt::Display for MomentOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MomentOrder::Finite(l) => write!(f, "{l}"),
            MomentOrder::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub lambda: f64,
    pub delta: f64,
    pub order: MomentOrder,
}

impl BoundConfig {
    pub fn new(lambda: f64, delta: f64, order: MomentOrder) -> Result<Self> {
        let cfg = Self {
            lambda,
            delta,
            order,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn infinite(lambda: f64, delta: f64) -> Result<Self> {
        Self::new(lambda, delta, MomentOrder::Infinite)
    }

    pub fn finite(lambda: f64, delta: f64, l: u32) -> Result<Self> {
        Self::new(lambda, delta, MomentOrder::Finite(l))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(format!("lambda must be positive, got {}", self.lambda)));
        }
        validate_delta(self.delta, 1.0)?;
        if self.order == MomentOrder::Finite(0) {
            return Err(Error::param("moment order L must be >= 1"));
        }
        Ok(())
    }

    /// `ln(1/δ)/(λn)`.
    pub fn confidence_term(&self, n: usize) -> f64 {
        (1.0 / self.delta).ln() / (self.lambda * n as f64)
    }
}

fn validate_delta(delta: f64, max: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= max) {
        return Err(Error::param(format!("delta must lie in (0, {max}], got {delta}")));
    }
    Ok(())
}

/// Default OPE regularization strength, `1/√n`.
pub fn default_lambda(n: usize) -> f64 {
    1.0 / (n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    /// `None` for bounds without a λ (empirical Bernstein).
    pub lambda: Option<f64>,
    pub delta: f64,
    pub order: Option<MomentOrder>,
    pub estimate: f64,
    /// `(λ^{ℓ−1}/ℓ)·M̂_ℓ` for `ℓ = 2..2L`.
    pub moment_terms: Vec<f64>,
    pub confidence_term: f64,
    pub upper: f64,
}

/// Flat CSV/JSON form of a [`BoundReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub lambda: Option<f64>,
    pub delta: f64,
    #[serde(rename = "L")]
    pub l: String,
    pub estimate: f64,
    pub confidence_term: f64,
    pub upper: f64,
}

impl BoundReport {
    pub fn row(&self) -> ReportRow {
        ReportRow {
            name: self.name.clone(),
            lambda: self.lambda,
            delta: self.delta,
            l: self.order.map(|o| o.to_string()).unwrap_or_else(|| "-".into()),
            estimate: self.estimate,
            confidence_term: self.confidence_term,
            upper: self.upper,
        }
    }
}

/// `ψ_λ(x) = (1 − e^{−λx})/λ`.
pub fn psi_lambda(lambda: f64, x: f64) -> f64 {
    -(-lambda * x).exp_m1() / lambda
}

/// `(λ^{ℓ−1}/ℓ)·(1/n)Σ h_i^ℓ` for `ℓ = 2..2L`.
///
/// Each term is accumulated in ascending `ℓ` with compensated summation;
/// when `λ·max|h| > 1` and `L > 8` the powers go through log-space.
pub fn moment_terms(h: &[f64], lambda: f64, l: u32) -> Vec<f64> {
    let max_abs = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let log_space = lambda * max_abs > 1.0 && l > 8;
    (2..=2 * l)
        .map(|ell| {
            let ellf = f64::from(ell);
            let per: Vec<f64> = h
                .iter()
                .map(|&hi| {
                    if hi == 0.0 {
                        return 0.0;
                    }
                    let sign = if hi < 0.0 && ell % 2 == 1 { -1.0 } else { 1.0 };
                    if log_space {
                        sign * (ellf * (lambda * hi.abs()).ln() - (lambda * ellf).ln()).exp()
                    } else {
                        (lambda * hi).powi(ell as i32) / (lambda * ellf)
                    }
                })
                .collect();
            mean(&per)
        })
        .collect()
}

/// Finite-moment bound `U_L^{λ,h}` from precomputed per-sample values.
pub fn moments_bound_from(h: &[f64], h_name: &str, cfg: &BoundConfig) -> Result<BoundReport> {
    cfg.validate()?;
    if h.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let MomentOrder::Finite(l) = cfg.order else {
        return infinite_moment_bound_from(h, h_name, cfg);
    };
    let estimate = mean(h);
    let terms = moment_terms(h, cfg.lambda, l);
    let confidence_term = cfg.confidence_term(h.len());
    let mut acc = CompensatedSum::default();
    acc.add(estimate);
    for t in &terms {
        acc.add(*t);
    }
    acc.add(confidence_term);
    Ok(BoundReport {
        name: format!("{h_name}-L={l}"),
        lambda: Some(cfg.lambda),
        delta: cfg.delta,
        order: Some(cfg.order),
        estimate,
        moment_terms: terms,
        confidence_term,
        upper: psi_lambda(cfg.lambda, acc.value()),
    })
}

/// `L → ∞` bound for an arbitrary regularizer:
/// `ψ_λ(−(1/n)Σ (1/λ)ln(1 − λh_i) + ln(1/δ)/(λn))`.
pub fn infinite_moment_bound_from(h: &[f64], h_name: &str, cfg: &BoundConfig) -> Result<BoundReport> {
    cfg.validate()?;
    if h.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let smoothed: Vec<f64> = h.iter().map(|&v| log_smooth(cfg.lambda, v)).collect();
    let estimate = mean(&smoothed);
    let confidence_term = cfg.confidence_term(h.len());
    Ok(BoundReport {
        name: format!("{h_name}-L=inf"),
        lambda: Some(cfg.lambda),
        delta: cfg.delta,
        order: Some(MomentOrder::Infinite),
        estimate,
        moment_terms: Vec::new(),
        confidence_term,
        upper: psi_lambda(cfg.lambda, estimate + confidence_term),
    })
}

/// Empirical moments bound for a catalog regularizer. `L = ∞` is routed to
/// the infinite-moment form (which is the LS bound when `h` is IPS).
pub fn moments_bound(
    data: &LoggedDataset,
    policy: &dyn Policy,
    h: Regularizer,
    cfg: &BoundConfig,
) -> Result<BoundReport> {
    h.validate()?;
    let scored = ScoredData::new(data, policy)?;
    let values = scored.regularized(h);
    if cfg!(debug_assertions) {
        scored.check_c1(&values)?;
    }
    moments_bound_from(&values, h.name(), cfg)
}

/// Second-moment bound evaluated at its optimal regularizer, global clipping
/// at `1/λ`.
pub fn second_moment_bound_scored(scored: &ScoredData, lambda: f64, delta: f64) -> Result<BoundReport> {
    let cfg = BoundConfig::finite(lambda, delta, 1)?;
    let h = scored.regularized(Regularizer::GlobalClipping { lambda });
    let mut report = moments_bound_from(&h, "cIPS", &cfg)?;
    report.name = "cIPS-L=1".into();
    Ok(report)
}

pub fn second_moment_bound(
    data: &LoggedDataset,
    policy: &dyn Policy,
    lambda: f64,
    delta: f64,
) -> Result<BoundReport> {
    second_moment_bound_scored(&ScoredData::new(data, policy)?, lambda, delta)
}

/// Logarithmic smoothing bound `U_∞^λ = ψ_λ(R̂^λ + ln(1/δ)/(λn))`.
pub fn ls_bound_scored(scored: &ScoredData, lambda: f64, delta: f64) -> Result<BoundReport> {
    let cfg = BoundConfig::infinite(lambda, delta)?;
    let ips = scored.regularized(Regularizer::Ips);
    let mut report = infinite_moment_bound_from(&ips, "IPS", &cfg)?;
    report.name = "LS".into();
    Ok(report)
}

pub fn ls_bound(data: &LoggedDataset, policy: &dyn Policy, lambda: f64, delta: f64) -> Result<BoundReport> {
    ls_bound_scored(&ScoredData::new(data, policy)?, lambda, delta)
}

/// Implicit-exploration bound `(1/n)Σ p c/(q + λ/2) + ln(1/δ)/(λn)`.
pub fn ix_bound_scored(scored: &ScoredData, lambda: f64, delta: f64) -> Result<BoundReport> {
    let cfg = BoundConfig::infinite(lambda, delta)?;
    if scored.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let estimate = mean(&scored.regularized(Regularizer::ImplicitExploration { gamma: lambda / 2.0 }));
    let confidence_term = cfg.confidence_term(scored.len());
    Ok(BoundReport {
        name: "IX".into(),
        lambda: Some(lambda),
        delta,
        order: None,
        estimate,
        moment_terms: Vec::new(),
        confidence_term,
        upper: estimate + confidence_term,
    })
}

pub fn ix_bound(data: &LoggedDataset, policy: &dyn Policy, lambda: f64, delta: f64) -> Result<BoundReport> {
    ix_bound_scored(&ScoredData::new(data, policy)?, lambda, delta)
}

/// Empirical Bernstein bound for the clipping estimator with cap `M`:
/// `R̂_M + √(2 V̂_M ln(2/δ)/n) + 7M ln(2/δ)/(3(n−1))`, `V̂_M` the unbiased
/// sample variance. `δ ∈ (0, 2]` is accepted (`δ = 2` zeroes the log).
pub fn empirical_bernstein_bound_scored(scored: &ScoredData, m: f64, delta: f64) -> Result<BoundReport> {
    let n = scored.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    if !(m > 0.0) {
        return Err(Error::param(format!("clipping cap M must be positive, got {m}")));
    }
    validate_delta(delta, 2.0)?;
    let values = scored.regularized(Regularizer::Clipping { m });
    let estimate = mean(&values);
    let centered: Vec<f64> = values.iter().map(|v| (v - estimate).powi(2)).collect();
    let variance = crate::numeric::pairwise_sum(&centered) / (n - 1) as f64;
    let log_term = (2.0 / delta).ln();
    let nf = n as f64;
    let confidence_term = (2.0 * variance * log_term / nf).sqrt() + 7.0 * m * log_term / (3.0 * (nf - 1.0));
    Ok(BoundReport {
        name: "cIPS-EB".into(),
        lambda: None,
        delta,
        order: None,
        estimate,
        moment_terms: Vec::new(),
        confidence_term,
        upper: estimate + confidence_term,
    })
}

pub fn empirical_bernstein_bound(
    data: &LoggedDataset,
    policy: &dyn Policy,
    m: f64,
    delta: f64,
) -> Result<BoundReport> {
    empirical_bernstein_bound_scored(&ScoredData::new(data, policy)?, m, delta)
}

/// Two-sided interval around the LS estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// `[R̂^λ − λS_λ − ln(2/δ)/(λn), R̂^λ + ln(2/δ)/(λn)]`; `s_lambda` comes
/// from an oracle or the plug-in [`empirical_s_lambda`].
pub fn subgaussian_interval_scored(
    scored: &ScoredData,
    lambda: f64,
    delta: f64,
    s_lambda: f64,
) -> Result<Interval> {
    if !(lambda > 0.0) {
        return Err(Error::param(format!("lambda must be positive, got {lambda}")));
    }
    validate_delta(delta, 2.0)?;
    if scored.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let estimate = mean(&scored.map(|p, q, c| log_smooth(lambda, p * c / q)));
    let t = (2.0 / delta).ln() / (lambda * scored.len() as f64);
    Ok(Interval {
        estimate,
        lower: estimate - lambda * s_lambda - t,
        upper: estimate + t,
    })
}

pub fn subgaussian_interval(
    data: &LoggedDataset,
    policy: &dyn Policy,
    lambda: f64,
    delta: f64,
    s_lambda: f64,
) -> Result<Interval> {
    subgaussian_interval_scored(&ScoredData::new(data, policy)?, lambda, delta, s_lambda)
}

/// Plug-in `(1/n)Σ (w_i c_i)²/(1 − λ w_i c_i)`.
pub fn empirical_s_lambda(scored: &ScoredData, lambda: f64) -> f64 {
    mean(&scored.map(|p, q, c| {
        let wc = p * c / q;
        wc * wc / (1.0 - lambda * wc)
    }))
}

/// `λ* = √(ln(2/δ) / (n·E[w²c²]))`.
pub fn lambda_star(n: usize, second_moment: f64, delta: f64) -> f64 {
    ((2.0 / delta).ln() / (n as f64 * second_moment)).sqrt()
}

/// Whether `λ ≤ min_i (2L+2)/((2L+1)|h_i|)`, the condition under which
/// `U_{L+1} ≤ U_L`. Zero `h_i` impose no constraint.
pub fn l_monotonicity_holds(h: &[f64], lambda: f64, l: u32) -> bool {
    let lf = f64::from(l);
    let limit = h
        .iter()
        .filter(|v| **v != 0.0)
        .map(|v| (2.0 * lf + 2.0) / ((2.0 * lf + 1.0) * v.abs()))
        .fold(f64::INFINITY, f64::min);
    lambda <= limit
}

pub fn check_l_monotonicity(
    data: &LoggedDataset,
    policy: &dyn Policy,
    h: Regularizer,
    lambda: f64,
    l: u32,
) -> Result<bool> {
    h.validate()?;
    let scored = ScoredData::new(data, policy)?;
    Ok(l_monotonicity_holds(&scored.regularized(h), lambda, l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(lambda: f64, delta: f64, l: u32) -> BoundConfig {
        BoundConfig::finite(lambda, delta, l).unwrap()
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi_lambda(1.0, 0.0), 0.0);
        assert_abs_diff_eq!(psi_lambda(1.0, 2f64.ln()), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(psi_lambda(1.0, -(2f64.ln())), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn moments_bound_examples() {
        let r = moments_bound_from(&[0.0], "h", &cfg(0.7, 1.0, 1)).unwrap();
        assert_eq!(r.upper, 0.0);
        let r = moments_bound_from(&[-1.0], "h", &cfg(1.0, 1.0, 1)).unwrap();
        assert_abs_diff_eq!(r.upper, 1.0 - 0.5f64.exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.upper, -0.648_721_270_700_128_1, epsilon = 1e-12);
        let r = moments_bound_from(&[-1.0], "h", &cfg(1.0, 1.0, 2)).unwrap();
        assert_eq!(r.moment_terms.len(), 3);
        assert_abs_diff_eq!(r.upper, 1.0 - (7.0f64 / 12.0).exp(), epsilon = 1e-15);
        // Frozen from an independent 50-digit evaluation of 1 - exp(7/12).
        assert_abs_diff_eq!(r.upper, -0.792_001_825_655_755_5, epsilon = 1e-12);
    }

    #[test]
    fn infinite_order_routes_to_log_form() {
        let c = BoundConfig::infinite(1.0, 1.0).unwrap();
        let r = moments_bound_from(&[-1.0], "IPS", &c).unwrap();
        assert_abs_diff_eq!(r.upper, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn second_moment_examples() {
        let s = ScoredData::from_triples(&[(0.5, 0.5, 0.0), (0.2, 0.3, 0.0)]).unwrap();
        let r = second_moment_bound_scored(&s, 0.5, 0.1).unwrap();
        assert_abs_diff_eq!(r.upper, psi_lambda(0.5, (10f64).ln() / (0.5 * 2.0)), epsilon = 1e-15);
        // w c = −5, clipped to −1 at λ = 1.
        let s = ScoredData::from_triples(&[(1.0, 0.2, -1.0)]).unwrap();
        let r = second_moment_bound_scored(&s, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(r.upper, 1.0 - 0.5f64.exp(), epsilon = 1e-15);
        assert_eq!(r.name, "cIPS-L=1");
    }

    #[test]
    fn ls_bound_examples() {
        let s = ScoredData::from_triples(&[(0.5, 0.5, -1.0)]).unwrap();
        let r = ls_bound_scored(&s, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(r.upper, -1.0, epsilon = 1e-15);
        let s = ScoredData::from_triples(&[(0.5, 0.25, -1.0), (0.3, 0.6, 0.0), (0.9, 0.3, -1.0)]).unwrap();
        let ips = mean(&s.regularized(Regularizer::Ips));
        let r = ls_bound_scored(&s, 1e-8, 1.0).unwrap();
        assert_abs_diff_eq!(r.upper, ips, epsilon = 1e-6);
    }

    #[test]
    fn ix_examples() {
        let s = ScoredData::from_triples(&[(0.5, 0.1, -1.0)]).unwrap();
        let r = ix_bound_scored(&s, 0.2, 1.0).unwrap();
        assert_abs_diff_eq!(r.upper, -2.5, epsilon = 1e-12);
        let s = ScoredData::from_triples(&[(0.5, 0.1, 0.0), (0.1, 0.9, 0.0)]).unwrap();
        assert_eq!(ix_bound_scored(&s, 0.2, 1.0).unwrap().upper, 0.0);
    }

    #[test]
    fn bernstein_examples() {
        let s = ScoredData::from_triples(&[(0.5, 0.5, -1.0), (0.5, 0.5, -1.0)]).unwrap();
        let r = empirical_bernstein_bound_scored(&s, 1.0, 2.0).unwrap();
        assert_eq!(r.upper, r.estimate);
        assert_eq!(r.upper, -1.0);
        let s = ScoredData::from_triples(&[(0.5, 0.5, -1.0), (0.5, 0.5, 0.0)]).unwrap();
        let r = empirical_bernstein_bound_scored(&s, 1.0, 0.05).unwrap();
        let ln40 = 40f64.ln();
        assert_abs_diff_eq!(r.estimate, -0.5);
        assert_abs_diff_eq!(r.upper, -0.5 + (ln40 / 2.0).sqrt() + 7.0 / 3.0 * ln40, epsilon = 1e-12);
        let s = ScoredData::from_triples(&[(0.5, 0.5, -1.0)]).unwrap();
        assert!(matches!(
            empirical_bernstein_bound_scored(&s, 1.0, 0.05),
            Err(Error::TooFewSamples(1))
        ));
    }

    #[test]
    fn subgaussian_examples() {
        let s = ScoredData::from_triples(&[(0.5, 0.25, -1.0), (0.3, 0.6, 0.0)]).unwrap();
        let i = subgaussian_interval_scored(&s, 0.3, 2.0, 0.0).unwrap();
        assert_eq!(i.lower, i.estimate);
        assert_eq!(i.upper, i.estimate);
    }

    #[test]
    fn lambda_star_half_width() {
        // With S_λ replaced by its upper bound E[w²c²], the lower half-width
        // at λ* is 2·√(E ln(2/δ)/n) = √(2σ² ln(2/δ)), σ² = 2E/n.
        let (n, e2, delta) = (500usize, 3.7, 0.05);
        let lam = lambda_star(n, e2, delta);
        let s = ScoredData::from_triples(&[(0.5, 0.25, -1.0); 500]).unwrap();
        let i = subgaussian_interval_scored(&s, lam, delta, e2).unwrap();
        let sigma2 = 2.0 * e2 / n as f64;
        assert_abs_diff_eq!(
            i.estimate - i.lower,
            (2.0 * sigma2 * (2.0 / delta).ln()).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn l_monotonicity_examples() {
        assert!(l_monotonicity_holds(&[0.0, 0.0], 100.0, 1));
        assert!(l_monotonicity_holds(&[-1.0, -1.0], 1.0, 1));
        let u1 = moments_bound_from(&[-1.0, -1.0], "h", &cfg(1.0, 0.5, 1)).unwrap().upper;
        let u2 = moments_bound_from(&[-1.0, -1.0], "h", &cfg(1.0, 0.5, 2)).unwrap().upper;
        assert!(u2 <= u1);
        assert!(!l_monotonicity_holds(&[-10.0], 1.0, 1));
    }

    #[test]
    fn log_space_moments_agree_with_direct() {
        let h = [-3.0, -0.5, 0.0, -1.2];
        let lambda: f64 = 0.9;
        let direct: Vec<f64> = (2..=20u32)
            .map(|ell| {
                let v: Vec<f64> = h.iter().map(|x: &f64| lambda.powi(ell as i32 - 1) / f64::from(ell) * x.powi(ell as i32)).collect();
                mean(&v)
            })
            .collect();
        let logged = moment_terms(&h, lambda, 10);
        for (a, b) in direct.iter().zip(&logged) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn config_validation() {
        assert!(BoundConfig::finite(0.0, 0.05, 1).is_err());
        assert!(BoundConfig::finite(0.1, 0.0, 1).is_err());
        assert!(BoundConfig::finite(0.1, 1.5, 1).is_err());
        assert!(BoundConfig::finite(0.1, 0.05, 0).is_err());
    }
}
