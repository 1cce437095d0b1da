//! Linear Gaussian policies.
//!
//! A posterior `N(μ, σ²I)` over per-action score vectors induces the policy
//! "pick the argmax of `xᵀθ_a` for `θ ∼ Q`". Its propensities reduce to a
//! one-dimensional Gaussian expectation, evaluated here either with a shared
//! Monte-Carlo panel or with Gauss–Hermite quadrature.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bandit::{Context, Policy};
use crate::error::{Error, Result};
use crate::numeric::{norm_cdf, norm_pdf, GaussHermite};
use crate::policies::SoftmaxLinear;
use crate::rng::SeedStream;

pub const DEFAULT_MC_SAMPLES: usize = 32;
pub const DEFAULT_QUADRATURE_NODES: usize = 64;

/// `N(μ, σ²I_d)` with `μ` stored row-major as `K × p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub k: usize,
    pub p: usize,
    pub mu: Vec<f64>,
    pub sigma: f64,
}

impl GaussianPosterior {
    pub fn new(k: usize, p: usize, mu: Vec<f64>, sigma: f64) -> Result<Self> {
        let post = Self { k, p, mu, sigma };
        post.validate()?;
        Ok(post)
    }

    pub fn zeros(k: usize, p: usize, sigma: f64) -> Result<Self> {
        Self::new(k, p, vec![0.0; k * p], sigma)
    }

    /// Prior centred on scaled softmax weights: `μ = α·θ`.
    pub fn from_softmax(policy: &SoftmaxLinear, alpha: f64, sigma: f64) -> Result<Self> {
        let mu = policy.weights.iter().map(|w| alpha * w).collect();
        Self::new(policy.k, policy.p, mu, sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.p == 0 {
            return Err(Error::param(format!(
                "posterior needs K >= 2 and p >= 1, got K = {}, p = {}",
                self.k, self.p
            )));
        }
        if self.mu.len() != self.k * self.p {
            return Err(Error::param(format!(
                "posterior mean has length {}, expected {}",
                self.mu.len(),
                self.k * self.p
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param(format!("posterior sigma must be positive, got {}", self.sigma)));
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("posterior mean has non-finite entries"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.k * self.p
    }

    pub fn rho(&self) -> f64 {
        self.sigma.ln()
    }

    /// Normalized scores `x̂ᵀμ_a / σ` and the unit context `x̂`.
    pub fn scores(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.p {
            return Err(Error::param(format!(
                "context dimension {} does not match policy dimension {}",
                x.len(),
                self.p
            )));
        }
        let x_hat = unit(x)?;
        let s = self
            .mu
            .chunks_exact(self.p)
            .map(|m| dot(m, &x_hat) / self.sigma)
            .collect();
        Ok((s, x_hat))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn unit(x: &[f64]) -> Result<Vec<f64>> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ZeroNormContext);
    }
    Ok(x.iter().map(|v| v / norm).collect())
}

/// Weighted nodes standing in for `ε ∼ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsPanel {
    nodes: Arc<[f64]>,
    weights: Arc<[f64]>,
}

impl EpsPanel {
    /// `samples` i.i.d. draws with equal weight.
    pub fn monte_carlo(samples: usize, stream: SeedStream) -> Result<Self> {
        if samples == 0 {
            return Err(Error::param("Monte-Carlo sample count must be positive"));
        }
        let mut rng = stream.rng();
        let nodes: Vec<f64> = (0..samples).map(|_| StandardNormal.sample(&mut rng)).collect();
        let w = 1.0 / samples as f64;
        Ok(Self {
            nodes: nodes.into(),
            weights: vec![w; samples].into(),
        })
    }

    pub fn quadrature(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::param("quadrature order must be positive"));
        }
        let gh = GaussHermite::new(order);
        Ok(Self {
            nodes: gh.nodes.into(),
            weights: gh.weights.into(),
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// `E_ε ∏_{b≠a} Φ(ε + s_a − s_b)`.
pub fn propensity_from_scores(s: &[f64], a: usize, panel: &EpsPanel) -> f64 {
    let mut acc = 0.0;
    for (e, w) in panel.nodes.iter().zip(panel.weights.iter()) {
        let mut prod = 1.0;
        for (b, sb) in s.iter().enumerate() {
            if b != a {
                prod *= norm_cdf(e + s[a] - sb);
            }
        }
        acc += w * prod;
    }
    acc
}

/// Propensity of `a` and its gradient with respect to every score `s_b`.
pub fn propensity_and_score_grad(s: &[f64], a: usize, panel: &EpsPanel) -> (f64, Vec<f64>) {
    let k = s.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; k];
    let mut cdf = vec![0.0; k];
    let mut pdf = vec![0.0; k];
    let mut prefix = vec![1.0; k + 1];
    let mut suffix = vec![1.0; k + 1];
    for (e, w) in panel.nodes.iter().zip(panel.weights.iter()) {
        for b in 0..k {
            if b == a {
                cdf[b] = 1.0;
                pdf[b] = 0.0;
            } else {
                let z = e + s[a] - s[b];
                cdf[b] = norm_cdf(z);
                pdf[b] = norm_pdf(z);
            }
        }
        for b in 0..k {
            prefix[b + 1] = prefix[b] * cdf[b];
        }
        for b in (0..k).rev() {
            suffix[b] = suffix[b + 1] * cdf[b];
        }
        value += w * prefix[k];
        for b in 0..k {
            if b == a {
                continue;
            }
            // ∂/∂z_b of the product, with z_b = ε + s_a − s_b.
            let d = w * pdf[b] * prefix[b] * suffix[b + 1];
            grad[a] += d;
            grad[b] -= d;
        }
    }
    (value, grad)
}

/// How an [`LgpPolicy`] evaluates its propensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensityMode {
    MonteCarlo { samples: usize, seed: u64 },
    Quadrature { nodes: usize },
}

impl Default for PropensityMode {
    fn default() -> Self {
        PropensityMode::Quadrature {
            nodes: DEFAULT_QUADRATURE_NODES,
        }
    }
}

impl PropensityMode {
    pub fn panel(&self) -> Result<EpsPanel> {
        match *self {
            PropensityMode::MonteCarlo { samples, seed } => {
                EpsPanel::monte_carlo(samples, SeedStream::new(seed))
            }
            PropensityMode::Quadrature { nodes } => EpsPanel::quadrature(nodes),
        }
    }
}

/// The policy `π_Q` induced by a Gaussian posterior.
#[derive(Debug, Clone)]
pub struct LgpPolicy {
    posterior: GaussianPosterior,
    mode: PropensityMode,
    panel: EpsPanel,
}

impl LgpPolicy {
    pub fn new(posterior: GaussianPosterior, mode: PropensityMode) -> Result<Self> {
        posterior.validate()?;
        let panel = mode.panel()?;
        Ok(Self { posterior, mode, panel })
    }

    /// Uses an externally built panel, e.g. the per-epoch panel during training.
    pub fn with_panel(posterior: GaussianPosterior, mode: PropensityMode, panel: EpsPanel) -> Result<Self> {
        posterior.validate()?;
        Ok(Self { posterior, mode, panel })
    }

    pub fn quadrature(posterior: GaussianPosterior) -> Result<Self> {
        Self::new(posterior, PropensityMode::default())
    }

    pub fn posterior(&self) -> &GaussianPosterior {
        &self.posterior
    }

    pub fn mode(&self) -> PropensityMode {
        self.mode
    }

    pub fn panel(&self) -> &EpsPanel {
        &self.panel
    }

    pub fn propensity(&self, x: &[f64], a: usize) -> Result<f64> {
        if a >= self.posterior.k {
            return Err(Error::param(format!("action {a} out of range")));
        }
        let (s, _) = self.posterior.scores(x)?;
        Ok(propensity_from_scores(&s, a, &self.panel))
    }
}

impl Policy for LgpPolicy {
    fn action_count(&self) -> usize {
        self.posterior.k
    }

    fn full_probs(&self, ctx: &Context) -> Result<Vec<f64>> {
        let (s, _) = self.posterior.scores(&ctx.features)?;
        Ok((0..s.len())
            .map(|a| propensity_from_scores(&s, a, &self.panel))
            .collect())
    }

    fn prob(&self, ctx: &Context, action: crate::bandit::ActionId) -> Result<f64> {
        self.propensity(&ctx.features, action.0)
    }
}

/// `lgp_propensity` with an explicit evaluation mode.
pub fn lgp_propensity(
    posterior: &GaussianPosterior,
    context: &Context,
    action: usize,
    mode: PropensityMode,
) -> Result<f64> {
    LgpPolicy::new(posterior.clone(), mode)?.propensity(&context.features, action)
}

/// `KL(q ‖ p)` between isotropic Gaussians of equal dimension.
pub fn kl_gaussian(q: &GaussianPosterior, p: &GaussianPosterior) -> Result<f64> {
    check_same_shape(q, p)?;
    let d = q.dim() as f64;
    let ratio = (q.sigma / p.sigma).powi(2);
    let dist2: f64 = q.mu.iter().zip(&p.mu).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(0.5 * d * (ratio - 1.0 - ratio.ln()) + dist2 / (2.0 * p.sigma * p.sigma))
}

/// Gradient of `KL(q ‖ p)` with respect to `μ_q` and `ρ_q = ln σ_q`.
pub fn kl_gradient(q: &GaussianPosterior, p: &GaussianPosterior) -> Result<(Vec<f64>, f64)> {
    check_same_shape(q, p)?;
    let inv = 1.0 / (p.sigma * p.sigma);
    let g_mu = q.mu.iter().zip(&p.mu).map(|(a, b)| (a - b) * inv).collect();
    let ratio = (q.sigma / p.sigma).powi(2);
    Ok((g_mu, q.dim() as f64 * (ratio - 1.0)))
}

fn check_same_shape(q: &GaussianPosterior, p: &GaussianPosterior) -> Result<()> {
    if q.k != p.k || q.p != p.p || q.mu.len() != p.mu.len() {
        return Err(Error::param("posteriors have different shapes"));
    }
    if !(p.sigma > 0.0) {
        return Err(Error::param("prior sigma must be positive"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_action(delta: f64) -> GaussianPosterior {
        // x = e_0, σ = 1, so the score gap equals μ_{0,0} − μ_{1,0}.
        GaussianPosterior::new(2, 2, vec![delta, 0.0, 0.0, 0.0], 1.0).unwrap()
    }

    fn trapezoid_oracle(delta: f64) -> f64 {
        let (lo, hi, n) = (-12.0f64, 12.0f64, 1_000_000usize);
        let h = (hi - lo) / n as f64;
        let f = |e: f64| norm_pdf(e) * norm_cdf(e + delta);
        let mut acc = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            acc += f(lo + i as f64 * h);
        }
        acc * h
    }

    #[test]
    fn identical_means_give_uniform() {
        let post = GaussianPosterior::new(4, 3, [0.3, -1.0, 2.0].repeat(4), 0.7).unwrap();
        let pol = LgpPolicy::quadrature(post).unwrap();
        let probs = pol.full_probs(&Context::new(vec![1.0, 2.0, -0.5])).unwrap();
        for p in probs {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_action_reference_values() {
        let x = Context::new(vec![1.0, 0.0]);
        let mode = PropensityMode::default();
        assert_abs_diff_eq!(lgp_propensity(&two_action(0.0), &x, 0, mode).unwrap(), 0.5, epsilon = 1e-14);
        let v = lgp_propensity(&two_action(1.0), &x, 0, mode).unwrap();
        let oracle = trapezoid_oracle(1.0);
        assert_abs_diff_eq!(oracle, 0.760_249_938_906_523_3, epsilon = 1e-9);
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-9);
        assert_abs_diff_eq!(v, norm_cdf(1.0 / 2f64.sqrt()), epsilon = 1e-12);
    }

    #[test]
    fn zero_context_is_rejected() {
        let pol = LgpPolicy::quadrature(two_action(1.0)).unwrap();
        assert!(matches!(
            pol.full_probs(&Context::new(vec![0.0, 0.0])),
            Err(Error::ZeroNormContext)
        ));
    }

    #[test]
    fn quadrature_normalizes() {
        let mu: Vec<f64> = (0..15).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.3).collect();
        let pol = LgpPolicy::quadrature(GaussianPosterior::new(5, 3, mu, 0.8).unwrap()).unwrap();
        let probs = pol.full_probs(&Context::new(vec![0.2, -1.0, 0.4])).unwrap();
        assert_abs_diff_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-6);
        assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let panel = EpsPanel::monte_carlo(16, SeedStream::new(3)).unwrap();
        let s = vec![0.4, -0.2, 1.1, 0.0];
        for a in 0..s.len() {
            let (v, g) = propensity_and_score_grad(&s, a, &panel);
            assert_abs_diff_eq!(v, propensity_from_scores(&s, a, &panel), epsilon = 1e-14);
            for b in 0..s.len() {
                let h = 1e-6;
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp[b] += h;
                sm[b] -= h;
                let fd = (propensity_from_scores(&sp, a, &panel) - propensity_from_scores(&sm, a, &panel)) / (2.0 * h);
                assert_abs_diff_eq!(g[b], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn kl_examples() {
        let p = GaussianPosterior::new(2, 1, vec![0.5, -0.5], 1.5).unwrap();
        assert_eq!(kl_gaussian(&p, &p).unwrap(), 0.0);
        let mut q = p.clone();
        q.mu[0] += 1.5;
        q.mu[1] -= 1.5;
        assert_abs_diff_eq!(kl_gaussian(&q, &p).unwrap(), 1.0, epsilon = 1e-14);
        let p = GaussianPosterior::zeros(2, 1, 1.0).unwrap();
        let q = GaussianPosterior::zeros(2, 1, 2.0).unwrap();
        assert_abs_diff_eq!(kl_gaussian(&q, &p).unwrap(), 1.613_705_638_880_109_4, epsilon = 1e-14);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let p = GaussianPosterior::new(2, 2, vec![0.1, 0.2, -0.3, 0.4], 0.9).unwrap();
        let q = GaussianPosterior::new(2, 2, vec![0.5, -0.2, 0.3, 0.0], 1.3).unwrap();
        let (g_mu, g_rho) = kl_gradient(&q, &p).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp.mu[i] += h;
            qm.mu[i] -= h;
            let fd = (kl_gaussian(&qp, &p).unwrap() - kl_gaussian(&qm, &p).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(g_mu[i], fd, epsilon = 1e-7);
        }
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp.sigma = (q.rho() + h).exp();
        qm.sigma = (q.rho() - h).exp();
        let fd = (kl_gaussian(&qp, &p).unwrap() - kl_gaussian(&qm, &p).unwrap()) / (2.0 * h);
        assert_abs_diff_eq!(g_rho, fd, epsilon = 1e-6);
    }

    #[test]
    fn posterior_validation() {
        assert!(GaussianPosterior::new(2, 1, vec![0.0, 0.0], 0.0).is_err());
        assert!(GaussianPosterior::new(2, 1, vec![0.0], 1.0).is_err());
        assert!(GaussianPosterior::new(1, 1, vec![0.0], 1.0).is_err());
        assert!(GaussianPosterior::new(2, 1, vec![f64::NAN, 0.0], 1.0).is_err());
    }
}
