//! PAC-Bayesian off-policy learning over linear Gaussian policies.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{LoggedDataset, Policy};
use crate::bounds::psi_lambda;
use crate::error::{Error, Result};
use crate::estimators::log_smooth;
use crate::lgp::{
    kl_gaussian, kl_gradient, propensity_and_score_grad, propensity_from_scores, unit, EpsPanel,
    GaussianPosterior, LgpPolicy, PropensityMode, DEFAULT_MC_SAMPLES,
};
use crate::numeric::{mean, pairwise_sum};
use crate::optim::Adam;
use crate::rng::SeedStream;

const GRAD_CHUNK: usize = 64;

/// Which PAC-Bayes bound is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PacMethod {
    #[serde(rename = "LS-LIN")]
    LsLin,
    #[serde(rename = "IX")]
    Ix,
}

impl PacMethod {
    pub const ALL: [PacMethod; 2] = [PacMethod::LsLin, PacMethod::Ix];

    pub fn name(&self) -> &'static str {
        match self {
            PacMethod::LsLin => "LS-LIN",
            PacMethod::Ix => "IX",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ls-lin" | "ls" | "lslin" => Ok(PacMethod::LsLin),
            "ix" => Ok(PacMethod::Ix),
            _ => Err(Error::param(format!("unknown learning method {s:?}"))),
        }
    }

    /// Per-sample coefficient multiplying `π(a_i|x_i)` in the linear estimator.
    fn coefficient(&self, lambda: f64, cost: f64, propensity: f64) -> f64 {
        match self {
            PacMethod::LsLin => log_smooth(lambda, cost / propensity),
            PacMethod::Ix => cost / (propensity + lambda / 2.0),
        }
    }

    fn bound(&self, lambda: f64, estimate: f64, complexity: f64, n: usize) -> f64 {
        let slack = complexity / (lambda * n as f64);
        match self {
            PacMethod::LsLin => psi_lambda(lambda, estimate + slack),
            PacMethod::Ix => estimate + slack,
        }
    }
}

/// `count` log-spaced values in `[lo, hi]`.
pub fn log_spaced_grid(count: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if count == 0 || !(lo > 0.0) || !(hi >= lo) {
        return Err(Error::param(format!("invalid grid: {count} values in [{lo}, {hi}]")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub prior: GaussianPosterior,
    pub method: PacMethod,
    pub delta: f64,
    pub lambda_grid: Vec<f64>,
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    pub mc_samples: usize,
    pub seed: u64,
    /// Propensity evaluation for the reported guaranteed risk.
    pub final_mode: PropensityMode,
}

impl LearnConfig {
    pub fn new(prior: GaussianPosterior) -> Self {
        Self {
            prior,
            method: PacMethod::LsLin,
            delta: 0.05,
            lambda_grid: log_spaced_grid(100, 1e-4, 1.0).expect("static grid"),
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: None,
            mc_samples: DEFAULT_MC_SAMPLES,
            seed: 0,
            final_mode: PropensityMode::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::param(format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::param("lambda grid must be nonempty with positive entries"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::param("learning rate must be positive"));
        }
        if self.mc_samples == 0 {
            return Err(Error::param("Monte-Carlo sample count must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::param("batch size must be positive"));
        }
        Ok(())
    }

    /// `ln(n_Λ/δ)`.
    pub fn confidence_log(&self) -> f64 {
        (self.lambda_grid.len() as f64 / self.delta).ln()
    }
}

/// Logged data with unit-normalized contexts.
#[derive(Debug, Clone)]
struct Prepared {
    x_hat: Vec<Vec<f64>>,
    actions: Vec<usize>,
    costs: Vec<f64>,
    props: Vec<f64>,
}

impl Prepared {
    fn new(data: &LoggedDataset, prior: &GaussianPosterior) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if data.action_count() != prior.k || data.feature_dim() != prior.p {
            return Err(Error::param(format!(
                "data has K = {}, p = {} but the prior has K = {}, p = {}",
                data.action_count(),
                data.feature_dim(),
                prior.k,
                prior.p
            )));
        }
        let mut out = Prepared {
            x_hat: Vec::with_capacity(data.len()),
            actions: Vec::with_capacity(data.len()),
            costs: Vec::with_capacity(data.len()),
            props: Vec::with_capacity(data.len()),
        };
        for r in data.records() {
            out.x_hat.push(unit(&r.context.features)?);
            out.actions.push(r.action.0);
            out.costs.push(r.cost);
            out.props.push(r.propensity);
        }
        Ok(out)
    }

    fn len(&self) -> usize {
        self.actions.len()
    }

    fn scores(&self, post: &GaussianPosterior, i: usize) -> Vec<f64> {
        post.mu
            .chunks_exact(post.p)
            .map(|m| m.iter().zip(&self.x_hat[i]).map(|(a, b)| a * b).sum::<f64>() / post.sigma)
            .collect()
    }

    fn propensities(&self, post: &GaussianPosterior, panel: &EpsPanel) -> Vec<f64> {
        (0..self.len())
            .into_par_iter()
            .map(|i| propensity_from_scores(&self.scores(post, i), self.actions[i], panel))
            .collect()
    }
}

/// Objective value with gradients for `μ` and `ρ = ln σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGrad {
    pub value: f64,
    pub grad_mu: Vec<f64>,
    pub grad_rho: f64,
}

fn objective_grad(
    prep: &Prepared,
    post: &GaussianPosterior,
    prior: &GaussianPosterior,
    panel: &EpsPanel,
    method: PacMethod,
    lambda: f64,
    batch: &[usize],
) -> Result<ObjectiveGrad> {
    let d = post.dim();
    let p = post.p;
    // Fixed-size chunks reduced in order keep the sum independent of thread count.
    let partials: Vec<(f64, Vec<f64>, f64)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut val = 0.0;
            let mut g_mu = vec![0.0; d];
            let mut g_rho = 0.0;
            for &i in chunk {
                let s = prep.scores(post, i);
                let (prob, ds) = propensity_and_score_grad(&s, prep.actions[i], panel);
                let kappa = method.coefficient(lambda, prep.costs[i], prep.props[i]);
                val += kappa * prob;
                if kappa == 0.0 {
                    continue;
                }
                let x = &prep.x_hat[i];
                for (b, dsb) in ds.iter().enumerate() {
                    let coef = kappa * dsb / post.sigma;
                    if coef != 0.0 {
                        for (g, xv) in g_mu[b * p..(b + 1) * p].iter_mut().zip(x) {
                            *g += coef * xv;
                        }
                    }
                    g_rho -= kappa * dsb * s[b];
                }
            }
            (val, g_mu, g_rho)
        })
        .collect();
    let m = batch.len() as f64;
    let n = prep.len() as f64;
    let mut value = 0.0;
    let mut grad_mu = vec![0.0; d];
    let mut grad_rho = 0.0;
    for (v, g, r) in partials {
        value += v;
        for (a, b) in grad_mu.iter_mut().zip(&g) {
            *a += b;
        }
        grad_rho += r;
    }
    value /= m;
    grad_rho /= m;
    for g in &mut grad_mu {
        *g /= m;
    }
    let kl = kl_gaussian(post, prior)?;
    let (kl_mu, kl_rho) = kl_gradient(post, prior)?;
    let scale = 1.0 / (lambda * n);
    value += kl * scale;
    grad_rho += kl_rho * scale;
    for (g, k) in grad_mu.iter_mut().zip(&kl_mu) {
        *g += k * scale;
    }
    Ok(ObjectiveGrad {
        value,
        grad_mu,
        grad_rho,
    })
}

/// Learning objective `R̂(π_Q) + KL(Q‖P)/(λn)` and its gradient, with
/// propensities taken over `panel`.
pub fn pac_objective_with_grad(
    data: &LoggedDataset,
    posterior: &GaussianPosterior,
    cfg: &LearnConfig,
    lambda: f64,
    panel: &EpsPanel,
) -> Result<ObjectiveGrad> {
    let prep = Prepared::new(data, &cfg.prior)?;
    let all: Vec<usize> = (0..prep.len()).collect();
    objective_grad(&prep, posterior, &cfg.prior, panel, cfg.method, lambda, &all)
}

fn data_term(data: &LoggedDataset, policy: &LgpPolicy, method: PacMethod, lambda: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(lambda > 0.0) {
        return Err(Error::param(format!("lambda must be positive, got {lambda}")));
    }
    let terms: Vec<f64> = data
        .records()
        .iter()
        .map(|r| Ok(policy.prob(&r.context, r.action)? * method.coefficient(lambda, r.cost, r.propensity)))
        .collect::<Result<_>>()?;
    Ok(mean(&terms))
}

/// `LS-LIN(π_Q) + KL(Q‖P)/(λn)`.
pub fn pac_objective(data: &LoggedDataset, policy: &LgpPolicy, cfg: &LearnConfig, lambda: f64) -> Result<f64> {
    let kl = kl_gaussian(policy.posterior(), &cfg.prior)?;
    Ok(data_term(data, policy, PacMethod::LsLin, lambda)? + kl / (lambda * data.len() as f64))
}

/// `ψ_λ(LS-LIN(π_Q) + (KL(Q‖P) + ln(n_Λ/δ))/(λn))`.
pub fn pac_bound_value(data: &LoggedDataset, policy: &LgpPolicy, cfg: &LearnConfig, lambda: f64) -> Result<f64> {
    let kl = kl_gaussian(policy.posterior(), &cfg.prior)?;
    let est = data_term(data, policy, PacMethod::LsLin, lambda)?;
    Ok(PacMethod::LsLin.bound(lambda, est, kl + cfg.confidence_log(), data.len()))
}

/// `IX(π_Q) + (KL(Q‖P) + ln(n_Λ/δ))/(λn)`.
pub fn ix_pac_bound_value(data: &LoggedDataset, policy: &LgpPolicy, cfg: &LearnConfig, lambda: f64) -> Result<f64> {
    let kl = kl_gaussian(policy.posterior(), &cfg.prior)?;
    let est = data_term(data, policy, PacMethod::Ix, lambda)?;
    Ok(PacMethod::Ix.bound(lambda, est, kl + cfg.confidence_log(), data.len()))
}

/// Bound of `method` minimized over the grid: `(value, λ)`.
fn best_bound_over_grid(
    prep: &Prepared,
    props: &[f64],
    kl: f64,
    cfg: &LearnConfig,
) -> (f64, f64) {
    let n = prep.len();
    let complexity = kl + cfg.confidence_log();
    let mut best = (f64::INFINITY, cfg.lambda_grid[0]);
    for &lambda in &cfg.lambda_grid {
        let terms: Vec<f64> = (0..n)
            .map(|i| props[i] * cfg.method.coefficient(lambda, prep.costs[i], prep.props[i]))
            .collect();
        let b = cfg.method.bound(lambda, pairwise_sum(&terms) / n as f64, complexity, n);
        if b < best.0 {
            best = (b, lambda);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub lambda: f64,
    pub objective: f64,
    pub bound: f64,
}

/// Optimizer state, sufficient to resume training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnState {
    pub posterior: GaussianPosterior,
    /// Log-scale the optimizer updates; `posterior.sigma == rho.exp()`.
    pub rho: f64,
    pub optimizer: Adam,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl LearnState {
    pub fn initial(cfg: &LearnConfig) -> Self {
        Self {
            posterior: cfg.prior.clone(),
            rho: cfg.prior.rho(),
            optimizer: Adam::new(cfg.prior.dim() + 1, cfg.learning_rate),
            epoch: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub policy: LgpPolicy,
    pub state: LearnState,
    pub guaranteed_risk: f64,
    pub lambda: f64,
    pub trace: Vec<TraceRow>,
}

/// Minimizes the configured bound from the prior.
pub fn learn(data: &LoggedDataset, cfg: &LearnConfig) -> Result<LearnOutcome> {
    learn_from(data, cfg, LearnState::initial(cfg))
}

/// Continues training from `state` until `cfg.epochs` epochs are complete.
pub fn learn_from(data: &LoggedDataset, cfg: &LearnConfig, mut state: LearnState) -> Result<LearnOutcome> {
    cfg.validate()?;
    let prep = Prepared::new(data, &cfg.prior)?;
    let n = prep.len();
    let d = cfg.prior.dim();
    if state.posterior.dim() != d || state.optimizer.dim() != d + 1 {
        return Err(Error::param("resume state does not match the prior's shape"));
    }
    let root = SeedStream::new(cfg.seed);
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut trace = Vec::with_capacity(cfg.epochs.saturating_sub(state.epoch));
    let mut params: Vec<f64> = state.posterior.mu.clone();
    params.push(state.rho);
    for epoch in state.epoch..cfg.epochs {
        let stream = root.child(epoch as u64);
        let panel = EpsPanel::monte_carlo(cfg.mc_samples, stream.child_str("panel"))?;
        let props = prep.propensities(&state.posterior, &panel);
        let kl = kl_gaussian(&state.posterior, &cfg.prior)?;
        let (bound, lambda) = best_bound_over_grid(&prep, &props, kl, cfg);
        if !bound.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let mut order: Vec<usize> = (0..n).collect();
        if batch < n {
            order.shuffle(&mut stream.child_str("shuffle").rng());
        }
        let mut objective = None;
        for idx in order.chunks(batch) {
            let og = objective_grad(&prep, &state.posterior, &cfg.prior, &panel, cfg.method, lambda, idx)?;
            if !og.value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            if og.grad_mu.iter().any(|g| !g.is_finite()) || !og.grad_rho.is_finite() {
                return Err(Error::NonFiniteGradient { epoch });
            }
            objective.get_or_insert(og.value);
            let mut grad = og.grad_mu;
            grad.push(og.grad_rho);
            state.optimizer.step(&mut params, &grad);
            state.posterior.mu.copy_from_slice(&params[..d]);
            state.rho = params[d];
            state.posterior.sigma = state.rho.exp();
            if !(state.posterior.sigma > 0.0 && state.posterior.sigma.is_finite()) {
                return Err(Error::NonFiniteGradient { epoch });
            }
        }
        state.epoch = epoch + 1;
        trace.push(TraceRow {
            epoch,
            lambda,
            objective: objective.unwrap_or(f64::NAN),
            bound,
        });
    }
    let policy = LgpPolicy::new(state.posterior.clone(), cfg.final_mode)?;
    let props = prep.propensities(&state.posterior, policy.panel());
    let kl = kl_gaussian(&state.posterior, &cfg.prior)?;
    let (guaranteed_risk, lambda) = best_bound_over_grid(&prep, &props, kl, cfg);
    Ok(LearnOutcome {
        policy,
        state,
        guaranteed_risk,
        lambda,
        trace,
    })
}

/// `(R(π_0) − x)/(R(π_0) + 1)`.
pub fn relative_improvement(x: f64, r_pi0: f64) -> Result<f64> {
    if r_pi0 <= -1.0 {
        return Err(Error::IdealBehaviorPolicy);
    }
    Ok((r_pi0 - x) / (r_pi0 + 1.0))
}
