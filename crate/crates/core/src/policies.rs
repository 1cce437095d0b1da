//! Concrete exactly-normalized policy kinds.

use serde::{Deserialize, Serialize};

use crate::bandit::{Context, Policy};
use crate::error::{Error, Result};
use crate::numeric::softmax_tempered;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformPolicy {
    k: usize,
}

impl UniformPolicy {
    pub fn new(k: usize) -> Self {
        assert!(k > 0, "uniform policy needs at least one action");
        Self { k }
    }
}

impl Policy for UniformPolicy {
    fn action_count(&self) -> usize {
        self.k
    }

    fn full_probs(&self, _ctx: &Context) -> Result<Vec<f64>> {
        Ok(vec![1.0 / self.k as f64; self.k])
    }
}

/// A policy whose distribution depends only on the context's true label:
/// row `ℓ` of the table is `π(·|x)` for every `x` with label `ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularByLabel {
    rows: Vec<Vec<f64>>,
}

impl TabularByLabel {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::param("empty probability table"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::param(format!("row {i} has {} entries, expected {k}", row.len())));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::param(format!("row {i} has entries outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::param(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self { rows })
    }

    /// Puts all mass on `target[label]`.
    pub fn deterministic(target: Vec<usize>, k: usize) -> Result<Self> {
        if target.len() != k {
            return Err(Error::param("target map must cover every label"));
        }
        let rows = target
            .iter()
            .map(|&t| {
                let mut row = vec![0.0; k];
                *row.get_mut(t)
                    .ok_or_else(|| Error::param(format!("target {t} >= K")))? = 1.0;
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Self::from_rows(rows)
    }

    /// Tempered one-hot: `π(a|x) ∝ exp(1[a = peak(label)] / τ)`.
    pub fn peaked(peaks: &[usize], k: usize, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::param(format!("temperature must be positive, got {tau}")));
        }
        let rows = peaks
            .iter()
            .map(|&peak| {
                let mut scores = vec![0.0; k];
                scores[peak] = 1.0;
                softmax_tempered(&scores, tau)
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

impl Policy for TabularByLabel {
    fn action_count(&self) -> usize {
        self.rows.len()
    }

    fn full_probs(&self, ctx: &Context) -> Result<Vec<f64>> {
        let label = ctx.label()?;
        self.rows
            .get(label)
            .cloned()
            .ok_or_else(|| Error::param(format!("label {label} outside table")))
    }
}

/// `π(a|x) ∝ exp(xᵀθ_a / τ)`; `weights` is row-major `K × p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxLinear {
    pub k: usize,
    pub p: usize,
    pub weights: Vec<f64>,
    pub tau: f64,
}

impl SoftmaxLinear {
    pub fn new(k: usize, p: usize, weights: Vec<f64>, tau: f64) -> Result<Self> {
        if weights.len() != k * p {
            return Err(Error::param(format!(
                "softmax weights have length {}, expected {}",
                weights.len(),
                k * p
            )));
        }
        if !(tau > 0.0) {
            return Err(Error::param("temperature must be positive"));
        }
        Ok(Self { k, p, weights, tau })
    }

    pub fn zeros(k: usize, p: usize, tau: f64) -> Self {
        Self {
            k,
            p,
            weights: vec![0.0; k * p],
            tau,
        }
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.p)
            .map(|theta| theta.iter().zip(x).map(|(t, v)| t * v).sum())
            .collect()
    }
}

impl Policy for SoftmaxLinear {
    fn action_count(&self) -> usize {
        self.k
    }

    fn full_probs(&self, ctx: &Context) -> Result<Vec<f64>> {
        if ctx.dim() != self.p {
            return Err(Error::param(format!(
                "context dimension {} does not match policy dimension {}",
                ctx.dim(),
                self.p
            )));
        }
        Ok(softmax_tempered(&self.scores(&ctx.features), self.tau))
    }
}
