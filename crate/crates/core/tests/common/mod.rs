use std::collections::HashMap;

use offpolicy_core::{Context, Policy, Result};

/// Freezes a policy's distributions on a finite context set, keyed by the
/// exact feature bits. Avoids re-running quadrature in replication loops.
#[derive(Debug)]
pub struct Cached {
    k: usize,
    table: HashMap<Vec<u64>, Vec<f64>>,
}

impl Cached {
    pub fn new(policy: &dyn Policy, contexts: &[Context]) -> Self {
        let table = contexts
            .iter()
            .map(|c| (key(c), policy.full_probs(c).unwrap()))
            .collect();
        Self {
            k: policy.action_count(),
            table,
        }
    }
}

fn key(c: &Context) -> Vec<u64> {
    c.features.iter().map(|v| v.to_bits()).collect()
}

impl Policy for Cached {
    fn action_count(&self) -> usize {
        self.k
    }

    fn full_probs(&self, ctx: &Context) -> Result<Vec<f64>> {
        Ok(self.table[&key(ctx)].clone())
    }
}
