//! Offline success model: `p = sigmoid(α · (capacity(plan) − β · d*))`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{OperatorCatalog, ProtocolId, WorkflowPlan};
use crate::error::{Error, Result};
use crate::executor::{ledger_cost, BackendCall, Pricing};
use crate::numerics::sigmoid;
use crate::router::ModelPool;

/// Synthetic calls and tokens per call for one protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallBudget {
    pub calls: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolProfile {
    pub multiplier: f64,
    pub budget: CallBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimEnvironment {
    pub alpha: f64,
    pub beta: f64,
    /// Indexed like [`ProtocolId::ALL`].
    pub protocols: [ProtocolProfile; 7],
}

const fn profile(multiplier: f64, calls: usize, prompt_tokens: u64, completion_tokens: u64) -> ProtocolProfile {
    ProtocolProfile {
        multiplier,
        budget: CallBudget {
            calls,
            prompt_tokens,
            completion_tokens,
        },
    }
}

pub const DEFAULT_PROTOCOLS: [ProtocolProfile; 7] = [
    profile(1.0, 1, 300, 200),  // cot
    profile(1.25, 7, 500, 200), // debate
    profile(1.15, 5, 300, 200), // self_consistency
    profile(1.1, 5, 450, 200),  // self_refine
    profile(1.2, 6, 400, 150),  // ensemble
    profile(0.95, 2, 350, 200), // testing
    profile(1.05, 3, 350, 120), // react
];

impl Default for SimEnvironment {
    fn default() -> Self {
        Self {
            alpha: 20.0,
            beta: 2.0,
            protocols: DEFAULT_PROTOCOLS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub success: u8,
    pub probability: f64,
    pub trace: Vec<BackendCall>,
    pub cost_usd: f64,
}

fn protocol_index(p: ProtocolId) -> usize {
    ProtocolId::ALL.iter().position(|&q| q == p).unwrap()
}

impl SimEnvironment {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::config("sim.alpha", "must be positive"));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::config("sim.beta", "must be non-negative"));
        }
        Ok(Self {
            alpha,
            beta,
            protocols: DEFAULT_PROTOCOLS,
        })
    }

    pub fn protocol(&self, p: ProtocolId) -> &ProtocolProfile {
        &self.protocols[protocol_index(p)]
    }

    /// Mean of `capability · multiplier` over operators, scaled by `1 + 0.1 (depth − 1)`.
    pub fn capacity(&self, plan: &WorkflowPlan, catalog: &OperatorCatalog, pool: &ModelPool) -> Result<f64> {
        if !plan.is_routed() || plan.operator_count() == 0 {
            return Err(Error::contract("simulation needs a routed, non-empty plan"));
        }
        let mut total = 0.0;
        for (layer, decisions) in plan.layers.iter().zip(&plan.assignments) {
            for (&op, d) in layer.chosen.iter().zip(decisions) {
                let card = pool
                    .cards()
                    .get(d.model_index)
                    .ok_or_else(|| Error::contract(format!("unknown model `{}`", d.model_name)))?;
                total += card.sim_capability * self.protocol(catalog.get(op).protocol).multiplier;
            }
        }
        let mean = total / plan.operator_count() as f64;
        Ok(mean * (1.0 + 0.1 * (plan.depth as f64 - 1.0)))
    }

    pub fn success_probability(
        &self,
        plan: &WorkflowPlan,
        catalog: &OperatorCatalog,
        pool: &ModelPool,
        true_difficulty: f64,
    ) -> Result<f64> {
        let c = self.capacity(plan, catalog, pool)?;
        Ok(sigmoid(self.alpha * (c - self.beta * true_difficulty)))
    }

    /// Deterministic token usage: the protocol budget per operator.
    pub fn synthetic_trace(&self, plan: &WorkflowPlan, catalog: &OperatorCatalog) -> Vec<BackendCall> {
        let mut trace = Vec::new();
        for (layer, decisions) in plan.layers.iter().zip(&plan.assignments) {
            for (&op, d) in layer.chosen.iter().zip(decisions) {
                let budget = self.protocol(catalog.get(op).protocol).budget;
                for _ in 0..budget.calls {
                    trace.push(BackendCall {
                        model_name: d.model_name.clone(),
                        messages: Vec::new(),
                        response_text: Some(String::new()),
                        prompt_tokens: budget.prompt_tokens,
                        completion_tokens: budget.completion_tokens,
                        latency_secs: 0.0,
                    });
                }
            }
        }
        trace
    }

    pub fn simulate_outcome<R: Rng + ?Sized>(
        &self,
        plan: &WorkflowPlan,
        true_difficulty: f64,
        catalog: &OperatorCatalog,
        pool: &ModelPool,
        pricing: &Pricing,
        rng: &mut R,
    ) -> Result<SimOutcome> {
        let probability = self.success_probability(plan, catalog, pool, true_difficulty)?;
        let success = (rng.random::<f64>() < probability) as u8;
        let trace = self.synthetic_trace(plan, catalog);
        let cost_usd = ledger_cost(&trace, pricing)?;
        Ok(SimOutcome {
            success,
            probability,
            trace,
            cost_usd,
        })
    }
}
