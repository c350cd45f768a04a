//! Operator allocator: depth from difficulty, layer-by-layer operator
//! scoring conditioned on everything chosen so far, and cumulative-threshold
//! width selection.

mod catalog;
mod scorer;
mod selection;

pub use catalog::{OperatorCatalog, OperatorSpec, ProtocolId, BUILTIN_OPERATORS};
pub use scorer::{OperatorProjections, OperatorScorer, ScorerGradient, ScoringPass, DEFAULT_SCORER_HIDDEN};
pub use selection::{
    adapt_depth, descending_order, sample_layer, select_layer, sequence_log_prob,
    sequence_logit_gradient, LayerSelection,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::difficulty::DifficultyEstimate;
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::numerics::{softmax, GradientBundle, Matrix, Trainable};
use crate::router::RoutingDecision;

pub const DEFAULT_TAU: f64 = 0.3;
pub const DEFAULT_L_MAX: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    /// Threshold decoder and argmax routing.
    Deterministic,
    /// Without-replacement draws and sampled routing (training).
    Sampled,
}

/// A layered workflow. Every operator of layer `l + 1` consumes all outputs
/// of layer `l`, so plans are acyclic by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowPlan {
    pub depth: usize,
    pub layers: Vec<LayerSelection>,
    /// Parallel to `layers[l].chosen`; empty until models are assigned.
    pub assignments: Vec<Vec<RoutingDecision>>,
    pub log_prob_total: f64,
    pub difficulty_used: f64,
}

/// Wire form of a plan with stable key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanJson {
    pub depth: usize,
    pub layers: Vec<PlanLayerJson>,
    pub log_prob: f64,
    pub difficulty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanLayerJson {
    pub operators: Vec<String>,
    pub models: Vec<String>,
}

impl WorkflowPlan {
    pub fn is_routed(&self) -> bool {
        self.assignments.len() == self.layers.len()
            && self
                .assignments
                .iter()
                .zip(&self.layers)
                .all(|(a, l)| a.len() == l.chosen.len())
    }

    pub fn operator_count(&self) -> usize {
        self.layers.iter().map(|l| l.chosen.len()).sum()
    }

    pub fn allocator_log_prob(&self) -> f64 {
        self.layers.iter().map(|l| l.log_prob).sum()
    }

    pub fn model_at(&self, layer: usize, slot: usize) -> Option<&RoutingDecision> {
        self.assignments.get(layer).and_then(|a| a.get(slot))
    }

    pub fn to_wire(&self, catalog: &OperatorCatalog) -> PlanJson {
        PlanJson {
            depth: self.depth,
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(l, layer)| PlanLayerJson {
                    operators: layer
                        .chosen
                        .iter()
                        .map(|&i| catalog.get(i).name.clone())
                        .collect(),
                    models: self
                        .assignments
                        .get(l)
                        .map(|a| a.iter().map(|d| d.model_name.clone()).collect())
                        .unwrap_or_default(),
                })
                .collect(),
            log_prob: self.log_prob_total,
            difficulty: self.difficulty_used,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocator {
    scorer: OperatorScorer,
    tau: f64,
    l_max: usize,
}

impl Allocator {
    pub fn new<R: Rng + ?Sized>(
        latent_dim: usize,
        embed_dim: usize,
        tau: f64,
        l_max: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let scorer = OperatorScorer::new(latent_dim, embed_dim, l_max, hidden, rng);
        Self::from_scorer(scorer, tau, l_max)
    }

    pub fn from_scorer(scorer: OperatorScorer, tau: f64, l_max: usize) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::config("tau", format!("must lie in (0, 1), got {tau}")));
        }
        if l_max == 0 {
            return Err(Error::config("l_max", "must be at least 1"));
        }
        if scorer.history_slots() != l_max - 1 {
            return Err(Error::contract("scorer history slots do not match l_max"));
        }
        Ok(Self { scorer, tau, l_max })
    }

    pub fn scorer(&self) -> &OperatorScorer {
        &self.scorer
    }

    pub fn scorer_mut(&mut self) -> &mut OperatorScorer {
        &mut self.scorer
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Threshold changes do not touch the network.
    pub fn set_tau(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::config("tau", format!("must lie in (0, 1), got {tau}")));
        }
        self.tau = tau;
        Ok(())
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// Build the operator layers autoregressively; models are not assigned.
    pub fn build_plan<R: Rng + ?Sized>(
        &self,
        query: &EmbeddingVector,
        estimate: &DifficultyEstimate,
        catalog: &OperatorCatalog,
        mode: PlanMode,
        rng: &mut R,
    ) -> Result<WorkflowPlan> {
        if !(estimate.d > 0.0 && estimate.d < 1.0) {
            return Err(Error::contract(format!("difficulty {} outside (0, 1)", estimate.d)));
        }
        let depth = adapt_depth(estimate.d, self.l_max);
        let projections = self.scorer.project_operators(catalog);
        let mut layers: Vec<LayerSelection> = Vec::with_capacity(depth);
        for _ in 0..depth {
            let ctx = self.scorer.build_context(&estimate.z, query, &layers, catalog)?;
            let scores = softmax(&self.scorer.score(&ctx, &projections).raw);
            let layer = match mode {
                PlanMode::Sampled => sample_layer(&scores, self.tau, rng),
                PlanMode::Deterministic => {
                    let chosen = select_layer(&scores, self.tau);
                    let log_prob = sequence_log_prob(&scores, &chosen, self.tau)?;
                    LayerSelection {
                        chosen,
                        normalized_scores: scores,
                        log_prob,
                    }
                }
            };
            layers.push(layer);
        }
        let log_prob_total = layers.iter().map(|l| l.log_prob).sum();
        Ok(WorkflowPlan {
            depth,
            layers,
            assignments: Vec::new(),
            log_prob_total,
            difficulty_used: estimate.d,
        })
    }

    /// Recompute the allocator share of a plan's log-probability from scratch.
    pub fn layers_log_prob(
        &self,
        plan: &WorkflowPlan,
        query: &EmbeddingVector,
        estimate: &DifficultyEstimate,
        catalog: &OperatorCatalog,
    ) -> Result<f64> {
        self.check_plan(plan, estimate, catalog)?;
        let projections = self.scorer.project_operators(catalog);
        let mut total = 0.0;
        for l in 0..plan.depth {
            let ctx = self
                .scorer
                .build_context(&estimate.z, query, &plan.layers[..l], catalog)?;
            let scores = softmax(&self.scorer.score(&ctx, &projections).raw);
            total += sequence_log_prob(&scores, &plan.layers[l].chosen, self.tau)?;
        }
        Ok(total)
    }

    fn check_plan(
        &self,
        plan: &WorkflowPlan,
        estimate: &DifficultyEstimate,
        catalog: &OperatorCatalog,
    ) -> Result<()> {
        if plan.layers.len() != plan.depth || plan.depth == 0 || plan.depth > self.l_max {
            return Err(Error::contract("plan depth is inconsistent"));
        }
        if plan.depth != adapt_depth(estimate.d, self.l_max) {
            return Err(Error::contract("plan depth does not match the estimate"));
        }
        if plan
            .layers
            .iter()
            .any(|l| l.normalized_scores.len() != catalog.len() || l.chosen.iter().any(|&i| i >= catalog.len()))
        {
            return Err(Error::contract("plan was built against a different catalog"));
        }
        Ok(())
    }

    /// Add `weight · ∇θ ln P_alloc(plan)` into `acc`.
    pub fn accumulate_log_prob_gradient(
        &self,
        plan: &WorkflowPlan,
        query: &EmbeddingVector,
        z: &[f64],
        catalog: &OperatorCatalog,
        weight: f64,
        acc: &mut ScorerGradient,
    ) -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        let projections = self.scorer.project_operators(catalog);
        for l in 0..plan.layers.len() {
            let ctx = self.scorer.build_context(z, query, &plan.layers[..l], catalog)?;
            let pass = self.scorer.score(&ctx, &projections);
            let scores = softmax(&pass.raw);
            let mut grad = sequence_logit_gradient(&scores, &plan.layers[l].chosen);
            grad.iter_mut().for_each(|g| *g *= weight);
            self.scorer.accumulate(&pass, &grad, acc);
        }
        Ok(())
    }

    pub fn gradient(&self, catalog: &OperatorCatalog) -> ScorerGradient {
        self.scorer.gradient(catalog)
    }

    pub fn finish_gradient(&self, acc: ScorerGradient, catalog: &OperatorCatalog) -> GradientBundle {
        self.scorer.finish(acc, catalog)
    }
}

impl Trainable for Allocator {
    fn parameters(&self) -> Vec<&Matrix> {
        self.scorer.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.scorer.parameters_mut()
    }
}
