//! Per-operator model routing: a temperature softmax over cosine
//! similarities between a combined (query, difficulty, operator) embedding
//! and projected model embeddings. Parameters are shared across layers.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{OperatorCatalog, WorkflowPlan, PlanMode};
use crate::difficulty::DifficultyEstimate;
use crate::embedding::{Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::numerics::{dot, softmax_with_temperature, GradientBundle, Matrix, Mlp, MlpSpec, Tape, Trainable};

/// Logits are cosines in [-1, 1]; at T = 1 four models cap the top
/// probability near 0.71, at 0.5 near 0.95.
pub const DEFAULT_TEMPERATURE: f64 = 0.5;
pub const ROUTER_HIDDEN: usize = 64;
pub const ROUTER_OUT: usize = 32;
pub const BUILTIN_MODELS: &str = include_str!("../assets/models.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub name: String,
    pub profile_text: String,
    /// USD per million prompt tokens.
    pub price_prompt: f64,
    /// USD per million completion tokens.
    pub price_completion: f64,
    /// Only read by the synthetic simulator.
    #[serde(default = "default_capability")]
    pub sim_capability: f64,
    #[serde(skip)]
    pub embedding: Option<EmbeddingVector>,
}

fn default_capability() -> f64 {
    0.5
}

impl ModelCard {
    pub fn embedding(&self) -> Result<&EmbeddingVector> {
        self.embedding
            .as_ref()
            .ok_or_else(|| Error::contract(format!("model `{}` has no embedding", self.name)))
    }
}

/// Candidate backbone models. Embeddings are computed from profile text at
/// load time and never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPool {
    cards: Vec<ModelCard>,
}

impl ModelPool {
    pub fn new(mut cards: Vec<ModelCard>, embedder: &dyn Embedder) -> Result<Self> {
        if cards.is_empty() {
            return Err(Error::contract("model pool is empty"));
        }
        for (i, card) in cards.iter().enumerate() {
            if cards[..i].iter().any(|c| c.name == card.name) {
                return Err(Error::contract(format!("duplicate model `{}`", card.name)));
            }
            if !(card.price_prompt >= 0.0 && card.price_completion >= 0.0) {
                return Err(Error::contract(format!("model `{}` has a negative price", card.name)));
            }
            if !(card.sim_capability > 0.0 && card.sim_capability < 1.0) {
                return Err(Error::contract(format!(
                    "model `{}` sim_capability must lie in (0, 1)",
                    card.name
                )));
            }
        }
        for card in &mut cards {
            card.embedding = Some(embedder.embed(&card.profile_text)?);
        }
        Ok(Self { cards })
    }

    pub fn from_json(text: &str, embedder: &dyn Embedder) -> Result<Self> {
        Self::new(serde_json::from_str(text)?, embedder)
    }

    pub fn load(path: &Path, embedder: &dyn Embedder) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, embedder)
    }

    pub fn builtin(embedder: &dyn Embedder) -> Result<Self> {
        Self::from_json(BUILTIN_MODELS, embedder)
    }

    pub fn subset(&self, names: &[&str]) -> Result<Self> {
        let cards = names
            .iter()
            .map(|n| {
                self.get(n)
                    .cloned()
                    .ok_or_else(|| Error::contract(format!("no model `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cards })
    }

    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }

    pub fn cards(&self) -> &[ModelCard] {
        &self.cards
    }

    pub fn get(&self, name: &str) -> Option<&ModelCard> {
        self.cards.iter().find(|c| c.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.cards.iter().position(|c| c.name == name)
    }

    /// Highest combined per-token price; ties go to the earlier card.
    pub fn priciest(&self) -> &ModelCard {
        let mut best = &self.cards[0];
        for c in &self.cards[1..] {
            if c.price_prompt + c.price_completion > best.price_prompt + best.price_completion {
                best = c;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub layer: usize,
    pub slot: usize,
    pub model_index: usize,
    pub model_name: String,
    pub probabilities: Vec<f64>,
    pub log_prob: f64,
}

fn normalize(v: &[f64]) -> (Vec<f64>, f64) {
    let norm = dot(v, v).sqrt();
    if norm == 0.0 {
        return (vec![0.0; v.len()], 0.0);
    }
    (v.iter().map(|x| x / norm).collect(), norm)
}

/// Backward of `n = v / ‖v‖`: `(g − n⟨n, g⟩) / ‖v‖`.
fn normalize_backward(n: &[f64], norm: f64, g: &[f64]) -> Vec<f64> {
    if norm == 0.0 {
        return vec![0.0; n.len()];
    }
    let proj = dot(n, g);
    n.iter().zip(g).map(|(ni, gi)| (gi - ni * proj) / norm).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Router {
    ffn_query: Mlp,
    w_latent: Matrix,
    ffn_operator: Mlp,
    ffn_combined: Mlp,
    ffn_model: Mlp,
    temperature: f64,
}

struct Projected {
    unit: Vec<f64>,
    norm: f64,
    tape: Tape,
}

fn project(net: &Mlp, input: &[f64]) -> Result<Projected> {
    let (out, tape) = net.forward(input)?;
    let (unit, norm) = normalize(&out);
    Ok(Projected { unit, norm, tape })
}

/// Query- and pool-level projections reused by every operator of a plan.
pub struct RoutingContext {
    query_out: Vec<f64>,
    query_tape: Tape,
    latent: Vec<f64>,
    latent_out: Vec<f64>,
    models: Vec<Projected>,
    operators: Vec<Option<(Vec<f64>, Tape)>>,
}

impl Router {
    pub fn new<R: Rng + ?Sized>(embed_dim: usize, latent_dim: usize, temperature: f64, rng: &mut R) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::config("temperature", format!("must be positive, got {temperature}")));
        }
        Ok(Self {
            ffn_query: Mlp::init(MlpSpec::one_hidden(embed_dim, ROUTER_HIDDEN, ROUTER_OUT), rng),
            w_latent: Matrix::xavier(ROUTER_OUT, latent_dim, rng),
            ffn_operator: Mlp::init(MlpSpec::one_hidden(embed_dim, ROUTER_HIDDEN, ROUTER_OUT), rng),
            ffn_combined: Mlp::init(MlpSpec::one_hidden(3 * ROUTER_OUT, ROUTER_HIDDEN, ROUTER_OUT), rng),
            ffn_model: Mlp::init(MlpSpec::one_hidden(embed_dim, ROUTER_HIDDEN, ROUTER_OUT), rng),
            temperature,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, t: f64) -> Result<()> {
        if !(t > 0.0) {
            return Err(Error::config("temperature", format!("must be positive, got {t}")));
        }
        self.temperature = t;
        Ok(())
    }

    pub fn model_network_mut(&mut self) -> &mut Mlp {
        &mut self.ffn_model
    }

    pub fn context(
        &self,
        query: &EmbeddingVector,
        z: &[f64],
        catalog_len: usize,
        pool: &ModelPool,
    ) -> Result<RoutingContext> {
        if pool.is_empty() {
            return Err(Error::contract("cannot route over an empty pool"));
        }
        if z.len() != self.w_latent.cols() {
            return Err(Error::contract("latent dim does not match the router"));
        }
        let (query_out, query_tape) = self.ffn_query.forward(query.as_slice())?;
        let latent_out = self.w_latent.matvec(z)?;
        let models = pool
            .cards()
            .iter()
            .map(|c| project(&self.ffn_model, c.embedding()?.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        Ok(RoutingContext {
            query_out,
            query_tape,
            latent: z.to_vec(),
            latent_out,
            models,
            operators: vec![None; catalog_len],
        })
    }

    fn operator_out<'c>(
        &self,
        ctx: &'c mut RoutingContext,
        op_index: usize,
        op_embedding: &EmbeddingVector,
    ) -> Result<&'c (Vec<f64>, Tape)> {
        if op_index >= ctx.operators.len() {
            return Err(Error::contract("operator index out of range"));
        }
        if ctx.operators[op_index].is_none() {
            ctx.operators[op_index] = Some(self.ffn_operator.forward(op_embedding.as_slice())?);
        }
        Ok(ctx.operators[op_index].as_ref().unwrap())
    }

    fn combined(&self, ctx: &mut RoutingContext, op_index: usize, op_embedding: &EmbeddingVector) -> Result<Projected> {
        let op_out = self.operator_out(ctx, op_index, op_embedding)?.0.clone();
        let mut input = Vec::with_capacity(3 * ROUTER_OUT);
        input.extend_from_slice(&ctx.query_out);
        input.extend_from_slice(&ctx.latent_out);
        input.extend_from_slice(&op_out);
        project(&self.ffn_combined, &input)
    }

    fn similarities(&self, ctx: &RoutingContext, h: &[f64]) -> Vec<f64> {
        ctx.models.iter().map(|m| dot(h, &m.unit)).collect()
    }

    /// Probabilities over the pool for one operator.
    pub fn route_distribution(
        &self,
        ctx: &mut RoutingContext,
        op_index: usize,
        op_embedding: &EmbeddingVector,
    ) -> Result<Vec<f64>> {
        let h = self.combined(ctx, op_index, op_embedding)?;
        Ok(softmax_with_temperature(&self.similarities(ctx, &h.unit), self.temperature))
    }

    /// Raw cosine similarities (before temperature) for one operator.
    pub fn similarity_logits(
        &self,
        ctx: &mut RoutingContext,
        op_index: usize,
        op_embedding: &EmbeddingVector,
    ) -> Result<Vec<f64>> {
        let h = self.combined(ctx, op_index, op_embedding)?;
        Ok(self.similarities(ctx, &h.unit))
    }

    /// Assign a model to every operator of `plan`, adding router
    /// log-probabilities into `plan.log_prob_total`.
    pub fn assign_models<R: Rng + ?Sized>(
        &self,
        plan: &mut WorkflowPlan,
        query: &EmbeddingVector,
        estimate: &DifficultyEstimate,
        catalog: &OperatorCatalog,
        pool: &ModelPool,
        mode: PlanMode,
        rng: &mut R,
    ) -> Result<()> {
        if !plan.assignments.is_empty() {
            return Err(Error::contract("plan already has model assignments"));
        }
        let mut ctx = self.context(query, &estimate.z, catalog.len(), pool)?;
        let mut assignments = Vec::with_capacity(plan.layers.len());
        let mut added = 0.0;
        for (l, layer) in plan.layers.iter().enumerate() {
            let mut row = Vec::with_capacity(layer.chosen.len());
            for (slot, &op) in layer.chosen.iter().enumerate() {
                let probs = self.route_distribution(&mut ctx, op, &catalog.get(op).embedding)?;
                let pick = match mode {
                    PlanMode::Deterministic => argmax(&probs),
                    PlanMode::Sampled => draw(&probs, rng),
                };
                let log_prob = probs[pick].ln();
                added += log_prob;
                row.push(RoutingDecision {
                    layer: l,
                    slot,
                    model_index: pick,
                    model_name: pool.cards()[pick].name.clone(),
                    probabilities: probs,
                    log_prob,
                });
            }
            assignments.push(row);
        }
        plan.assignments = assignments;
        plan.log_prob_total += added;
        Ok(())
    }

    /// Recompute the router share of a routed plan's log-probability.
    pub fn assignments_log_prob(
        &self,
        plan: &WorkflowPlan,
        query: &EmbeddingVector,
        estimate: &DifficultyEstimate,
        catalog: &OperatorCatalog,
        pool: &ModelPool,
    ) -> Result<f64> {
        if !plan.is_routed() {
            return Err(Error::contract("plan has no model assignments"));
        }
        let mut ctx = self.context(query, &estimate.z, catalog.len(), pool)?;
        let mut total = 0.0;
        for (layer, decisions) in plan.layers.iter().zip(&plan.assignments) {
            for (&op, dec) in layer.chosen.iter().zip(decisions) {
                if dec.model_index >= pool.len() || pool.cards()[dec.model_index].name != dec.model_name {
                    return Err(Error::contract(format!("model `{}` is not in the pool", dec.model_name)));
                }
                let probs = self.route_distribution(&mut ctx, op, &catalog.get(op).embedding)?;
                total += probs[dec.model_index].ln();
            }
        }
        Ok(total)
    }

    /// `weight · ∇θ Σ ln p(chosen model)` over every decision in `plan`.
    pub fn log_prob_gradient(
        &self,
        plan: &WorkflowPlan,
        query: &EmbeddingVector,
        z: &[f64],
        catalog: &OperatorCatalog,
        pool: &ModelPool,
        weight: f64,
    ) -> Result<GradientBundle> {
        let mut grads = GradientBundle::zeros_like(self);
        self.accumulate_log_prob_gradient(plan, query, z, catalog, pool, weight, &mut grads)?;
        Ok(grads)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn accumulate_log_prob_gradient(
        &self,
        plan: &WorkflowPlan,
        query: &EmbeddingVector,
        z: &[f64],
        catalog: &OperatorCatalog,
        pool: &ModelPool,
        weight: f64,
        grads: &mut GradientBundle,
    ) -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        if !plan.is_routed() {
            return Err(Error::contract("plan has no model assignments"));
        }
        let mut ctx = self.context(query, z, catalog.len(), pool)?;
        let t = self.temperature;
        let mut d_query = vec![0.0; ROUTER_OUT];
        let mut d_latent = vec![0.0; ROUTER_OUT];
        let mut d_ops: Vec<Option<Vec<f64>>> = vec![None; catalog.len()];
        let mut d_models = vec![vec![0.0; ROUTER_OUT]; pool.len()];

        // Offsets into the flat parameter list: query(4), latent(1), operator(4), combined(4), model(4).
        let (g_query, rest) = grads.0.split_at_mut(4);
        let (g_latent, rest) = rest.split_at_mut(1);
        let (g_operator, rest) = rest.split_at_mut(4);
        let (g_combined, g_model) = rest.split_at_mut(4);

        for (layer, decisions) in plan.layers.iter().zip(&plan.assignments) {
            for (&op, dec) in layer.chosen.iter().zip(decisions) {
                let op_out = self.operator_out(&mut ctx, op, &catalog.get(op).embedding)?.0.clone();
                let mut input = Vec::with_capacity(3 * ROUTER_OUT);
                input.extend_from_slice(&ctx.query_out);
                input.extend_from_slice(&ctx.latent_out);
                input.extend_from_slice(&op_out);
                let h = project(&self.ffn_combined, &input)?;
                let sims = self.similarities(&ctx, &h.unit);
                let probs = softmax_with_temperature(&sims, t);

                let mut d_h_unit = vec![0.0; ROUTER_OUT];
                for (m, p) in probs.iter().enumerate() {
                    let onehot = if m == dec.model_index { 1.0 } else { 0.0 };
                    let d_sim = weight * (onehot - p) / t;
                    if d_sim == 0.0 {
                        continue;
                    }
                    for j in 0..ROUTER_OUT {
                        d_h_unit[j] += d_sim * ctx.models[m].unit[j];
                        d_models[m][j] += d_sim * h.unit[j];
                    }
                }
                let d_h = normalize_backward(&h.unit, h.norm, &d_h_unit);
                let d_input = self.ffn_combined.backward_into(&h.tape, &d_h, g_combined, 1.0)?;
                for j in 0..ROUTER_OUT {
                    d_query[j] += d_input[j];
                    d_latent[j] += d_input[ROUTER_OUT + j];
                }
                let d_op = d_ops[op].get_or_insert_with(|| vec![0.0; ROUTER_OUT]);
                for j in 0..ROUTER_OUT {
                    d_op[j] += d_input[2 * ROUTER_OUT + j];
                }
            }
        }

        self.ffn_query.backward_into(&ctx.query_tape, &d_query, g_query, 1.0)?;
        g_latent[0].add_outer(&d_latent, &ctx.latent, 1.0);
        for (op, d) in d_ops.iter().enumerate() {
            if let (Some(d), Some((_, tape))) = (d, &ctx.operators[op]) {
                self.ffn_operator.backward_into(tape, d, g_operator, 1.0)?;
            }
        }
        for (m, d) in d_models.iter().enumerate() {
            let proj = &ctx.models[m];
            let d_raw = normalize_backward(&proj.unit, proj.norm, d);
            self.ffn_model.backward_into(&proj.tape, &d_raw, g_model, 1.0)?;
        }
        Ok(())
    }
}

impl Trainable for Router {
    fn parameters(&self) -> Vec<&Matrix> {
        let mut p = self.ffn_query.parameters();
        p.push(&self.w_latent);
        p.extend(self.ffn_operator.parameters());
        p.extend(self.ffn_combined.parameters());
        p.extend(self.ffn_model.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.ffn_query.parameters_mut();
        p.push(&mut self.w_latent);
        p.extend(self.ffn_operator.parameters_mut());
        p.extend(self.ffn_combined.parameters_mut());
        p.extend(self.ffn_model.parameters_mut());
        p
    }
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
