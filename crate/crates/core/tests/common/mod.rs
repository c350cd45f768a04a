#![allow(dead_code)]

use std::sync::Arc;

use flowgate::allocator::{LayerSelection, OperatorCatalog, WorkflowPlan};
use flowgate::difficulty::DifficultyEstimate;
use flowgate::embedding::{Embedder, HashingEmbedder};
use flowgate::numerics::softmax;
use flowgate::router::{ModelPool, RoutingDecision};
use flowgate::{Engine, EngineShape, PreparedQuery};

/// Every stopped draw sequence of the threshold sampler, with its
/// probability, by direct recursion over draws without replacement.
pub fn stopped_sequences(scores: &[f64], tau: f64) -> Vec<(Vec<usize>, f64)> {
    fn go(scores: &[f64], tau: f64, prefix: &mut Vec<usize>, p: f64, mass: f64, out: &mut Vec<(Vec<usize>, f64)>) {
        let left: Vec<usize> = (0..scores.len()).filter(|i| !prefix.contains(i)).collect();
        if mass > tau || left.is_empty() {
            out.push((prefix.clone(), p));
            return;
        }
        let total: f64 = left.iter().map(|&i| scores[i]).sum();
        for i in left {
            prefix.push(i);
            go(scores, tau, prefix, p * scores[i] / total, mass + scores[i], out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(scores, tau, &mut Vec::new(), 1.0, 0.0, &mut out);
    out
}

/// Small engine over `ops` × `models` with the given depth cap.
pub fn small_engine(ops: &[&str], models: &[&str], l_max: usize, temperature: f64, seed: u64) -> Engine {
    let embedder: Arc<dyn Embedder> = Arc::new(HashingEmbedder::new(24, seed));
    let catalog = OperatorCatalog::builtin(embedder.as_ref()).unwrap().subset(ops).unwrap();
    let pool = ModelPool::builtin(embedder.as_ref()).unwrap().subset(models).unwrap();
    let shape = EngineShape {
        latent_dim: 4,
        head_hidden: 6,
        scorer_hidden: 8,
        l_max,
        temperature,
        ..EngineShape::default()
    };
    Engine::new(embedder, catalog, pool, shape, seed).unwrap()
}

/// Query with the estimate pinned to `d` (the latent keeps the encoder mean).
pub fn pinned_query(engine: &Engine, text: &str, d: f64) -> PreparedQuery {
    let mut q = engine.prepare(text).unwrap();
    q.estimate = DifficultyEstimate { z: q.estimate.z, d };
    q
}

/// The whole plan space for `query`, each plan with its probability
/// computed from the layer recursion and per-operator routing softmaxes.
pub fn enumerate_plans(engine: &Engine, query: &PreparedQuery) -> Vec<(WorkflowPlan, f64)> {
    let depth = flowgate::allocator::adapt_depth(query.estimate.d, engine.allocator.l_max());
    let scorer = engine.allocator.scorer();
    let projections = scorer.project_operators(&engine.catalog);
    let tau = engine.allocator.tau();

    let mut layer_plans: Vec<(Vec<LayerSelection>, f64)> = vec![(Vec::new(), 1.0)];
    for _ in 0..depth {
        let mut next = Vec::new();
        for (layers, p) in &layer_plans {
            let ctx = scorer
                .build_context(&query.estimate.z, &query.embedding, layers, &engine.catalog)
                .unwrap();
            let scores = softmax(&scorer.score(&ctx, &projections).raw);
            for (seq, q) in stopped_sequences(&scores, tau) {
                let mut l = layers.clone();
                l.push(LayerSelection {
                    chosen: seq,
                    normalized_scores: scores.clone(),
                    log_prob: q.ln(),
                });
                next.push((l, p * q));
            }
        }
        layer_plans = next;
    }

    let mut ctx = engine
        .router
        .context(&query.embedding, &query.estimate.z, engine.catalog.len(), &engine.pool)
        .unwrap();
    let route: Vec<Vec<f64>> = (0..engine.catalog.len())
        .map(|op| {
            engine
                .router
                .route_distribution(&mut ctx, op, &engine.catalog.get(op).embedding)
                .unwrap()
        })
        .collect();

    let mut out = Vec::new();
    for (layers, p_layers) in layer_plans {
        let slots: Vec<(usize, usize, usize)> = layers
            .iter()
            .enumerate()
            .flat_map(|(l, sel)| sel.chosen.iter().enumerate().map(move |(s, &op)| (l, s, op)))
            .collect();
        let m = engine.pool.len();
        let combos = m.pow(slots.len() as u32);
        for c in 0..combos {
            let mut code = c;
            let mut assignments: Vec<Vec<RoutingDecision>> = layers.iter().map(|_| Vec::new()).collect();
            let mut p = p_layers;
            for &(l, s, op) in &slots {
                let pick = code % m;
                code /= m;
                p *= route[op][pick];
                assignments[l].push(RoutingDecision {
                    layer: l,
                    slot: s,
                    model_index: pick,
                    model_name: engine.pool.cards()[pick].name.clone(),
                    probabilities: route[op].clone(),
                    log_prob: route[op][pick].ln(),
                });
            }
            let log_prob_total = layers.iter().map(|l| l.log_prob).sum::<f64>()
                + assignments.iter().flatten().map(|d| d.log_prob).sum::<f64>();
            out.push((
                WorkflowPlan {
                    depth,
                    layers: layers.clone(),
                    assignments,
                    log_prob_total,
                    difficulty_used: query.estimate.d,
                },
                p,
            ));
        }
    }
    out
}

/// Identity of a plan's discrete choices.
pub fn plan_key(plan: &WorkflowPlan) -> Vec<Vec<(usize, usize)>> {
    plan.layers
        .iter()
        .zip(&plan.assignments)
        .map(|(l, a)| l.chosen.iter().zip(a).map(|(&o, d)| (o, d.model_index)).collect())
        .collect()
}
