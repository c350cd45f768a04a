//! Two-armed bandit: a cheap, weaker model against an expensive, stronger
//! one. The cost weight decides which arm the trained router prefers.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use flowgate::allocator::{OperatorCatalog, WorkflowPlan};
use flowgate::embedding::{Embedder, HashingEmbedder};
use flowgate::harness::{DatasetRecord, EpisodeOutcome, Environment, TaskKind};
use flowgate::optimizer::{Trainer, TrainingConfig};
use flowgate::router::ModelPool;
use flowgate::{Engine, EngineShape, Result};

struct Arms;

impl Environment for Arms {
    fn run(&self, _: &Engine, plan: &WorkflowPlan, _: &DatasetRecord, rng: &mut ChaCha8Rng) -> Result<EpisodeOutcome> {
        let (p, cost) = match plan.assignments[0][0].model_name.as_str() {
            "nano-8b" => (0.7, 0.002),
            _ => (0.9, 0.04),
        };
        Ok(EpisodeOutcome {
            utility: (rng.random::<f64>() < p) as u8,
            cost_usd: cost,
            success_probability: Some(p),
            parse_failed: false,
        })
    }
}

fn engine(seed: u64) -> Result<Engine> {
    let embedder: Arc<dyn Embedder> = Arc::new(HashingEmbedder::new(64, 0));
    let catalog = OperatorCatalog::builtin(embedder.as_ref())?.subset(&["CoT"])?;
    let pool = ModelPool::builtin(embedder.as_ref())?.subset(&["nano-8b", "ultra"])?;
    let shape = EngineShape {
        l_max: 1,
        temperature: 0.25,
        ..EngineShape::default()
    };
    Engine::new(embedder, catalog, pool, shape, seed)
}

fn main() -> Result<()> {
    let records: Vec<DatasetRecord> = (0..8)
        .map(|i| DatasetRecord {
            id: format!("q{i}"),
            question: format!("Routing question number {i}"),
            gold_answer: "0".into(),
            task_kind: TaskKind::Numeric,
            true_difficulty: None,
            tier: None,
        })
        .collect();
    // Expected reward per arm: p - lambda * cost / 1e-3.
    for lambda in [0.0, 1e-3, 1e-2] {
        let mut e = engine(0)?;
        let cfg = TrainingConfig {
            episodes: 2000,
            lambda_cost: lambda,
            ..TrainingConfig::default()
        };
        Trainer::new(cfg, 0)?.train(&mut e, &records, &Arms, None, None)?;
        let (_, plan) = e.route(&records[0].question)?;
        let d = &plan.assignments[0][0];
        println!(
            "lambda {lambda:<6} nano {:+.3} ultra {:+.3} -> picks {} (p = {:.3})",
            0.7 - lambda * 2.0,
            0.9 - lambda * 40.0,
            d.model_name,
            d.probabilities[d.model_index]
        );
    }
    Ok(())
}
