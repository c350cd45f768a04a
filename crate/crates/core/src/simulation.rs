//! Fully offline end-to-end run: planted corpus, training against the
//! synthetic environment, held-out evaluation of the learned policy and of
//! a fixed maximal baseline.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::allocator::{OperatorCatalog, ProtocolId};
use crate::embedding::HashingEmbedder;
use crate::engine::{Engine, EngineShape};
use crate::error::{Error, Result};
use crate::harness::{
    evaluate, evaluate_with, fixed_plan, generate_corpus, split_train_test, CorpusConfig, DatasetRecord, EvalReport,
    SimEnvironment,
};
use crate::optimizer::{Trainer, TrainingConfig};
use crate::router::ModelPool;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub corpus: CorpusConfig,
    /// (train parts, test parts).
    pub split: (usize, usize),
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            split: (1, 4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub expected_success: f64,
    pub accuracy: f64,
    pub mean_cost_usd: f64,
    pub mean_depth: f64,
}

impl PolicyStats {
    fn from_report(r: &EvalReport) -> Self {
        Self {
            expected_success: r.expected_success.unwrap_or(0.0),
            accuracy: r.accuracy.unwrap_or(0.0),
            mean_cost_usd: r.mean_cost_usd,
            mean_depth: r.mean_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub queries: usize,
    pub train: usize,
    pub test: usize,
    pub episodes: usize,
    pub lambda_cost: f64,
    pub difficulty_spearman: f64,
    pub learned: PolicyStats,
    pub baseline: PolicyStats,
    /// Learned mean cost over baseline mean cost.
    pub cost_ratio: f64,
    /// Baseline minus learned expected success, in percentage points.
    pub success_gap_pp: f64,
    pub mean_depth_by_tier: std::collections::BTreeMap<String, f64>,
}

pub struct SimulationRun {
    pub summary: SimulationSummary,
    pub learned: EvalReport,
    pub baseline: EvalReport,
    pub engine: Engine,
    pub train_seconds: f64,
}

/// Builtin catalog and pool over a hashing embedder.
pub fn builtin_engine(dim: usize, shape: EngineShape, seed: u64) -> Result<Engine> {
    let embedder = Arc::new(HashingEmbedder::new(dim, 0));
    let catalog = OperatorCatalog::builtin(embedder.as_ref())?;
    let pool = ModelPool::builtin(embedder.as_ref())?;
    Engine::new(embedder, catalog, pool, shape, seed)
}

/// Baseline workflow: `L_max` layers of a single debate operator on the
/// most expensive model.
pub fn evaluate_baseline(engine: &Engine, records: &[DatasetRecord], env: &SimEnvironment, seed: u64) -> Result<EvalReport> {
    let debate = engine
        .catalog
        .iter()
        .position(|o| o.protocol == ProtocolId::Debate)
        .ok_or_else(|| Error::contract("catalog has no debate operator"))?;
    let priciest = engine
        .pool
        .index_of(&engine.pool.priciest().name)
        .expect("priciest is in the pool");
    let depth = engine.allocator.l_max();
    evaluate_with(engine, records, env, seed, &|e: &Engine, r: &DatasetRecord| {
        let q = e.prepare(&r.question)?;
        let plan = fixed_plan(&e.catalog, &e.pool, depth, debate, priciest, q.estimate.d)?;
        Ok((q, plan))
    })
}

/// Generate and split the corpus, train `engine` against `env`, then
/// evaluate it and the baseline on the held-out part.
pub fn run_simulation(
    mut engine: Engine,
    config: &SimulationConfig,
    env: &SimEnvironment,
    training: &TrainingConfig,
    seed: u64,
    log: Option<&mut dyn Write>,
) -> Result<SimulationRun> {
    let corpus = generate_corpus(&config.corpus, seed)?;
    let (train, test) = split_train_test(&corpus, config.split, seed)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::config("split", "both halves must be non-empty"));
    }
    let mut trainer = Trainer::new(training.clone(), seed)?;
    let start = Instant::now();
    trainer.train(&mut engine, &train, env, log, None)?;
    let train_seconds = start.elapsed().as_secs_f64();

    let eval_seed = seed.wrapping_add(1);
    let learned = evaluate(&engine, &test, env, eval_seed)?;
    let baseline = evaluate_baseline(&engine, &test, env, eval_seed)?;
    let l = PolicyStats::from_report(&learned);
    let b = PolicyStats::from_report(&baseline);
    let summary = SimulationSummary {
        queries: corpus.len(),
        train: train.len(),
        test: test.len(),
        episodes: training.episodes,
        lambda_cost: training.lambda_cost,
        difficulty_spearman: learned.difficulty_spearman.unwrap_or(0.0),
        cost_ratio: if b.mean_cost_usd > 0.0 { l.mean_cost_usd / b.mean_cost_usd } else { 0.0 },
        success_gap_pp: 100.0 * (b.expected_success - l.expected_success),
        mean_depth_by_tier: learned.mean_depth_by_tier.clone(),
        learned: l,
        baseline: b,
    };
    Ok(SimulationRun {
        summary,
        learned,
        baseline,
        engine,
        train_seconds,
    })
}
