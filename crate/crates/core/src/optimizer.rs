//! Score-function training of the allocator and router against
//! `U − λ · cost`, plus outcome feedback into the difficulty estimator.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{PlanMode, WorkflowPlan};
use crate::difficulty::{
    DifficultyFitter, OutcomeRecord, ReplayBuffer, DEFAULT_LAMBDA_KL, DEFAULT_REPLAY_CAPACITY,
};
use crate::embedding::EmbeddingVector;
use crate::engine::{Engine, PreparedQuery};
use crate::error::{Error, Result};
use crate::executor::ledger_cost;
use crate::harness::{DatasetRecord, Environment};
use crate::numerics::{GradientBundle, Matrix, Sgd, Trainable};

/// Rewards measure cost in units of 10⁻³ USD.
pub const COST_UNIT_USD: f64 = 1e-3;
pub const LAMBDA_COST_SET: [f64; 3] = [1e-3, 5e-3, 1e-2];

/// `U − λ · cost_usd / 10⁻³`.
pub fn reward(utility: u8, cost_usd: f64, lambda_cost: f64) -> f64 {
    utility as f64 - lambda_cost * (cost_usd / COST_UNIT_USD)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lambda_cost: f64,
    /// Plans sampled per query.
    pub k: usize,
    pub episodes: usize,
    pub policy_learning_rate: f64,
    pub policy_momentum: f64,
    pub difficulty_learning_rate: f64,
    pub difficulty_momentum: f64,
    pub lambda_kl: f64,
    pub replay_capacity: usize,
    pub replay_batch: usize,
    /// Episodes computed against one parameter snapshot.
    pub parallel: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda_cost: 1e-3,
            k: 4,
            episodes: 5000,
            policy_learning_rate: 0.05,
            policy_momentum: 0.9,
            difficulty_learning_rate: 0.1,
            difficulty_momentum: 0.9,
            lambda_kl: DEFAULT_LAMBDA_KL,
            replay_capacity: DEFAULT_REPLAY_CAPACITY,
            replay_batch: 32,
            parallel: 1,
            checkpoint_every: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, msg))
            }
        };
        check(self.lambda_cost >= 0.0 && self.lambda_cost.is_finite(), "lambda_cost", "must be non-negative")?;
        check(self.k >= 1, "k", "must be at least 1")?;
        check(self.policy_learning_rate >= 0.0, "policy_learning_rate", "must be non-negative")?;
        check((0.0..1.0).contains(&self.policy_momentum), "policy_momentum", "must lie in [0, 1)")?;
        check(self.difficulty_learning_rate >= 0.0, "difficulty_learning_rate", "must be non-negative")?;
        check((0.0..1.0).contains(&self.difficulty_momentum), "difficulty_momentum", "must lie in [0, 1)")?;
        check(self.lambda_kl > 0.0, "lambda_kl", "must be positive")?;
        check(self.replay_capacity >= 1, "replay_capacity", "must be at least 1")?;
        check(self.replay_batch >= 1, "replay_batch", "must be at least 1")?;
        check(self.parallel >= 1, "parallel", "must be at least 1")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub query_id: String,
    pub rewards: Vec<f64>,
    pub baseline: f64,
    pub mean_cost_usd: f64,
    /// Difficulty the plans were conditioned on.
    pub d: f64,
    pub utilities: Vec<u8>,
    pub depths: Vec<usize>,
    /// A policy step was taken (some advantage was non-zero).
    pub applied: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

/// Sampled plans, their outcomes and the ascent direction, computed
/// against a fixed parameter snapshot.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub record: EpisodeRecord,
    pub embedding: EmbeddingVector,
    pub plans: Vec<WorkflowPlan>,
    /// Descent direction `−Σ_k A_k ∇ ln P(plan_k)` over allocator then
    /// router parameters; `None` when every advantage is zero.
    pub gradient: Option<GradientBundle>,
    pub best_utility: Option<u8>,
}

/// Per-plan weights `(R_k − mean R) / max(K − 1, 1)`. The `1/(K−1)` factor
/// turns the mean-of-K baseline into the leave-one-out estimator.
pub fn advantages(rewards: &[f64]) -> (f64, Vec<f64>) {
    let k = rewards.len();
    if rewards.iter().all(|&r| r == rewards[0]) {
        return (rewards[0], vec![0.0; k]);
    }
    let baseline = rewards.iter().sum::<f64>() / k as f64;
    let scale = 1.0 / (k.max(2) - 1) as f64;
    (baseline, rewards.iter().map(|r| (r - baseline) * scale).collect())
}

/// `Σ_k w_k ∇θ ln P(plan_k)` over the allocator and router parameters.
pub fn weighted_log_prob_gradient(
    engine: &Engine,
    query: &PreparedQuery,
    plans: &[WorkflowPlan],
    weights: &[f64],
) -> Result<GradientBundle> {
    let z = &query.estimate.z;
    let mut acc = engine.allocator.gradient(&engine.catalog);
    let mut router = GradientBundle::zeros_like(&engine.router);
    for (plan, &w) in plans.iter().zip(weights) {
        engine
            .allocator
            .accumulate_log_prob_gradient(plan, &query.embedding, z, &engine.catalog, w, &mut acc)?;
        engine.router.accumulate_log_prob_gradient(
            plan,
            &query.embedding,
            z,
            &engine.catalog,
            &engine.pool,
            w,
            &mut router,
        )?;
    }
    let alloc = engine.allocator.finish_gradient(acc, &engine.catalog);
    Ok(GradientBundle::concat(vec![alloc, router]))
}

pub fn policy_parameters_mut(engine: &mut Engine) -> Vec<&mut Matrix> {
    let mut p = engine.allocator.parameters_mut();
    p.extend(engine.router.parameters_mut());
    p
}

/// Sample `K` plans, run them and form the policy gradient. Reads the
/// engine only.
pub fn rollout(
    engine: &Engine,
    record: &DatasetRecord,
    embedding: EmbeddingVector,
    env: &dyn Environment,
    config: &TrainingConfig,
    episode: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout> {
    let query = engine.prepare_embedded(embedding)?;
    let mut plans = Vec::with_capacity(config.k);
    let mut utilities = Vec::with_capacity(config.k);
    let mut costs = Vec::with_capacity(config.k);
    let mut errors = Vec::new();
    for _ in 0..config.k {
        let plan = engine.plan(&query, PlanMode::Sampled, rng)?;
        match env.run(engine, &plan, record, rng) {
            Ok(o) => {
                utilities.push(o.utility);
                costs.push(o.cost_usd);
            }
            Err(e) => {
                let partial = match &e {
                    Error::Execution { partial_trace, .. } => ledger_cost(partial_trace, &engine.pricing)?,
                    _ => 0.0,
                };
                errors.push(e.to_string());
                utilities.push(0);
                costs.push(partial);
            }
        }
        plans.push(plan);
    }
    let rewards: Vec<f64> = utilities
        .iter()
        .zip(&costs)
        .map(|(&u, &c)| reward(u, c, config.lambda_cost))
        .collect();
    let (baseline, adv) = advantages(&rewards);
    let mut rec = EpisodeRecord {
        episode,
        query_id: record.id.clone(),
        rewards,
        baseline,
        mean_cost_usd: costs.iter().sum::<f64>() / costs.len() as f64,
        d: query.estimate.d,
        utilities: utilities.clone(),
        depths: plans.iter().map(|p| p.depth).collect(),
        applied: false,
        skipped: None,
    };
    if errors.len() == config.k {
        rec.skipped = Some(format!("all {} executions failed: {}", config.k, errors.join("; ")));
        return Ok(Rollout {
            record: rec,
            embedding: query.embedding,
            plans,
            gradient: None,
            best_utility: None,
        });
    }
    let gradient = if adv.iter().all(|&a| a == 0.0) {
        None
    } else {
        let weights: Vec<f64> = adv.iter().map(|a| -a).collect();
        Some(weighted_log_prob_gradient(engine, &query, &plans, &weights)?)
    };
    rec.applied = gradient.is_some();
    Ok(Rollout {
        record: rec,
        embedding: query.embedding,
        plans,
        gradient,
        best_utility: utilities.iter().copied().max(),
    })
}

/// Owns optimizer state, the replay buffer and the training noise streams.
pub struct Trainer {
    pub config: TrainingConfig,
    policy_optimizer: Sgd,
    fitter: DifficultyFitter,
    replay: ReplayBuffer,
    replay_rng: ChaCha8Rng,
    seed: u64,
    episodes_done: usize,
}

impl Trainer {
    pub fn new(config: TrainingConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            policy_optimizer: Sgd::new(config.policy_learning_rate, config.policy_momentum)?,
            fitter: DifficultyFitter::new(
                config.difficulty_learning_rate,
                config.difficulty_momentum,
                config.lambda_kl,
                seed ^ 0xD1FF,
            )?,
            replay: ReplayBuffer::new(config.replay_capacity),
            replay_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5EED),
            config,
            seed,
            episodes_done: 0,
        })
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    /// Noise stream of episode `episode`; independent of scheduling.
    pub fn episode_rng(&self, episode: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(episode as u64);
        rng
    }

    /// Apply a rollout: one policy step (if any advantage is non-zero),
    /// then outcome feedback with `y` = best utility among the `K` plans.
    pub fn apply(&mut self, engine: &mut Engine, rollout: &Rollout) -> Result<()> {
        if let Some(g) = &rollout.gradient {
            self.policy_optimizer.step(policy_parameters_mut(engine), g)?;
        }
        if let Some(y) = rollout.best_utility {
            self.feedback_update(engine, rollout.embedding.clone(), y)?;
        }
        self.episodes_done += 1;
        Ok(())
    }

    /// Record an outcome and take one estimator step on a replay minibatch.
    /// Returns the query's difficulty after the step.
    pub fn feedback_update(&mut self, engine: &mut Engine, embedding: EmbeddingVector, success: u8) -> Result<f64> {
        self.replay.push(OutcomeRecord {
            query_embedding: embedding.clone(),
            y: success,
        });
        let batch = self.replay.sample(self.config.replay_batch, &mut self.replay_rng);
        self.fitter.fit_step(&mut engine.estimator, &batch)?;
        Ok(engine.estimator.estimate(&embedding)?.d)
    }

    pub fn training_episode(
        &mut self,
        engine: &mut Engine,
        record: &DatasetRecord,
        env: &dyn Environment,
    ) -> Result<EpisodeRecord> {
        let episode = self.episodes_done;
        let mut rng = self.episode_rng(episode);
        let embedding = engine.embed(&record.question)?;
        let r = rollout(engine, record, embedding, env, &self.config, episode, &mut rng)?;
        self.apply(engine, &r)?;
        Ok(r.record)
    }

    /// Cycle through `records` in per-pass shuffled order for
    /// `config.episodes` episodes. With `parallel > 1`, batches of rollouts
    /// are computed concurrently against one snapshot and applied in order.
    pub fn train(
        &mut self,
        engine: &mut Engine,
        records: &[DatasetRecord],
        env: &dyn Environment,
        mut log: Option<&mut dyn Write>,
        mut on_checkpoint: Option<&mut dyn FnMut(&Engine, usize) -> Result<()>>,
    ) -> Result<Vec<EpisodeRecord>> {
        if records.is_empty() {
            return Err(Error::contract("training needs at least one record"));
        }
        let texts: Vec<&str> = records.iter().map(|r| r.question.as_str()).collect();
        let embeddings = engine.embedder().embed_batch(&texts)?;
        let mut order_rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x0DE5);
        let mut order: Vec<usize> = Vec::new();
        let mut history = Vec::with_capacity(self.config.episodes);
        let total = self.config.episodes;
        let mut done = 0;
        while done < total {
            let batch = self.config.parallel.min(total - done);
            let mut picks = Vec::with_capacity(batch);
            for _ in 0..batch {
                if order.is_empty() {
                    order = (0..records.len()).collect();
                    order.shuffle(&mut order_rng);
                    order.reverse();
                }
                picks.push(order.pop().unwrap());
            }
            let first = self.episodes_done;
            let rollouts: Vec<Result<Rollout>> = {
                let snapshot: &Engine = engine;
                let cfg = &self.config;
                let run = |(j, &i): (usize, &usize)| {
                    let mut rng = self.episode_rng(first + j);
                    rollout(snapshot, &records[i], embeddings[i].clone(), env, cfg, first + j, &mut rng)
                };
                if batch == 1 {
                    picks.iter().enumerate().map(run).collect()
                } else {
                    std::thread::scope(|s| {
                        let handles: Vec<_> = picks
                            .iter()
                            .enumerate()
                            .map(|p| s.spawn(move || run(p)))
                            .collect();
                        handles.into_iter().map(|h| h.join().expect("rollout thread panicked")).collect()
                    })
                }
            };
            for r in rollouts {
                let r = r?;
                self.apply(engine, &r)?;
                if let Some(w) = log.as_deref_mut() {
                    serde_json::to_writer(&mut *w, &r.record)?;
                    w.write_all(b"\n").map_err(|e| Error::io("<training log>", e))?;
                }
                history.push(r.record);
                done += 1;
                let every = self.config.checkpoint_every;
                if every > 0 && self.episodes_done % every == 0 {
                    if let Some(cb) = on_checkpoint.as_deref_mut() {
                        cb(engine, self.episodes_done)?;
                    }
                }
            }
        }
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_arithmetic() {
        assert_eq!(reward(1, 0.0, 1e-3), 1.0);
        assert!((reward(1, 0.001, 1e-3) - 0.999).abs() < 1e-15);
        assert!((reward(0, 0.002, 1e-2) + 0.02).abs() < 1e-15);
    }

    #[test]
    fn advantages_center_and_scale() {
        let (b, a) = advantages(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(b, 0.5);
        assert_eq!(a, vec![0.5 / 3.0, -0.5 / 3.0, -0.5 / 3.0, 0.5 / 3.0]);
        let (b, a) = advantages(&[0.7]);
        assert_eq!((b, a), (0.7, vec![0.0]));
        let (_, a) = advantages(&[0.3; 4]);
        assert!(a.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = TrainingConfig {
            k: 0,
            ..TrainingConfig::default()
        };
        match bad.validate().unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "k"),
            e => panic!("{e}"),
        }
    }
}
