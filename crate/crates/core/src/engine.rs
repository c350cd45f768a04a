//! The assembled policy stack: embedder, operator catalog, model pool,
//! difficulty estimator, allocator and router.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::allocator::{Allocator, OperatorCatalog, PlanMode, WorkflowPlan, DEFAULT_L_MAX, DEFAULT_SCORER_HIDDEN, DEFAULT_TAU};
use crate::difficulty::{DifficultyEstimate, DifficultyEstimator, DEFAULT_HEAD_HIDDEN, DEFAULT_LATENT_DIM};
use crate::embedding::{Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::executor::Pricing;
use crate::numerics::{Checkpoint, Trainable};
use crate::router::{ModelPool, Router, DEFAULT_TEMPERATURE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineShape {
    pub latent_dim: usize,
    pub head_hidden: usize,
    pub scorer_hidden: usize,
    pub tau: f64,
    pub l_max: usize,
    pub temperature: f64,
}

impl Default for EngineShape {
    fn default() -> Self {
        Self {
            latent_dim: DEFAULT_LATENT_DIM,
            head_hidden: DEFAULT_HEAD_HIDDEN,
            scorer_hidden: DEFAULT_SCORER_HIDDEN,
            tau: DEFAULT_TAU,
            l_max: DEFAULT_L_MAX,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

/// A query after embedding and difficulty estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedQuery {
    pub embedding: EmbeddingVector,
    pub estimate: DifficultyEstimate,
}

#[derive(Clone)]
pub struct Engine {
    embedder: Arc<dyn Embedder>,
    pub catalog: OperatorCatalog,
    pub pool: ModelPool,
    pub pricing: Pricing,
    pub estimator: DifficultyEstimator,
    pub allocator: Allocator,
    pub router: Router,
}

impl Engine {
    /// Fresh parameters drawn from `seed`. The difficulty head starts at
    /// zero output so every query begins at `d = 0.5`.
    pub fn new(
        embedder: Arc<dyn Embedder>,
        catalog: OperatorCatalog,
        pool: ModelPool,
        shape: EngineShape,
        seed: u64,
    ) -> Result<Self> {
        let h = embedder.dim();
        if catalog.dim() != h {
            return Err(Error::contract("catalog embeddings do not match the embedder"));
        }
        if pool.cards().iter().any(|c| c.embedding.as_ref().map(|e| e.dim()) != Some(h)) {
            return Err(Error::contract("model embeddings do not match the embedder"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let estimator = DifficultyEstimator::new(h, shape.latent_dim, shape.head_hidden, &mut rng);
        let allocator = Allocator::new(shape.latent_dim, h, shape.tau, shape.l_max, shape.scorer_hidden, &mut rng)?;
        let router = Router::new(h, shape.latent_dim, shape.temperature, &mut rng)?;
        let pricing = Pricing::from_pool(&pool);
        Ok(Self {
            embedder,
            catalog,
            pool,
            pricing,
            estimator,
            allocator,
            router,
        })
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        self.embedder.embed(text)
    }

    pub fn prepare(&self, text: &str) -> Result<PreparedQuery> {
        self.prepare_embedded(self.embed(text)?)
    }

    /// Uses the posterior mean; policies condition on it in training and inference.
    pub fn prepare_embedded(&self, embedding: EmbeddingVector) -> Result<PreparedQuery> {
        let estimate = self.estimator.estimate(&embedding)?;
        Ok(PreparedQuery { embedding, estimate })
    }

    /// Allocate operators and route models.
    pub fn plan<R: Rng + ?Sized>(&self, query: &PreparedQuery, mode: PlanMode, rng: &mut R) -> Result<WorkflowPlan> {
        let mut plan = self
            .allocator
            .build_plan(&query.embedding, &query.estimate, &self.catalog, mode, rng)?;
        self.router.assign_models(
            &mut plan,
            &query.embedding,
            &query.estimate,
            &self.catalog,
            &self.pool,
            mode,
            rng,
        )?;
        Ok(plan)
    }

    /// Deterministic plan for a raw query.
    pub fn route(&self, text: &str) -> Result<(PreparedQuery, WorkflowPlan)> {
        let query = self.prepare(text)?;
        // The deterministic decoders never draw from the rng.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = self.plan(&query, PlanMode::Deterministic, &mut rng)?;
        Ok((query, plan))
    }

    /// `ln P(plan | query)` recomputed from the current parameters.
    pub fn plan_log_prob(&self, plan: &WorkflowPlan, query: &PreparedQuery) -> Result<f64> {
        let a = self
            .allocator
            .layers_log_prob(plan, &query.embedding, &query.estimate, &self.catalog)?;
        let r = self
            .router
            .assignments_log_prob(plan, &query.embedding, &query.estimate, &self.catalog, &self.pool)?;
        Ok(a + r)
    }

    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ckpt = Checkpoint::new(seed);
        ckpt.insert("difficulty", self.estimator.module_params());
        ckpt.insert("allocator", self.allocator.module_params());
        ckpt.insert("router", self.router.module_params());
        ckpt
    }

    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.estimator.load_module_params(ckpt.module("difficulty")?)?;
        self.allocator.load_module_params(ckpt.module("allocator")?)?;
        self.router.load_module_params(ckpt.module("router")?)?;
        Ok(())
    }

    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        self.checkpoint(seed).save(path)
    }

    pub fn restore(&mut self, path: &Path) -> Result<u64> {
        let ckpt = Checkpoint::load(path)?;
        self.load_checkpoint(&ckpt)?;
        Ok(ckpt.seed)
    }
}
