//! Datasets, answer checking, the synthetic environment, evaluation and
//! reports.

mod answer;
mod corpus;
mod dataset;
mod eval;
mod sim;
mod stats;

pub use answer::{check_answer, numbers_match, parse_numeric, AnswerCheck};
pub use corpus::{arithmetic_question, generate_corpus, CorpusConfig, TierSpec};
pub use dataset::{
    dataset_to_jsonl, load_dataset, parse_dataset, split_train_test, write_dataset, DatasetRecord, TaskKind,
};
pub use eval::{
    difficulty_bin, evaluate, evaluate_with, fixed_plan, write_report, Planner, EvalReport, QueryResult, RecordFailure, ReportFormat, HISTOGRAM_BINS,
};
pub use sim::{CallBudget, ProtocolProfile, SimEnvironment, SimOutcome, DEFAULT_PROTOCOLS};
pub use stats::{average_ranks, spearman, Spearman};

use rand_chacha::ChaCha8Rng;

use crate::allocator::WorkflowPlan;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::executor::{execute_plan, BackendSet};

/// Result of running one plan on one record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub utility: u8,
    pub cost_usd: f64,
    /// Closed-form success probability, when the environment knows it.
    pub success_probability: Option<f64>,
    pub parse_failed: bool,
}

/// Where plans are run: real backends or the synthetic simulator.
pub trait Environment: Send + Sync {
    fn run(
        &self,
        engine: &Engine,
        plan: &WorkflowPlan,
        record: &DatasetRecord,
        rng: &mut ChaCha8Rng,
    ) -> Result<EpisodeOutcome>;
}

impl Environment for SimEnvironment {
    fn run(
        &self,
        engine: &Engine,
        plan: &WorkflowPlan,
        record: &DatasetRecord,
        rng: &mut ChaCha8Rng,
    ) -> Result<EpisodeOutcome> {
        let d_star = record
            .true_difficulty
            .ok_or_else(|| Error::contract(format!("record `{}` has no planted difficulty", record.id)))?;
        let out = self.simulate_outcome(plan, d_star, &engine.catalog, &engine.pool, &engine.pricing, rng)?;
        Ok(EpisodeOutcome {
            utility: out.success,
            cost_usd: out.cost_usd,
            success_probability: Some(out.probability),
            parse_failed: false,
        })
    }
}

/// Executes plans against chat backends and grades the final answer.
pub struct ExecutorEnvironment {
    pub backends: BackendSet,
}

impl Environment for ExecutorEnvironment {
    fn run(
        &self,
        engine: &Engine,
        plan: &WorkflowPlan,
        record: &DatasetRecord,
        _rng: &mut ChaCha8Rng,
    ) -> Result<EpisodeOutcome> {
        let result = execute_plan(plan, &engine.catalog, &record.question, &self.backends, &engine.pricing)?;
        let check = check_answer(&result.final_answer, record);
        Ok(EpisodeOutcome {
            utility: check.correct,
            cost_usd: result.cost_usd,
            success_probability: None,
            parse_failed: check.parse_failed,
        })
    }
}
