use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{spearman, DatasetRecord, Environment};
use crate::allocator::{LayerSelection, OperatorCatalog, WorkflowPlan};
use crate::engine::{Engine, PreparedQuery};
use crate::router::{ModelPool, RoutingDecision};
use crate::error::{Error, Result};
use crate::executor::ledger_cost;

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub id: String,
    pub difficulty: f64,
    pub depth: usize,
    pub operators: usize,
    pub cost_usd: f64,
    pub success: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    /// `None` for an empty evaluation.
    pub accuracy: Option<f64>,
    /// Mean closed-form success probability when the environment has one.
    pub expected_success: Option<f64>,
    pub mean_cost_usd: f64,
    pub total_cost_usd: f64,
    pub mean_depth: f64,
    pub mean_depth_by_tier: BTreeMap<String, f64>,
    pub model_selection_counts: BTreeMap<String, usize>,
    /// Predicted difficulty counts over ten equal-width bins of [0, 1].
    pub difficulty_histogram: Vec<usize>,
    /// Rank correlation of predicted and planted difficulty, when planted.
    pub difficulty_spearman: Option<f64>,
    pub cost_per_query: Vec<QueryResult>,
    pub failures: Vec<RecordFailure>,
    /// Ids whose numeric prediction did not parse.
    pub parse_failures: Vec<String>,
}

impl EvalReport {
    pub fn empty(model_names: impl IntoIterator<Item = String>) -> Self {
        Self {
            records: 0,
            accuracy: None,
            expected_success: None,
            mean_cost_usd: 0.0,
            total_cost_usd: 0.0,
            mean_depth: 0.0,
            mean_depth_by_tier: BTreeMap::new(),
            model_selection_counts: model_names.into_iter().map(|n| (n, 0)).collect(),
            difficulty_histogram: vec![0; HISTOGRAM_BINS],
            difficulty_spearman: None,
            cost_per_query: Vec::new(),
            failures: Vec::new(),
            parse_failures: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        let mut rows: Vec<(String, String)> = vec![
            ("records".into(), self.records.to_string()),
            ("accuracy".into(), opt(self.accuracy)),
            ("expected_success".into(), opt(self.expected_success)),
            ("mean_cost_usd".into(), format!("{:.6}", self.mean_cost_usd)),
            ("total_cost_usd".into(), format!("{:.6}", self.total_cost_usd)),
            ("mean_depth".into(), format!("{:.3}", self.mean_depth)),
            ("difficulty_spearman".into(), opt(self.difficulty_spearman)),
            ("failures".into(), self.failures.len().to_string()),
            ("parse_failures".into(), self.parse_failures.len().to_string()),
        ];
        for (tier, depth) in &self.mean_depth_by_tier {
            rows.push((format!("mean_depth[{tier}]"), format!("{depth:.3}")));
        }
        let mut out = String::new();
        write_aligned(&mut out, ("metric", "value"), &rows);
        out.push('\n');
        let models: Vec<(String, String)> = self
            .model_selection_counts
            .iter()
            .map(|(m, c)| (m.clone(), c.to_string()))
            .collect();
        write_aligned(&mut out, ("model", "selections"), &models);
        out.push('\n');
        let bins: Vec<(String, String)> = self
            .difficulty_histogram
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let lo = i as f64 / HISTOGRAM_BINS as f64;
                (format!("[{lo:.1}, {:.1})", lo + 0.1), c.to_string())
            })
            .collect();
        write_aligned(&mut out, ("difficulty", "count"), &bins);
        out
    }
}

fn write_aligned(out: &mut String, header: (&str, &str), rows: &[(String, String)]) {
    let width = rows
        .iter()
        .map(|(k, _)| k.chars().count())
        .chain([header.0.len()])
        .max()
        .unwrap_or(0);
    let _ = writeln!(out, "{:<width$}  {}", header.0, header.1);
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<width$}  {v}");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Table,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "table" => Ok(ReportFormat::Table),
            _ => Err(Error::config("report_format", format!("expected `json` or `table`, got `{s}`"))),
        }
    }
}

pub fn write_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    let body = match format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Table => report.to_table(),
    };
    crate::io::write_atomic(path, body.as_bytes())
}

pub fn difficulty_bin(d: f64) -> usize {
    ((d * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

/// Produces the plan evaluated for one record.
pub type Planner<'a> = dyn Fn(&Engine, &DatasetRecord) -> Result<(PreparedQuery, WorkflowPlan)> + 'a;

/// Deterministic-mode evaluation. Record `i` draws its outcome noise from
/// stream `i` of `seed`, so results do not depend on evaluation order.
pub fn evaluate(engine: &Engine, records: &[DatasetRecord], env: &dyn Environment, seed: u64) -> Result<EvalReport> {
    evaluate_with(engine, records, env, seed, &|e: &Engine, r: &DatasetRecord| e.route(&r.question))
}

/// [`evaluate`] with a custom planner, e.g. a fixed baseline workflow.
pub fn evaluate_with(
    engine: &Engine,
    records: &[DatasetRecord],
    env: &dyn Environment,
    seed: u64,
    planner: &Planner,
) -> Result<EvalReport> {
    let mut report = EvalReport::empty(engine.pool.cards().iter().map(|c| c.name.clone()));
    if records.is_empty() {
        return Ok(report);
    }
    let mut correct = 0usize;
    let mut expected = Some(0.0);
    let mut predicted = Vec::with_capacity(records.len());
    let mut planted = Vec::with_capacity(records.len());
    let mut tier_depths: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut depth_sum = 0usize;

    for (i, record) in records.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let (query, plan) = planner(engine, record)?;
        let d = query.estimate.d;
        report.difficulty_histogram[difficulty_bin(d)] += 1;
        predicted.push(d);
        planted.push(record.true_difficulty);
        depth_sum += plan.depth;
        if let Some(tier) = &record.tier {
            let e = tier_depths.entry(tier.clone()).or_default();
            e.0 += plan.depth;
            e.1 += 1;
        }
        for decisions in &plan.assignments {
            for dec in decisions {
                *report.model_selection_counts.entry(dec.model_name.clone()).or_default() += 1;
            }
        }
        let (success, cost_usd, probability) = match env.run(engine, &plan, record, &mut rng) {
            Ok(outcome) => {
                if outcome.parse_failed {
                    report.parse_failures.push(record.id.clone());
                }
                (outcome.utility, outcome.cost_usd, outcome.success_probability)
            }
            Err(e) => {
                let cost = match &e {
                    Error::Execution { partial_trace, .. } => ledger_cost(partial_trace, &engine.pricing)?,
                    _ => 0.0,
                };
                report.failures.push(RecordFailure {
                    id: record.id.clone(),
                    message: e.to_string(),
                });
                (0, cost, None)
            }
        };
        correct += success as usize;
        expected = match (expected, probability) {
            (Some(acc), Some(p)) => Some(acc + p),
            _ => None,
        };
        report.total_cost_usd += cost_usd;
        report.cost_per_query.push(QueryResult {
            id: record.id.clone(),
            difficulty: d,
            depth: plan.depth,
            operators: plan.operator_count(),
            cost_usd,
            success,
            success_probability: probability,
        });
    }

    let n = records.len() as f64;
    report.records = records.len();
    report.accuracy = Some(correct as f64 / n);
    report.expected_success = expected.map(|e| e / n);
    report.mean_cost_usd = report.total_cost_usd / n;
    report.mean_depth = depth_sum as f64 / n;
    report.mean_depth_by_tier = tier_depths
        .into_iter()
        .map(|(t, (sum, count))| (t, sum as f64 / count as f64))
        .collect();
    if records.len() >= 2 {
        if let Some(planted) = planted.into_iter().collect::<Option<Vec<f64>>>() {
            report.difficulty_spearman = Some(spearman(&predicted, &planted)?.rho);
        }
    }
    Ok(report)
}

/// `depth` layers of one operator each, all on one model. Log-probabilities
/// are zero; the plan is not drawn from the policy.
pub fn fixed_plan(
    catalog: &OperatorCatalog,
    pool: &ModelPool,
    depth: usize,
    operator: usize,
    model: usize,
    difficulty: f64,
) -> Result<WorkflowPlan> {
    if depth == 0 || operator >= catalog.len() || model >= pool.len() {
        return Err(Error::contract("fixed plan out of range"));
    }
    let one_hot = |n: usize, i: usize| (0..n).map(|j| if j == i { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    Ok(WorkflowPlan {
        depth,
        layers: (0..depth)
            .map(|_| LayerSelection {
                chosen: vec![operator],
                normalized_scores: one_hot(catalog.len(), operator),
                log_prob: 0.0,
            })
            .collect(),
        assignments: (0..depth)
            .map(|l| {
                vec![RoutingDecision {
                    layer: l,
                    slot: 0,
                    model_index: model,
                    model_name: pool.cards()[model].name.clone(),
                    probabilities: one_hot(pool.len(), model),
                    log_prob: 0.0,
                }]
            })
            .collect(),
        log_prob_total: 0.0,
        difficulty_used: difficulty,
    })
}
