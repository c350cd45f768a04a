//! Layered plan execution over pluggable chat backends, with per-call token
//! metering into dollar cost.

mod backend;
pub mod calculator;
mod protocols;

pub use backend::{
    approx_tokens, prompt_hash, Backend, BackendSet, Completion, HttpBackendConfig, HttpChatBackend,
    ScriptedBackend,
};
pub use protocols::{run_protocol, ProtocolFailure, ProtocolRun, ProtocolSpec, FINAL_VERDICT};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::allocator::{OperatorCatalog, WorkflowPlan};
use crate::error::{Error, Result};
use crate::router::ModelPool;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendCall {
    pub model_name: String,
    pub messages: Vec<Message>,
    /// `None` when the call errored.
    pub response_text: Option<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Wall-clock time; not part of cost.
    pub latency_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub prompt: f64,
    pub completion: f64,
}

/// USD per million tokens, per model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Pricing(pub BTreeMap<String, ModelPrice>);

impl Pricing {
    pub fn from_pool(pool: &ModelPool) -> Self {
        Self(
            pool.cards()
                .iter()
                .map(|c| {
                    (
                        c.name.clone(),
                        ModelPrice {
                            prompt: c.price_prompt,
                            completion: c.price_completion,
                        },
                    )
                })
                .collect(),
        )
    }

    pub fn get(&self, model: &str) -> Option<&ModelPrice> {
        self.0.get(model)
    }
}

pub fn token_cost(prompt_tokens: u64, completion_tokens: u64, price: &ModelPrice) -> f64 {
    prompt_tokens as f64 * price.prompt / 1e6 + completion_tokens as f64 * price.completion / 1e6
}

pub fn record_cost(call: &BackendCall, pricing: &Pricing) -> Result<f64> {
    let price = pricing
        .get(&call.model_name)
        .ok_or_else(|| Error::contract(format!("no pricing for model `{}`", call.model_name)))?;
    Ok(token_cost(call.prompt_tokens, call.completion_tokens, price))
}

/// Left-to-right sum of per-call costs.
pub fn ledger_cost(trace: &[BackendCall], pricing: &Pricing) -> Result<f64> {
    let mut total = 0.0;
    for call in trace {
        total += record_cost(call, pricing)?;
    }
    Ok(total)
}

/// Text after the last `ANSWER:` line, else the last non-empty line.
pub fn extract_answer(text: &str) -> String {
    for line in text.lines().rev() {
        let t = line.trim();
        if t.len() >= 7 && t[..7].eq_ignore_ascii_case("ANSWER:") {
            return t[7..].trim().to_string();
        }
    }
    text.lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .to_string()
}

/// Comparison key for voting: trimmed, case-folded, inner whitespace
/// collapsed, a trailing period dropped, numbers canonicalized.
pub fn normalize_answer(answer: &str) -> String {
    let folded = answer
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let folded = folded.strip_suffix('.').unwrap_or(&folded).to_string();
    let numeric: String = folded.chars().filter(|c| !matches!(c, ',' | '$' | ' ')).collect();
    match numeric.parse::<f64>() {
        Ok(v) if v.is_finite() => format!("{}", v + 0.0),
        _ => folded,
    }
}

/// Most frequent answer under [`normalize_answer`]; ties go to the earliest.
/// Returns the first original spelling of the winner.
pub fn majority_vote(answers: &[String]) -> Result<String> {
    if answers.is_empty() {
        return Err(Error::contract("majority vote over no answers"));
    }
    let keys: Vec<String> = answers.iter().map(|a| normalize_answer(a)).collect();
    let mut best = 0;
    let mut best_count = 0;
    for (i, k) in keys.iter().enumerate() {
        if keys[..i].contains(k) {
            continue;
        }
        let count = keys.iter().filter(|x| *x == k).count();
        if count > best_count {
            best = i;
            best_count = count;
        }
    }
    Ok(answers[best].clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorFailure {
    pub layer: usize,
    pub slot: usize,
    pub operator: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub final_answer: String,
    /// Outputs of the operators that succeeded, in plan slot order.
    pub per_layer_outputs: Vec<Vec<String>>,
    pub trace: Vec<BackendCall>,
    pub cost_usd: f64,
    pub success: Option<u8>,
    pub failures: Vec<OperatorFailure>,
}

/// Prompt given to every operator in a layer.
pub fn layer_context(query: &str, previous: &[String]) -> String {
    if previous.is_empty() {
        return format!("Question:\n{query}");
    }
    let prior = previous
        .iter()
        .enumerate()
        .map(|(i, o)| format!("[{}]\n{o}", i + 1))
        .collect::<Vec<_>>()
        .join("\n\n");
    format!("Question:\n{query}\n\nOutputs from the previous stage:\n{prior}")
}

/// Run `plan` layer by layer. Operators within a layer run concurrently and
/// see only the previous layer's outputs; the trace is ordered by catalog
/// index within each layer.
pub fn execute_plan(
    plan: &WorkflowPlan,
    catalog: &OperatorCatalog,
    query: &str,
    backends: &BackendSet,
    pricing: &Pricing,
) -> Result<ExecutionResult> {
    if !plan.is_routed() {
        return Err(Error::contract("plan has no model assignments"));
    }
    for decisions in &plan.assignments {
        for d in decisions {
            if backends.get(&d.model_name).is_none() {
                return Err(Error::contract(format!("no backend for model `{}`", d.model_name)));
            }
            if pricing.get(&d.model_name).is_none() {
                return Err(Error::contract(format!("no pricing for model `{}`", d.model_name)));
            }
        }
    }

    let mut trace = Vec::new();
    let mut per_layer_outputs = Vec::with_capacity(plan.depth);
    let mut failures = Vec::new();
    let mut previous: Vec<String> = Vec::new();
    let mut final_answers: Vec<(f64, String)> = Vec::new();

    for (l, (layer, decisions)) in plan.layers.iter().zip(&plan.assignments).enumerate() {
        let context = layer_context(query, &previous);
        let jobs: Vec<(usize, ProtocolSpec, &str)> = layer
            .chosen
            .iter()
            .zip(decisions)
            .map(|(&op, d)| (op, ProtocolSpec::standard(catalog.get(op).protocol), d.model_name.as_str()))
            .collect();
        let run = |(_, spec, model): &(usize, ProtocolSpec, &str)| {
            let backend = backends.get(model).expect("checked above");
            run_protocol(spec, &context, model, backend.as_ref())
        };
        let results: Vec<Result<ProtocolRun, ProtocolFailure>> = if jobs.len() == 1 {
            vec![run(&jobs[0])]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = jobs.iter().map(|j| scope.spawn(|| run(j))).collect();
                handles.into_iter().map(|h| h.join().expect("operator thread panicked")).collect()
            })
        };

        let mut by_catalog: Vec<usize> = (0..jobs.len()).collect();
        by_catalog.sort_by_key(|&slot| jobs[slot].0);
        let mut outputs: Vec<Option<(String, String)>> = vec![None; jobs.len()];
        let mut results: Vec<Option<_>> = results.into_iter().map(Some).collect();
        for slot in by_catalog {
            match results[slot].take().unwrap() {
                Ok(run) => {
                    trace.extend(run.calls);
                    outputs[slot] = Some((run.output, run.answer));
                }
                Err(fail) => {
                    trace.extend(fail.calls);
                    failures.push(OperatorFailure {
                        layer: l,
                        slot,
                        operator: catalog.get(jobs[slot].0).name.clone(),
                        message: fail.error.to_string(),
                    });
                }
            }
        }
        if outputs.iter().all(Option::is_none) {
            let message = failures
                .iter()
                .filter(|f| f.layer == l)
                .map(|f| format!("{}: {}", f.operator, f.message))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::Execution {
                layer: l,
                message,
                partial_trace: trace,
            });
        }
        final_answers = outputs
            .iter()
            .enumerate()
            .filter_map(|(slot, o)| {
                o.as_ref()
                    .map(|(_, a)| (layer.normalized_scores[layer.chosen[slot]], a.clone()))
            })
            .collect();
        previous = outputs.into_iter().flatten().map(|(o, _)| o).collect();
        per_layer_outputs.push(previous.clone());
    }

    // Highest-scored operator first so vote ties resolve towards it.
    final_answers.sort_by(|a, b| b.0.total_cmp(&a.0));
    let answers: Vec<String> = final_answers.into_iter().map(|(_, a)| a).collect();
    let final_answer = majority_vote(&answers)?;
    let cost_usd = ledger_cost(&trace, pricing)?;
    Ok(ExecutionResult {
        final_answer,
        per_layer_outputs,
        trace,
        cost_usd,
        success: None,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction_prefers_last_answer_line() {
        assert_eq!(extract_answer("ANSWER: 3\nmore\nanswer: 4\n"), "4");
        assert_eq!(extract_answer("thinking\n\n  42  \n\n"), "42");
        assert_eq!(extract_answer(""), "");
    }

    #[test]
    fn vote_conventions() {
        let v = |xs: &[&str]| majority_vote(&xs.iter().map(|s| s.to_string()).collect::<Vec<_>>()).unwrap();
        assert_eq!(v(&["4", "4", "5"]), "4");
        assert_eq!(v(&["a"]), "a");
        assert_eq!(v(&["x", "y"]), "x");
        assert_eq!(v(&["5", "4.0", "4"]), "4.0");
        assert_eq!(v(&["Paris.", "paris"]), "Paris.");
        assert!(majority_vote(&[]).is_err());
    }

    #[test]
    fn ledger_arithmetic() {
        let price = ModelPrice {
            prompt: 0.15,
            completion: 0.60,
        };
        assert_eq!(token_cost(1000, 200, &price), 0.00027);
        assert_eq!(token_cost(0, 0, &price), 0.0);
    }
}
