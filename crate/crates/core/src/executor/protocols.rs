//! The seven collaboration protocols. Every prompt asks for a closing
//! `ANSWER: <answer>` line so answers can be extracted uniformly.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::calculator;
use super::{extract_answer, majority_vote, Backend, BackendCall, Message};
use crate::allocator::ProtocolId;
use crate::error::Error;

const ANSWER_RULE: &str = "End your reply with a final line of the form `ANSWER: <answer>`.";
pub const FINAL_VERDICT: &str = "VERDICT: FINAL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub id: ProtocolId,
    pub debaters: usize,
    pub debate_rounds: usize,
    pub paths: usize,
    pub max_refinements: usize,
    pub ensemble_agents: usize,
    pub react_steps: usize,
}

impl ProtocolSpec {
    pub fn standard(id: ProtocolId) -> Self {
        Self {
            id,
            debaters: 3,
            debate_rounds: 2,
            paths: 5,
            max_refinements: 5,
            ensemble_agents: 3,
            react_steps: 5,
        }
    }

    /// Calls made when nothing stops early.
    pub fn nominal_calls(&self) -> usize {
        match self.id {
            ProtocolId::Cot => 1,
            ProtocolId::SelfConsistency => self.paths,
            ProtocolId::Debate => self.debaters * self.debate_rounds + 1,
            ProtocolId::SelfRefine => 1 + 2 * self.max_refinements,
            ProtocolId::Ensemble => self.ensemble_agents + self.ensemble_agents * (self.ensemble_agents - 1) / 2,
            ProtocolId::Testing => 2,
            ProtocolId::React => self.react_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub output: String,
    pub answer: String,
    pub calls: Vec<BackendCall>,
}

#[derive(Debug)]
pub struct ProtocolFailure {
    pub error: Error,
    pub calls: Vec<BackendCall>,
}

struct Session<'a> {
    model: &'a str,
    backend: &'a dyn Backend,
    calls: Vec<BackendCall>,
}

impl Session<'_> {
    fn ask(&mut self, system: &str, user: String) -> Result<String, Error> {
        let messages = vec![Message::system(system), Message::user(user)];
        let start = Instant::now();
        let result = self.backend.complete(self.model, &messages);
        let latency_secs = start.elapsed().as_secs_f64();
        match result {
            Ok(c) => {
                self.calls.push(BackendCall {
                    model_name: self.model.to_string(),
                    messages,
                    response_text: Some(c.text.clone()),
                    prompt_tokens: c.prompt_tokens,
                    completion_tokens: c.completion_tokens,
                    latency_secs,
                });
                Ok(c.text)
            }
            Err(e) => {
                self.calls.push(BackendCall {
                    model_name: self.model.to_string(),
                    messages,
                    response_text: None,
                    prompt_tokens: 0,
                    completion_tokens: 0,
                    latency_secs,
                });
                Err(e)
            }
        }
    }
}

pub fn run_protocol(
    spec: &ProtocolSpec,
    context: &str,
    model: &str,
    backend: &dyn Backend,
) -> Result<ProtocolRun, ProtocolFailure> {
    if context.trim().is_empty() {
        return Err(ProtocolFailure {
            error: Error::contract("protocol context is empty"),
            calls: Vec::new(),
        });
    }
    let mut s = Session {
        model,
        backend,
        calls: Vec::new(),
    };
    let outcome = match spec.id {
        ProtocolId::Cot => cot(&mut s, context),
        ProtocolId::SelfConsistency => self_consistency(&mut s, spec, context),
        ProtocolId::Debate => debate(&mut s, spec, context),
        ProtocolId::SelfRefine => self_refine(&mut s, spec, context),
        ProtocolId::Ensemble => ensemble(&mut s, spec, context),
        ProtocolId::Testing => testing(&mut s, context),
        ProtocolId::React => react(&mut s, spec, context),
    };
    match outcome {
        Ok((output, answer)) => Ok(ProtocolRun {
            output,
            answer,
            calls: s.calls,
        }),
        Err(error) => Err(ProtocolFailure { error, calls: s.calls }),
    }
}

type Outcome = Result<(String, String), Error>;

fn with_answer(output: String) -> Outcome {
    let answer = extract_answer(&output);
    Ok((output, answer))
}

fn cot(s: &mut Session, context: &str) -> Outcome {
    let system = format!("You are a careful problem solver. Think step by step. {ANSWER_RULE}");
    with_answer(s.ask(&system, context.to_string())?)
}

fn self_consistency(s: &mut Session, spec: &ProtocolSpec, context: &str) -> Outcome {
    let system = format!("You are a careful problem solver. Think step by step. {ANSWER_RULE}");
    let mut outputs = Vec::with_capacity(spec.paths);
    for i in 1..=spec.paths {
        outputs.push(s.ask(
            &system,
            format!("{context}\n\nIndependent reasoning path {i} of {}.", spec.paths),
        )?);
    }
    let answers: Vec<String> = outputs.iter().map(|o| extract_answer(o)).collect();
    let winner = majority_vote(&answers).expect("at least one path");
    let pos = answers.iter().position(|a| *a == winner).unwrap();
    Ok((outputs.swap_remove(pos), winner))
}

fn transcript(label: &str, entries: &[String]) -> String {
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| format!("{label} {}:\n{e}", i + 1))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn debate(s: &mut Session, spec: &ProtocolSpec, context: &str) -> Outcome {
    let system = format!("You are one debater in a structured debate. Argue for the answer you believe is correct. {ANSWER_RULE}");
    let mut previous: Vec<String> = Vec::new();
    for round in 1..=spec.debate_rounds {
        let mut current = Vec::with_capacity(spec.debaters);
        for d in 1..=spec.debaters {
            let prompt = if previous.is_empty() {
                format!(
                    "{context}\n\nYou are debater {d} of {} in round {round} of {}. Give your reasoning.",
                    spec.debaters, spec.debate_rounds
                )
            } else {
                format!(
                    "{context}\n\nArguments from the previous round:\n{}\n\nYou are debater {d} of {} in round {round} of {}. Weigh the other arguments and state your updated answer.",
                    transcript("Debater", &previous),
                    spec.debaters,
                    spec.debate_rounds
                )
            };
            current.push(s.ask(&system, prompt)?);
        }
        previous = current;
    }
    let judge = format!("You are the judge of a debate. Decide which answer is correct. {ANSWER_RULE}");
    with_answer(s.ask(
        &judge,
        format!("{context}\n\nFinal arguments:\n{}\n\nGive the final answer.", transcript("Debater", &previous)),
    )?)
}

fn self_refine(s: &mut Session, spec: &ProtocolSpec, context: &str) -> Outcome {
    let solver = format!("You are a careful problem solver. {ANSWER_RULE}");
    let critic = format!(
        "You review solutions for errors. If the solution is correct and complete, include the line `{FINAL_VERDICT}`."
    );
    let mut draft = s.ask(&solver, format!("{context}\n\nWrite an initial solution."))?;
    for i in 1..=spec.max_refinements {
        let critique = s.ask(
            &critic,
            format!("{context}\n\nCurrent solution:\n{draft}\n\nReflection round {i}: critique the solution."),
        )?;
        if critique.to_ascii_uppercase().contains(FINAL_VERDICT) {
            break;
        }
        draft = s.ask(
            &solver,
            format!("{context}\n\nCurrent solution:\n{draft}\n\nFeedback:\n{critique}\n\nRevision round {i}: rewrite the solution to address the feedback."),
        )?;
    }
    with_answer(draft)
}

const PERSONAS: [&str; 3] = [
    "a rigorous mathematician",
    "a pragmatic engineer",
    "a skeptical reviewer",
];

/// Last `WINNER: A|B` verdict in a judge reply.
fn parse_winner(text: &str) -> Option<usize> {
    let upper = text.to_ascii_uppercase();
    let idx = upper.rfind("WINNER:")?;
    match upper[idx + 7..].trim_start().chars().next()? {
        'A' => Some(0),
        'B' => Some(1),
        _ => None,
    }
}

fn ensemble(s: &mut Session, spec: &ProtocolSpec, context: &str) -> Outcome {
    let mut candidates = Vec::with_capacity(spec.ensemble_agents);
    for i in 0..spec.ensemble_agents {
        let persona = PERSONAS[i % PERSONAS.len()];
        let system = format!("You are {persona}. {ANSWER_RULE}");
        candidates.push(s.ask(
            &system,
            format!("{context}\n\nCandidate agent {} of {}: solve the problem.", i + 1, spec.ensemble_agents),
        )?);
    }
    let judge = "You compare two candidate solutions. Reply with `WINNER: A` or `WINNER: B`.";
    let mut wins = vec![0usize; candidates.len()];
    for a in 0..candidates.len() {
        for b in a + 1..candidates.len() {
            let verdict = s.ask(
                judge,
                format!(
                    "{context}\n\nCandidate A (agent {}):\n{}\n\nCandidate B (agent {}):\n{}\n\nWhich candidate is better?",
                    a + 1,
                    candidates[a],
                    b + 1,
                    candidates[b]
                ),
            )?;
            match parse_winner(&verdict) {
                Some(0) => wins[a] += 1,
                Some(_) => wins[b] += 1,
                None => {}
            }
        }
    }
    let mut best = 0;
    for (i, &w) in wins.iter().enumerate() {
        if w > wins[best] {
            best = i;
        }
    }
    with_answer(candidates.swap_remove(best))
}

fn testing(s: &mut Session, context: &str) -> Outcome {
    let solver = format!("You are a careful problem solver. {ANSWER_RULE}");
    let solution = s.ask(&solver, format!("{context}\n\nWrite a solution."))?;
    let tests = s.ask(
        "You write test cases that check a proposed solution.",
        format!("{context}\n\nProposed solution:\n{solution}\n\nGenerate test cases for this solution."),
    )?;
    let answer = extract_answer(&solution);
    Ok((format!("Solution:\n{solution}\n\nTest cases:\n{tests}"), answer))
}

/// `ACTION: calculate[<expr>]` in a ReAct step.
fn parse_action(text: &str) -> Option<&str> {
    let start = text.find("ACTION: calculate[")? + "ACTION: calculate[".len();
    let end = text[start..].find(']')? + start;
    Some(&text[start..end])
}

fn has_answer_line(text: &str) -> bool {
    text.lines().any(|l| l.trim_start().to_ascii_uppercase().starts_with("ANSWER:"))
}

fn react(s: &mut Session, spec: &ProtocolSpec, context: &str) -> Outcome {
    let system = format!(
        "You solve problems by reasoning and acting. To use the calculator, write a line `ACTION: calculate[<expression>]` and stop. {ANSWER_RULE}"
    );
    let mut scratch = String::new();
    let mut last = String::new();
    for step in 1..=spec.react_steps {
        last = s.ask(
            &system,
            format!("{context}\n\n{scratch}Step {step} of {}.", spec.react_steps),
        )?;
        if has_answer_line(&last) {
            break;
        }
        let Some(expr) = parse_action(&last) else { break };
        let observation = match calculator::evaluate(expr) {
            Ok(v) => calculator::format_number(v),
            Err(e) => format!("error: {e}"),
        };
        scratch.push_str(&format!("{}\nOBSERVATION: {observation}\n\n", last.trim_end()));
    }
    with_answer(last)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_counts() {
        let n = |id| ProtocolSpec::standard(id).nominal_calls();
        assert_eq!(n(ProtocolId::Cot), 1);
        assert_eq!(n(ProtocolId::SelfConsistency), 5);
        assert_eq!(n(ProtocolId::Debate), 7);
        assert_eq!(n(ProtocolId::SelfRefine), 11);
        assert_eq!(n(ProtocolId::Ensemble), 6);
        assert_eq!(n(ProtocolId::Testing), 2);
        assert_eq!(n(ProtocolId::React), 5);
    }

    #[test]
    fn winner_and_action_parsing() {
        assert_eq!(parse_winner("I think... WINNER: B"), Some(1));
        assert_eq!(parse_winner("winner: a"), Some(0));
        assert_eq!(parse_winner("tie"), None);
        assert_eq!(parse_action("ACTION: calculate[3*4]"), Some("3*4"));
        assert_eq!(parse_action("no tool"), None);
    }
}
