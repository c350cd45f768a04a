//! Planted-difficulty arithmetic corpus for the offline environment. Longer
//! expressions and heavier lead phrases go with larger planted difficulty so
//! the text carries a learnable difficulty signal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::{DatasetRecord, TaskKind};
use crate::error::{Error, Result};
use crate::executor::calculator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierSpec {
    pub name: String,
    pub weight: f64,
    /// Beta(a, b) over the planted difficulty.
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub size: usize,
    pub tiers: Vec<TierSpec>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let tier = |name: &str, a, b| TierSpec {
            name: name.into(),
            weight: 1.0,
            a,
            b,
        };
        Self {
            size: 2000,
            tiers: vec![tier("easy", 2.0, 8.0), tier("medium", 8.0, 24.0), tier("hard", 60.0, 2.0)],
        }
    }
}

const LEAD_PHRASES: [&str; 10] = [
    "Add up",
    "Quick sum",
    "Combine the numbers",
    "Work out",
    "Compute the value of",
    "Evaluate the expression",
    "Carefully evaluate the compound expression",
    "Determine the exact value of the multi-step expression",
    "Resolve the lengthy nested arithmetic chain",
    "Untangle the long and intricate arithmetic chain",
];

/// Question text and gold answer for a planted difficulty.
pub fn arithmetic_question<R: Rng + ?Sized>(d_star: f64, rng: &mut R) -> Result<(String, String)> {
    let level = ((d_star * 10.0) as usize).min(9);
    let terms = 2 + ((d_star * 7.0) as usize).min(6);
    let ops: &[char] = if level < 4 { &['+', '-'] } else { &['+', '-', '*'] };
    let mut expr = rng.random_range(1..=20).to_string();
    for _ in 1..terms {
        let op = ops[rng.random_range(0..ops.len())];
        expr.push_str(&format!(" {op} {}", rng.random_range(1..=20)));
    }
    let value = calculator::evaluate(&expr)?;
    Ok((
        format!("{}: {expr}", LEAD_PHRASES[level]),
        calculator::format_number(value),
    ))
}

pub fn generate_corpus(config: &CorpusConfig, seed: u64) -> Result<Vec<DatasetRecord>> {
    if config.tiers.is_empty() {
        return Err(Error::config("corpus.tiers", "at least one tier is required"));
    }
    let total: f64 = config.tiers.iter().map(|t| t.weight).sum();
    if !(total > 0.0) || config.tiers.iter().any(|t| t.weight < 0.0) {
        return Err(Error::config("corpus.tiers", "weights must be non-negative with a positive sum"));
    }
    let betas = config
        .tiers
        .iter()
        .map(|t| {
            Beta::new(t.a, t.b).map_err(|e| Error::config(format!("corpus.tiers.{}", t.name), e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(config.size);
    for i in 0..config.size {
        let mut u = rng.random::<f64>() * total;
        let mut t = 0;
        while t + 1 < config.tiers.len() && u >= config.tiers[t].weight {
            u -= config.tiers[t].weight;
            t += 1;
        }
        let d_star: f64 = betas[t].sample(&mut rng).clamp(0.01, 0.99);
        let (question, gold) = arithmetic_question(d_star, &mut rng)?;
        out.push(DatasetRecord {
            id: format!("syn-{i:05}"),
            question,
            gold_answer: gold,
            task_kind: TaskKind::Numeric,
            true_difficulty: Some(d_star),
            tier: Some(config.tiers[t].name.clone()),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_seeded_and_valid() {
        let cfg = CorpusConfig {
            size: 300,
            ..CorpusConfig::default()
        };
        let a = generate_corpus(&cfg, 3).unwrap();
        assert_eq!(a, generate_corpus(&cfg, 3).unwrap());
        assert!(a.iter().all(|r| r.validate().is_ok()));
        for r in &a {
            let expr = r.question.split(": ").nth(1).unwrap();
            assert_eq!(calculator::format_number(calculator::evaluate(expr).unwrap()), r.gold_answer);
        }
        let mean = |tier: &str| {
            let ds: Vec<f64> = a
                .iter()
                .filter(|r| r.tier.as_deref() == Some(tier))
                .map(|r| r.true_difficulty.unwrap())
                .collect();
            ds.iter().sum::<f64>() / ds.len() as f64
        };
        assert!(mean("easy") < mean("medium") && mean("medium") < mean("hard"));
    }
}
