mod common;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use flowgate::allocator::{PlanMode, WorkflowPlan};
use flowgate::harness::{DatasetRecord, TaskKind};
use flowgate::numerics::Trainable;
use flowgate::optimizer::{advantages, weighted_log_prob_gradient, Trainer, TrainingConfig};

/// Deterministic reward of a plan's discrete choices.
fn score(plan: &WorkflowPlan) -> f64 {
    let mut r = 0.2 * plan.depth as f64;
    for (layer, decisions) in plan.layers.iter().zip(&plan.assignments) {
        for (&op, d) in layer.chosen.iter().zip(decisions) {
            r += 0.3 * op as f64 - 0.5 * d.model_index as f64;
        }
    }
    r
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn score_function_estimate_is_unbiased() {
    let engine = common::small_engine(&["CoT", "Debate", "SelfConsistency"], &["nano-8b", "ultra"], 2, 1.0, 4);
    let q = common::pinned_query(&engine, "Subtract 19 from 73", 0.9);

    let space = common::enumerate_plans(&engine, &q);
    let plans: Vec<WorkflowPlan> = space.iter().map(|(p, _)| p.clone()).collect();
    let weights: Vec<f64> = space.iter().map(|(p, prob)| prob * score(p)).collect();
    let exact = weighted_log_prob_gradient(&engine, &q, &plans, &weights).unwrap().flatten();

    let draws = 50_000;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut buckets: HashMap<_, (WorkflowPlan, f64)> = HashMap::new();
    for _ in 0..draws {
        let plan = engine.plan(&q, PlanMode::Sampled, &mut rng).unwrap();
        let w = score(&plan) / draws as f64;
        buckets.entry(common::plan_key(&plan)).or_insert((plan, 0.0)).1 += w;
    }
    let (mc_plans, mc_weights): (Vec<_>, Vec<_>) = buckets.into_values().unzip();
    let estimate = weighted_log_prob_gradient(&engine, &q, &mc_plans, &mc_weights).unwrap().flatten();

    let norm = exact.iter().map(|x| x * x).sum::<f64>().sqrt();
    let err = exact.iter().zip(&estimate).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(cosine(&exact, &estimate) > 0.99, "cosine {}", cosine(&exact, &estimate));
    assert!(err / norm < 0.1, "relative error {}", err / norm);
}

#[test]
fn advantages_are_centred_and_leave_one_out_scaled() {
    let rewards = [1.0, 0.0, 0.5, 0.25];
    let (baseline, adv) = advantages(&rewards);
    assert_eq!(baseline, 0.4375);
    assert!(adv.iter().sum::<f64>().abs() <= 1e-15);
    // (R_k - mean) / (K - 1) equals (R_k - mean of the others) / K.
    for (k, a) in adv.iter().enumerate() {
        let others = rewards.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, r)| r).sum::<f64>() / 3.0;
        assert!((a - (rewards[k] - others) / 4.0).abs() <= 1e-15);
    }
}

fn record(text: &str) -> DatasetRecord {
    DatasetRecord {
        id: "q".into(),
        question: text.into(),
        gold_answer: "0".into(),
        task_kind: TaskKind::Numeric,
        true_difficulty: None,
        tier: None,
    }
}

#[test]
fn success_lowers_and_failure_raises_predicted_difficulty() {
    for (y, lower) in [(1u8, true), (0u8, false)] {
        let mut engine = common::small_engine(&["CoT"], &["nano-8b"], 2, 1.0, 6);
        let mut trainer = Trainer::new(TrainingConfig::default(), 6).unwrap();
        let emb = engine.embed(&record("What is 9 + 10?").question).unwrap();
        let before = engine.estimator.estimate(&emb).unwrap().d;
        let after = trainer.feedback_update(&mut engine, emb, y).unwrap();
        assert_eq!(after < before, lower, "y={y}: {before} -> {after}");
        assert_eq!(trainer.replay().len(), 1);
    }
}

#[test]
fn policy_step_raises_the_probability_of_above_baseline_plans() {
    let mut engine = common::small_engine(&["CoT", "Debate", "SelfConsistency"], &["nano-8b", "ultra"], 2, 1.0, 12);
    let q = common::pinned_query(&engine, "Divide 144 by 12", 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let plans: Vec<WorkflowPlan> = (0..4).map(|_| engine.plan(&q, PlanMode::Sampled, &mut rng).unwrap()).collect();
    let rewards: Vec<f64> = plans.iter().map(score).collect();
    let (_, adv) = advantages(&rewards);
    let best = (0..4).max_by(|&a, &b| rewards[a].partial_cmp(&rewards[b]).unwrap()).unwrap();
    let before = engine.plan_log_prob(&plans[best], &q).unwrap();

    let weights: Vec<f64> = adv.iter().map(|a| -a).collect();
    let g = weighted_log_prob_gradient(&engine, &q, &plans, &weights).unwrap();
    let lr = 1e-3;
    let mut params: Vec<_> = engine.allocator.parameters_mut();
    params.extend(engine.router.parameters_mut());
    for (m, gm) in params.into_iter().zip(&g.0) {
        for (x, dx) in m.as_mut_slice().iter_mut().zip(gm.as_slice()) {
            *x -= lr * dx;
        }
    }
    let after = engine.plan_log_prob(&plans[best], &q).unwrap();
    assert!(after > before, "{before} -> {after}");
}
