//! Acceptance gate. Runs every criterion in order, prints one PASS/FAIL
//! line per criterion and exits non-zero if any failed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flowgate::allocator::{adapt_depth, sample_layer, select_layer, sequence_log_prob, ProtocolId, WorkflowPlan};
use flowgate::cli::run_command_with;
use flowgate::config::EngineConfig;
use flowgate::diagnostics::{run_gradient_suites, GRADCHECK_TOLERANCE};
use flowgate::difficulty::{calibration_loss, gaussian_kl, PosteriorParams};
use flowgate::executor::{
    execute_plan, ledger_cost, majority_vote, run_protocol, token_cost, BackendSet, ModelPrice, ProtocolSpec,
    ScriptedBackend,
};
use flowgate::harness::{
    generate_corpus, write_dataset, CorpusConfig, DatasetRecord, EpisodeOutcome, Environment, SimEnvironment, TaskKind,
};
use flowgate::numerics::{softmax_with_temperature, Trainable};
use flowgate::optimizer::{advantages, Trainer, TrainingConfig, LAMBDA_COST_SET};
use flowgate::simulation::{run_simulation, SimulationConfig};
use flowgate::{Engine, Result};

type Outcome = (bool, String);

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let suites = run_gradient_suites(0, 10).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = suites.iter().map(|s| s.max_relative_error).fold(0.0, f64::max);
    let ok = suites.len() == 3 && suites.iter().all(|s| s.seeds >= 10 && s.max_relative_error <= GRADCHECK_TOLERANCE) && secs < 30.0;
    let detail = suites
        .iter()
        .map(|s| format!("{}={:.2e}", s.suite, s.max_relative_error))
        .collect::<Vec<_>>()
        .join(" ");
    (ok, format!("gradient suites over 10 seeds: {detail} (max {worst:.2e} <= 1e-4) in {secs:.1}s"))
}

fn criterion_2() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let cal_ok = (calibration_loss(0.5, 0) - ln2).abs() <= 1e-9 && (calibration_loss(0.5, 1) - ln2).abs() <= 1e-9;
    let kl0 = gaussian_kl(&PosteriorParams {
        mu: vec![0.0; 4],
        log_var: vec![0.0; 4],
    });
    let kl1 = gaussian_kl(&PosteriorParams {
        mu: vec![1.0],
        log_var: vec![0.0],
    });
    let kl_ok = kl0.abs() <= 1e-12 && (kl1 - 0.5).abs() <= 1e-12;
    let depths: Vec<usize> = [0.2, 0.4, 0.6, 0.8, 0.99].iter().map(|&d| adapt_depth(d, 5)).collect();
    let depth_ok = depths == vec![1, 2, 3, 4, 5];
    (
        cal_ok && kl_ok && depth_ok,
        format!("cal(0.5,y)=ln2, KL(0,1)={kl0:e}, KL(k=1,mu=1)={kl1}, depths {depths:?}"),
    )
}

/// Width of the shortest top-w prefix whose total exceeds `tau`.
fn scan_oracle(scores: &[f64], tau: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    for w in 1..=idx.len() {
        let top: f64 = idx[..w].iter().map(|&i| scores[i]).sum();
        if top > tau {
            return idx[..w].to_vec();
        }
    }
    idx
}

fn random_simplex(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut non_monotone = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=9);
        let scores = random_simplex(n, &mut rng);
        let tau = rng.random_range(0.01..0.99);
        if select_layer(&scores, tau) != scan_oracle(&scores, tau) {
            mismatches += 1;
        }
        let widths: Vec<usize> = (1..20).map(|t| select_layer(&scores, t as f64 * 0.05).len()).collect();
        if widths.windows(2).any(|w| w[1] < w[0]) {
            non_monotone += 1;
        }
    }
    let uniform = select_layer(&[0.25; 4], 0.3).len();
    (
        mismatches == 0 && non_monotone == 0 && uniform == 2,
        format!("1000 simplex vectors: {mismatches} oracle mismatches, {non_monotone} non-monotone; uniform-4 width {uniform}"),
    )
}

fn criterion_4() -> Outcome {
    let scores = [0.5, 0.3, 0.2];
    // The listed distribution needs the lone 0.3 draw to stop, which the
    // strict rule does for any tau below 0.3.
    let tau = f64::from_bits(0.3f64.to_bits() - 1);
    let expected: [(Vec<usize>, f64); 4] = [
        (vec![0], 0.5),
        (vec![1], 0.3),
        (vec![2, 0], 0.2 * (0.5 / 0.8)),
        (vec![2, 1], 0.2 * (0.3 / 0.8)),
    ];
    let mut enum_ok = true;
    let mut total = 0.0;
    for (seq, p) in &expected {
        let lp = sequence_log_prob(&scores, seq, tau).unwrap();
        enum_ok &= (lp.exp() - p).abs() <= 1e-12;
        total += lp.exp();
    }
    let recursive = common::stopped_sequences(&scores, tau);
    enum_ok &= recursive.len() == 4 && (total - 1.0).abs() <= 1e-9;

    // At tau = 0.3 exactly the 0.3 draw ties and keeps drawing.
    let tie = common::stopped_sequences(&scores, 0.3);
    let mut tie_total = 0.0;
    for (seq, p) in &tie {
        let lp = sequence_log_prob(&scores, seq, 0.3).unwrap();
        enum_ok &= (lp.exp() - p).abs() <= 1e-12;
        tie_total += lp.exp();
    }
    enum_ok &= tie.len() == 5 && (tie_total - 1.0).abs() <= 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        let sel = sample_layer(&scores, tau, &mut rng);
        let k = expected.iter().position(|(s, _)| *s == sel.chosen).expect("unexpected sequence");
        counts[k] += 1;
    }
    let max_dev = expected
        .iter()
        .zip(counts)
        .map(|((_, p), c)| (c as f64 / draws as f64 - p).abs())
        .fold(0.0, f64::max);

    let mut plan_mass = Vec::new();
    for d in [0.3, 0.7] {
        let engine = common::small_engine(&["CoT", "Debate", "SelfConsistency"], &["nano-8b", "ultra"], 2, 1.0, 11);
        let q = common::pinned_query(&engine, "What is 12 * 7 - 5?", d);
        let mass: f64 = common::enumerate_plans(&engine, &q)
            .iter()
            .map(|(plan, _)| engine.plan_log_prob(plan, &q).unwrap().exp())
            .sum();
        plan_mass.push(mass);
    }
    let mass_ok = plan_mass.iter().all(|m| (m - 1.0).abs() <= 1e-9);
    (
        enum_ok && max_dev <= 0.01 && mass_ok,
        format!(
            "stopped sequences {{0.5, 0.3, 0.125, 0.075}} sum {total:.12} (tie at tau: {} sequences, sum {tie_total:.12}); 100k draws max |freq-p| {max_dev:.4}; plan-space mass (depth 1, 2) {plan_mass:.12?}",
            tie.len()
        ),
    )
}

fn criterion_5() -> Outcome {
    let cfg = EngineConfig::default();
    let mut engine = cfg.build_engine().unwrap();
    let mut worst_sum = 0.0f64;
    let mut worst_shift = 0.0f64;
    let mut worst_cold = 1.0f64;
    for (i, text) in ["What is 2+2?", "Integrate x^2 from 0 to 3", "Plan a three-step proof", "Sum 1..100"]
        .iter()
        .enumerate()
    {
        let q = engine.prepare(text).unwrap();
        engine.router.set_temperature(1.0).unwrap();
        let mut ctx = engine
            .router
            .context(&q.embedding, &q.estimate.z, engine.catalog.len(), &engine.pool)
            .unwrap();
        for op in 0..engine.catalog.len() {
            let emb = &engine.catalog.get(op).embedding;
            let p = engine.router.route_distribution(&mut ctx, op, emb).unwrap();
            worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
            let logits = engine.router.similarity_logits(&mut ctx, op, emb).unwrap();
            for c in [-3.0, 7.5, 100.0 + i as f64] {
                let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
                let ps = softmax_with_temperature(&shifted, 1.0);
                let d = p.iter().zip(&ps).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst_shift = worst_shift.max(d);
            }
        }
        engine.router.set_temperature(1e-6).unwrap();
        let mut ctx = engine
            .router
            .context(&q.embedding, &q.estimate.z, engine.catalog.len(), &engine.pool)
            .unwrap();
        for op in 0..engine.catalog.len() {
            let p = engine
                .router
                .route_distribution(&mut ctx, op, &engine.catalog.get(op).embedding)
                .unwrap();
            worst_cold = worst_cold.min(p.iter().cloned().fold(0.0, f64::max));
        }
    }
    let two = softmax_with_temperature(&[0.9, 0.1], 1.0);
    let oracle = 1.0 / (1.0 + (-0.8f64).exp());
    let two_ok = (two[0] - 0.68997).abs() <= 1e-5 && (two[1] - 0.31003).abs() <= 1e-5 && (two[0] - oracle).abs() <= 1e-15;
    (
        worst_sum <= 1e-9 && worst_shift <= 1e-12 && worst_cold >= 1.0 - 1e-6 && two_ok,
        format!(
            "|sum-1| {worst_sum:.1e}, shift {worst_shift:.1e}, T=1e-6 argmax mass {worst_cold:.9}, (0.9,0.1)->({:.5}, {:.5})",
            two[0], two[1]
        ),
    )
}

fn criterion_6() -> Outcome {
    let backend = ScriptedBackend::new()
        .with_rule("Reflection round 2", "The solution is right.\nVERDICT: FINAL")
        .with_default("Step by step.\nANSWER: 4");
    let context = "Question:\nWhat is 2+2?";
    let count = |id: ProtocolId| {
        run_protocol(&ProtocolSpec::standard(id), context, "nano-8b", &backend)
            .map(|r| r.calls.len())
            .unwrap_or(usize::MAX)
    };
    let counts = [
        count(ProtocolId::Cot),
        count(ProtocolId::SelfConsistency),
        count(ProtocolId::Debate),
        count(ProtocolId::SelfRefine),
    ];
    let vote = majority_vote(&["4".into(), "4".into(), "5".into()]).unwrap();
    let cost = token_cost(
        1000,
        200,
        &ModelPrice {
            prompt: 0.15,
            completion: 0.60,
        },
    );

    let engine = EngineConfig::default().build_engine().unwrap();
    let (_, plan) = engine.route("Compute 17 * 23 + 4").unwrap();
    let backends = BackendSet::uniform(Arc::new(
        ScriptedBackend::new().with_default("Work.\nWINNER: A\nVERDICT: FINAL\nANSWER: 395"),
    ));
    let result = execute_plan(&plan, &engine.catalog, "Compute 17 * 23 + 4", &backends, &engine.pricing).unwrap();
    let mut manual = 0.0;
    for call in &result.trace {
        let p = engine.pricing.get(&call.model_name).unwrap();
        manual += call.prompt_tokens as f64 * p.prompt / 1e6 + call.completion_tokens as f64 * p.completion / 1e6;
    }
    let ledger = ledger_cost(&result.trace, &engine.pricing).unwrap();
    let bits_ok = ledger.to_bits() == result.cost_usd.to_bits() && manual.to_bits() == result.cost_usd.to_bits();
    (
        counts == [1, 5, 7, 4] && vote == "4" && cost == 0.00027 && bits_ok,
        format!(
            "calls cot/sc/debate/refine {counts:?}; vote {vote}; ledger ${cost}; trace of {} calls sums to ${} bit-exact",
            result.trace.len(),
            result.cost_usd
        ),
    )
}

struct Constant;

impl Environment for Constant {
    fn run(&self, _: &Engine, _: &WorkflowPlan, _: &DatasetRecord, _: &mut ChaCha8Rng) -> Result<EpisodeOutcome> {
        Ok(EpisodeOutcome {
            utility: 1,
            cost_usd: 0.001,
            success_probability: Some(1.0),
            parse_failed: false,
        })
    }
}

/// Two arms keyed by model name: success probability and fixed cost.
struct Bandit {
    arms: Vec<(String, f64, f64)>,
}

impl Environment for Bandit {
    fn run(&self, _: &Engine, plan: &WorkflowPlan, _: &DatasetRecord, rng: &mut ChaCha8Rng) -> Result<EpisodeOutcome> {
        let name = &plan.assignments[0][0].model_name;
        let (_, p, cost) = self.arms.iter().find(|a| &a.0 == name).unwrap();
        Ok(EpisodeOutcome {
            utility: (rng.random::<f64>() < *p) as u8,
            cost_usd: *cost,
            success_probability: Some(*p),
            parse_failed: false,
        })
    }
}

fn text_record(i: usize, text: &str) -> DatasetRecord {
    DatasetRecord {
        id: format!("q{i}"),
        question: text.to_string(),
        gold_answer: "0".into(),
        task_kind: TaskKind::Numeric,
        true_difficulty: None,
        tier: None,
    }
}

fn snapshot(engine: &Engine) -> Vec<Vec<f64>> {
    engine
        .allocator
        .parameters()
        .into_iter()
        .chain(engine.router.parameters())
        .map(|m| m.as_slice().to_vec())
        .collect()
}

fn criterion_7() -> Outcome {
    let mut engine = common::small_engine(&["CoT", "Debate", "SelfConsistency"], &["nano-8b", "ultra"], 2, 1.0, 5);
    let before = snapshot(&engine);
    let mut trainer = Trainer::new(TrainingConfig::default(), 5).unwrap();
    let rec = trainer
        .training_episode(&mut engine, &text_record(0, "Add 3 and 4"), &Constant)
        .unwrap();
    let zero_update = !rec.applied && snapshot(&engine) == before;

    let rewards = [0.7, -0.2, 1.0, 0.35];
    let (_, a) = advantages(&rewards);
    let mut shift_err = 0.0f64;
    for c in [-5.0, 0.125, 3.0, 1e3] {
        let shifted: Vec<f64> = rewards.iter().map(|r| r + c).collect();
        let (_, b) = advantages(&shifted);
        shift_err = shift_err.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }

    let start = Instant::now();
    let lambda = 1e-2;
    let arms = vec![("nano-8b".to_string(), 0.70, 0.002), ("ultra".to_string(), 0.90, 0.04)];
    let value = |(_, p, c): &(String, f64, f64)| p - lambda * c / 1e-3;
    let best = if value(&arms[0]) >= value(&arms[1]) { 0 } else { 1 };
    let env = Bandit { arms: arms.clone() };
    let records: Vec<DatasetRecord> = (0..8).map(|i| text_record(i, &format!("Routing question number {i}"))).collect();
    let mut per_seed = Vec::new();
    for seed in 0..3 {
        let mut engine = common::small_engine(&["CoT"], &["nano-8b", "ultra"], 1, 0.25, 100 + seed);
        let cfg = TrainingConfig {
            episodes: 2000,
            lambda_cost: lambda,
            ..TrainingConfig::default()
        };
        Trainer::new(cfg, seed).unwrap().train(&mut engine, &records, &env, None, None).unwrap();
        let mut mass = 0.0;
        let mut hits = 0;
        for r in &records {
            let (_, plan) = engine.route(&r.question).unwrap();
            let d = &plan.assignments[0][0];
            mass += d.probabilities[best];
            hits += (d.model_index == best) as usize;
        }
        per_seed.push((mass / records.len() as f64, hits as f64 / records.len() as f64));
    }
    let secs = start.elapsed().as_secs_f64();
    let bandit_ok = per_seed.iter().all(|&(m, h)| m > 0.9 && h > 0.9) && secs < 120.0;
    (
        zero_update && shift_err <= 1e-12 && bandit_ok,
        format!(
            "zero update {zero_update}; shift err {shift_err:.1e}; bandit optimal arm `{}` (mass, argmax rate) per seed {:.3?} in {secs:.1}s",
            arms[best].0, per_seed
        ),
    )
}

fn criterion_8() -> Outcome {
    let cfg = EngineConfig::default();
    let engine = cfg.build_engine().unwrap();
    let sim_cfg = SimulationConfig::default();
    let training = TrainingConfig::default();
    let shape_ok = sim_cfg.corpus.size == 2000
        && engine.pool.len() == 4
        && engine.catalog.len() == 7
        && training.k == 4
        && engine.allocator.tau() == 0.3
        && engine.allocator.l_max() == 5
        && training.lambda_cost == 1e-3
        && training.episodes <= 5000;
    let start = Instant::now();
    let run = run_simulation(engine, &sim_cfg, &SimEnvironment::default(), &training, cfg.seed, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let s = &run.summary;
    let easy = s.mean_depth_by_tier["easy"];
    let hard = s.mean_depth_by_tier["hard"];
    let ok = shape_ok
        && s.difficulty_spearman >= 0.6
        && s.cost_ratio <= 0.7
        && s.success_gap_pp <= 2.0
        && easy < hard
        && secs < 300.0;
    (
        ok,
        format!(
            "{} episodes: spearman {:.3}; cost ratio {:.3}; success {:.4} vs baseline {:.4} (gap {:.2}pp); depth easy {easy:.2} < hard {hard:.2}; {secs:.1}s",
            s.episodes, s.difficulty_spearman, s.cost_ratio, s.learned.expected_success, s.baseline.expected_success, s.success_gap_pp
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rows = Vec::new();
    let mut monotone_seeds = 0;
    for seed in 0..3u64 {
        let mut costs = Vec::new();
        for &lambda in &LAMBDA_COST_SET {
            let engine = EngineConfig::default().build_engine().unwrap();
            let training = TrainingConfig {
                lambda_cost: lambda,
                ..TrainingConfig::default()
            };
            let run = run_simulation(engine, &SimulationConfig::default(), &SimEnvironment::default(), &training, seed, None)
                .unwrap();
            costs.push(run.summary.learned.mean_cost_usd);
        }
        if costs.windows(2).all(|w| w[1] <= w[0]) {
            monotone_seeds += 1;
        }
        rows.push(costs);
    }
    let detail = rows
        .iter()
        .enumerate()
        .map(|(s, c)| {
            let mut line = format!("seed {s}: {:.5}", c[0]);
            for w in c.windows(2) {
                let rel = if w[1] <= w[0] { ">=" } else { "<" };
                line.push_str(&format!(" {rel} {:.5}", w[1]));
            }
            line
        })
        .collect::<Vec<_>>()
        .join("; ");
    (monotone_seeds >= 2, format!("{monotone_seeds}/3 seeds non-increasing over lambda {LAMBDA_COST_SET:?}: {detail}"))
}

fn run_cli(args: &[&str]) -> (i32, Vec<u8>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["flowgate"];
    argv.extend_from_slice(args);
    let code = run_command_with(argv, &mut out, &mut err);
    (code, out)
}

fn one_pass(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let cfg = dir.join("config.json");
    let sim_cfg = dir.join("sim.json");
    let c = cfg.to_str().unwrap();
    let s = sim_cfg.to_str().unwrap();
    let mut artifacts = Vec::new();
    for (name, args) in [
        ("train", vec!["train", "--config", c, "--seed", "7"]),
        ("eval", vec!["eval", "--config", c, "--seed", "7"]),
        ("route", vec!["route", "--config", c, "--seed", "7", "--query", "Work out: 3 + 4 * 5"]),
        ("simulate", vec!["simulate", "--config", s, "--seed", "7", "--episodes", "300"]),
    ] {
        let (code, out) = run_cli(&args);
        assert_eq!(code, 0, "{name} failed");
        artifacts.push((format!("{name} stdout"), out));
    }
    for f in ["ckpt.json", "report.json", "log.jsonl", "sim_ckpt.json", "sim_report.json"] {
        artifacts.push((f.to_string(), std::fs::read(dir.join(f)).unwrap()));
    }
    artifacts
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(
        &CorpusConfig {
            size: 40,
            ..CorpusConfig::default()
        },
        9,
    )
    .unwrap();
    write_dataset(&dir.path().join("data.jsonl"), &corpus).unwrap();
    std::fs::write(
        dir.path().join("config.json"),
        r#"{
  "train_dataset": "data.jsonl",
  "eval_dataset": "data.jsonl",
  "checkpoint": "ckpt.json",
  "report": "report.json",
  "training_log": "log.jsonl",
  "training": {"episodes": 150, "parallel": 3}
}"#,
    )
    .unwrap();
    std::fs::write(
        dir.path().join("sim.json"),
        r#"{"checkpoint": "sim_ckpt.json", "report": "sim_report.json", "report_format": "table"}"#,
    )
    .unwrap();
    let first = one_pass(dir.path());
    let second = one_pass(dir.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| a.1 != b.1 || (a.1.is_empty() && a.0 != "eval stdout"))
        .map(|(a, _)| a.0.as_str())
        .collect();
    (
        differing.is_empty(),
        format!(
            "{} artifacts from train/eval/route/simulate byte-identical across two runs{}",
            first.len(),
            if differing.is_empty() { String::new() } else { format!("; differing: {differing:?}") }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", criterion_1),
        ("closed-form spot checks", criterion_2),
        ("threshold decoder", criterion_3),
        ("sampling correctness", criterion_4),
        ("router", criterion_5),
        ("executor call counts and ledger", criterion_6),
        ("policy-gradient sanity", criterion_7),
        ("end-to-end synthetic run", criterion_8),
        ("lambda sweep trend", criterion_9),
        ("reproducibility", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !ok {
            failed += 1;
        }
        println!("{} criterion {:>2} ({name}): {detail}", if ok { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("acceptance: {}/10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
