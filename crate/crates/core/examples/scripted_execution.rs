//! Run a routed plan against a scripted backend and print the call ledger.

use std::sync::Arc;

use flowgate::config::EngineConfig;
use flowgate::executor::{execute_plan, BackendSet, ScriptedBackend};

fn main() -> flowgate::Result<()> {
    let engine = EngineConfig::default().build_engine()?;
    let question = "Compute 17 * 23 + 4";
    let (_, plan) = engine.route(question)?;

    let backend = ScriptedBackend::new()
        .with_rule("Reflection round", "Looks right.\nVERDICT: FINAL")
        .with_default("17 * 23 = 391, plus 4.\nWINNER: A\nANSWER: 395");
    let backends = BackendSet::uniform(Arc::new(backend));
    let result = execute_plan(&plan, &engine.catalog, question, &backends, &engine.pricing)?;

    println!("final answer: {}", result.final_answer);
    println!("{:<10} {:>7} {:>7} {:>12}", "model", "prompt", "compl", "usd");
    for call in &result.trace {
        let price = engine.pricing.get(&call.model_name).expect("priced model");
        let usd = (call.prompt_tokens as f64 * price.prompt + call.completion_tokens as f64 * price.completion) / 1e6;
        println!("{:<10} {:>7} {:>7} {:>12.8}", call.model_name, call.prompt_tokens, call.completion_tokens, usd);
    }
    println!("{} calls, total ${:.8}", result.trace.len(), result.cost_usd);
    Ok(())
}
