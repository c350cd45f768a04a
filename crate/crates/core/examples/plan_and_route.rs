//! The deterministic plan for a query next to a few sampled ones, with
//! their log-probabilities recomputed from the current parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use flowgate::allocator::PlanMode;
use flowgate::config::EngineConfig;

fn main() -> flowgate::Result<()> {
    let engine = EngineConfig::default().build_engine()?;
    let text = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "Evaluate the expression 14 * (9 - 4) + 6".into());

    let (query, plan) = engine.route(&text)?;
    println!("query: {text}\npredicted difficulty {:.3}", query.estimate.d);
    println!("{}", serde_json::to_string_pretty(&plan.to_wire(&engine.catalog))?);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("\nsampled plans:");
    for _ in 0..5 {
        let p = engine.plan(&query, PlanMode::Sampled, &mut rng)?;
        let layers: Vec<String> = p
            .layers
            .iter()
            .zip(&p.assignments)
            .map(|(l, a)| {
                l.chosen
                    .iter()
                    .zip(a)
                    .map(|(&op, d)| format!("{}@{}", engine.catalog.get(op).name, d.model_name))
                    .collect::<Vec<_>>()
                    .join("+")
            })
            .collect();
        println!("  ln p = {:>8.3}  {}", engine.plan_log_prob(&p, &query)?, layers.join(" -> "));
    }
    Ok(())
}
