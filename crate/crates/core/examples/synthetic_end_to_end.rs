//! Train on the planted-difficulty corpus and compare against the
//! always-deepest, always-priciest baseline. Episodes default to 1500; pass
//! a number to change it.

use flowgate::config::EngineConfig;
use flowgate::harness::SimEnvironment;
use flowgate::optimizer::TrainingConfig;
use flowgate::simulation::{run_simulation, SimulationConfig};

fn main() -> flowgate::Result<()> {
    let episodes = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let training = TrainingConfig {
        episodes,
        ..TrainingConfig::default()
    };
    let engine = EngineConfig::default().build_engine()?;
    let mut log = std::io::sink();
    let run = run_simulation(engine, &SimulationConfig::default(), &SimEnvironment::default(), &training, 0, Some(&mut log))?;
    let s = &run.summary;
    println!("{} train / {} test queries, {} episodes in {:.1}s", s.train, s.test, s.episodes, run.train_seconds);
    println!("difficulty spearman     {:.3}", s.difficulty_spearman);
    println!("success  learned {:.4}  baseline {:.4}  gap {:.2}pp", s.learned.expected_success, s.baseline.expected_success, s.success_gap_pp);
    println!("cost     learned ${:.5}  baseline ${:.5}  ratio {:.3}", s.learned.mean_cost_usd, s.baseline.mean_cost_usd, s.cost_ratio);
    for (tier, depth) in &s.mean_depth_by_tier {
        println!("mean depth {tier:<7} {depth:.2}");
    }
    println!("{}", run.learned.to_table());
    Ok(())
}
