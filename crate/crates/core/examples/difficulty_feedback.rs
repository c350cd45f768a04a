//! Outcome feedback moving the difficulty estimate, and the depth it implies.

use flowgate::allocator::adapt_depth;
use flowgate::config::EngineConfig;
use flowgate::optimizer::{Trainer, TrainingConfig};

fn main() -> flowgate::Result<()> {
    let mut engine = EngineConfig::default().build_engine()?;
    let mut trainer = Trainer::new(TrainingConfig::default(), 0)?;
    let l_max = engine.allocator.l_max();

    let easy = engine.embed("Add up 2 + 3")?;
    let hard = engine.embed("Resolve the lengthy nested arithmetic chain ((17 * 23) - (41 * 6)) * 9 + 88 / 4")?;
    let show = |label: &str, d: f64| println!("{label:<6} d = {d:.3}  depth = {}", adapt_depth(d, l_max));
    show("easy", engine.estimator.estimate(&easy)?.d);
    show("hard", engine.estimator.estimate(&hard)?.d);

    for round in 1..=40 {
        trainer.feedback_update(&mut engine, easy.clone(), 1)?;
        trainer.feedback_update(&mut engine, hard.clone(), 0)?;
        if round % 10 == 0 {
            println!("after {round} rounds of feedback:");
            show("easy", engine.estimator.estimate(&easy)?.d);
            show("hard", engine.estimator.estimate(&hard)?.d);
        }
    }
    Ok(())
}
