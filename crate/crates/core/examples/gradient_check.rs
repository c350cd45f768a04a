//! Central-difference checks of every analytic gradient.

use flowgate::diagnostics::{run_gradient_suites, GRADCHECK_TOLERANCE};

fn main() -> flowgate::Result<()> {
    for r in run_gradient_suites(0, 10)? {
        println!(
            "{:<10} {} seeds  max relative error {:.2e}  (tolerance {GRADCHECK_TOLERANCE:e})",
            r.suite, r.seeds, r.max_relative_error
        );
    }
    Ok(())
}
