//! Recycled-factorization MM against a refactorizing IRLS baseline. The
//! comparison asserts factorization counts, not timings.

use mmreg::cli::{bench_one, BenchScenario};

fn main() -> mmreg::Result<()> {
    println!(
        "{:<9} {:>4} {:>6} {:>6} {:>7} {:>16} {:>9}",
        "scenario", "p", "solver", "iters", "factors", "objective", "seconds"
    );
    for scenario in [BenchScenario::Lad, BenchScenario::Logistic] {
        for p in [10, 50, 100] {
            for row in bench_one(scenario, p, 1, 1e-10, 100_000)? {
                println!(
                    "{:<9} {:>4} {:>6} {:>6} {:>7} {:>16.10} {:>9.4}",
                    format!("{scenario:?}"),
                    row.p,
                    row.solver,
                    row.iterations,
                    row.factorizations,
                    row.objective,
                    row.seconds
                );
            }
        }
    }
    Ok(())
}
