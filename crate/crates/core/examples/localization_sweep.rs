//! Estimation then matching with one to four sensors at two budgets.

use qmagnav::harness::{run_localization_sweep, AutoSites, ExperimentConfig};
use qmagnav::matcher::Pipeline;

fn main() -> qmagnav::Result<()> {
    let config = ExperimentConfig {
        seed: 7,
        budgets: vec![0.05, 1.5],
        repetitions: 2,
        auto_sites: AutoSites { count: 6, min_gradient: 0.05, margin: 2 },
        ..ExperimentConfig::default()
    };
    let report = run_localization_sweep(&config)?;
    for &b in &config.budgets {
        for n in 1..=4 {
            for p in [Pipeline::Corner, Pipeline::Grad] {
                if let Some(q) = report.summary(None, b, n, p) {
                    println!("T = {b:>4} s  S = {n}  {p:<6} median {:>9.0} m  IQR [{:.0}, {:.0}]", q.median, q.q1, q.q3);
                }
            }
        }
    }
    Ok(())
}
