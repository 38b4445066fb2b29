//! Runs CA-Fed and Unbiased on the synthetic preset and prints summary
//! metrics per seed, plus which availability classes CA-Fed excludes.
//!
//! ```sh
//! cargo run --release --example compare_strategies
//! ```

use cafed_sim::availability::build_population;
use cafed_sim::engine::run_experiment;
use cafed_sim::harness::{ExperimentConfig, StrategyKind};

fn main() -> cafed_sim::Result<()> {
    let base = ExperimentConfig::preset_synthetic();

    for strategy in [StrategyKind::Unbiased, StrategyKind::CaFed] {
        let mut config = base.clone();
        config.strategy = strategy;
        println!("== {} ==", strategy.label());
        for &seed in &config.seeds.clone() {
            let result = run_experiment(&config, seed)?;
            let m = &result.metrics;
            println!(
                "seed {seed}: time-avg acc {:.2}%  second-half std {:.2}pp  max {:.2}%",
                100.0 * m.time_avg_accuracy,
                100.0 * m.second_half_std,
                100.0 * m.max_accuracy
            );

            if strategy == StrategyKind::CaFed {
                // exclusion frequency per availability class in the second half
                let population = build_population(
                    config.n_clients,
                    config.availability.g,
                    config.availability.nu,
                    config.availability.eps,
                    cafed_sim::engine::population_subseed(seed),
                )?;
                let pi = population.stationary_activity()?;
                let lam = population.second_eigenvalues();
                let mut freq = vec![0usize; config.n_clients];
                let half = result.rounds.len() / 2;
                for log in &result.rounds[half..] {
                    if let Some(snapshot) = &log.snapshot {
                        for &k in &snapshot.excluded {
                            freq[k] += 1;
                        }
                    }
                }
                let mut by_class: std::collections::BTreeMap<String, (usize, usize)> =
                    Default::default();
                for k in 0..config.n_clients {
                    let class = format!(
                        "pi={:.1} lam={}",
                        pi[k],
                        if lam[k] > 0.5 { "high" } else { "low " }
                    );
                    let entry = by_class.entry(class).or_default();
                    entry.0 += freq[k];
                    entry.1 += result.rounds.len() - half;
                }
                for (class, (hits, total)) in by_class {
                    println!(
                        "  excluded {:5.1}% of client-rounds in class {class}",
                        100.0 * hits as f64 / total as f64
                    );
                }
            }
        }
    }
    Ok(())
}
