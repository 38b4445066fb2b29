//! One CA-Fed training run, watching the server-side estimators converge and
//! the exclusion set stabilize round by round.
//!
//! ```sh
//! cargo run --release --example training_run
//! ```

use cafed_sim::engine::run_experiment;
use cafed_sim::harness::ExperimentConfig;

fn main() -> cafed_sim::Result<()> {
    let mut config = ExperimentConfig::preset_synthetic();
    config.t_rounds = 200;
    // estimate pi and lambda2 from the observed activity instead of taking
    // the oracle values, so the estimator columns show real convergence
    config.oracle_availability = false;
    let seed = 1;
    let result = run_experiment(&config, seed)?;

    println!("round  active  part.  excl.  acc     pi_hat MAE  gamma'_hat");
    for log in result.rounds.iter().filter(|l| l.round % 10 == 0) {
        let snapshot = log.snapshot.as_ref().expect("cafed strategy logs snapshots");
        let n_active = log.active.iter().filter(|&&a| a).count();
        let n_part = log.participating.iter().filter(|&&p| p).count();
        // estimator quality against the population's class structure: pi_hat
        // should settle near 0.9 or 0.1
        let pi_mae: f64 = snapshot
            .pi_hat
            .iter()
            .map(|&p| (p - 0.9).abs().min((p - 0.1).abs()))
            .sum::<f64>()
            / snapshot.pi_hat.len() as f64;
        println!(
            "{:>5}  {:>6}  {:>5}  {:>5}  {:.4}  {:>9.4}   {:.4}",
            log.round,
            n_active,
            n_part,
            snapshot.excluded.len(),
            log.test_accuracy,
            pi_mae,
            snapshot.gamma_prime_hat,
        );
    }

    let m = &result.metrics;
    println!(
        "\nfinal: max acc {:.2}%, time-avg acc {:.2}%, second-half std {:.2}pp",
        100.0 * m.max_accuracy,
        100.0 * m.time_avg_accuracy,
        100.0 * m.second_half_std
    );
    Ok(())
}
