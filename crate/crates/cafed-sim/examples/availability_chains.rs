//! Two-state availability chains: construction from (pi, lambda2), spectral
//! quantities, geometric mixing, and seeded trace sampling.
//!
//! ```sh
//! cargo run --release --example availability_chains
//! ```

use cafed_sim::availability::{
    build_population, kron_product_oracle, lambda_param, product_chain_lambda, sample_trace,
    ClientChain,
};

fn main() -> cafed_sim::Result<()> {
    // The four client profiles of the reference population: availability
    // 0.9 or 0.1, crossed with strong (0.9) or near-zero correlation.
    println!("profile chains:");
    for (pi, lambda2) in [(0.9, 0.9), (0.9, 0.01), (0.1, 0.9), (0.1, 0.01)] {
        let chain = ClientChain::from_pi_lambda(pi, lambda2)?;
        let (pi_a, pi_i) = chain.stationary_distribution()?;
        println!(
            "  pi={pi:.1} lambda2={lambda2:<4}: p_stay_active={:.4} p_stay_inactive={:.4} \
             stationary=({pi_a:.2}, {pi_i:.2}) lambda(P)={:.3}",
            chain.p_stay_active(),
            chain.p_stay_inactive(),
            lambda_param(chain.second_eigenvalue()),
        );
    }

    // Mixing: the deviation from stationarity decays like |lambda2|^t.
    let slow = ClientChain::from_pi_lambda(0.5, 0.95)?;
    let fast = ClientChain::from_pi_lambda(0.5, 0.2)?;
    println!("\nmixing deviation over time:");
    println!("  t      lambda2=0.95   lambda2=0.20");
    for t in [1u32, 5, 10, 25, 50, 100] {
        println!(
            "  {t:<5}  {:<13.6}  {:.2e}",
            slow.mixing_deviation(t)?,
            fast.mixing_deviation(t)?
        );
    }

    // The product of independent chains mixes no faster than its slowest
    // factor; the closed form matches a dense Kronecker eigendecomposition.
    let chains = vec![
        ClientChain::from_pi_lambda(0.9, 0.9)?,
        ClientChain::from_pi_lambda(0.1, 0.4)?,
        ClientChain::from_pi_lambda(0.5, -0.3)?,
    ];
    let included = vec![true; chains.len()];
    println!(
        "\nproduct chain lambda(P') = {:.6} (dense oracle {:.6})",
        product_chain_lambda(&chains, &included)?,
        kron_product_oracle(&chains, 4)?
    );

    // A full population and a sampled trace; empirical activity approaches
    // the stationary probabilities.
    let population = build_population(24, 0.4, 0.9, 1e-2, 7)?;
    let trace = sample_trace(&population, 10_000, 8)?;
    let pi = population.stationary_activity()?;
    println!("\nempirical vs stationary activity over 10^4 rounds (first 6 clients):");
    for k in 0..6 {
        let active = (0..trace.n_rounds()).filter(|&t| trace.is_active(t, k)).count();
        println!(
            "  client {k}: empirical {:.3}  stationary {:.3}",
            active as f64 / trace.n_rounds() as f64,
            pi[k]
        );
    }
    Ok(())
}
