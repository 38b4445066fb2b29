//! Evaluates the error decompositions: the chi-square and total-variation
//! forms of the bias term, and the optimization-error bound driven by the
//! product chain's mixing rate.
//!
//! ```sh
//! cargo run --release --example error_bounds
//! ```

use cafed_sim::availability::{build_population, product_chain_lambda};
use cafed_sim::bounds::{
    chi_square_divergence, client_minima, heterogeneity_gap, theorem1_bound, theorem2_bound,
    theorem3_bound, total_variation, ProblemConstants,
};
use cafed_sim::data::generate_synthetic_for_groups;
use cafed_sim::engine::biased_importance;
use cafed_sim::model::{smoothness_constant, weighted_loss, LinearModel, ModelConfig};

fn main() -> cafed_sim::Result<()> {
    let n = 24;
    let population = build_population(n, 0.4, 0.9, 1e-2, 7)?;
    let fed = generate_synthetic_for_groups(&population.group_ids(), 10, 150, 8)?;
    let alpha = fed.target_weights.clone();
    let pi = population.stationary_activity()?;

    let config = ModelConfig { dim: 10, n_classes: 2, ridge: 1e-2, radius: 100.0, bias: true };
    let l = smoothness_constant(&fed, &config);
    let kappa = l / config.ridge;
    let minima = client_minima(&fed, config)?;
    let (gamma, _, _) = heterogeneity_gap(&fed, &alpha, &minima, config, None)?;

    // Compare the importance the unbiased weights realize (p = alpha) with a
    // deliberately skewed aggregation that halves the rare clients' weights.
    let q_unbiased: Vec<f64> = alpha.iter().zip(&pi).map(|(a, p)| a / p).collect();
    let q_skewed: Vec<f64> = q_unbiased
        .iter()
        .zip(&pi)
        .map(|(&q, &p)| if p < 0.5 { 0.5 * q } else { q })
        .collect();

    for (label, q) in [("unbiased", &q_unbiased), ("skewed", &q_skewed)] {
        let p = biased_importance(&pi, q)?;
        let (gamma_prime, f_b_star, _) = heterogeneity_gap(&fed, &p, &minima, config, None)?;
        let zero = LinearModel::new(config)?;
        let gap = weighted_loss(&zero, &fed, &p)? - f_b_star;
        println!("{label} weights:");
        println!("  chi^2(alpha||p) = {:.4}, d_TV = {:.4}", chi_square_divergence(&alpha, &p)?, total_variation(&alpha, &p)?);
        println!(
            "  total-error bound at the zero initializer: chi-square form {:.3e}, TV form {:.3e}",
            theorem1_bound(kappa, gap, &alpha, &p, gamma)?,
            theorem3_bound(kappa, gap, &alpha, &p, gamma_prime)?
        );
    }

    // Optimization-error bound under a decaying step-size schedule. The
    // slower the product chain mixes, the larger the bound.
    let chains = population.chains();
    let included = vec![true; n];
    let lambda_p = product_chain_lambda(&chains, &included)?;
    let consts = ProblemConstants {
        l,
        mu: config.ridge,
        d: 1.0,
        g: 1.0,
        h: 1.0,
        sigma: vec![0.1; n],
        gamma,
        gamma_prime: gamma,
        c_p: 1.0,
        t_p: 1,
        m_states: 2f64.powi(n as i32),
        e_steps: 10,
        w0_dist_sq: 1.0,
    };
    let eta: Vec<f64> = (1..=2000).map(|t| 0.1 / (t as f64).sqrt()).collect();
    println!("\nproduct chain lambda(P') = {lambda_p:.4}");
    println!(
        "optimization-error bound after 2000 rounds: {:.3e}",
        theorem2_bound(&consts, &q_unbiased, &pi, &eta, lambda_p)?
    );
    Ok(())
}
