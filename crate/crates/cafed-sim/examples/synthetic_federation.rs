//! The synthetic federation: two client groups sharing a ground-truth linear
//! model, one observing 20% label noise, and the heterogeneity constants the
//! error bounds are built from.
//!
//! ```sh
//! cargo run --release --example synthetic_federation
//! ```

use cafed_sim::bounds::{client_minima, heterogeneity_gap};
use cafed_sim::data::generate_synthetic;
use cafed_sim::model::{smoothness_constant, ModelConfig};

fn main() -> cafed_sim::Result<()> {
    let n = 24;
    let fed = generate_synthetic(n, 10, 150, 42)?;

    println!("clients: {}, feature dim: {}, classes: {}", fed.n_clients(), fed.dim, fed.n_classes);
    for group in [1u8, 2] {
        let members: Vec<usize> =
            (0..n).filter(|&k| fed.clients[k].group_id == group).collect();
        let sizes: Vec<usize> = members.iter().map(|&k| fed.clients[k].train.n_samples()).collect();
        println!(
            "group {group}: {} clients, train sizes {:?}...",
            members.len(),
            &sizes[..sizes.len().min(4)]
        );
    }
    println!(
        "target weights alpha sum to {:.3}, uniform at {:.4} (equal sample counts)",
        fed.target_weights.iter().sum::<f64>(),
        fed.target_weights[0]
    );

    let config = ModelConfig { dim: fed.dim, n_classes: 2, ridge: 1e-2, radius: 100.0, bias: true };
    let l = smoothness_constant(&fed, &config);
    println!("\nsmoothness L = {l:.3}, strong convexity mu = {:.3}, kappa = {:.1}", config.ridge, l / config.ridge);

    // Per-client minima and the heterogeneity gap Gamma at the target
    // minimizer. Noisy-group clients have a higher loss floor.
    let minima = client_minima(&fed, config)?;
    let mean_by_group = |group: u8| {
        let vals: Vec<f64> = (0..n)
            .filter(|&k| fed.clients[k].group_id == group)
            .map(|k| minima[k])
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    println!("mean client loss floor: group 1 {:.4}, group 2 {:.4}", mean_by_group(1), mean_by_group(2));

    let (gamma, f_star, _) = heterogeneity_gap(&fed, &fed.target_weights, &minima, config, None)?;
    println!("global optimum F* = {f_star:.4}, heterogeneity Gamma = {gamma:.4}");
    Ok(())
}
