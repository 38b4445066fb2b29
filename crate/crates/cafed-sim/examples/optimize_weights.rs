//! Solves the convex aggregation-weight problem in closed form via its KKT
//! conditions and cross-checks against projected gradient descent. Low-
//! availability clients are the first to receive zero weight.
//!
//! ```sh
//! cargo run --release --example optimize_weights
//! ```

use cafed_sim::bounds::{
    convexity_check, kkt_objective, kkt_residual, optimize_weights_kkt, optimize_weights_pgd,
};

fn main() -> cafed_sim::Result<()> {
    // minimize (q' A q / 2 + b) / <pi, q>  subject to  q >= 0, sum q = Q,
    // with A = diag(a). With uniform curvature the optimal weights grow with
    // availability and the least-available clients are dropped first.
    let pi = vec![0.95, 0.9, 0.5, 0.3, 0.12, 0.05];
    let a_diag = vec![1.0; pi.len()];
    let b = 0.05;
    let q_total = 6.0;

    let q = optimize_weights_kkt(&a_diag, b, &pi, q_total)?;
    let q_pgd = optimize_weights_pgd(&a_diag, b, &pi, q_total, 200_000)?;

    println!("pi        q (KKT)   q (PGD)");
    for k in 0..pi.len() {
        println!("{:<8.2}  {:<8.4}  {:.4}", pi[k], q[k], q_pgd[k]);
    }
    println!(
        "\nobjective: KKT {:.8}, PGD {:.8}, KKT residual {:.2e}",
        kkt_objective(&a_diag, b, &pi, &q),
        kkt_objective(&a_diag, b, &pi, &q_pgd),
        kkt_residual(&a_diag, b, &pi, q_total, &q)
    );

    // A larger fixed cost b rewards concentrating mass on the available
    // clients; the least-available clients are zeroed out first.
    let b_large = 50.0;
    let q_tight = optimize_weights_kkt(&a_diag, b_large, &pi, q_total)?;
    println!("\nwith b = {b_large}: q = {:?}", q_tight.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>());

    // The fractional objective is convex on the simplex, which is what makes
    // the prefix structure of the KKT solution globally optimal.
    let report = convexity_check(
        |q: &[f64]| kkt_objective(&a_diag, b, &pi, q),
        pi.len(),
        q_total,
        10_000,
        5,
    );
    println!(
        "midpoint convexity: {}/{} violations (max {:.1e})",
        report.violations, report.trials, report.max_violation
    );
    Ok(())
}
