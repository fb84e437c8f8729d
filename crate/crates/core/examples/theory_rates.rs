//! Optimal learning rate and contraction as a function of batch size.
//!
//! cargo run --example theory_rates

use interp_gd::theory::{cost_model, optimal_rate, DEGENERACY_TOL};

fn main() -> interp_gd::Result<()> {
    let (n, lambda1, lambdan) = (64, 1.0, 0.05);
    println!("n={n} lambda1={lambda1} lambdan={lambdan}");
    println!("{:>4} {:>10} {:>10} {:>16} {:>10}", "m", "eta*", "g*", "branch", "T_eps*m");
    for m in [1, 2, 4, 8, 16, 32, 64] {
        let p = optimal_rate(m as f64, n, lambda1, lambdan, DEGENERACY_TOL)?;
        let cost = cost_model(m as f64, n, 1, 1e-6, p.g_opt, 1.0)?;
        println!(
            "{m:>4} {:>10.5} {:>10.6} {:>16} {:>10.1}",
            p.eta_opt,
            p.g_opt,
            serde_json::to_value(p.branch)?.as_str().unwrap_or(""),
            cost.total_cost
        );
    }
    Ok(())
}
