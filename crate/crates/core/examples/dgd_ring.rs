//! Distributed GD on a ring: one sample per node, a Laplacian penalty
//! pulling neighbours together.
//!
//! cargo run --release --example dgd_ring

use interp_gd::distributed::{default_eta, dgd_operator_spectrum, random_initial_stack, run_dgd, DgdConfig};
use interp_gd::presets::preset;
use interp_gd::solvers::estimate_rate;

fn main() -> interp_gd::Result<()> {
    let p = preset("ring16")?;
    let ds = p.dataset()?;
    let g = p.comm_graph()?.expect("ring16 has a graph");
    let w0 = random_initial_stack(ds.n(), ds.d(), 1);
    for mu in [0.1, 1.0, 10.0] {
        let eta = default_eta(&ds, &g, mu);
        let cfg = DgdConfig { eta, mu, max_iters: 200_000, stop_tol: 1e-18 };
        let trace = run_dgd(&ds, &g, &cfg, Some(&w0))?;
        let curve = trace.norm_curve();
        let fit = estimate_rate(&curve, curve.len() / 2..curve.len())?;
        let spec = dgd_operator_spectrum(&ds, &g, eta, mu)?;
        let (first, last) = (&trace.records[0], trace.records.last().unwrap());
        println!(
            "mu={mu:<5} eta={eta:.4} iters={:6} R_hat={:.6} spectral={:.6} lower={:.6} spread {:.2e} -> {:.2e}",
            last.t, fit.rate, spec.rate_spectral, spec.rate_lower, first.global_spread, last.global_spread
        );
    }
    Ok(())
}
