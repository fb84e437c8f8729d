//! Exact spectrum of the distributed round map across graph shapes.
//!
//! cargo run --example operator_spectrum

use interp_gd::distributed::{default_eta, dgd_operator_spectrum, make_graph, GraphKind};
use interp_gd::problem::{gen_dataset, DatasetKind};

fn main() -> interp_gd::Result<()> {
    let ds = gen_dataset(8, 8, DatasetKind::Gaussian, true, 5)?;
    println!("{:<10} {:>6} {:>10} {:>10} {:>10} {:>10}", "graph", "mu", "sigma_min", "sigma_max", "rate", "lower");
    for kind in [GraphKind::Path, GraphKind::Ring, GraphKind::Complete] {
        let g = make_graph(kind, 8, 0)?;
        for mu in [0.1, 1.0, 10.0] {
            let s = dgd_operator_spectrum(&ds, &g, default_eta(&ds, &g, mu), mu)?;
            println!(
                "{:<10} {mu:>6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
                kind.name(),
                s.sigma_min,
                s.sigma_max,
                s.rate_spectral,
                s.rate_lower
            );
        }
    }
    Ok(())
}
