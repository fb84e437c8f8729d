//! Closed-form E[M^T M] against a Monte-Carlo estimate.
//!
//! cargo run --release --example monte_carlo_check

use interp_gd::linalg::lambda_max;
use interp_gd::problem::{gen_dataset, DatasetKind};
use interp_gd::theory::{expected_mm, mc_expected_mm};

fn main() -> interp_gd::Result<()> {
    let ds = gen_dataset(8, 8, DatasetKind::Gaussian, true, 2)?;
    for (eta, m) in [(0.25, 1.0), (0.5, 2.0), (0.5, 4.0)] {
        let exact = expected_mm(&ds, eta, m)?;
        let mc = mc_expected_mm(&ds, eta, m, 20_000, 9)?;
        let worst_z = (&exact - &mc.mean)
            .iter()
            .zip(mc.std_err.iter())
            .map(|(d, se)| if *se > 0.0 { d.abs() / se } else { 0.0 })
            .fold(0.0, f64::max);
        println!(
            "eta={eta} m={m}: lambda_max exact={:.6} mc={:.6} worst entry |z|={worst_z:.2}",
            lambda_max(&exact)?,
            lambda_max(&mc.mean)?
        );
    }
    Ok(())
}
