//! Bernoulli-minibatch SGD on orthonormal data: the mean squared error
//! contracts by 1 - m/n per step at eta = m.
//!
//! cargo run --release --example sgd_ensemble

use interp_gd::presets::preset;
use interp_gd::solvers::{estimate_rate, run_ensemble, Sampler, SolverConfig};

fn main() -> interp_gd::Result<()> {
    let ds = preset("orthonormal32")?.dataset()?;
    for m in [2.0, 4.0, 8.0] {
        let cfg = SolverConfig::sgd(m, m, Sampler::Bernoulli, 60, 0);
        let ens = run_ensemble(&ds, &cfg, 500, 42)?;
        let window = ens.fit_window(5, Some(41));
        let fit = estimate_rate(&ens.mean, window.clone())?;
        println!(
            "m={m:>4}  R_hat={:.4}  predicted={:.4}  window={window:?}",
            fit.rate,
            1.0 - m / 32.0
        );
    }
    Ok(())
}
