//! Drive a file-based experiment from code, the way the `igd` binary does.
//!
//! cargo run --release --example experiment_config

use interp_gd::experiment::{run_experiment, Command, DatasetSpec, ExperimentConfig, SweepParam};

fn main() -> interp_gd::Result<()> {
    let out = std::env::temp_dir().join("igd-sweep-m");
    let mut cfg = ExperimentConfig::new(Command::Sweep { param: SweepParam::M }, &out);
    cfg.dataset = Some(DatasetSpec::Preset { name: "orthonormal32".into() });
    cfg.seed = 11;
    cfg.runs = Some(500);
    cfg.values = vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    let outcome = run_experiment(&cfg)?;
    println!("exit {} -> {}", outcome.exit_code, out.display());
    for row in outcome.summary["sweep"].as_array().unwrap() {
        println!(
            "m={:<3} g*={:.4} R_hat={:.4} cost_scaling={:.3}",
            row["m"], row["g_opt"].as_f64().unwrap(), row["r_hat"].as_f64().unwrap_or(f64::NAN),
            row["cost_scaling"].as_f64().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
