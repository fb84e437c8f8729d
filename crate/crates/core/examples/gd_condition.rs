//! Full-batch GD at its optimal step on a spectrum with condition number 4.
//!
//! cargo run --example gd_condition

use interp_gd::problem::{gen_dataset, Dataset, DatasetKind};
use interp_gd::solvers::{default_fit_window, estimate_rate, run_gd, SolverConfig};
use interp_gd::theory::{optimal_rate, DEGENERACY_TOL};
use nalgebra::{DMatrix, DVector};

fn main() -> interp_gd::Result<()> {
    // scale the rows of an orthogonal matrix so that H = diag(s^2)/d in a rotated basis;
    // with s^2 in {1, 4} both ends of the spectrum contract at the same rate
    let d = 16;
    let base = gen_dataset(d, d, DatasetKind::Orthonormal, false, 3)?;
    let scales: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 1.0 } else { 4.0 }).collect();
    let x = DMatrix::from_fn(d, d, |i, j| scales[i].sqrt() * base.x()[(i, j)]);
    let ds = Dataset::from_parts(x, DVector::from_element(d, 1.0))?;

    let s = interp_gd::problem::spectral_summary(&ds.hessian(), 1e-10)?;
    let p = optimal_rate(d as f64, d, s.lambda_max, s.lambda_min_nz, DEGENERACY_TOL)?;
    let trace = run_gd(&ds, &SolverConfig::gd(p.eta_opt, 200))?;
    let curve = trace.errors();
    let fit = estimate_rate(&curve, default_fit_window(&curve, 5))?;
    println!("condition number {:.3}", s.condition_number);
    println!("R_hat = {:.6}, ((C-1)/(C+1))^2 = {:.6}", fit.rate, p.g_opt);
    Ok(())
}
