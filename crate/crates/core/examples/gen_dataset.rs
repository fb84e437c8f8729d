//! Draw the three dataset kinds and print their Hessian spectra.
//!
//! cargo run --example gen_dataset

use interp_gd::problem::{gen_dataset, spectral_summary, DatasetKind, DEFAULT_RANK_TOL};

fn main() -> interp_gd::Result<()> {
    let kinds = [
        DatasetKind::Orthonormal,
        DatasetKind::Gaussian,
        DatasetKind::Spiked { rho: 0.9 },
    ];
    for kind in kinds {
        let ds = gen_dataset(16, 32, kind, true, 7)?;
        let s = spectral_summary(&ds.hessian(), DEFAULT_RANK_TOL)?;
        println!(
            "{:<12} rank={:2} lambda_max={:.4} lambda_min_nz={:.4} cond={:8.2} m*={:.2} residual={:.1e}",
            kind.name(),
            s.rank,
            s.lambda_max,
            s.lambda_min_nz,
            s.condition_number,
            s.m_star,
            ds.interpolation_residual()
        );
    }
    Ok(())
}
