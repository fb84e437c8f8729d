//! Cross-module invariants, mostly as property tests over random small problems.

use interp_gd::distributed::{
    default_eta, dgd_operator, laplacian, make_graph, run_dgd, stacked_error, DgdConfig, GraphKind,
};
use interp_gd::problem::{gen_dataset, range_projector, Dataset, DatasetKind, DEFAULT_RANK_TOL};
use interp_gd::solvers::{run_gd, run_sgd, RunStatus, Sampler, SolverConfig};
use interp_gd::theory::{g_eigen, optimal_rate, predicted_contraction, DEGENERACY_TOL};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = DatasetKind> {
    prop_oneof![
        Just(DatasetKind::Gaussian),
        (0.1f64..0.95).prop_map(|rho| DatasetKind::Spiked { rho }),
    ]
}

/// A unit vector in null(H), if H has one.
fn null_direction(ds: &Dataset) -> Option<DVector<f64>> {
    let rp = range_projector(&ds.hessian(), DEFAULT_RANK_TOL).unwrap();
    (rp.null_basis.ncols() > 0).then(|| rp.null_basis.column(0).into_owned())
}

fn null_coords(ds: &Dataset, w: &[f64]) -> Vec<f64> {
    let rp = range_projector(&ds.hessian(), DEFAULT_RANK_TOL).unwrap();
    rp.null_coords(w)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gd_and_sgd_leave_null_component_alone(
        n in 2usize..6, extra in 1usize..5, kind in kind_strategy(), seed in any::<u64>(), m in 1usize..6,
    ) {
        let ds = gen_dataset(n, n + extra, kind, true, seed).unwrap();
        let v = null_direction(&ds).unwrap();
        let w0: Vec<f64> = (ds.w_star() + &v * 1.5).iter().map(|x| x + 0.3).collect();
        let before = null_coords(&ds, &w0);
        let m = m.min(n) as f64;
        for cfg in [
            SolverConfig::gd(0.7, 50),
            SolverConfig::sgd(0.7, m, Sampler::Bernoulli, 50, seed),
            SolverConfig::sgd(0.7, m, Sampler::Fixed, 50, seed),
        ] {
            let tr = if cfg.sampler == Sampler::Full {
                run_gd(&ds, &cfg.clone().with_w0(w0.clone())).unwrap()
            } else {
                run_sgd(&ds, &cfg.clone().with_w0(w0.clone())).unwrap()
            };
            let after = null_coords(&ds, &tr.final_w);
            for (a, b) in before.iter().zip(&after) {
                prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn loss_is_the_hessian_quadratic_form_of_the_error(
        n in 1usize..8, d in 1usize..8, kind in kind_strategy(), seed in any::<u64>(),
        w in prop::collection::vec(-3.0f64..3.0, 8),
    ) {
        let ds = gen_dataset(n, d, kind, false, seed).unwrap();
        let w = &w[..d];
        let e = DVector::from_column_slice(w) - ds.w_star();
        let quad = (e.transpose() * ds.hessian() * &e)[(0, 0)];
        let loss = ds.loss(w);
        prop_assert!((loss - quad).abs() <= 1e-10 * (1.0 + loss.abs()));
    }

    #[test]
    fn gd_error_never_increases_below_two_over_lambda(
        n in 1usize..8, d in 1usize..10, kind in kind_strategy(), seed in any::<u64>(), frac in 0.05f64..0.99,
    ) {
        let ds = gen_dataset(n, d, kind, true, seed).unwrap();
        let l1 = interp_gd::linalg::lambda_max(&ds.hessian()).unwrap();
        let tr = run_gd(&ds, &SolverConfig::gd(2.0 * frac / l1, 60)).unwrap();
        let err = tr.errors();
        // below ~1e-26 of the start the error is rounding noise
        let floor = 1e-26 * err[0];
        for w in err.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + floor);
        }
    }

    #[test]
    fn bernoulli_batches_average_to_m(seed in any::<u64>(), m in 1usize..16) {
        let ds = gen_dataset(16, 16, DatasetKind::Orthonormal, false, 1).unwrap();
        let cfg = SolverConfig::sgd(0.0, m as f64, Sampler::Bernoulli, 4000, seed);
        let tr = run_sgd(&ds, &cfg).unwrap();
        let sizes: Vec<f64> = tr.records[1..].iter().map(|r| r.batch_size as f64).collect();
        let k = sizes.len() as f64;
        let mean = sizes.iter().sum::<f64>() / k;
        let p = m as f64 / 16.0;
        let se = (16.0 * p * (1.0 - p) / k).sqrt();
        prop_assert!((mean - m as f64).abs() <= 5.0 * se + 1e-12, "mean {mean} vs {m}");
        let empty = sizes.iter().filter(|s| **s == 0.0).count();
        prop_assert_eq!(empty, tr.empty_batches);
    }

    #[test]
    fn optimal_rate_is_grid_minimax(
        l1 in 0.01f64..2.0, ratio in 1.0f64..50.0, n in 2usize..200, mfrac in 0.0f64..1.0,
    ) {
        let ln = l1 / ratio;
        let m = (1.0 + mfrac * (n as f64 - 1.0)).round();
        let p = optimal_rate(m, n, l1, ln, DEGENERACY_TOL).unwrap();
        let eta_max = 2.0 / ln;
        let points = 20_000;
        let best = (1..=points)
            .map(|k| predicted_contraction(m, n, eta_max * k as f64 / points as f64, l1, ln))
            .fold(f64::INFINITY, f64::min);
        // the grid can only do worse, by at most one step's change in g
        let step = eta_max / points as f64;
        let slope = 2.0 * (l1 * (1.0 + p.eta_opt * l1) + l1 / m);
        prop_assert!(p.g_opt <= best + 1e-12);
        prop_assert!(best - p.g_opt <= slope * step + 1e-12, "{} vs grid {best}", p.g_opt);
        let at = predicted_contraction(m, n, p.eta_opt, l1, ln);
        prop_assert!((at - p.g_opt).abs() <= 1e-12);
    }

    #[test]
    fn optimal_contraction_decreases_with_batch(l1 in 0.01f64..2.0, ratio in 1.0f64..50.0, n in 2usize..100) {
        let ln = l1 / ratio;
        let mut prev = f64::INFINITY;
        for m in 1..=n {
            let g = optimal_rate(m as f64, n, l1, ln, DEGENERACY_TOL).unwrap().g_opt;
            prop_assert!(g <= prev + 1e-12);
            prev = g;
        }
    }

    #[test]
    fn laplacian_quadratic_form_sums_edge_differences(
        n in 2usize..10, p in 0.3f64..1.0, seed in any::<u64>(),
        v in prop::collection::vec(-5.0f64..5.0, 10),
    ) {
        let g = make_graph(GraphKind::ErdosRenyi { p }, n, seed).unwrap();
        let l = laplacian(&g);
        let v = DVector::from_column_slice(&v[..n]);
        let quad = (v.transpose() * &l * &v)[(0, 0)];
        let direct: f64 = g.edges().iter().map(|&(i, j)| (v[i] - v[j]).powi(2)).sum();
        prop_assert!((quad - direct).abs() <= 1e-10 * (1.0 + direct));
        let ones = l * DVector::from_element(n, 1.0);
        prop_assert!(ones.amax() < 1e-12);
    }

    #[test]
    fn one_dgd_round_is_the_linear_map(
        n in 2usize..6, d in 1usize..6, seed in any::<u64>(), mu in 0.05f64..5.0, kind_idx in 0usize..3,
    ) {
        let kind = [GraphKind::Ring, GraphKind::Path, GraphKind::Complete][kind_idx];
        let ds = gen_dataset(n, d, DatasetKind::Gaussian, true, seed).unwrap();
        let g = make_graph(kind, n, 0).unwrap();
        let eta = default_eta(&ds, &g, mu);
        let w0 = DMatrix::from_fn(n, d, |i, k| ((i * 7 + k * 3) as f64).sin());
        let cfg = DgdConfig { eta, mu, max_iters: 1, stop_tol: 0.0 };
        let tr = run_dgd(&ds, &g, &cfg, Some(&w0)).unwrap();
        let q = dgd_operator(&ds, &g, eta, mu);
        let e0 = stacked_error(&w0, &ds);
        let expected = &e0 - &q * &e0;
        let got = stacked_error(&tr.final_w, &ds);
        prop_assert!((expected - got).amax() < 1e-12);
    }
}

#[test]
fn dgd_reaches_consensus_on_w_star() {
    let ds = gen_dataset(8, 8, DatasetKind::Gaussian, true, 21).unwrap();
    let g = make_graph(GraphKind::Ring, 8, 0).unwrap();
    for mu in [0.1, 1.0, 10.0] {
        let cfg = DgdConfig {
            eta: default_eta(&ds, &g, mu),
            mu,
            max_iters: 2_000_000,
            stop_tol: 1e-20,
        };
        let tr = run_dgd(&ds, &g, &cfg, None).unwrap();
        assert_eq!(tr.status, RunStatus::Converged, "mu={mu}");
        for i in 0..8 {
            let row: Vec<f64> = tr.final_w.row(i).iter().copied().collect();
            let dist = row
                .iter()
                .zip(ds.w_star().iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(dist < 1e-8, "mu={mu} node {i} off by {dist}");
        }
    }
}

#[test]
fn shared_null_component_survives_dgd() {
    let ds = gen_dataset(4, 8, DatasetKind::Gaussian, true, 3).unwrap();
    let g = make_graph(GraphKind::Ring, 4, 0).unwrap();
    let v = null_direction(&ds).unwrap();
    let w0 = DMatrix::from_fn(4, 8, |i, k| v[k] + 0.2 * ((i + 2 * k) as f64).cos());
    let before: Vec<Vec<f64>> = (0..4)
        .map(|i| null_coords(&ds, &w0.row(i).iter().copied().collect::<Vec<_>>()))
        .collect();
    // the node null components start out different, so only their mean is invariant
    let mean_before: Vec<f64> = (0..before[0].len())
        .map(|c| before.iter().map(|b| b[c]).sum::<f64>() / 4.0)
        .collect();
    let cfg = DgdConfig { eta: default_eta(&ds, &g, 1.0), mu: 1.0, max_iters: 100, stop_tol: 0.0 };
    let tr = run_dgd(&ds, &g, &cfg, Some(&w0)).unwrap();
    let after: Vec<Vec<f64>> = (0..4)
        .map(|i| null_coords(&ds, &tr.final_w.row(i).iter().copied().collect::<Vec<_>>()))
        .collect();
    for c in 0..mean_before.len() {
        let mean_after = after.iter().map(|a| a[c]).sum::<f64>() / 4.0;
        assert!((mean_after - mean_before[c]).abs() < 1e-12);
    }
}

#[test]
fn g_eigen_at_full_batch_is_gd_factor() {
    for lambda in [0.1, 0.5, 1.0] {
        let g = g_eigen(10.0, 10, 0.8, lambda);
        assert!((g - (1.0 - 0.8 * lambda).powi(2)).abs() < 1e-15);
    }
}
