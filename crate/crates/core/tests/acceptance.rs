//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use interp_gd::distributed::{
    default_eta, dgd_operator_spectrum, make_graph, run_dgd, DgdConfig, GraphKind,
};
use interp_gd::experiment::{run_experiment, Algorithm, Command, DatasetSpec, ExperimentConfig};
use interp_gd::linalg::sym_eigen_desc;
use interp_gd::presets::preset;
use interp_gd::problem::{
    gen_dataset, range_projector, spectral_summary, Dataset, DatasetKind, DEFAULT_RANK_TOL,
};
use interp_gd::seed::{derive_seed, rng};
use interp_gd::solvers::{default_fit_window, estimate_rate, run_gd, run_sgd, Sampler, SolverConfig};
use interp_gd::theory::{
    cost_model, expected_mm, mc_quadratic_form, optimal_rate, parabola_intersection,
    predicted_contraction, RateBranch, DEGENERACY_TOL,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

const MASTER_SEED: u64 = 20_240_601;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check { pass, detail: detail.into() }
}

fn sgd_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Command::Run { algorithm: Algorithm::Sgd }, out);
    cfg.dataset = Some(DatasetSpec::Preset { name: "orthonormal32".into() });
    cfg.solver.eta = Some(8.0);
    cfg.solver.m = Some(8.0);
    cfg.solver.sampler = Some(Sampler::Bernoulli);
    cfg.solver.fit_start = Some(5);
    cfg.solver.fit_end = Some(41);
    cfg.runs = Some(500);
    cfg.seed = MASTER_SEED;
    cfg
}

fn dgd_config(out: &Path, mu: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Command::Run { algorithm: Algorithm::Dgd }, out);
    cfg.dataset = Some(DatasetSpec::Preset { name: "ring16".into() });
    cfg.solver.mu = Some(mu);
    cfg.seed = MASTER_SEED;
    cfg
}

fn orthonormal_sgd_rate(dir: &Path) -> Check {
    let start = Instant::now();
    let outcome = match run_experiment(&sgd_config(&dir.join("c1"))) {
        Ok(o) => o,
        Err(e) => return check(false, format!("error: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let rate = outcome.summary["r_hat"]["rate"].as_f64().unwrap_or(f64::NAN);
    let window = &outcome.summary["r_hat"]["window"];
    check(
        (0.70..=0.80).contains(&rate) && secs < 10.0 && outcome.exit_code == 0,
        format!("R_hat={rate:.4} over {window} (target 0.75), {secs:.2}s"),
    )
}

fn closed_form_vs_monte_carlo() -> Check {
    let start = Instant::now();
    let ds = gen_dataset(8, 8, DatasetKind::Gaussian, true, 2).unwrap();
    let mut worst_z = 0.0_f64;
    let mut ok = true;
    for (i, eta) in [0.25, 0.5].into_iter().enumerate() {
        for (j, m) in [1.0, 2.0, 4.0, 8.0].into_iter().enumerate() {
            let exact = expected_mm(&ds, eta, m).unwrap();
            let (values, vectors) = sym_eigen_desc(&exact).unwrap();
            let v: DVector<f64> = vectors.column(0).into_owned();
            // E|Mv|^2 for the top eigenvector v equals lambda_max(E[M^T M])
            let seed = derive_seed(MASTER_SEED, 200 + (4 * i + j) as u64);
            let est = mc_quadratic_form(&ds, eta, m, &v, 100_000, seed).unwrap();
            let diff = (est.mean - values[0]).abs();
            let z = if est.std_err > 0.0 { diff / est.std_err } else { 0.0 };
            worst_z = worst_z.max(z);
            ok &= diff <= 3.0 * est.std_err + 1e-12;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(ok && secs < 30.0, format!("8 cells, worst |z|={worst_z:.2}, {secs:.2}s"))
}

fn optimality_of_closed_form() -> Check {
    let mut r = rng(derive_seed(MASTER_SEED, 3));
    let points = 10_000;
    let mut ok = true;
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let n: usize = r.random_range(2..=256);
        let m = r.random_range(1..=n) as f64;
        let l1: f64 = r.random_range(0.05..2.0);
        let ln = l1 * r.random_range(0.01..0.99);
        let p = optimal_rate(m, n, l1, ln, DEGENERACY_TOL).unwrap();
        let step = 2.0 / ln / points as f64;
        let grid: Vec<f64> = (1..=points)
            .map(|k| predicted_contraction(m, n, step * k as f64, l1, ln))
            .collect();
        let (k_best, g_best) = grid
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, &g)| if g < acc.1 { (k, g) } else { acc });
        let lo = k_best.saturating_sub(1);
        let hi = (k_best + 1).min(points - 1);
        let step_diff = (grid[lo] - g_best).abs().max((grid[hi] - g_best).abs());
        let gap = g_best - p.g_opt;
        worst = worst.max(gap.abs());
        ok &= gap >= -1e-12 && gap <= step_diff + 1e-12;
    }
    // degenerate spectrum with m < n: the vertex sits strictly below the intersection value
    let mut strict = true;
    for (m, n, lam) in [(1.0, 8, 0.5), (3.0, 16, 1.0), (10.0, 11, 0.02)] {
        let p = optimal_rate(m, n, lam, lam, DEGENERACY_TOL).unwrap();
        let (_, g12) = parabola_intersection(m, n, lam, lam);
        strict &= p.branch == RateBranch::SingleParabola && p.g_opt < g12;
    }
    check(ok && strict, format!("20 tuples, worst |g*-grid|={worst:.2e}; degenerate strict={strict}"))
}

fn gd_condition_four() -> Check {
    let d = 16;
    let base = gen_dataset(d, d, DatasetKind::Orthonormal, false, derive_seed(MASTER_SEED, 4)).unwrap();
    let s2: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 1.0 } else { 4.0 }).collect();
    let x = DMatrix::from_fn(d, d, |i, j| s2[i].sqrt() * base.x()[(i, j)]);
    let mut r = rng(derive_seed(MASTER_SEED, 5));
    let w_star = DVector::from_fn(d, |_, _| r.random_range(-1.0..1.0));
    let ds = Dataset::from_parts(x, w_star).unwrap();
    let s = spectral_summary(&ds.hessian(), DEFAULT_RANK_TOL).unwrap();
    let eta = optimal_rate(d as f64, d, s.lambda_max, s.lambda_min_nz, DEGENERACY_TOL).unwrap().eta_opt;
    let tr = run_gd(&ds, &SolverConfig::gd(eta, 200)).unwrap();
    let curve = tr.errors();
    let window = default_fit_window(&curve, 5);
    let fit = estimate_rate(&curve, window.clone()).unwrap();
    let rel = (fit.rate - 0.36).abs() / 0.36;
    check(
        rel <= 0.01,
        format!("C={:.6}, R_hat={:.6} over {window:?}, rel err {rel:.1e}", s.condition_number, fit.rate),
    )
}

fn ring16_convergence(dir: &Path) -> Check {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for mu in [0.1, 1.0, 10.0] {
        let s = match run_experiment(&dgd_config(&dir.join(format!("c5_mu{mu}")), mu)) {
            Ok(o) => o.summary,
            Err(e) => return check(false, format!("mu={mu}: {e}")),
        };
        let f = |k: &str| s[k].as_f64().unwrap_or(f64::NAN);
        let err_ratio = f("final_mean_err_sq_range") / f("initial_mean_err_sq_range");
        let spread_ratio = f("final_global_spread") / f("initial_global_spread");
        let rate = s["r_hat"]["rate"].as_f64().unwrap_or(f64::NAN);
        let lower = f("rate_lower");
        let this = s["status"] == "converged"
            && err_ratio < 1e-8
            && spread_ratio < 1e-8
            && rate >= lower - 0.02
            && rate < 1.0;
        ok &= this;
        parts.push(format!("mu={mu}: R_hat={rate:.6} lower={lower:.6} spread x{spread_ratio:.1e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    check(ok && secs < 60.0, format!("{}; {secs:.2}s", parts.join(", ")))
}

fn spectral_verification() -> Check {
    let kinds = [
        DatasetKind::Orthonormal,
        DatasetKind::Gaussian,
        DatasetKind::Spiked { rho: 0.9 },
    ];
    let graphs = [GraphKind::Ring, GraphKind::Path, GraphKind::Complete];
    let mut ok = true;
    let mut worst_gap = 0.0_f64;
    let mut count = 0;
    for (ki, kind) in kinds.into_iter().enumerate() {
        let ds = gen_dataset(8, 8, kind, true, derive_seed(MASTER_SEED, 60 + ki as u64)).unwrap();
        for gk in graphs {
            let g = make_graph(gk, 8, 0).unwrap();
            for mu in [0.1, 1.0, 10.0] {
                let eta = default_eta(&ds, &g, mu);
                let spec = dgd_operator_spectrum(&ds, &g, eta, mu).unwrap();
                let cfg = DgdConfig { eta, mu, max_iters: 20_000, stop_tol: 1e-24 };
                let tr = run_dgd(&ds, &g, &cfg, None).unwrap();
                let curve = tr.norm_curve();
                let fit = estimate_rate(&curve, curve.len() / 2..curve.len()).unwrap();
                let gap = (fit.rate - spec.rate_spectral).abs() / spec.rate_spectral;
                worst_gap = worst_gap.max(gap);
                ok &= spec.sigma_min > 0.0 && spec.bound_holds && gap <= 0.01;
                count += 1;
            }
        }
    }
    check(ok, format!("{count} configs, worst |R_hat - rate_spectral|/rate_spectral = {worst_gap:.2e}"))
}

fn null_space_invariance() -> Check {
    let ds = gen_dataset(4, 8, DatasetKind::Gaussian, true, derive_seed(MASTER_SEED, 7)).unwrap();
    let rp = range_projector(&ds.hessian(), DEFAULT_RANK_TOL).unwrap();
    let v: DVector<f64> = rp.null_basis.column(0).into_owned();
    let w0: Vec<f64> = (ds.w_star() + &v).iter().enumerate().map(|(k, x)| x + 0.1 * k as f64).collect();
    let target = rp.null_coords(&w0);
    let drift = |w: &[f64]| {
        rp.null_coords(w)
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let mut worst = 0.0_f64;

    for sampler in [Sampler::Full, Sampler::Bernoulli] {
        let mut w = w0.clone();
        for t in 0..100u64 {
            let tr = match sampler {
                Sampler::Full => run_gd(&ds, &SolverConfig::gd(0.9, 1).with_w0(w)),
                _ => run_sgd(&ds, &SolverConfig::sgd(0.9, 2.0, sampler, 1, derive_seed(MASTER_SEED, t)).with_w0(w)),
            }
            .unwrap();
            w = tr.final_w;
            worst = worst.max(drift(&w));
        }
    }

    let g = make_graph(GraphKind::Ring, 4, 0).unwrap();
    let cfg = DgdConfig { eta: default_eta(&ds, &g, 1.0), mu: 1.0, max_iters: 1, stop_tol: 0.0 };
    // every node shares the same null component, with different range parts
    let mut stack = DMatrix::from_fn(4, 8, |i, k| w0[k] + 0.3 * ((i * 8 + k) as f64).sin());
    for i in 0..4 {
        let row: Vec<f64> = stack.row(i).iter().copied().collect();
        let fix = rp.null_basis.clone() * DVector::from_vec(target.iter().zip(rp.null_coords(&row)).map(|(a, b)| a - b).collect());
        for k in 0..8 {
            stack[(i, k)] += fix[k];
        }
    }
    for _ in 0..100 {
        stack = run_dgd(&ds, &g, &cfg, Some(&stack)).unwrap().final_w;
        for i in 0..4 {
            let row: Vec<f64> = stack.row(i).iter().copied().collect();
            worst = worst.max(drift(&row));
        }
    }
    check(worst < 1e-12, format!("GD, SGD, DGD over 100 iterations, max drift {worst:.1e}"))
}

fn saturation_and_cost() -> Check {
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["orthonormal8", "orthonormal32"] {
        let ds = preset(name).unwrap().dataset().unwrap();
        let n = ds.n();
        let s = spectral_summary(&ds.hessian(), DEFAULT_RANK_TOL).unwrap();
        let m_star_ok = (s.m_star - n as f64).abs() <= 1e-12 * n as f64;
        let scaling: Vec<f64> = (1..n)
            .map(|m| {
                let g = optimal_rate(m as f64, n, s.lambda_max, s.lambda_min_nz, DEGENERACY_TOL).unwrap().g_opt;
                cost_model(m as f64, n, ds.d(), 1e-6, g, 1.0).unwrap().cost_scaling.unwrap()
            })
            .collect();
        let decreasing = scaling.windows(2).all(|w| w[1] < w[0]);
        ok &= m_star_ok && decreasing;
        notes.push(format!("{name}: m*={:.12}", s.m_star));
    }
    let ds = preset("spiked64").unwrap().dataset().unwrap();
    let n = ds.n();
    let s = spectral_summary(&ds.hessian(), DEFAULT_RANK_TOL).unwrap();
    let g = |m: f64| optimal_rate(m, n, s.lambda_max, s.lambda_min_nz, DEGENERACY_TOL).unwrap().g_opt;
    let g_n = g(n as f64);
    let worst = (s.m_star.ceil() as usize..=n)
        .map(|m| (g(m as f64) - g_n).abs() / g_n)
        .fold(0.0, f64::max);
    ok &= worst <= 0.05;
    notes.push(format!("spiked64: m*={:.3}, worst |g*(m)-g*(n)|/g*(n)={worst:.2e}", s.m_star));
    check(ok, notes.join(", "))
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "csv") {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
        }
    }
    out
}

fn determinism(dir: &Path) -> Check {
    let mut ok = true;
    let mut files = 0;
    let mut pairs = vec![(dir.join("c1"), dir.join("c9_sgd"), sgd_config(&dir.join("c9_sgd")))];
    for mu in [0.1, 1.0, 10.0] {
        let again = dir.join(format!("c9_mu{mu}"));
        pairs.push((dir.join(format!("c5_mu{mu}")), again.clone(), dgd_config(&again, mu)));
    }
    for (first, second, cfg) in pairs {
        if run_experiment(&cfg).is_err() || !first.exists() {
            return check(false, format!("could not repeat {}", first.display()));
        }
        let (a, b) = (csv_files(&first), csv_files(&second));
        files += a.len();
        ok &= !a.is_empty() && a == b;
    }
    check(ok, format!("{files} CSV files compared byte for byte"))
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = tmp.path();
    let criteria: Vec<Criterion> = vec![
        ("orthonormal SGD rate", Box::new(|| orthonormal_sgd_rate(dir))),
        ("closed form vs Monte Carlo", Box::new(closed_form_vs_monte_carlo)),
        ("optimal learning rate", Box::new(optimality_of_closed_form)),
        ("GD condition-number limit", Box::new(gd_condition_four)),
        ("DGD convergence and rate band", Box::new(|| ring16_convergence(dir))),
        ("DGD operator spectrum", Box::new(spectral_verification)),
        ("null-space invariance", Box::new(null_space_invariance)),
        ("saturation and cost model", Box::new(saturation_and_cost)),
        ("determinism", Box::new(|| determinism(dir))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let c = f();
        if !c.pass {
            failed += 1;
        }
        println!("criterion {} {:<32} {}  {}", i + 1, name, if c.pass { "PASS" } else { "FAIL" }, c.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
