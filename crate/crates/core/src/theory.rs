//! Closed-form rate predictions for GD and Bernoulli-minibatch SGD.
//!
//! With sample `i` joining the batch independently with probability `m/n`,
//! one SGD step maps the error by `M = I - (eta/m) sum_i sigma_i x_i x_i^T`.
//! The expected squared error then evolves through `E[M^T M]`, whose
//! eigenvalues on normalized data are
//! `g(m, eta, lambda) = (1 - eta lambda)^2 + (eta^2 lambda / m)(1 - m/n)`.
//! The functions here evaluate that operator, its Monte-Carlo estimate, and
//! the learning rate minimizing its largest eigenvalue.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{hessian, Dataset};
use crate::seed;

/// Relative gap below which `lambda1` and `lambdan` count as equal.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Pairwise `|x̂_i . x̂_j|` below which rows count as orthogonal.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

/// Number of independent streams the Monte-Carlo estimator splits into.
pub const MC_SHARDS: usize = 8;

fn check_batch(m: f64, n: usize) -> Result<()> {
    if !(m > 0.0) || m > n as f64 {
        return Err(Error::InvalidBatch(format!("m={m} must lie in (0, {n}]")));
    }
    Ok(())
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidConfig(format!("learning rate {eta} must be positive")));
    }
    Ok(())
}

/// Exact `E[M^T M]` for Bernoulli sampling.
///
/// Normalized rows use `(I - eta H)^2 + (eta^2/m)(1 - m/n) H`; mutually
/// orthogonal rows of arbitrary norm use `I - 2 eta H + (n/m) eta^2 H^2`.
pub fn expected_mm(ds: &Dataset, eta: f64, m: f64) -> Result<DMatrix<f64>> {
    check_eta(eta)?;
    let n = ds.n();
    check_batch(m, n)?;
    let d = ds.d();
    let h = hessian(ds);
    let id = DMatrix::<f64>::identity(d, d);
    let nf = n as f64;
    let out = if ds.normalized() {
        let a = &id - &h * eta;
        &a * &a + &h * (eta * eta / m * (1.0 - m / nf))
    } else if ds.rows_orthogonal(ORTHOGONALITY_TOL) {
        &id - &h * (2.0 * eta) + (&h * &h) * (nf / m * eta * eta)
    } else {
        return Err(Error::NoClosedForm);
    };
    Ok((&out + out.transpose()) * 0.5)
}

/// Monte-Carlo estimate of `E[M^T M]` with entrywise standard errors.
#[derive(Debug, Clone)]
pub struct MonteCarloEstimate {
    pub mean: DMatrix<f64>,
    pub std_err: DMatrix<f64>,
    pub samples: usize,
}

/// Monte-Carlo estimate of a scalar expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarEstimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Draws one Bernoulli mask and returns `M = I - (eta/m) sum sigma_i x_i x_i^T`.
fn draw_m<R: Rng>(ds: &Dataset, eta: f64, m: f64, rng: &mut R) -> DMatrix<f64> {
    let (n, d) = (ds.n(), ds.d());
    let p = m / n as f64;
    let mut s = DMatrix::<f64>::zeros(d, d);
    for i in 0..n {
        if rng.random::<f64>() < p {
            let row = ds.row(i);
            for b in 0..d {
                let xb = row[b];
                if xb == 0.0 {
                    continue;
                }
                for a in 0..d {
                    s[(a, b)] += row[a] * xb;
                }
            }
        }
    }
    DMatrix::<f64>::identity(d, d) - s * (eta / m)
}

/// Running mean and sum of squared deviations (Welford / Chan et al.).
struct Moments {
    count: f64,
    mean: DMatrix<f64>,
    m2: DMatrix<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Moments {
            count: 0.0,
            mean: DMatrix::zeros(d, d),
            m2: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, x: &DMatrix<f64>) {
        self.count += 1.0;
        let delta = x - &self.mean;
        self.mean += &delta / self.count;
        let delta2 = x - &self.mean;
        self.m2 += delta.component_mul(&delta2);
    }

    fn merge(a: Moments, b: Moments) -> Moments {
        let count = a.count + b.count;
        if count == 0.0 {
            return a;
        }
        let delta = &b.mean - &a.mean;
        let mean = &a.mean + &delta * (b.count / count);
        let m2 = a.m2 + b.m2 + delta.component_mul(&delta) * (a.count * b.count / count);
        Moments { count, mean, m2 }
    }
}

fn shard_sizes(samples: usize) -> Vec<usize> {
    let shards = MC_SHARDS.min(samples);
    (0..shards)
        .map(|k| samples / shards + usize::from(k < samples % shards))
        .collect()
}

/// Estimates `E[M^T M]` from `samples` Bernoulli draws.
///
/// The draws are split over [`MC_SHARDS`] streams seeded from `(seed, shard)`,
/// so the result does not depend on the thread count.
pub fn mc_expected_mm(
    ds: &Dataset,
    eta: f64,
    m: f64,
    samples: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    let n = ds.n();
    check_batch(m, n)?;
    if samples < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 samples, got {samples}")));
    }
    let d = ds.d();
    let partials: Vec<Moments> = shard_sizes(samples)
        .into_par_iter()
        .enumerate()
        .map(|(shard, count)| {
            let mut rng = seed::rng(seed::derive_seed(seed, shard as u64));
            let mut acc = Moments::new(d);
            for _ in 0..count {
                let mm = draw_m(ds, eta, m, &mut rng);
                acc.push(&(mm.transpose() * &mm));
            }
            acc
        })
        .collect();
    let total = partials
        .into_iter()
        .reduce(Moments::merge)
        .expect("at least one shard");
    let count = samples as f64;
    let mean = total.mean;
    let std_err = total.m2.map(|v| (v.max(0.0) / (count - 1.0) / count).sqrt());
    Ok(MonteCarloEstimate {
        mean,
        std_err,
        samples,
    })
}

/// Monte-Carlo estimate of `E[|M v|^2]` with its standard error.
///
/// For `v` the top eigenvector of `E[M^T M]` this is the first-order
/// standard error of the largest eigenvalue of the estimated operator.
pub fn mc_quadratic_form(
    ds: &Dataset,
    eta: f64,
    m: f64,
    v: &DVector<f64>,
    samples: usize,
    seed: u64,
) -> Result<ScalarEstimate> {
    let n = ds.n();
    check_batch(m, n)?;
    if samples < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 samples, got {samples}")));
    }
    if v.len() != ds.d() {
        return Err(Error::DimensionMismatch(format!(
            "direction has {} entries, expected {}",
            v.len(),
            ds.d()
        )));
    }
    let partials: Vec<(f64, f64)> = shard_sizes(samples)
        .into_par_iter()
        .enumerate()
        .map(|(shard, count)| {
            let mut rng = seed::rng(seed::derive_seed(seed, shard as u64));
            let mut s = 0.0;
            let mut q = 0.0;
            for _ in 0..count {
                let val = (draw_m(ds, eta, m, &mut rng) * v).norm_squared();
                s += val;
                q += val * val;
            }
            (s, q)
        })
        .collect();
    let (s, q) = partials
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (c, e)| (a + c, b + e));
    let count = samples as f64;
    let mean = s / count;
    let var = ((q - count * mean * mean) / (count - 1.0)).max(0.0);
    Ok(ScalarEstimate {
        mean,
        std_err: (var / count).sqrt(),
    })
}

/// Eigenvalue of `E[M^T M]` along an eigendirection of `H` with eigenvalue `lambda`.
pub fn g_eigen(m: f64, n: usize, eta: f64, lambda: f64) -> f64 {
    let a = 1.0 - eta * lambda;
    a * a + eta * eta * lambda / m * (1.0 - m / n as f64)
}

/// Largest eigenvalue of `E[M^T M]` over the nonzero spectrum `[lambdan, lambda1]`.
///
/// `g_eigen` is convex in `lambda`, so the maximum sits at an endpoint.
pub fn predicted_contraction(m: f64, n: usize, eta: f64, lambda1: f64, lambdan: f64) -> f64 {
    g_eigen(m, n, eta, lambda1).max(g_eigen(m, n, eta, lambdan))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateBranch {
    /// Intersection of the `lambda1` and `lambdan` parabolas.
    TwoParabola,
    /// Vertex of the `lambdan` parabola, which lies below the intersection.
    SingleParabola,
    /// Full batch: plain GD.
    GdLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePrediction {
    pub m: f64,
    pub eta_opt: f64,
    pub g_opt: f64,
    pub branch: RateBranch,
}

/// The parabola-intersection learning rate and contraction, taken as is.
pub fn parabola_intersection(m: f64, n: usize, lambda1: f64, lambdan: f64) -> (f64, f64) {
    let denom = lambda1 + lambdan + 1.0 / m - 1.0 / n as f64;
    (2.0 / denom, 1.0 - 4.0 * lambda1 * lambdan / (denom * denom))
}

/// Learning rate minimizing `max(g(lambda1), g(lambdan))` and the minimum.
///
/// Writing `a = 1/m - 1/n`, `g(lambda1) - g(lambdan)` changes sign at
/// `eta = 2/(lambda1 + lambdan + a)`. If the `lambdan` parabola bottoms out
/// before that point (`lambda1 - lambdan <= a`, which includes the degenerate
/// `lambda1 = lambdan` case) its vertex `eta = 1/(lambdan + a)` is the
/// minimax; otherwise the intersection is.
pub fn optimal_rate(m: f64, n: usize, lambda1: f64, lambdan: f64, tol: f64) -> Result<RatePrediction> {
    if !(lambdan > 0.0) {
        return Err(Error::InvalidSpectrum(format!("lambdan={lambdan} must be positive")));
    }
    if lambda1 < lambdan {
        return Err(Error::InvalidSpectrum(format!(
            "lambda1={lambda1} is below lambdan={lambdan}"
        )));
    }
    if !(m > 0.0) {
        return Err(Error::InvalidBatch(format!("m={m} must be positive")));
    }
    if m > n as f64 {
        return Err(Error::InvalidBatch(format!("m={m} exceeds n={n}")));
    }
    let nf = n as f64;
    let degenerate = lambda1 - lambdan <= tol * lambda1;
    if (m - nf).abs() <= 1e-12 * nf {
        let (eta_opt, g_opt) = if degenerate {
            (1.0 / lambda1, 0.0)
        } else {
            let r = (lambda1 - lambdan) / (lambda1 + lambdan);
            (2.0 / (lambda1 + lambdan), r * r)
        };
        return Ok(RatePrediction {
            m,
            eta_opt,
            g_opt,
            branch: RateBranch::GdLimit,
        });
    }
    let a = 1.0 / m - 1.0 / nf;
    if degenerate || lambda1 - lambdan <= a {
        let lam = if degenerate { lambda1 } else { lambdan };
        return Ok(RatePrediction {
            m,
            eta_opt: 1.0 / (lam + a),
            g_opt: a / (lam + a),
            branch: RateBranch::SingleParabola,
        });
    }
    let (eta_opt, g_opt) = parabola_intersection(m, n, lambda1, lambdan);
    Ok(RatePrediction {
        m,
        eta_opt,
        g_opt,
        branch: RateBranch::TwoParabola,
    })
}

/// `1 - c m/n` with `c = GM^2/AM^2` of the extreme squared norms.
pub fn orthogonal_rate(m: f64, n: usize, x_min_sq: f64, x_max_sq: f64) -> Result<f64> {
    if !(x_min_sq > 0.0) || x_max_sq < x_min_sq {
        return Err(Error::InvalidSpectrum(format!(
            "need 0 < x_min_sq <= x_max_sq, got {x_min_sq}, {x_max_sq}"
        )));
    }
    check_batch(m, n)?;
    Ok(1.0 - norm_factor(x_min_sq, x_max_sq) * m / n as f64)
}

/// `c = (x_min_sq x_max_sq) / ((x_min_sq + x_max_sq)/2)^2`.
pub fn norm_factor(x_min_sq: f64, x_max_sq: f64) -> f64 {
    let am = 0.5 * (x_min_sq + x_max_sq);
    x_min_sq * x_max_sq / (am * am)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub epsilon: f64,
    /// Iterations to reach relative error `epsilon`, floored at one.
    pub t_eps: f64,
    pub total_cost: f64,
    /// `m / log(n/(n - c m))`; absent when `c m >= n`.
    pub cost_scaling: Option<f64>,
}

pub fn cost_model(m: f64, n: usize, d: usize, epsilon: f64, g: f64, c: f64) -> Result<CostModel> {
    if !(g < 1.0) {
        return Err(Error::NoConvergence(g));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidConfig(format!("epsilon={epsilon} must lie in (0, 1)")));
    }
    if !(m > 0.0) {
        return Err(Error::InvalidBatch(format!("m={m} must be positive")));
    }
    let t_raw = if g <= 0.0 {
        0.0
    } else {
        (1.0 / epsilon).ln() / (1.0 / g).ln()
    };
    let t_eps = t_raw.max(1.0);
    let nf = n as f64;
    let cost_scaling = (c * m < nf).then(|| m / (nf / (nf - c * m)).ln());
    Ok(CostModel {
        epsilon,
        t_eps,
        total_cost: m * d as f64 * t_eps,
        cost_scaling,
    })
}
