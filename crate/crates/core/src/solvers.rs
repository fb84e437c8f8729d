//! Full-batch GD and minibatch SGD on an interpolating dataset.
//!
//! The updates use only the samples `(x_i, y_i)`; the planted `w_star` enters
//! the diagnostics (projected error) and nothing else.

use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{range_projector, Dataset, RangeProjector, DEFAULT_RANK_TOL};
use crate::seed;

/// A run stops as diverged once its projected error exceeds this multiple of the initial error.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

/// First iteration of the default rate-fit window.
pub const DEFAULT_FIT_START: usize = 5;

/// Values below this fraction of the first value are left out of rate fits.
pub const FIT_FLOOR: f64 = 1e-12;

/// An ensemble mean whose standard error exceeds this fraction of it is too
/// noisy to fit on.
pub const FIT_MAX_REL_SE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Every sample, every iteration.
    Full,
    /// Each sample joins independently with probability `m/n`.
    Bernoulli,
    /// A uniformly random subset of exactly `round(m)` samples.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eta: f64,
    /// Mean batch size; ignored by [`Sampler::Full`].
    pub m: f64,
    pub sampler: Sampler,
    pub max_iters: usize,
    /// Relative projected-error threshold; `0` disables early stopping.
    pub stop_tol: f64,
    pub seed: u64,
    /// Starting point; `None` means the zero vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<Vec<f64>>,
}

impl SolverConfig {
    pub fn gd(eta: f64, max_iters: usize) -> Self {
        SolverConfig {
            eta,
            m: 0.0,
            sampler: Sampler::Full,
            max_iters,
            stop_tol: 0.0,
            seed: 0,
            w0: None,
        }
    }

    pub fn sgd(eta: f64, m: f64, sampler: Sampler, max_iters: usize, seed: u64) -> Self {
        SolverConfig {
            eta,
            m,
            sampler,
            max_iters,
            stop_tol: 0.0,
            seed,
            w0: None,
        }
    }

    pub fn with_stop_tol(mut self, stop_tol: f64) -> Self {
        self.stop_tol = stop_tol;
        self
    }

    pub fn with_w0(mut self, w0: Vec<f64>) -> Self {
        self.w0 = Some(w0);
        self
    }

    /// Batch size used by the fixed sampler: `round(m)`, at least one.
    pub fn fixed_batch(&self) -> usize {
        (self.m.round() as usize).max(1)
    }

    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        let n = ds.n();
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidConfig(format!("eta={} must be >= 0", self.eta)));
        }
        if self.sampler != Sampler::Full && (!(self.m > 0.0) || self.m > n as f64) {
            return Err(Error::InvalidConfig(format!("m={} must lie in (0, {n}]", self.m)));
        }
        if self.sampler == Sampler::Fixed && self.fixed_batch() > n {
            return Err(Error::InvalidConfig(format!(
                "fixed batch {} exceeds n={n}",
                self.fixed_batch()
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidConfig(format!("stop_tol={} must be >= 0", self.stop_tol)));
        }
        if let Some(w0) = &self.w0 {
            if w0.len() != ds.d() {
                return Err(Error::DimensionMismatch(format!(
                    "w0 has {} entries, expected d={}",
                    w0.len(),
                    ds.d()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Converged,
    MaxIters,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub t: usize,
    /// `|P_range (w_t - w_star)|^2`.
    pub err_sq_range: f64,
    pub loss: f64,
    /// Samples used in the step that produced `w_t`. At `t = 0` this is the
    /// nominal batch (n, round(m)) or 0 for Bernoulli sampling.
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub records: Vec<IterRecord>,
    pub config: SolverConfig,
    pub status: RunStatus,
    /// Bernoulli iterations that drew no sample and left `w` unchanged.
    pub empty_batches: usize,
    #[serde(skip)]
    pub final_w: Vec<f64>,
}

impl IterationTrace {
    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.err_sq_range).collect()
    }

    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }
}

/// Full-batch gradient descent, `w <- w - (eta/n) sum_i (x_i . w - y_i) x_i`.
pub fn run_gd(ds: &Dataset, cfg: &SolverConfig) -> Result<IterationTrace> {
    if cfg.sampler != Sampler::Full {
        return Err(Error::InvalidConfig("run_gd needs sampler=full".into()));
    }
    cfg.validate(ds)?;
    let rp = range_projector(&ds.hessian(), DEFAULT_RANK_TOL)?;
    Ok(iterate(ds, &rp, cfg))
}

/// Minibatch SGD, `w <- w - (eta/m) sum_i sigma_i (x_i . w - y_i) x_i`.
///
/// Note the `1/m` normalization: at `m = n` with Bernoulli sampling every
/// sample is drawn with probability one and the iterates coincide with
/// [`run_gd`] bit for bit.
pub fn run_sgd(ds: &Dataset, cfg: &SolverConfig) -> Result<IterationTrace> {
    if cfg.sampler == Sampler::Full {
        return Err(Error::InvalidConfig("run_sgd needs sampler=bernoulli or fixed".into()));
    }
    cfg.validate(ds)?;
    let rp = range_projector(&ds.hessian(), DEFAULT_RANK_TOL)?;
    Ok(iterate(ds, &rp, cfg))
}

/// Dispatches on the sampler.
pub fn run_solver(ds: &Dataset, cfg: &SolverConfig) -> Result<IterationTrace> {
    match cfg.sampler {
        Sampler::Full => run_gd(ds, cfg),
        _ => run_sgd(ds, cfg),
    }
}

fn iterate(ds: &Dataset, rp: &RangeProjector, cfg: &SolverConfig) -> IterationTrace {
    let (n, d) = (ds.n(), ds.d());
    let w_star = ds.w_star().as_slice();
    let mut w = cfg.w0.clone().unwrap_or_else(|| vec![0.0; d]);
    let mut diff = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut rng = seed::rng(cfg.seed);
    let p = cfg.m / n as f64;
    let k_fixed = cfg.fixed_batch();
    let scale = match cfg.sampler {
        Sampler::Full => cfg.eta / n as f64,
        Sampler::Bernoulli => cfg.eta / cfg.m,
        Sampler::Fixed => cfg.eta / k_fixed as f64,
    };

    let range_err = |w: &[f64], diff: &mut [f64]| {
        for ((o, a), b) in diff.iter_mut().zip(w).zip(w_star) {
            *o = a - b;
        }
        rp.range_norm_sq(diff)
    };

    let err0 = range_err(&w, &mut diff);
    let nominal = match cfg.sampler {
        Sampler::Full => n,
        Sampler::Bernoulli => 0,
        Sampler::Fixed => k_fixed,
    };
    let mut records = Vec::with_capacity(cfg.max_iters.min(1 << 20) + 1);
    records.push(IterRecord {
        t: 0,
        err_sq_range: err0,
        loss: ds.loss(&w),
        batch_size: nominal,
    });
    let mut status = RunStatus::MaxIters;
    let mut empty_batches = 0;
    let mut batch: Vec<usize> = Vec::with_capacity(n);

    for t in 1..=cfg.max_iters {
        batch.clear();
        match cfg.sampler {
            Sampler::Full => batch.extend(0..n),
            Sampler::Bernoulli => {
                for i in 0..n {
                    if rng.random::<f64>() < p {
                        batch.push(i);
                    }
                }
            }
            Sampler::Fixed => {
                let mut picked = index::sample(&mut rng, n, k_fixed).into_vec();
                picked.sort_unstable();
                batch.extend(picked);
            }
        }
        if batch.is_empty() {
            empty_batches += 1;
        } else {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in &batch {
                let row = ds.row(i);
                let r = linalg::dot(row, &w) - ds.y()[i];
                for (g, xk) in grad.iter_mut().zip(row) {
                    *g += r * xk;
                }
            }
            for (wk, g) in w.iter_mut().zip(&grad) {
                *wk -= scale * g;
            }
        }
        let err = range_err(&w, &mut diff);
        records.push(IterRecord {
            t,
            err_sq_range: err,
            loss: ds.loss(&w),
            batch_size: batch.len(),
        });
        if !err.is_finite() || (err0 > 0.0 && err > DIVERGENCE_FACTOR * err0) {
            status = RunStatus::Diverged;
            break;
        }
        if cfg.stop_tol > 0.0 && err <= cfg.stop_tol * err0 {
            status = RunStatus::Converged;
            break;
        }
    }

    IterationTrace {
        records,
        config: cfg.clone(),
        status,
        empty_batches,
        final_w: w,
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    /// Pointwise mean of the projected squared error, truncated to the shortest run.
    pub mean: Vec<f64>,
    /// Standard error of the pointwise mean.
    pub std_err: Vec<f64>,
    pub traces: Vec<IterationTrace>,
}

/// Runs `runs` independent copies of the solver.
///
/// Run `k` is seeded with `derive_seed(seed, k)`, so the output is the same
/// whether the runs execute serially or in parallel.
pub fn run_ensemble(ds: &Dataset, cfg: &SolverConfig, runs: usize, seed: u64) -> Result<Ensemble> {
    if runs == 0 {
        return Err(Error::InvalidConfig("an ensemble needs at least one run".into()));
    }
    cfg.validate(ds)?;
    let rp = range_projector(&ds.hessian(), DEFAULT_RANK_TOL)?;
    let traces: Vec<IterationTrace> = (0..runs)
        .into_par_iter()
        .map(|k| {
            let mut c = cfg.clone();
            c.seed = seed::derive_seed(seed, k as u64);
            iterate(ds, &rp, &c)
        })
        .collect();
    let len = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    let count = runs as f64;
    let mut mean = vec![0.0; len];
    let mut std_err = vec![0.0; len];
    for t in 0..len {
        let vals = traces.iter().map(|tr| tr.records[t].err_sq_range);
        let m = vals.clone().sum::<f64>() / count;
        mean[t] = m;
        if runs > 1 {
            let var = vals.map(|v| (v - m) * (v - m)).sum::<f64>() / (count - 1.0);
            std_err[t] = (var / count).sqrt();
        }
    }
    Ok(Ensemble {
        mean,
        std_err,
        traces,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `exp(slope)` of the least-squares line through `log(curve)`.
    pub rate: f64,
    /// Root-mean-square residual of the fit in log space.
    pub residual: f64,
    pub contracting: bool,
}

/// Fits `curve[t] ~ C rate^t` over `window`.
pub fn estimate_rate(curve: &[f64], window: Range<usize>) -> Result<RateFit> {
    if window.end > curve.len() || window.start >= window.end {
        return Err(Error::InvalidWindow(format!(
            "window {window:?} outside curve of length {}",
            curve.len()
        )));
    }
    if window.len() < 3 {
        return Err(Error::InvalidWindow(format!(
            "window {window:?} has fewer than 3 points"
        )));
    }
    let pts = &curve[window.clone()];
    if let Some(bad) = pts.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidWindow(format!(
            "value {} at index {} is not positive",
            pts[bad],
            window.start + bad
        )));
    }
    let k = pts.len() as f64;
    let xs = window.clone().map(|t| t as f64);
    let ys: Vec<f64> = pts.iter().map(|v| v.ln()).collect();
    let x_mean = xs.clone().sum::<f64>() / k;
    let y_mean = ys.iter().sum::<f64>() / k;
    let (sxy, sxx) = xs
        .clone()
        .zip(&ys)
        .fold((0.0, 0.0), |(sxy, sxx), (x, y)| {
            (sxy + (x - x_mean) * (y - y_mean), sxx + (x - x_mean) * (x - x_mean))
        });
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_res = xs
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum::<f64>();
    Ok(RateFit {
        rate: slope.exp(),
        residual: (ss_res / k).sqrt(),
        contracting: slope < 0.0,
    })
}

/// Window from `start` up to (not including) the first value that falls
/// below `FIT_FLOOR * curve[0]` or is not positive.
pub fn default_fit_window(curve: &[f64], start: usize) -> Range<usize> {
    let floor = curve.first().copied().unwrap_or(0.0) * FIT_FLOOR;
    let end = curve
        .iter()
        .position(|v| !(*v > floor) || !v.is_finite())
        .unwrap_or(curve.len());
    start.min(end)..end
}

impl Ensemble {
    /// Fit window over the mean curve: from `start` to the first point that is
    /// below the floor or has relative standard error above [`FIT_MAX_REL_SE`],
    /// capped at `end`.
    ///
    /// A mean over finitely many runs is eventually carried by a handful of
    /// slow runs; fitting through that tail biases the rate.
    pub fn fit_window(&self, start: usize, end: Option<usize>) -> Range<usize> {
        let floor = default_fit_window(&self.mean, start).end;
        let noisy = self
            .mean
            .iter()
            .zip(&self.std_err)
            .position(|(m, se)| *se > FIT_MAX_REL_SE * m)
            .unwrap_or(self.mean.len());
        let stop = floor.min(noisy).min(end.unwrap_or(usize::MAX));
        start.min(stop)..stop
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{gen_dataset, DatasetKind};
    use nalgebra::{DMatrix, DVector};

    fn scalar_dataset(x: f64, w_star: f64) -> Dataset {
        Dataset::from_parts(DMatrix::from_element(1, 1, x), DVector::from_element(1, w_star)).unwrap()
    }

    #[test]
    fn exact_single_step() {
        let ds = scalar_dataset(2.0, 3.0);
        assert_eq!(ds.y()[0], 6.0);
        let cfg = SolverConfig::gd(0.25, 10).with_stop_tol(1e-12);
        let tr = run_gd(&ds, &cfg).unwrap();
        assert_eq!(tr.status, RunStatus::Converged);
        assert_eq!(tr.iterations(), 1);
        assert_eq!(tr.records[1].err_sq_range, 0.0);
    }

    #[test]
    fn zero_rate_keeps_error() {
        let ds = gen_dataset(4, 6, DatasetKind::Gaussian, false, 3).unwrap();
        let tr = run_gd(&ds, &SolverConfig::gd(0.0, 20)).unwrap();
        let e0 = tr.records[0].err_sq_range;
        assert!(tr.records.iter().all(|r| r.err_sq_range == e0));
    }

    #[test]
    fn orthonormal_gd_ratio() {
        let ds = gen_dataset(8, 8, DatasetKind::Orthonormal, false, 4).unwrap();
        let tr = run_gd(&ds, &SolverConfig::gd(4.0, 15)).unwrap();
        for w in tr.records.windows(2) {
            let ratio = w[1].err_sq_range / w[0].err_sq_range;
            assert!((ratio - 0.25).abs() < 1e-10, "{ratio}");
        }
        // dense operator power as an independent route
        let h = ds.hessian();
        let a = DMatrix::<f64>::identity(8, 8) - h * 4.0;
        let e0 = -ds.w_star();
        let e15 = a.pow(15) * &e0;
        assert!((e15.norm_squared() - tr.records[15].err_sq_range).abs() < 1e-10 * e0.norm_squared());
    }

    #[test]
    fn bernoulli_full_batch_is_bit_identical_to_gd() {
        let ds = gen_dataset(6, 10, DatasetKind::Gaussian, true, 5).unwrap();
        let gd = run_gd(&ds, &SolverConfig::gd(0.8, 50)).unwrap();
        let sgd = run_sgd(&ds, &SolverConfig::sgd(0.8, 6.0, Sampler::Bernoulli, 50, 77)).unwrap();
        assert_eq!(gd.final_w, sgd.final_w);
        for (a, b) in gd.records.iter().zip(&sgd.records).skip(1) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn scalar_bernoulli_steps_are_all_or_nothing() {
        let ds = scalar_dataset(1.0, 2.0);
        let cfg = SolverConfig::sgd(0.5, 0.5, Sampler::Bernoulli, 30, 11);
        let tr = run_sgd(&ds, &cfg).unwrap();
        for r in &tr.records[1..] {
            if r.batch_size == 0 {
                continue;
            }
            assert_eq!(r.err_sq_range, 0.0);
        }
        // ensemble mean follows 0.5^t
        let ens = run_ensemble(&ds, &SolverConfig::sgd(0.5, 0.5, Sampler::Bernoulli, 6, 0), 4000, 1).unwrap();
        for t in 0..=6 {
            let expected = 4.0 * 0.5_f64.powi(t as i32);
            assert!((ens.mean[t] - expected).abs() <= 4.0 * ens.std_err[t] + 1e-12);
        }
    }

    #[test]
    fn fixed_batches_have_exact_size() {
        let ds = gen_dataset(10, 12, DatasetKind::Gaussian, true, 6).unwrap();
        let tr = run_sgd(&ds, &SolverConfig::sgd(0.5, 3.4, Sampler::Fixed, 40, 2)).unwrap();
        assert!(tr.records.iter().all(|r| r.batch_size == 3));
        let gd = run_gd(&ds, &SolverConfig::gd(0.5, 5)).unwrap();
        assert!(gd.records.iter().all(|r| r.batch_size == 10));
    }

    #[test]
    fn loss_matches_quadratic_form() {
        let ds = gen_dataset(5, 9, DatasetKind::Spiked { rho: 0.4 }, true, 7).unwrap();
        let tr = run_sgd(&ds, &SolverConfig::sgd(0.7, 2.0, Sampler::Bernoulli, 1, 3)).unwrap();
        let w = DVector::from_vec(tr.final_w.clone());
        let e = &w - ds.w_star();
        let quad = (e.transpose() * ds.hessian() * &e)[(0, 0)];
        let loss = tr.records[1].loss;
        assert!((quad - loss).abs() <= 1e-10 * loss.max(1e-300));
    }

    #[test]
    fn divergence_is_recorded() {
        let ds = gen_dataset(4, 4, DatasetKind::Orthonormal, false, 1).unwrap();
        // lambda = 1/4, eta lambda = 2.5 > 2
        let tr = run_gd(&ds, &SolverConfig::gd(10.0, 10_000)).unwrap();
        assert_eq!(tr.status, RunStatus::Diverged);
    }

    #[test]
    fn config_errors() {
        let ds = gen_dataset(4, 4, DatasetKind::Gaussian, true, 1).unwrap();
        assert!(run_gd(&ds, &SolverConfig::gd(-1.0, 5)).is_err());
        assert!(run_gd(&ds, &SolverConfig::gd(1.0, 0)).is_err());
        assert!(run_sgd(&ds, &SolverConfig::sgd(1.0, 5.0, Sampler::Bernoulli, 5, 0)).is_err());
        assert!(run_sgd(&ds, &SolverConfig::gd(1.0, 5)).is_err());
        assert!(run_gd(&ds, &SolverConfig::gd(1.0, 5).with_w0(vec![0.0; 3])).is_err());
    }

    #[test]
    fn geometric_fit() {
        let fit = estimate_rate(&[1.0, 0.5, 0.25, 0.125], 0..4).unwrap();
        assert!((fit.rate - 0.5).abs() < 1e-14);
        assert!(fit.residual < 1e-14);
        assert!(fit.contracting);
        let flat = estimate_rate(&[2.0; 6], 0..6).unwrap();
        assert_eq!(flat.rate, 1.0);
        assert!(!flat.contracting);
    }

    #[test]
    fn fit_window_errors() {
        assert!(matches!(estimate_rate(&[1.0, 0.5], 0..2), Err(Error::InvalidWindow(_))));
        assert!(matches!(
            estimate_rate(&[1.0, 0.5, 0.0, 0.1], 0..4),
            Err(Error::InvalidWindow(_))
        ));
        assert!(matches!(estimate_rate(&[1.0, 0.5, 0.2], 0..5), Err(Error::InvalidWindow(_))));
    }

    #[test]
    fn default_window_stops_at_floor() {
        let curve: Vec<f64> = (0..60).map(|t| 0.25_f64.powi(t)).collect();
        let w = default_fit_window(&curve, 5);
        assert_eq!(w.start, 5);
        // 0.25^20 ~ 9.1e-13 is the first value under 1e-12
        assert_eq!(w.end, 20);
    }

    #[test]
    fn ensemble_single_run_and_full_sampler() {
        let ds = gen_dataset(6, 6, DatasetKind::Gaussian, true, 9).unwrap();
        let cfg = SolverConfig::sgd(0.5, 2.0, Sampler::Bernoulli, 20, 0);
        let ens = run_ensemble(&ds, &cfg, 1, 4).unwrap();
        assert_eq!(ens.mean, ens.traces[0].errors());
        let ens = run_ensemble(&ds, &SolverConfig::gd(0.5, 20), 3, 4).unwrap();
        assert_eq!(ens.traces[0].records, ens.traces[2].records);
        for (m, e) in ens.mean.iter().zip(ens.traces[2].errors()) {
            assert!((m - e).abs() <= 1e-15 * e);
        }
    }

    #[test]
    fn ensemble_is_deterministic() {
        let ds = gen_dataset(6, 6, DatasetKind::Gaussian, true, 9).unwrap();
        let cfg = SolverConfig::sgd(0.5, 2.0, Sampler::Bernoulli, 30, 0);
        let a = run_ensemble(&ds, &cfg, 16, 8).unwrap();
        let b = run_ensemble(&ds, &cfg, 16, 8).unwrap();
        assert_eq!(a.mean, b.mean);
    }
}
