//! Interpolating linear problems.
//!
//! Every generated [`Dataset`] carries a planted parameter `w_star` with
//! `y = X w_star`, so each per-sample loss `(x_i . w - y_i)^2` vanishes at the
//! same point. The Hessian of the averaged loss is `H = (1/n) X^T X`, which is
//! also the sum of the rank-one projectors `x_i^2 P_i` scaled by `1/n`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::seed;

/// Default relative tolerance separating the nonzero spectrum from round-off.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const UNIT_NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetKind {
    /// First `n` rows of a random orthogonal `d x d` matrix.
    Orthonormal,
    /// i.i.d. entries with variance `1/d`.
    Gaussian,
    /// Gaussian rows blended with one shared unit direction.
    Spiked { rho: f64 },
    /// Rows supplied by the caller.
    Custom,
}

impl DatasetKind {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Orthonormal => "orthonormal",
            DatasetKind::Gaussian => "gaussian",
            DatasetKind::Spiked { .. } => "spiked",
            DatasetKind::Custom => "custom",
        }
    }
}

/// Samples, labels and the planted interpolating parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    kind: DatasetKind,
    seed: Option<u64>,
    normalized: bool,
    x: DMatrix<f64>,
    y: DVector<f64>,
    w_star: DVector<f64>,
    // row-major copy of x for the solver inner loops
    rows: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from explicit rows; labels are set to `X w_star`.
    pub fn from_parts(x: DMatrix<f64>, w_star: DVector<f64>) -> Result<Self> {
        Self::assemble(DatasetKind::Custom, None, x, w_star)
    }

    /// Rebuilds a dataset with stored labels (used when reading files back).
    pub fn from_stored(
        kind: DatasetKind,
        seed: Option<u64>,
        x: DMatrix<f64>,
        y: DVector<f64>,
        w_star: DVector<f64>,
    ) -> Result<Self> {
        let mut ds = Self::assemble(kind, seed, x, w_star)?;
        if y.len() != ds.n() {
            return Err(Error::DimensionMismatch(format!(
                "y has {} entries, X has {} rows",
                y.len(),
                ds.n()
            )));
        }
        ds.y = y;
        Ok(ds)
    }

    fn assemble(
        kind: DatasetKind,
        seed: Option<u64>,
        x: DMatrix<f64>,
        w_star: DVector<f64>,
    ) -> Result<Self> {
        let (n, d) = x.shape();
        if n == 0 || d == 0 {
            return Err(Error::InvalidDimension(format!("n={n}, d={d}")));
        }
        if w_star.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "w_star has {} entries, expected d={d}",
                w_star.len()
            )));
        }
        let y = &x * &w_star;
        let mut rows = Vec::with_capacity(n * d);
        for i in 0..n {
            rows.extend(x.row(i).iter());
        }
        let normalized = (0..n).all(|i| {
            let r = &rows[i * d..(i + 1) * d];
            (linalg::norm_sq(r) - 1.0).abs() <= UNIT_NORM_TOL
        });
        Ok(Dataset {
            kind,
            seed,
            normalized,
            x,
            y,
            w_star,
            rows,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// True when every row has unit norm to within `1e-12`.
    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn w_star(&self) -> &DVector<f64> {
        &self.w_star
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.rows[i * d..(i + 1) * d]
    }

    pub fn row_norm_sq(&self, i: usize) -> f64 {
        linalg::norm_sq(self.row(i))
    }

    /// `(min_i |x_i|^2, max_i |x_i|^2)`.
    pub fn norm_sq_range(&self) -> (f64, f64) {
        (0..self.n())
            .map(|i| self.row_norm_sq(i))
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    /// Largest `|y_i - x_i . w_star|`.
    pub fn interpolation_residual(&self) -> f64 {
        (0..self.n())
            .map(|i| (self.y[i] - linalg::dot(self.row(i), self.w_star.as_slice())).abs())
            .fold(0.0, f64::max)
    }

    /// Whether all pairs of rows satisfy `|x̂_i . x̂_j| <= tol`.
    pub fn rows_orthogonal(&self, tol: f64) -> bool {
        let n = self.n();
        let norms: Vec<f64> = (0..n).map(|i| self.row_norm_sq(i).sqrt()).collect();
        for i in 0..n {
            for j in (i + 1)..n {
                let denom = norms[i] * norms[j];
                if denom == 0.0 {
                    continue;
                }
                if (linalg::dot(self.row(i), self.row(j)) / denom).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Averaged squared residual `(1/n) sum_i (x_i . w - y_i)^2`.
    pub fn loss(&self, w: &[f64]) -> f64 {
        let n = self.n();
        (0..n)
            .map(|i| {
                let r = linalg::dot(self.row(i), w) - self.y[i];
                r * r
            })
            .sum::<f64>()
            / n as f64
    }

    /// Matrix-free `H v = (1/n) sum_i (x_i . v) x_i`.
    pub fn apply_hessian(&self, v: &[f64]) -> DVector<f64> {
        let (n, d) = (self.n(), self.d());
        let mut out = DVector::zeros(d);
        for i in 0..n {
            let row = self.row(i);
            let c = linalg::dot(row, v);
            for (o, xk) in out.iter_mut().zip(row) {
                *o += c * xk;
            }
        }
        out / n as f64
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        hessian(self)
    }
}

/// Draws an interpolating dataset.
pub fn gen_dataset(
    n: usize,
    d: usize,
    kind: DatasetKind,
    normalize: bool,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidDimension(format!("n={n}, d={d}")));
    }
    let mut rng = seed::rng(seed);
    let mut gauss = |scale: f64| -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    };
    let mut x = match kind {
        DatasetKind::Orthonormal => {
            if n > d {
                return Err(Error::InfeasibleKind(format!(
                    "orthonormal rows need n <= d (n={n}, d={d})"
                )));
            }
            let g = DMatrix::from_fn(d, d, |_, _| gauss(1.0));
            let qr = g.qr();
            let r = qr.r();
            let mut q = qr.q();
            for j in 0..d {
                if r[(j, j)] < 0.0 {
                    q.column_mut(j).neg_mut();
                }
            }
            q.rows(0, n).into_owned()
        }
        DatasetKind::Gaussian => {
            let s = (1.0 / d as f64).sqrt();
            DMatrix::from_fn(n, d, |_, _| gauss(s))
        }
        DatasetKind::Spiked { rho } => {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::InfeasibleKind(format!(
                    "spiked correlation rho={rho} must lie in [0, 1)"
                )));
            }
            let mut u = DVector::from_fn(d, |_, _| gauss(1.0));
            u /= u.norm();
            let s = (1.0 / d as f64).sqrt();
            // from_fn fills column-major; draw row by row for a stable layout
            let mut x = DMatrix::zeros(n, d);
            for i in 0..n {
                for k in 0..d {
                    x[(i, k)] = (1.0 - rho).sqrt() * gauss(s) + rho.sqrt() * u[k];
                }
            }
            x
        }
        DatasetKind::Custom => {
            return Err(Error::InfeasibleKind(
                "custom datasets are built with Dataset::from_parts".into(),
            ))
        }
    };
    if normalize {
        for i in 0..n {
            let norm = x.row(i).norm();
            if norm > 0.0 {
                x.row_mut(i).unscale_mut(norm);
            }
        }
    }
    let w_star = DVector::from_fn(d, |_, _| gauss(1.0));
    Dataset::assemble(kind, Some(seed), x, w_star)
}

/// Dense Hessian `H = (1/n) X^T X`.
pub fn hessian(ds: &Dataset) -> DMatrix<f64> {
    let h = ds.x().transpose() * ds.x() / ds.n() as f64;
    // exact symmetry; the product is symmetric up to round-off only
    (&h + h.transpose()) * 0.5
}

/// Spectrum of `H` with the quantities the rate formulas need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    /// All `d` eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub rank: usize,
    pub lambda_max: f64,
    /// Smallest eigenvalue above `tol * lambda_max`.
    pub lambda_min_nz: f64,
    pub trace: f64,
    pub condition_number: f64,
    /// Saturation batch size `Tr(H) / lambda_max`.
    pub m_star: f64,
    pub tol: f64,
}

pub fn spectral_summary(h: &DMatrix<f64>, tol: f64) -> Result<SpectralSummary> {
    let (values, _) = linalg::sym_eigen_desc(h)?;
    summary_from_values(values.as_slice(), h.trace(), tol)
}

fn summary_from_values(values: &[f64], trace: f64, tol: f64) -> Result<SpectralSummary> {
    let lambda_max = values[0];
    if !(lambda_max > 0.0) {
        return Err(Error::DegenerateHessian(lambda_max));
    }
    let cutoff = tol * lambda_max;
    let rank = values.iter().filter(|&&v| v > cutoff).count();
    let lambda_min_nz = values[rank - 1];
    Ok(SpectralSummary {
        eigenvalues: values.to_vec(),
        rank,
        lambda_max,
        lambda_min_nz,
        trace,
        condition_number: lambda_max / lambda_min_nz,
        m_star: trace / lambda_max,
        tol,
    })
}

/// Orthonormal bases for `range(H)` and its complement `null(H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeProjector {
    /// `d x r`, orthonormal columns spanning `range(H)`.
    pub basis: DMatrix<f64>,
    /// `d x (d - r)`, orthonormal columns spanning `null(H)`.
    pub null_basis: DMatrix<f64>,
}

impl RangeProjector {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.basis * (self.basis.transpose() * v)
    }

    pub fn residual(&self, v: &DVector<f64>) -> DVector<f64> {
        v - self.project(v)
    }

    /// `|P_range v|^2` for a slice, without allocating the projection.
    pub fn range_norm_sq(&self, v: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for col in 0..self.rank() {
            let b = &self.basis.as_slice()[col * d..(col + 1) * d];
            let c = linalg::dot(b, v);
            acc += c * c;
        }
        acc
    }

    /// Coordinates of `v` in the null-space basis.
    pub fn null_coords(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..self.null_basis.ncols())
            .map(|col| linalg::dot(&self.null_basis.as_slice()[col * d..(col + 1) * d], v))
            .collect()
    }
}

pub fn range_projector(h: &DMatrix<f64>, tol: f64) -> Result<RangeProjector> {
    let (values, vectors) = linalg::sym_eigen_desc(h)?;
    let summary = summary_from_values(values.as_slice(), h.trace(), tol)?;
    let r = summary.rank;
    let d = h.nrows();
    Ok(RangeProjector {
        basis: vectors.columns(0, r).into_owned(),
        null_basis: vectors.columns(r, d - r).into_owned(),
    })
}
