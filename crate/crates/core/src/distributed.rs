//! Distributed gradient descent with a graph-Laplacian penalty.
//!
//! Node `i` holds the single sample `(x_i, y_i)` and its own parameter
//! vector `w_i`. One synchronous round applies
//!
//! ```text
//! w_i <- w_i - eta * [ (x_i . w_i - y_i) x_i + mu * sum_j Lap_ij w_j ]
//! ```
//!
//! which is gradient descent with step `eta/2` on
//! `sum_i (x_i . w_i - y_i)^2 + mu * sum_{(i,j) in E} |w_i - w_j|^2`.
//! Because the data interpolate, `w_i = w_star` for all `i` minimizes both
//! terms at once, for every `mu > 0`. On the stacked error the round is the
//! linear map `I - Q` with
//! `Q = eta * (blockdiag(x_i x_i^T) + mu * Lap (x) I_d)`.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{range_projector, spectral_summary, Dataset, RangeProjector, DEFAULT_RANK_TOL};
use crate::seed;
use crate::solvers::{RunStatus, DIVERGENCE_FACTOR};

/// Largest `n * d` for which the dense operator spectrum is computed.
pub const DENSE_LIMIT: usize = 4096;

/// Erdős–Rényi draws attempted before giving up on connectivity.
pub const ER_MAX_ATTEMPTS: usize = 1000;

/// Slack on the one-sided bound `sigma_min <= eta * lambda_min_nz(H)`.
pub const BOUND_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GraphKind {
    Complete,
    Ring,
    Path,
    Grid { rows: usize, cols: usize },
    KRing { k: usize },
    ErdosRenyi { p: f64 },
}

impl GraphKind {
    pub fn name(&self) -> &'static str {
        match self {
            GraphKind::Complete => "complete",
            GraphKind::Ring => "ring",
            GraphKind::Path => "path",
            GraphKind::Grid { .. } => "grid",
            GraphKind::KRing { .. } => "k_ring",
            GraphKind::ErdosRenyi { .. } => "erdos_renyi",
        }
    }
}

/// Connected undirected communication graph without self-loops or duplicate edges.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    kind: GraphKind,
    seed: u64,
    attempts: usize,
}

impl CommGraph {
    /// Builds a graph from an explicit edge list, checking the invariants.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], kind: GraphKind, seed: u64) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a == b {
                return Err(Error::InvalidGraphSpec(format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::InvalidGraphSpec(format!("edge ({a},{b}) outside 0..{n}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let g = CommGraph {
            n,
            edges: set.into_iter().collect(),
            kind,
            seed,
            attempts: 1,
        };
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Draws needed before a connected graph came up (1 for deterministic kinds).
    pub fn attempts(&self) -> usize {
        self.attempts
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    /// Number of nodes reached by breadth-first search from node 0.
    pub fn bfs_reach(&self) -> usize {
        bfs_reach(self.n, &self.neighbors())
    }

    pub fn is_connected(&self) -> bool {
        self.bfs_reach() == self.n
    }
}

fn bfs_reach(n: usize, adj: &[Vec<usize>]) -> usize {
    if n == 0 {
        return 0;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                queue.push_back(u);
            }
        }
    }
    count
}

pub fn make_graph(kind: GraphKind, n: usize, seed: u64) -> Result<CommGraph> {
    if n < 2 {
        return Err(Error::InvalidGraphSpec(format!("need at least 2 nodes, got {n}")));
    }
    let mut edges = Vec::new();
    match kind {
        GraphKind::Complete => {
            for i in 0..n {
                for j in (i + 1)..n {
                    edges.push((i, j));
                }
            }
        }
        GraphKind::Ring => {
            for i in 0..n {
                edges.push((i, (i + 1) % n));
            }
        }
        GraphKind::Path => {
            for i in 0..n - 1 {
                edges.push((i, i + 1));
            }
        }
        GraphKind::Grid { rows, cols } => {
            if rows == 0 || cols == 0 || rows * cols != n {
                return Err(Error::InvalidGraphSpec(format!(
                    "grid {rows}x{cols} does not have {n} nodes"
                )));
            }
            for r in 0..rows {
                for c in 0..cols {
                    let v = r * cols + c;
                    if c + 1 < cols {
                        edges.push((v, v + 1));
                    }
                    if r + 1 < rows {
                        edges.push((v, v + cols));
                    }
                }
            }
        }
        GraphKind::KRing { k } => {
            if k == 0 || 2 * k >= n {
                return Err(Error::InvalidGraphSpec(format!("k_ring needs 1 <= k and 2k < n (k={k}, n={n})")));
            }
            for i in 0..n {
                for s in 1..=k {
                    edges.push((i, (i + s) % n));
                }
            }
        }
        GraphKind::ErdosRenyi { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidGraphSpec(format!("edge probability p={p} must lie in (0, 1]")));
            }
            let mut rng = seed::rng(seed);
            for attempt in 1..=ER_MAX_ATTEMPTS {
                let mut adj = vec![Vec::new(); n];
                let mut drawn = Vec::new();
                for i in 0..n {
                    for j in (i + 1)..n {
                        if rng.random::<f64>() < p {
                            drawn.push((i, j));
                            adj[i].push(j);
                            adj[j].push(i);
                        }
                    }
                }
                if bfs_reach(n, &adj) == n {
                    let mut g = CommGraph::from_edges(n, &drawn, kind, seed)?;
                    g.attempts = attempt;
                    return Ok(g);
                }
            }
            return Err(Error::CouldNotConnect {
                attempts: ER_MAX_ATTEMPTS,
            });
        }
    }
    CommGraph::from_edges(n, &edges, kind, seed)
}

/// Degree-minus-adjacency Laplacian; positive semidefinite.
pub fn laplacian(g: &CommGraph) -> DMatrix<f64> {
    let n = g.n();
    let mut lap = DMatrix::zeros(n, n);
    for &(a, b) in g.edges() {
        lap[(a, b)] -= 1.0;
        lap[(b, a)] -= 1.0;
        lap[(a, a)] += 1.0;
        lap[(b, b)] += 1.0;
    }
    lap
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgdConfig {
    pub eta: f64,
    pub mu: f64,
    pub max_iters: usize,
    /// Relative threshold on the mean projected error; `0` disables early stopping.
    pub stop_tol: f64,
}

/// Default learning rate `1 / (max_i |x_i|^2 + 2 mu max_degree)`.
///
/// It puts the Gershgorin bound of `Q` at exactly one, so every eigenvalue of
/// the round map lies in `[0, 1)`.
pub fn default_eta(ds: &Dataset, g: &CommGraph, mu: f64) -> f64 {
    let (_, max_sq) = ds.norm_sq_range();
    1.0 / (max_sq + 2.0 * mu * g.max_degree() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgdRecord {
    pub t: usize,
    /// `(1/n) sum_i |P_range (w_i - w_star)|^2`.
    pub mean_err_sq_range: f64,
    pub edge_spread: f64,
    pub global_spread: f64,
    pub penalized_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgdTrace {
    pub records: Vec<DgdRecord>,
    pub config: DgdConfig,
    pub status: RunStatus,
    /// Final `n x d` parameter stack.
    pub final_w: DMatrix<f64>,
}

impl DgdTrace {
    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_err_sq_range).collect()
    }

    /// `sqrt` of the mean projected error: the curve whose per-step ratio is the
    /// norm contraction factor.
    pub fn norm_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_err_sq_range.sqrt()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMetrics {
    pub mean_err_sq_range: f64,
    pub edge_spread: f64,
    pub global_spread: f64,
    pub per_node_err_sq: Vec<f64>,
}

/// Error and agreement diagnostics for an `n x d` stack of node parameters.
pub fn consensus_metrics(
    w: &DMatrix<f64>,
    ds: &Dataset,
    rp: &RangeProjector,
    g: &CommGraph,
) -> Result<ConsensusMetrics> {
    let (n, d) = (ds.n(), ds.d());
    if w.shape() != (n, d) || g.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "stack {:?}, dataset {n}x{d}, graph with {} nodes",
            w.shape(),
            g.n()
        )));
    }
    let rows: Vec<f64> = (0..n).flat_map(|i| w.row(i).iter().copied().collect::<Vec<_>>()).collect();
    Ok(metrics_from_rows(&rows, ds, rp, g.edges()))
}

fn metrics_from_rows(
    rows: &[f64],
    ds: &Dataset,
    rp: &RangeProjector,
    edges: &[(usize, usize)],
) -> ConsensusMetrics {
    let (n, d) = (ds.n(), ds.d());
    let w_star = ds.w_star().as_slice();
    let mut diff = vec![0.0; d];
    let per_node_err_sq: Vec<f64> = (0..n)
        .map(|i| {
            for ((o, a), b) in diff.iter_mut().zip(&rows[i * d..(i + 1) * d]).zip(w_star) {
                *o = a - b;
            }
            rp.range_norm_sq(&diff)
        })
        .collect();
    let dist_sq = |i: usize, j: usize| -> f64 {
        rows[i * d..(i + 1) * d]
            .iter()
            .zip(&rows[j * d..(j + 1) * d])
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let edge_spread = edges
        .iter()
        .map(|&(i, j)| dist_sq(i, j))
        .fold(0.0_f64, f64::max)
        .sqrt();
    let mut global = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            global = global.max(dist_sq(i, j));
        }
    }
    ConsensusMetrics {
        mean_err_sq_range: per_node_err_sq.iter().sum::<f64>() / n as f64,
        edge_spread,
        global_spread: global.sqrt(),
        per_node_err_sq,
    }
}

fn penalized_loss(rows: &[f64], ds: &Dataset, mu: f64, edges: &[(usize, usize)]) -> f64 {
    let (n, d) = (ds.n(), ds.d());
    let data: f64 = (0..n)
        .map(|i| {
            let r = linalg::dot(ds.row(i), &rows[i * d..(i + 1) * d]) - ds.y()[i];
            r * r
        })
        .sum();
    let coupling: f64 = edges
        .iter()
        .map(|&(i, j)| {
            rows[i * d..(i + 1) * d]
                .iter()
                .zip(&rows[j * d..(j + 1) * d])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    data + mu * coupling
}

/// Standard-normal `n x d` starting stack.
pub fn random_initial_stack(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(seed);
    let mut w = DMatrix::zeros(n, d);
    for i in 0..n {
        for k in 0..d {
            w[(i, k)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    w
}

/// Simulates synchronous distributed GD. Every node reads only the previous
/// round's iterates; `w0 = None` starts all nodes at zero.
pub fn run_dgd(ds: &Dataset, g: &CommGraph, cfg: &DgdConfig, w0: Option<&DMatrix<f64>>) -> Result<DgdTrace> {
    let (n, d) = (ds.n(), ds.d());
    if g.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "graph has {} nodes but the dataset has {n} samples (one per node)",
            g.n()
        )));
    }
    if !(cfg.eta > 0.0) || !(cfg.mu > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "eta={} and mu={} must both be positive",
            cfg.eta, cfg.mu
        )));
    }
    if cfg.max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
    }
    if let Some(w0) = w0 {
        if w0.shape() != (n, d) {
            return Err(Error::DimensionMismatch(format!(
                "w0 is {:?}, expected {n}x{d}",
                w0.shape()
            )));
        }
    }
    let rp = range_projector(&ds.hessian(), DEFAULT_RANK_TOL)?;
    let adj = g.neighbors();
    let edges = g.edges();

    let mut cur: Vec<f64> = match w0 {
        Some(w0) => (0..n).flat_map(|i| w0.row(i).iter().copied().collect::<Vec<_>>()).collect(),
        None => vec![0.0; n * d],
    };
    let mut next = vec![0.0; n * d];

    let record = |t: usize, rows: &[f64]| -> DgdRecord {
        let m = metrics_from_rows(rows, ds, &rp, edges);
        DgdRecord {
            t,
            mean_err_sq_range: m.mean_err_sq_range,
            edge_spread: m.edge_spread,
            global_spread: m.global_spread,
            penalized_loss: penalized_loss(rows, ds, cfg.mu, edges),
        }
    };

    let first = record(0, &cur);
    let err0 = first.mean_err_sq_range;
    let mut records = vec![first];
    let mut status = RunStatus::MaxIters;

    for t in 1..=cfg.max_iters {
        for i in 0..n {
            let wi = &cur[i * d..(i + 1) * d];
            let xi = ds.row(i);
            let r = linalg::dot(xi, wi) - ds.y()[i];
            let deg = adj[i].len() as f64;
            let out = &mut next[i * d..(i + 1) * d];
            for k in 0..d {
                let mut lap = deg * wi[k];
                for &j in &adj[i] {
                    lap -= cur[j * d + k];
                }
                out[k] = wi[k] - cfg.eta * (r * xi[k] + cfg.mu * lap);
            }
        }
        std::mem::swap(&mut cur, &mut next);
        let rec = record(t, &cur);
        let err = rec.mean_err_sq_range;
        records.push(rec);
        if !err.is_finite() || (err0 > 0.0 && err > DIVERGENCE_FACTOR * err0) {
            status = RunStatus::Diverged;
            break;
        }
        if cfg.stop_tol > 0.0 && err <= cfg.stop_tol * err0 {
            status = RunStatus::Converged;
            break;
        }
    }

    Ok(DgdTrace {
        records,
        config: *cfg,
        status,
        final_w: DMatrix::from_row_slice(n, d, &cur),
    })
}

/// Dense `nd x nd` operator `Q`, so that one round maps the stacked error `E` to `(I - Q) E`.
pub fn dgd_operator(ds: &Dataset, g: &CommGraph, eta: f64, mu: f64) -> DMatrix<f64> {
    let (n, d) = (ds.n(), ds.d());
    let deg = g.degrees();
    let mut q = DMatrix::zeros(n * d, n * d);
    for i in 0..n {
        let xi = ds.row(i);
        for a in 0..d {
            for b in 0..d {
                q[(i * d + a, i * d + b)] = eta * xi[a] * xi[b];
            }
            q[(i * d + a, i * d + a)] += eta * mu * deg[i] as f64;
        }
    }
    for &(i, j) in g.edges() {
        for a in 0..d {
            q[(i * d + a, j * d + a)] -= eta * mu;
            q[(j * d + a, i * d + a)] -= eta * mu;
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpectrum {
    /// Smallest eigenvalue of `Q` off its null space.
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// `1 - eta * lambda_min_nz(H)`.
    pub rate_lower: f64,
    /// Largest `|1 - sigma|` off the null space: the norm contraction per round.
    pub rate_spectral: f64,
    pub stable: bool,
    /// Dimension of the removed null space (shared null directions of `H`).
    pub null_dim: usize,
    /// `sigma_min <= eta * lambda_min_nz(H) + BOUND_SLACK`.
    pub bound_holds: bool,
}

/// Exact spectrum of the round map by dense eigensolve.
///
/// The null space of `Q` consists of the consensus stacks `(v, ..., v)` with
/// `v` in `null(H)`; it is shifted out of the way before reading the extreme
/// eigenvalues.
pub fn dgd_operator_spectrum(ds: &Dataset, g: &CommGraph, eta: f64, mu: f64) -> Result<OperatorSpectrum> {
    let (n, d) = (ds.n(), ds.d());
    if g.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "graph has {} nodes, dataset has {n} samples",
            g.n()
        )));
    }
    if n * d > DENSE_LIMIT {
        return Err(Error::TooLargeForDense {
            size: n * d,
            limit: DENSE_LIMIT,
        });
    }
    let h = ds.hessian();
    let summary = spectral_summary(&h, DEFAULT_RANK_TOL)?;
    let rp = range_projector(&h, DEFAULT_RANK_TOL)?;
    let null_dim = rp.null_basis.ncols();

    let mut shifted = dgd_operator(ds, g, eta, mu);
    let scale = 1.0 / (n as f64).sqrt();
    let mut consensus = DMatrix::zeros(n * d, null_dim);
    for c in 0..null_dim {
        for i in 0..n {
            for a in 0..d {
                consensus[(i * d + a, c)] = scale * rp.null_basis[(a, c)];
            }
        }
    }
    // consensus directions move to eigenvalue -1, below the PSD spectrum
    shifted -= &consensus * consensus.transpose();
    let (values, _) = linalg::sym_eigen_desc(&shifted)?;
    let kept = &values.as_slice()[..n * d - null_dim];
    let sigma_max = kept[0];
    let sigma_min = *kept.last().expect("operator has directions off its null space");
    let rate_spectral = (1.0 - sigma_min).abs().max((1.0 - sigma_max).abs());
    let lam = summary.lambda_min_nz;
    Ok(OperatorSpectrum {
        sigma_min,
        sigma_max,
        rate_lower: 1.0 - eta * lam,
        rate_spectral,
        stable: sigma_max < 2.0,
        null_dim,
        bound_holds: sigma_min <= eta * lam + BOUND_SLACK,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityBound {
    /// Gershgorin bound `eta * (max_i |x_i|^2 + 2 mu max_degree) >= sigma_max`.
    pub bound: f64,
    pub stable: bool,
}

pub fn stability_bound(ds: &Dataset, g: &CommGraph, eta: f64, mu: f64) -> StabilityBound {
    let (_, max_sq) = ds.norm_sq_range();
    let bound = eta * (max_sq + 2.0 * mu * g.max_degree() as f64);
    StabilityBound {
        bound,
        stable: bound < 2.0,
    }
}

/// Stacked error `(w_i - w_star)` as an `nd` vector.
pub fn stacked_error(w: &DMatrix<f64>, ds: &Dataset) -> DVector<f64> {
    let (n, d) = w.shape();
    DVector::from_fn(n * d, |k, _| w[(k / d, k % d)] - ds.w_star()[k % d])
}
