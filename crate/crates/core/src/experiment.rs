//! File-based experiments: resolve a config, run the pipeline, write outputs.
//!
//! A config names a dataset (preset, file or generation recipe), optional
//! graph, solver knobs and theory knobs. [`resolve`] fills in every default
//! and every seed, so the resolved config written into `summary.json` alone
//! reproduces the run.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::distributed::{
    default_eta, dgd_operator_spectrum, laplacian, make_graph, random_initial_stack, run_dgd,
    stability_bound, CommGraph, DgdConfig, DgdTrace, GraphKind, DENSE_LIMIT,
};
use crate::error::{Error, Result};
use crate::io;
use crate::linalg;
use crate::presets::preset;
use crate::problem::{gen_dataset, spectral_summary, Dataset, DatasetKind, SpectralSummary, DEFAULT_RANK_TOL};
use crate::seed::derive_seed;
use crate::solvers::{
    estimate_rate, run_ensemble, Ensemble, RunStatus, Sampler, SolverConfig,
    DEFAULT_FIT_START,
};
use crate::theory::{cost_model, norm_factor, optimal_rate, predicted_contraction, DEGENERACY_TOL};

/// Exit status for a finished experiment.
pub const EXIT_OK: i32 = 0;
/// Validation failure or a failed rate-band check.
pub const EXIT_INVALID: i32 = 1;
/// At least one run diverged.
pub const EXIT_DIVERGED: i32 = 2;

/// Stream indices for [`derive_seed`] off the master seed.
const STREAM_DATA: u64 = 1;
const STREAM_GRAPH: u64 = 2;
const STREAM_RUNS: u64 = 3;
const STREAM_INIT: u64 = 4;

const SGD_ITERS: usize = 200;
const DGD_ITERS: usize = 500_000;
// Squared-error threshold; the spread is a norm, so this puts it near 1e-9 of its start.
const DGD_STOP_TOL: f64 = 1e-18;
const SGD_FIT_END: usize = 41;
const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Gd,
    Sgd,
    Dgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    M,
    Eta,
    Mu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum Command {
    Gen,
    Theory,
    Run { algorithm: Algorithm },
    Sweep { param: SweepParam },
    Spectrum,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DatasetSpec {
    Preset {
        name: String,
    },
    File {
        path: PathBuf,
    },
    Generate {
        n: usize,
        d: usize,
        kind: DatasetKind,
        #[serde(default)]
        normalize: bool,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum GraphSpec {
    /// The graph pinned by the dataset preset.
    Preset,
    File {
        path: PathBuf,
    },
    Generate {
        kind: GraphKind,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    #[default]
    Zero,
    Random,
}

/// Solver knobs; `None` means "use the default for this command".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSpec {
    pub eta: Option<f64>,
    pub m: Option<f64>,
    pub sampler: Option<Sampler>,
    pub max_iters: Option<usize>,
    pub stop_tol: Option<f64>,
    pub mu: Option<f64>,
    pub init: Option<InitSpec>,
    pub init_seed: Option<u64>,
    pub fit_start: Option<usize>,
    pub fit_end: Option<usize>,
}

/// Inputs for `theory` without a dataset, plus the cost-model accuracy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheorySpec {
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub lambda1: Option<f64>,
    pub lambdan: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub graph: Option<GraphSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub theory: TheorySpec,
    /// Parameter values for `sweep`; empty means a default grid.
    #[serde(default)]
    pub values: Vec<f64>,
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub runs: Option<usize>,
    #[serde(default)]
    pub format: OutputFormat,
}

impl ExperimentConfig {
    pub fn new(command: Command, out: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            command,
            dataset: None,
            graph: None,
            solver: SolverSpec::default(),
            theory: TheorySpec::default(),
            values: Vec::new(),
            out: out.into(),
            seed: 0,
            runs: None,
            format: OutputFormat::Csv,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Loaded inputs that go with a resolved config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub dataset: Option<Dataset>,
    pub graph: Option<CommGraph>,
    pub spectrum: Option<SpectralSummary>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    pub summary: Value,
}

fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    match spec {
        DatasetSpec::Preset { name } => preset(name)?.dataset(),
        DatasetSpec::File { path } => io::read_dataset(path),
        DatasetSpec::Generate {
            n,
            d,
            kind,
            normalize,
            seed,
        } => gen_dataset(*n, *d, *kind, *normalize, seed.expect("seed resolved")),
    }
}

fn load_graph(spec: &GraphSpec, data: Option<&DatasetSpec>, n: usize) -> Result<CommGraph> {
    match spec {
        GraphSpec::Preset => {
            let Some(DatasetSpec::Preset { name }) = data else {
                return Err(Error::InvalidGraphSpec("graph source `preset` needs a dataset preset".into()));
            };
            preset(name)?
                .comm_graph()?
                .ok_or_else(|| Error::InvalidGraphSpec(format!("preset `{name}` has no graph")))
        }
        GraphSpec::File { path } => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            io::graph_from_json(&text)
        }
        GraphSpec::Generate { kind, seed } => make_graph(*kind, n, seed.expect("seed resolved")),
    }
}

fn needs_graph(cmd: Command) -> bool {
    matches!(
        cmd,
        Command::Run {
            algorithm: Algorithm::Dgd
        } | Command::Sweep { param: SweepParam::Mu }
    )
}

/// Fills every default and seed. Loads the dataset and graph on the way,
/// since several defaults depend on the spectrum.
pub fn resolve(cfg: &ExperimentConfig) -> Result<Resolved> {
    let mut c = cfg.clone();
    if let Some(DatasetSpec::Generate { seed, .. }) = &mut c.dataset {
        seed.get_or_insert(derive_seed(c.seed, STREAM_DATA));
    }
    if c.graph.is_none() {
        if let Some(DatasetSpec::Preset { name }) = &c.dataset {
            if preset(name)?.graph.is_some() && (needs_graph(c.command) || c.command == Command::Spectrum) {
                c.graph = Some(GraphSpec::Preset);
            }
        }
    }
    if let Some(GraphSpec::Generate { seed, .. }) = &mut c.graph {
        seed.get_or_insert(derive_seed(c.seed, STREAM_GRAPH));
    }

    let dataset = c.dataset.as_ref().map(load_dataset).transpose()?;
    let graph = match (&c.graph, &dataset) {
        (Some(spec), Some(ds)) => Some(load_graph(spec, c.dataset.as_ref(), ds.n())?),
        (Some(_), None) => return Err(Error::InvalidConfig("a graph needs a dataset".into())),
        _ => None,
    };
    if needs_graph(c.command) && graph.is_none() {
        return Err(Error::InvalidConfig("distributed runs need a graph".into()));
    }
    let spectrum = dataset
        .as_ref()
        .map(|ds| spectral_summary(&ds.hessian(), DEFAULT_RANK_TOL))
        .transpose()?;

    let s = &mut c.solver;
    match c.command {
        Command::Gen | Command::Spectrum => {}
        Command::Theory => {
            let t = &mut c.theory;
            if let Some(sp) = &spectrum {
                let ds = dataset.as_ref().expect("spectrum implies dataset");
                t.n.get_or_insert(ds.n());
                t.d.get_or_insert(ds.d());
                t.lambda1.get_or_insert(sp.lambda_max);
                t.lambdan.get_or_insert(sp.lambda_min_nz);
            }
            let n = t
                .n
                .ok_or_else(|| Error::InvalidConfig("theory needs --n or a dataset".into()))?;
            t.d.get_or_insert(n);
            if t.lambda1.is_none() || t.lambdan.is_none() {
                return Err(Error::InvalidConfig("theory needs --lambda1 and --lambdan or a dataset".into()));
            }
            t.epsilon.get_or_insert(DEFAULT_EPSILON);
            s.m.get_or_insert(n as f64);
        }
        Command::Run { .. } | Command::Sweep { .. } if dataset.is_none() => {
            return Err(Error::InvalidConfig("runs need a dataset".into()));
        }
        Command::Run { algorithm } => {
            let ds = dataset.as_ref().expect("checked above");
            let sp = spectrum.as_ref().expect("checked above");
            resolve_solver(s, algorithm, ds, sp, graph.as_ref(), c.seed)?;
            c.runs.get_or_insert(match algorithm {
                Algorithm::Sgd => 100,
                _ => 1,
            });
        }
        Command::Sweep { param } => {
            let ds = dataset.as_ref().expect("checked above");
            let sp = spectrum.as_ref().expect("checked above");
            let algorithm = if param == SweepParam::Mu { Algorithm::Dgd } else { Algorithm::Sgd };
            if param == SweepParam::Mu {
                s.init.get_or_insert(InitSpec::Random);
                s.init_seed.get_or_insert(derive_seed(c.seed, STREAM_INIT));
                s.max_iters.get_or_insert(DGD_ITERS);
                s.stop_tol.get_or_insert(DGD_STOP_TOL);
            } else {
                // eta and m are set per point
                s.sampler.get_or_insert(Sampler::Bernoulli);
                s.max_iters.get_or_insert(SGD_ITERS);
                s.stop_tol.get_or_insert(0.0);
                s.fit_start.get_or_insert(DEFAULT_FIT_START);
                s.fit_end.get_or_insert(SGD_FIT_END);
                if param == SweepParam::Eta {
                    s.m.get_or_insert((ds.n() as f64 / 4.0).round().max(1.0));
                }
            }
            c.runs.get_or_insert(if algorithm == Algorithm::Dgd { 1 } else { 20 });
            if c.values.is_empty() {
                c.values = default_sweep(param, ds, sp, s)?;
            }
        }
    }
    if c.runs == Some(0) {
        return Err(Error::InvalidConfig("runs must be at least 1".into()));
    }
    c.theory.epsilon.get_or_insert(DEFAULT_EPSILON);
    Ok(Resolved {
        config: c,
        dataset,
        graph,
        spectrum,
    })
}

fn resolve_solver(
    s: &mut SolverSpec,
    algorithm: Algorithm,
    ds: &Dataset,
    sp: &SpectralSummary,
    graph: Option<&CommGraph>,
    master: u64,
) -> Result<()> {
    let n = ds.n();
    match algorithm {
        Algorithm::Gd => {
            s.sampler = Some(Sampler::Full);
            s.m = Some(n as f64);
            if s.eta.is_none() {
                s.eta = Some(optimal_rate(n as f64, n, sp.lambda_max, sp.lambda_min_nz, DEGENERACY_TOL)?.eta_opt);
            }
            s.max_iters.get_or_insert(SGD_ITERS);
            s.stop_tol.get_or_insert(0.0);
            s.fit_start.get_or_insert(DEFAULT_FIT_START);
        }
        Algorithm::Sgd => {
            s.sampler.get_or_insert(Sampler::Bernoulli);
            let m = *s.m.get_or_insert((n as f64 / 4.0).round().max(1.0));
            if s.eta.is_none() {
                s.eta = Some(optimal_rate(m, n, sp.lambda_max, sp.lambda_min_nz, DEGENERACY_TOL)?.eta_opt);
            }
            s.max_iters.get_or_insert(SGD_ITERS);
            s.stop_tol.get_or_insert(0.0);
            s.fit_start.get_or_insert(DEFAULT_FIT_START);
            s.fit_end.get_or_insert(SGD_FIT_END);
        }
        Algorithm::Dgd => {
            let g = graph.expect("checked by resolve");
            let mu = *s.mu.get_or_insert(1.0);
            s.eta.get_or_insert(default_eta(ds, g, mu));
            s.max_iters.get_or_insert(DGD_ITERS);
            s.stop_tol.get_or_insert(DGD_STOP_TOL);
            s.init.get_or_insert(InitSpec::Random);
            s.init_seed.get_or_insert(derive_seed(master, STREAM_INIT));
        }
    }
    Ok(())
}

fn default_sweep(param: SweepParam, ds: &Dataset, sp: &SpectralSummary, s: &SolverSpec) -> Result<Vec<f64>> {
    let n = ds.n();
    Ok(match param {
        SweepParam::M if n <= 64 => (1..=n).map(|m| m as f64).collect(),
        SweepParam::M => {
            let mut v: Vec<f64> = std::iter::successors(Some(1usize), |m| Some(m * 2))
                .take_while(|&m| m < n)
                .map(|m| m as f64)
                .collect();
            v.push(n as f64);
            v
        }
        SweepParam::Eta => {
            let m = s.m.expect("resolved");
            let best = optimal_rate(m, n, sp.lambda_max, sp.lambda_min_nz, DEGENERACY_TOL)?.eta_opt;
            (1..=20).map(|k| best * k as f64 / 10.0).collect()
        }
        SweepParam::Mu => vec![0.01, 0.1, 1.0, 10.0],
    })
}

/// Resolves `cfg`, runs it and writes all outputs under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    let r = resolve(cfg)?;
    let out = r.config.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    if let Some(ds) = &r.dataset {
        io::write_dataset(&out.join("dataset.json"), ds)?;
    }
    if let Some(g) = &r.graph {
        io::write_json(&out.join("graph.json"), &io::graph_to_json(g))?;
    }

    let mut summary = json!({
        "config": serde_json::to_value(&r.config)?,
    });
    if let Some(sp) = &r.spectrum {
        summary["spectral_summary"] = serde_json::to_value(sp)?;
    }
    let exit_code = match r.config.command {
        Command::Gen => EXIT_OK,
        Command::Theory => theory(&r, &mut summary)?,
        Command::Run {
            algorithm: Algorithm::Dgd,
        } => run_distributed(&r, &mut summary)?,
        Command::Run { .. } => run_single(&r, &mut summary)?,
        Command::Sweep { param } => sweep(&r, param, &mut summary)?,
        Command::Spectrum => spectrum(&r, &mut summary)?,
    };
    summary["exit_code"] = json!(exit_code);
    io::write_json(&out.join("summary.json"), &summary)?;
    Ok(Outcome { exit_code, summary })
}

fn ds_sp(r: &Resolved) -> (&Dataset, &SpectralSummary) {
    (
        r.dataset.as_ref().expect("resolved with dataset"),
        r.spectrum.as_ref().expect("resolved with dataset"),
    )
}

/// `c` in the cost model: one for unit rows, the norm factor otherwise.
fn cost_factor(ds: Option<&Dataset>) -> f64 {
    match ds {
        Some(ds) => {
            let (lo, hi) = ds.norm_sq_range();
            if lo > 0.0 {
                norm_factor(lo, hi)
            } else {
                1.0
            }
        }
        None => 1.0,
    }
}

#[allow(clippy::too_many_arguments)]
fn predictions(
    m: f64,
    n: usize,
    d: usize,
    l1: f64,
    ln: f64,
    eps: f64,
    c: f64,
    eta: Option<f64>,
) -> Result<Value> {
    let pred = optimal_rate(m, n, l1, ln, DEGENERACY_TOL)?;
    let mut v = serde_json::to_value(pred)?;
    v["cost_model"] = match cost_model(m, n, d, eps, pred.g_opt, c) {
        Ok(cm) => serde_json::to_value(cm)?,
        Err(e) => json!({ "error": e.to_string() }),
    };
    if let Some(eta) = eta {
        v["eta"] = json!(eta);
        v["g_at_eta"] = json!(predicted_contraction(m, n, eta, l1, ln));
    }
    Ok(v)
}

fn theory(r: &Resolved, summary: &mut Value) -> Result<i32> {
    let t = &r.config.theory;
    let n = t.n.expect("resolved");
    let m = r.config.solver.m.expect("resolved");
    let pred = predictions(
        m,
        n,
        t.d.expect("resolved"),
        t.lambda1.expect("resolved"),
        t.lambdan.expect("resolved"),
        t.epsilon.expect("resolved"),
        cost_factor(r.dataset.as_ref()),
        r.config.solver.eta,
    )?;
    summary["prediction"] = pred;
    if let Some(sp) = &r.spectrum {
        summary["m_star"] = json!(sp.m_star);
    } else {
        summary["m_star"] = Value::Null;
    }
    Ok(EXIT_OK)
}

fn write_table(out: &Path, stem: &str, fmt: OutputFormat, csv: String, json: Value) -> Result<()> {
    match fmt {
        OutputFormat::Csv => io::write_atomic(&out.join(format!("{stem}.csv")), csv.as_bytes()),
        OutputFormat::Json => io::write_json(&out.join(format!("{stem}.json")), &json),
    }
}

fn solver_config(s: &SolverSpec) -> SolverConfig {
    SolverConfig {
        eta: s.eta.expect("resolved"),
        m: s.m.expect("resolved"),
        sampler: s.sampler.expect("resolved"),
        max_iters: s.max_iters.expect("resolved"),
        stop_tol: s.stop_tol.expect("resolved"),
        seed: 0,
        w0: None,
    }
}

fn rate_json(curve: &[f64], window: std::ops::Range<usize>) -> Value {
    match estimate_rate(curve, window.clone()) {
        Ok(fit) => json!({
            "rate": fit.rate,
            "residual": fit.residual,
            "window": [window.start, window.end],
        }),
        Err(e) => json!({ "error": e.to_string(), "window": [window.start, window.end] }),
    }
}

fn ensemble_means(ens: &Ensemble) -> (Vec<f64>, Vec<f64>) {
    let len = ens.mean.len();
    let k = ens.traces.len() as f64;
    let mut loss = vec![0.0; len];
    let mut batch = vec![0.0; len];
    for tr in &ens.traces {
        for t in 0..len {
            loss[t] += tr.records[t].loss;
            batch[t] += tr.records[t].batch_size as f64;
        }
    }
    for t in 0..len {
        loss[t] /= k;
        batch[t] /= k;
    }
    (loss, batch)
}

fn run_single(r: &Resolved, summary: &mut Value) -> Result<i32> {
    let (ds, sp) = ds_sp(r);
    let c = &r.config;
    let s = &c.solver;
    let cfg = solver_config(s);
    let runs = c.runs.expect("resolved");
    let ens = run_ensemble(ds, &cfg, runs, derive_seed(c.seed, STREAM_RUNS))?;

    for (k, tr) in ens.traces.iter().enumerate() {
        write_table(
            &c.out,
            &format!("run_{k:04}"),
            c.format,
            io::trace_csv(&tr.records),
            serde_json::to_value(&tr.records)?,
        )?;
    }
    let (loss, batch) = ensemble_means(&ens);
    let mean_rows: Vec<Value> = (0..ens.mean.len())
        .map(|t| json!({ "t": t, "err_sq_range": ens.mean[t], "std_err": ens.std_err[t], "loss": loss[t], "batch_size": batch[t] }))
        .collect();
    write_table(
        &c.out,
        "mean",
        c.format,
        io::mean_csv(&ens.mean, &loss, &batch),
        Value::Array(mean_rows),
    )?;

    let window = ens.fit_window(s.fit_start.expect("resolved"), s.fit_end);
    let m_eff = if cfg.sampler == Sampler::Full { ds.n() as f64 } else { cfg.m };
    summary["prediction"] = predictions(
        m_eff,
        ds.n(),
        ds.d(),
        sp.lambda_max,
        sp.lambda_min_nz,
        c.theory.epsilon.expect("resolved"),
        cost_factor(Some(ds)),
        Some(cfg.eta),
    )?;
    summary["m_star"] = json!(sp.m_star);
    summary["r_hat"] = rate_json(&ens.mean, window);
    let diverged = ens.traces.iter().filter(|t| t.status == RunStatus::Diverged).count();
    let converged = ens.traces.iter().filter(|t| t.status == RunStatus::Converged).count();
    summary["runs"] = json!({
        "count": runs,
        "converged": converged,
        "diverged": diverged,
        "empty_batches": ens.traces.iter().map(|t| t.empty_batches).sum::<usize>(),
    });
    Ok(if diverged > 0 { EXIT_DIVERGED } else { EXIT_OK })
}

fn dgd_config(s: &SolverSpec) -> DgdConfig {
    DgdConfig {
        eta: s.eta.expect("resolved"),
        mu: s.mu.expect("resolved"),
        max_iters: s.max_iters.expect("resolved"),
        stop_tol: s.stop_tol.expect("resolved"),
    }
}

fn initial_stack(s: &SolverSpec, ds: &Dataset) -> Option<DMatrix<f64>> {
    match s.init.expect("resolved") {
        InitSpec::Zero => None,
        InitSpec::Random => Some(random_initial_stack(ds.n(), ds.d(), s.init_seed.expect("resolved"))),
    }
}

/// Fit window for the DGD norm curve: the second half of the run, which
/// skips the transient while the slowest mode takes over.
pub fn dgd_fit_window(curve: &[f64], start: Option<usize>, end: Option<usize>) -> std::ops::Range<usize> {
    let len = curve.len();
    let start = start.unwrap_or((len / 2).max(DEFAULT_FIT_START));
    let end = end.map_or(len, |e| e.min(len));
    start.min(end)..end
}

struct DgdReport {
    value: Value,
    band_pass: bool,
    diverged: bool,
}

fn dgd_report(ds: &Dataset, sp: &SpectralSummary, g: &CommGraph, s: &SolverSpec, trace: &DgdTrace) -> Result<DgdReport> {
    let cfg = trace.config;
    let curve = trace.norm_curve();
    let window = dgd_fit_window(&curve, s.fit_start, s.fit_end);
    let fit = estimate_rate(&curve, window.clone()).ok();
    let rate_lower = 1.0 - cfg.eta * sp.lambda_min_nz;
    let bound = stability_bound(ds, g, cfg.eta, cfg.mu);
    let spectrum = if ds.n() * ds.d() <= DENSE_LIMIT {
        serde_json::to_value(dgd_operator_spectrum(ds, g, cfg.eta, cfg.mu)?)?
    } else {
        json!("skipped")
    };
    let first = trace.records.first().expect("trace has t = 0");
    let last = trace.records.last().expect("trace has t = 0");
    let band_pass = match &fit {
        Some(f) => f.rate >= rate_lower - 0.02 && f.rate < 1.0 && bound.stable,
        None => false,
    } && trace.status == RunStatus::Converged;
    let agreement = match (&fit, spectrum.get("rate_spectral").and_then(Value::as_f64)) {
        (Some(f), Some(rs)) => json!((f.rate - rs).abs() / rs),
        _ => Value::Null,
    };
    Ok(DgdReport {
        value: json!({
            "mu": cfg.mu,
            "eta": cfg.eta,
            "status": trace.status,
            "iterations": last.t,
            "r_hat": rate_json(&curve, window),
            "rate_lower": rate_lower,
            "stability_bound": bound,
            "spectrum": spectrum,
            "relative_gap_to_spectral": agreement,
            "initial_mean_err_sq_range": first.mean_err_sq_range,
            "final_mean_err_sq_range": last.mean_err_sq_range,
            "initial_global_spread": first.global_spread,
            "final_global_spread": last.global_spread,
            "band_check": if band_pass { "pass" } else { "fail" },
        }),
        band_pass,
        diverged: trace.status == RunStatus::Diverged,
    })
}

fn run_distributed(r: &Resolved, summary: &mut Value) -> Result<i32> {
    let (ds, sp) = ds_sp(r);
    let g = r.graph.as_ref().expect("resolved with graph");
    let c = &r.config;
    let w0 = initial_stack(&c.solver, ds);
    let trace = run_dgd(ds, g, &dgd_config(&c.solver), w0.as_ref())?;
    write_table(
        &c.out,
        "dgd",
        c.format,
        io::dgd_csv(&trace.records),
        serde_json::to_value(&trace.records)?,
    )?;
    let rep = dgd_report(ds, sp, g, &c.solver, &trace)?;
    summary["laplacian_lambda_max"] = json!(linalg::lambda_max(&laplacian(g))?);
    for (k, v) in rep.value.as_object().expect("object") {
        summary[k] = v.clone();
    }
    Ok(if rep.diverged {
        EXIT_DIVERGED
    } else if rep.band_pass {
        EXIT_OK
    } else {
        EXIT_INVALID
    })
}

const SWEEP_HEADER: &str = "value,eta,m,g_pred,r_hat,eta_opt,g_opt,t_eps,total_cost,cost_scaling";

fn sweep(r: &Resolved, param: SweepParam, summary: &mut Value) -> Result<i32> {
    if param == SweepParam::Mu {
        return sweep_mu(r, summary);
    }
    let (ds, sp) = ds_sp(r);
    let c = &r.config;
    let n = ds.n();
    let eps = c.theory.epsilon.expect("resolved");
    let cf = cost_factor(Some(ds));
    let runs = c.runs.expect("resolved");
    let rows: Vec<Result<(Value, String, bool)>> = c
        .values
        .par_iter()
        .enumerate()
        .map(|(k, &value)| {
            let mut s = c.solver.clone();
            match param {
                SweepParam::M => {
                    s.m = Some(value);
                    s.eta = None;
                }
                _ => s.eta = Some(value),
            }
            let m = s.m.expect("resolved");
            let pred = optimal_rate(m, n, sp.lambda_max, sp.lambda_min_nz, DEGENERACY_TOL)?;
            let eta = *s.eta.get_or_insert(pred.eta_opt);
            let g_pred = predicted_contraction(m, n, eta, sp.lambda_max, sp.lambda_min_nz);
            let cfg = solver_config(&s);
            let ens = run_ensemble(ds, &cfg, runs, derive_seed(derive_seed(c.seed, STREAM_RUNS), k as u64))?;
            let window = ens.fit_window(s.fit_start.expect("resolved"), s.fit_end);
            let r_hat = estimate_rate(&ens.mean, window).map_or(f64::NAN, |f| f.rate);
            let cm = cost_model(m, n, ds.d(), eps, pred.g_opt, cf).ok();
            let diverged = ens.traces.iter().any(|t| t.status == RunStatus::Diverged);
            let (t_eps, total, scaling) = match cm {
                Some(cm) => (cm.t_eps, cm.total_cost, cm.cost_scaling.unwrap_or(f64::NAN)),
                None => (f64::NAN, f64::NAN, f64::NAN),
            };
            let line = [value, eta, m, g_pred, r_hat, pred.eta_opt, pred.g_opt, t_eps, total, scaling]
                .iter()
                .map(|v| io::fmt_f64(*v))
                .collect::<Vec<_>>()
                .join(",");
            let row = json!({
                "value": value, "eta": eta, "m": m, "g_pred": g_pred, "r_hat": r_hat,
                "eta_opt": pred.eta_opt, "g_opt": pred.g_opt, "branch": pred.branch,
                "t_eps": t_eps, "total_cost": total, "cost_scaling": scaling,
                "diverged": diverged,
            });
            Ok((row, line, diverged))
        })
        .collect();
    let mut csv = format!("{SWEEP_HEADER}\n");
    let mut table = Vec::new();
    let mut any_diverged = false;
    for row in rows {
        let (v, line, div) = row?;
        csv.push_str(&line);
        csv.push('\n');
        table.push(v);
        any_diverged |= div;
    }
    write_table(&c.out, "sweep", c.format, csv, Value::Array(table.clone()))?;
    summary["m_star"] = json!(sp.m_star);
    summary["sweep"] = Value::Array(table);
    // a sweep over eta is expected to cross the stability edge
    Ok(if any_diverged && param == SweepParam::M { EXIT_DIVERGED } else { EXIT_OK })
}

const MU_HEADER: &str = "mu,eta,r_hat,rate_lower,rate_spectral,sigma_min,sigma_max,band_check";

fn sweep_mu(r: &Resolved, summary: &mut Value) -> Result<i32> {
    let (ds, sp) = ds_sp(r);
    let g = r.graph.as_ref().expect("resolved with graph");
    let c = &r.config;
    let reports: Vec<Result<DgdReport>> = c
        .values
        .par_iter()
        .map(|&mu| {
            let mut s = c.solver.clone();
            s.mu = Some(mu);
            if c.solver.eta.is_none() {
                s.eta = Some(default_eta(ds, g, mu));
            }
            let trace = run_dgd(ds, g, &dgd_config(&s), initial_stack(&s, ds).as_ref())?;
            dgd_report(ds, sp, g, &s, &trace)
        })
        .collect();
    let mut csv = format!("{MU_HEADER}\n");
    let mut table = Vec::new();
    let mut code = EXIT_OK;
    for rep in reports {
        let rep = rep?;
        let v = &rep.value;
        let num = |x: Option<f64>| io::fmt_f64(x.unwrap_or(f64::NAN));
        let spec = |k: &str| v["spectrum"].get(k).and_then(Value::as_f64);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            num(v["mu"].as_f64()),
            num(v["eta"].as_f64()),
            num(v["r_hat"]["rate"].as_f64()),
            num(v["rate_lower"].as_f64()),
            num(spec("rate_spectral")),
            num(spec("sigma_min")),
            num(spec("sigma_max")),
            v["band_check"].as_str().unwrap_or("fail"),
        ));
        if rep.diverged {
            code = EXIT_DIVERGED;
        } else if !rep.band_pass && code == EXIT_OK {
            code = EXIT_INVALID;
        }
        table.push(rep.value);
    }
    write_table(&c.out, "sweep", c.format, csv, Value::Array(table.clone()))?;
    summary["sweep"] = Value::Array(table);
    Ok(code)
}

fn spectrum(r: &Resolved, summary: &mut Value) -> Result<i32> {
    let (ds, sp) = ds_sp(r);
    let c = &r.config;
    let mut csv = String::from("index,lambda\n");
    for (i, l) in sp.eigenvalues.iter().enumerate() {
        csv.push_str(&format!("{i},{}\n", io::fmt_f64(*l)));
    }
    write_table(&c.out, "eigenvalues", c.format, csv, json!(sp.eigenvalues))?;
    summary["norm_sq_range"] = json!(ds.norm_sq_range());
    if let Some(g) = &r.graph {
        let mu = c.solver.mu.unwrap_or(1.0);
        let eta = c.solver.eta.unwrap_or_else(|| default_eta(ds, g, mu));
        let (lap, _) = linalg::sym_eigen_desc(&laplacian(g))?;
        summary["laplacian_eigenvalues"] = json!(lap.as_slice());
        summary["dgd"] = json!({
            "mu": mu,
            "eta": eta,
            "stability_bound": stability_bound(ds, g, eta, mu),
            "spectrum": match dgd_operator_spectrum(ds, g, eta, mu) {
                Ok(os) => serde_json::to_value(os)?,
                Err(Error::TooLargeForDense { .. }) => json!("skipped"),
                Err(e) => return Err(e),
            },
        });
    }
    Ok(EXIT_OK)
}
