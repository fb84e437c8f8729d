//! Command-line front end to `interp_gd::experiment`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use interp_gd::distributed::GraphKind;
use interp_gd::experiment::{
    run_experiment, Algorithm, Command, DatasetSpec, ExperimentConfig, GraphSpec, InitSpec,
    OutputFormat, SweepParam,
};
use interp_gd::problem::DatasetKind;
use interp_gd::solvers::Sampler;
use interp_gd::{Error, Result};

#[derive(Parser)]
#[command(name = "igd", version, about = "GD, minibatch SGD and distributed GD in the interpolation regime")]
struct Cli {
    /// JSON experiment config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Ensemble size.
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset (and graph) and write it out.
    Gen(Opts),
    /// Closed-form rate predictions.
    Theory(Opts),
    /// Run a solver.
    Run {
        #[arg(value_enum)]
        algorithm: Algo,
        #[command(flatten)]
        opts: Opts,
    },
    /// Sweep one parameter, predicted vs measured rates.
    Sweep {
        #[arg(value_enum)]
        param: Param,
        #[command(flatten)]
        opts: Opts,
    },
    /// Hessian, Laplacian and DGD operator spectra.
    Spectrum(Opts),
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Gd,
    Sgd,
    Dgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    M,
    Eta,
    Mu,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Orthonormal,
    Gaussian,
    Spiked,
}

#[derive(Clone, Copy, ValueEnum)]
enum Graph {
    Complete,
    Ring,
    Path,
    Grid,
    KRing,
    ErdosRenyi,
}

#[derive(Args, Default)]
struct Opts {
    #[arg(long)]
    preset: Option<String>,
    /// Dataset JSON file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    data_seed: Option<u64>,

    #[arg(long, value_enum)]
    graph: Option<Graph>,
    /// Graph JSON file.
    #[arg(long)]
    graph_file: Option<PathBuf>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    graph_seed: Option<u64>,

    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    stop_tol: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, value_enum)]
    init: Option<Init>,
    #[arg(long)]
    fit_start: Option<usize>,
    #[arg(long)]
    fit_end: Option<usize>,

    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambdan: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,

    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Bernoulli,
    Fixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Zero,
    Random,
}

fn graph_kind(o: &Opts, g: Graph) -> Result<GraphKind> {
    let need = |v: Option<usize>, name: &str| {
        v.ok_or_else(|| Error::InvalidGraphSpec(format!("--graph needs --{name}")))
    };
    Ok(match g {
        Graph::Complete => GraphKind::Complete,
        Graph::Ring => GraphKind::Ring,
        Graph::Path => GraphKind::Path,
        Graph::Grid => GraphKind::Grid {
            rows: need(o.rows, "rows")?,
            cols: need(o.cols, "cols")?,
        },
        Graph::KRing => GraphKind::KRing { k: need(o.k, "k")? },
        Graph::ErdosRenyi => GraphKind::ErdosRenyi {
            p: o.p.ok_or_else(|| Error::InvalidGraphSpec("--graph erdos-renyi needs --p".into()))?,
        },
    })
}

fn apply(cfg: &mut ExperimentConfig, o: &Opts) -> Result<()> {
    let is_theory = cfg.command == Command::Theory;
    if let Some(name) = &o.preset {
        cfg.dataset = Some(DatasetSpec::Preset { name: name.clone() });
    } else if let Some(path) = &o.dataset {
        cfg.dataset = Some(DatasetSpec::File { path: path.clone() });
    } else if let Some(kind) = o.kind {
        let (n, d) = match (o.n, o.d) {
            (Some(n), Some(d)) => (n, d),
            _ => return Err(Error::InvalidConfig("--kind needs --n and --d".into())),
        };
        cfg.dataset = Some(DatasetSpec::Generate {
            n,
            d,
            kind: match kind {
                Kind::Orthonormal => DatasetKind::Orthonormal,
                Kind::Gaussian => DatasetKind::Gaussian,
                Kind::Spiked => DatasetKind::Spiked { rho: o.rho },
            },
            normalize: o.normalize,
            seed: o.data_seed,
        });
    }
    if let Some(path) = &o.graph_file {
        cfg.graph = Some(GraphSpec::File { path: path.clone() });
    } else if let Some(g) = o.graph {
        cfg.graph = Some(GraphSpec::Generate {
            kind: graph_kind(o, g)?,
            seed: o.graph_seed,
        });
    }

    let s = &mut cfg.solver;
    s.eta = o.eta.or(s.eta);
    s.m = o.m.map(|m| m as f64).or(s.m);
    if let Some(sm) = o.sampler {
        s.sampler = Some(match sm {
            SamplerArg::Bernoulli => Sampler::Bernoulli,
            SamplerArg::Fixed => Sampler::Fixed,
        });
    }
    s.max_iters = o.iters.or(s.max_iters);
    s.stop_tol = o.stop_tol.or(s.stop_tol);
    s.mu = o.mu.or(s.mu);
    if let Some(i) = o.init {
        s.init = Some(match i {
            Init::Zero => InitSpec::Zero,
            Init::Random => InitSpec::Random,
        });
    }
    s.fit_start = o.fit_start.or(s.fit_start);
    s.fit_end = o.fit_end.or(s.fit_end);

    let t = &mut cfg.theory;
    if is_theory {
        t.n = o.n.or(t.n);
        t.d = o.d.or(t.d);
    }
    t.lambda1 = o.lambda1.or(t.lambda1);
    t.lambdan = o.lambdan.or(t.lambdan);
    t.epsilon = o.epsilon.or(t.epsilon);
    if !o.values.is_empty() {
        cfg.values = o.values.clone();
    }
    Ok(())
}

fn build(cli: &Cli) -> Result<ExperimentConfig> {
    let (command, opts) = match &cli.cmd {
        Cmd::Gen(o) => (Command::Gen, o),
        Cmd::Theory(o) => (Command::Theory, o),
        Cmd::Spectrum(o) => (Command::Spectrum, o),
        Cmd::Run { algorithm, opts } => (
            Command::Run {
                algorithm: match algorithm {
                    Algo::Gd => Algorithm::Gd,
                    Algo::Sgd => Algorithm::Sgd,
                    Algo::Dgd => Algorithm::Dgd,
                },
            },
            opts,
        ),
        Cmd::Sweep { param, opts } => (
            Command::Sweep {
                param: match param {
                    Param::M => SweepParam::M,
                    Param::Eta => SweepParam::Eta,
                    Param::Mu => SweepParam::Mu,
                },
            },
            opts,
        ),
    };
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::new(command, "out"),
    };
    cfg.command = command;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.runs = cli.runs.or(cfg.runs);
    if let Some(f) = cli.format {
        cfg.format = match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        };
    }
    apply(&mut cfg, opts)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build(&cli).and_then(|cfg| run_experiment(&cfg));
    match result {
        Ok(outcome) => {
            let out = outcome.summary["config"]["out"].as_str().unwrap_or("").to_string();
            eprintln!("wrote {out}/summary.json (exit {})", outcome.exit_code);
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
