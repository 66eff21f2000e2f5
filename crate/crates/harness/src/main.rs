use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use glpn_core::glpn::{self, io as params_io};
use glpn_harness::config::{parse_graph_kind, ExperimentConfig};
use glpn_harness::experiment::{run_experiment, tables, write_outputs, ExperimentError};
use glpn_harness::ingest::{ingest, AdjacencySource, IngestError, IngestSpec};
use glpn_harness::methods::{run_method, Method};
use glpn_harness::synthetic::{gen_synthetic, SyntheticSpec};
use glpn_harness::verify::{run_bounds, violations, Which, DEFAULT_TRIALS};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_BOUND: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(name = "glpn", version, about = "Graph imputation experiments and energy-bound checks")]
struct Cli {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment config in key = value format.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic graph signal as features.csv and edges.csv.
    Gen {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        d: usize,
        /// grid, erdos-renyi:<p> or ring:<k>
        #[arg(long, default_value = "grid")]
        graph: String,
        #[arg(long, default_value_t = 8)]
        smoothness: usize,
    },
    /// Impute the missing entries of a CSV data set.
    Impute(ImputeArgs),
    /// Check the energy bounds on random instances; writes bounds.jsonl.
    Verify {
        /// eq2, prop32, eq10, prop51, appendixD or all
        #[arg(long, default_value = "all")]
        which: String,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
    },
    /// Run the experiment grid and write the report and tables.
    Bench,
    /// Run the experiment grid and print the relative energy gaps.
    Energy,
}

#[derive(Args)]
struct ImputeArgs {
    #[arg(long)]
    features: PathBuf,
    /// The features file starts with a header line.
    #[arg(long)]
    header: bool,
    #[arg(long, conflicts_with = "distances")]
    edges: Option<PathBuf>,
    #[arg(long, requires = "sigma")]
    distances: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value = "glpn")]
    method: String,
}

enum Failure {
    Usage(String),
    Data(String),
    Bound(String),
    Divergence(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Bound(_) => EXIT_BOUND,
            Failure::Divergence(_) => EXIT_DIVERGENCE,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Bound(m) | Failure::Divergence(m) => m,
        }
    }
}

impl From<glpn_core::Error> for Failure {
    fn from(e: glpn_core::Error) -> Self {
        match e {
            glpn_core::Error::TrainingDivergence { .. } => Failure::Divergence(e.to_string()),
            glpn_core::Error::InvalidParameter(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(m) => Failure::Usage(m),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn write(path: &Path, body: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Failure::Data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, body).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn matrix_csv(m: &glpn_core::DenseMatrix) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn experiment_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            ExperimentConfig::parse(&text).map_err(|e| Failure::Usage(e.to_string()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn run_grid(cli: &Cli, print_energy: bool) -> Result<(), Failure> {
    let cfg = experiment_config(cli)?;
    let run = run_experiment(&cfg)?;
    let dir = out_dir(cli, Some(&cfg));
    write_outputs(&run, &dir)?;
    let tabs = tables(&run.report);
    let shown = if print_energy { &tabs[1].1 } else { &tabs[0].1 };
    print!("{shown}");
    eprintln!("wrote {}", dir.display());
    let failed = run.report.failed_cells();
    if failed == 0 {
        return Ok(());
    }
    let msg = format!("{failed} of {} cells failed", run.report.cells.len());
    Err(if run.report.any_divergence() {
        Failure::Divergence(msg)
    } else {
        Failure::Data(msg)
    })
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Gen {
            n,
            d,
            graph,
            smoothness,
        } => {
            let spec = SyntheticSpec {
                n: *n,
                d: *d,
                kind: parse_graph_kind(graph).map_err(Failure::Usage)?,
                smoothness: *smoothness,
            };
            let g = gen_synthetic(&spec, seed)?;
            let dir = out_dir(cli, None);
            write(&dir.join("features.csv"), matrix_csv(g.features()).as_bytes())?;
            let a = g.adjacency();
            let mut edges = String::new();
            for i in 0..a.rows() {
                for j in i + 1..a.cols() {
                    if a.get(i, j) != 0.0 {
                        edges.push_str(&format!("{i},{j},{}\n", a.get(i, j)));
                    }
                }
            }
            write(&dir.join("edges.csv"), edges.as_bytes())?;
            eprintln!("wrote {}", dir.display());
            Ok(())
        }
        Command::Impute(args) => impute(cli, args, seed),
        Command::Verify { which, trials } => {
            let which: Which = which.parse().map_err(|e: glpn_core::Error| Failure::Usage(e.to_string()))?;
            let reports = run_bounds(which, *trials, seed)?;
            let body = glpn_core::energy::to_jsonl(&reports);
            match &cli.out {
                Some(dir) => write(&dir.join("bounds.jsonl"), body.as_bytes())?,
                None => print!("{body}"),
            }
            let mut failed = Vec::new();
            for (id, bad, total) in violations(&reports) {
                eprintln!("{id}: {bad} of {total} violated");
                if bad > 0 {
                    failed.push(id.to_string());
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Bound(format!("violations in {}", failed.join(", "))))
            }
        }
        Command::Bench => run_grid(cli, false),
        Command::Energy => run_grid(cli, true),
    }
}

fn impute(cli: &Cli, args: &ImputeArgs, seed: u64) -> Result<(), Failure> {
    let adjacency = match (&args.edges, &args.distances) {
        (Some(e), None) => AdjacencySource::Edges(e.clone()),
        (None, Some(path)) => AdjacencySource::Distances {
            path: path.clone(),
            sigma: args.sigma.expect("clap requires sigma"),
            threshold: args.threshold,
        },
        _ => return Err(Failure::Usage("give exactly one of --edges and --distances".into())),
    };
    let spec = IngestSpec {
        features: args.features.clone(),
        header: args.header,
        adjacency,
        mask: args.mask.clone(),
    };
    let method: Method = args.method.parse()?;
    let ds = ingest(&spec)?;
    let mut model = experiment_config(cli)?.model;
    model.train.seed = seed;
    let dir = out_dir(cli, None);
    let x_hat = match method {
        Method::Glpn(_) | Method::GlpnWithoutResidual | Method::GlpnWithoutPyramid => {
            match method {
                Method::Glpn(draft) => model.draft = draft,
                Method::GlpnWithoutResidual => model.residual = false,
                _ => model.pyramid = false,
            }
            let (m, trained) = glpn::train(&ds.graph, &model)?;
            write(&dir.join("params.bin"), &params_io::to_bytes(&trained.params, &model)?)?;
            m.predict(&trained.params, &ds.graph)?
        }
        other => run_method(other, &ds.graph, &model)?.x_hat,
    };
    let original = ds.record.unscale(&x_hat)?;
    write(&dir.join("imputed.csv"), matrix_csv(&original).as_bytes())?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
