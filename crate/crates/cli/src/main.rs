//! `dpmat`: ingest a row stream into a private sliding-window summary, query
//! a saved summary, or run an accuracy/space benchmark grid.
//!
//! Exit codes: 0 success, 1 I/O or internal failure, 2 malformed row,
//! 3 norm violation under the reject policy, 64 usage error. `DPMAT_LOG`
//! sets the log level (default `warn`).

mod bench;
mod rows;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dpmat::analytics::{
    constrained_pca, cut_query, directional_variance, pca, pca_rank, regress, solver_by_name, spectral_approx, Answer,
    QueryRecord,
};
use dpmat::continual::{DyadicTree, TreeParams};
use dpmat::histogram::{Histogram, Mode, Params};
use dpmat::linalg::SymMatrix;
use dpmat::mechanisms::{NormPolicy, PrivacyBudget};
use dpmat::snapshot::{self, Snapshot};
use serde_json::json;

use rows::{parse_list, Format, RowReader};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Malformed(String),
    Norm(String),
    Io(String),
    Other(dpmat::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Malformed(_) => 2,
            CliError::Norm(_) => 3,
            CliError::Io(_) | CliError::Other(_) => 1,
        }
    }

    pub fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn io(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }

    /// Classifies an error raised while ingesting a row.
    pub fn from_ingest(e: dpmat::Error) -> Self {
        match e {
            dpmat::Error::NormViolation { .. } => CliError::Norm(e.to_string()),
            dpmat::Error::DimensionMismatch { .. } | dpmat::Error::InvalidInput(_) => {
                CliError::Malformed(e.to_string())
            }
            other => CliError::Other(other),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Malformed(m) => write!(f, "malformed input: {m}"),
            CliError::Norm(m) => write!(f, "norm violation: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Other(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "dpmat", version, about = "Differentially private sliding-window matrix summaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read rows and write a snapshot.
    Ingest(IngestArgs),
    /// Answer a query from a snapshot as JSON.
    Query(QueryArgs),
    /// Run a benchmark grid and write CSV.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Jl,
    Wishart,
    Exact,
    Tree,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Reject,
    Clip,
}

impl From<PolicyArg> for NormPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Reject => NormPolicy::Reject,
            PolicyArg::Clip => NormPolicy::Clip,
        }
    }
}

#[derive(Args, Clone)]
struct StreamArgs {
    #[arg(long, value_enum, default_value = "jl")]
    mode: ModeArg,
    #[arg(long)]
    window: Option<u64>,
    #[arg(long, default_value_t = 0.25)]
    eta: f64,
    /// `inf` disables noise calibration (σ = 0, τ = d).
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    delta: f64,
    /// Sketch rank r; defaults to the PCA rank for --k, else d.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = dpmat::histogram::DEFAULT_BETA)]
    beta: f64,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "reject")]
    norm_policy: PolicyArg,
    /// Tree mode only: store exact node sums.
    #[arg(long)]
    noise_off: bool,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    stream: StreamArgs,
    /// Row input; `-` or absent reads stdin.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Snapshot to write; a `.json` extension selects the JSON mirror.
    #[arg(long)]
    out: PathBuf,
    /// Resume from this snapshot; stream flags are then ignored.
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    snapshot: PathBuf,
    /// Write the JSON answer here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    query: QueryKind,
}

#[derive(Subcommand, Clone)]
enum QueryKind {
    /// C = ÃᵀÃ − σ²I.
    Spectral {
        #[arg(long)]
        clip: bool,
    },
    /// Rank-k projection.
    Pca {
        #[arg(long)]
        k: usize,
    },
    /// Rank-k projection from a named solver.
    Cpca {
        #[arg(long)]
        k: usize,
        #[arg(long, default_value = "svd")]
        solver: String,
    },
    /// Regress the last p columns on the rest.
    Regress {
        #[arg(long)]
        p: usize,
    },
    /// xᵀCx for a comma-separated unit vector.
    Variance {
        #[arg(long, allow_hyphen_values = true)]
        x: String,
    },
    /// √(e_SᵀCe_S) for comma-separated indices.
    Cut {
        #[arg(long)]
        set: String,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated modes among jl, wishart, exact, tree.
    #[arg(long, default_value = "exact")]
    modes: String,
    #[arg(long, default_value = "64")]
    windows: String,
    #[arg(long, default_value = "0.25")]
    etas: String,
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long, default_value_t = 4)]
    rank: usize,
    /// Rows per configuration; defaults to 2W.
    #[arg(long)]
    steps: Option<u64>,
    /// Report interval; defaults to W/4.
    #[arg(long)]
    every: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[allow(clippy::large_enum_variant)]
enum Engine {
    Hist(Histogram),
    Tree(DyadicTree),
}

impl Engine {
    fn ingest(&mut self, row: &[f64]) -> Result<(), CliError> {
        match self {
            Engine::Hist(h) => h.ingest(row),
            Engine::Tree(t) => t.ingest(row).map(drop),
        }
        .map_err(CliError::from_ingest)
    }

    fn dim(&self) -> usize {
        match self {
            Engine::Hist(h) => h.params().d,
            Engine::Tree(t) => t.params().d,
        }
    }

    fn into_snapshot(self) -> Snapshot {
        match self {
            Engine::Hist(h) => Snapshot::Histogram(h),
            Engine::Tree(t) => Snapshot::Tree(t),
        }
    }
}

fn build_engine(s: &StreamArgs, d: usize) -> Result<Engine, CliError> {
    let budget = PrivacyBudget::new(s.eps, s.delta).map_err(CliError::usage)?;
    let window = s.window.ok_or_else(|| CliError::Usage("--window is required".into()))?;
    if s.mode == ModeArg::Tree {
        let p = TreeParams::new(window, d, budget, s.seed)
            .with_noise(!s.noise_off)
            .with_norm_policy(s.norm_policy.into());
        return Ok(Engine::Tree(DyadicTree::new(p).map_err(CliError::usage)?));
    }
    if s.noise_off {
        return Err(CliError::Usage("--noise-off applies to tree mode; use --mode exact".into()));
    }
    let mode = match s.mode {
        ModeArg::Jl => Mode::Jl,
        ModeArg::Wishart => Mode::Wishart,
        _ => Mode::Exact,
    };
    if !(s.beta > 0.0 && s.beta < 1.0) {
        return Err(CliError::Usage(format!("--beta must be in (0, 1), got {}", s.beta)));
    }
    let r = s
        .rank
        .or_else(|| s.k.map(|k| pca_rank(k, s.eta, s.beta)))
        .unwrap_or(d);
    let p = Params::new(mode, window, s.eta, r, d, budget, s.seed)
        .with_beta(s.beta)
        .with_norm_policy(s.norm_policy.into());
    Ok(Engine::Hist(Histogram::new(p).map_err(CliError::usage)?))
}

fn read_snapshot(path: &Path) -> Result<Snapshot, CliError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let parsed = if bytes.first() == Some(&b'{') {
        let text = String::from_utf8(bytes).map_err(|e| CliError::Other(dpmat::Error::Corrupt(e.to_string())))?;
        snapshot::from_json(&text)
    } else {
        snapshot::from_bytes(&bytes)
    };
    parsed.map_err(CliError::Other)
}

fn write_snapshot(path: &Path, s: &Snapshot) -> Result<(), CliError> {
    let bytes = if path.extension().is_some_and(|e| e == "json") {
        snapshot::to_json(s).into_bytes()
    } else {
        snapshot::to_bytes(s)
    };
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn open_input(path: Option<&Path>) -> Result<Box<dyn io::BufRead>, CliError> {
    match path {
        None => Ok(Box::new(BufReader::new(io::stdin()))),
        Some(p) if p == Path::new("-") => Ok(Box::new(BufReader::new(io::stdin()))),
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            Ok(Box::new(BufReader::new(f)))
        }
    }
}

fn cmd_ingest(args: IngestArgs) -> Result<(), CliError> {
    let mut reader = RowReader::new(open_input(args.input.as_deref())?, args.format)?;
    let mut engine = match &args.snapshot {
        Some(path) => match read_snapshot(path)? {
            Snapshot::Histogram(h) => Some(Engine::Hist(h)),
            Snapshot::Tree(t) => Some(Engine::Tree(t)),
        },
        None => match args.stream.d.or(reader.declared_dim()) {
            Some(d) => Some(build_engine(&args.stream, d)?),
            None => None,
        },
    };
    if let (Some(e), Some(d)) = (&engine, reader.declared_dim()) {
        if e.dim() != d {
            return Err(CliError::Malformed(format!("input declares d = {d}, summary has d = {}", e.dim())));
        }
    }
    let mut count = 0u64;
    while let Some(row) = reader.next_row()? {
        let e = match &mut engine {
            Some(e) => e,
            None => engine.insert(build_engine(&args.stream, row.len())?),
        };
        e.ingest(&row).map_err(|err| match err {
            CliError::Malformed(m) => CliError::Malformed(format!("row {}: {m}", count + 1)),
            CliError::Norm(m) => CliError::Norm(format!("row {}: {m}", count + 1)),
            other => other,
        })?;
        count += 1;
    }
    let engine = match engine {
        Some(e) => e,
        None => return Err(CliError::Usage("cannot infer d from empty input; pass --d".into())),
    };
    log::info!("ingested {count} rows");
    write_snapshot(&args.out, &engine.into_snapshot())
}

fn query_matrix(snap: &Snapshot) -> Result<SymMatrix, CliError> {
    match snap {
        Snapshot::Histogram(h) => Ok(spectral_approx(h, false).map_err(CliError::Other)?.c),
        Snapshot::Tree(t) => t.query(t.now()).map_err(CliError::Other),
    }
}

fn histogram_only<'a>(snap: &'a Snapshot, what: &str) -> Result<&'a Histogram, CliError> {
    match snap {
        Snapshot::Histogram(h) => Ok(h),
        Snapshot::Tree(_) => Err(CliError::Usage(format!("{what} needs a histogram snapshot, not a tree"))),
    }
}

/// Errors from bad query arguments are usage errors; the rest are not.
fn query_error(e: dpmat::Error) -> CliError {
    match e {
        dpmat::Error::InvalidInput(_) | dpmat::Error::DimensionMismatch { .. } => CliError::usage(e),
        other => CliError::Other(other),
    }
}

fn answer(snap: &Snapshot, kind: &QueryKind) -> Result<(String, serde_json::Value, Answer), CliError> {
    Ok(match kind {
        QueryKind::Spectral { clip } => {
            let c = match snap {
                Snapshot::Histogram(h) => spectral_approx(h, *clip).map_err(CliError::Other)?.c,
                Snapshot::Tree(_) => {
                    let c = query_matrix(snap)?;
                    if *clip {
                        c.clip_psd()
                    } else {
                        c
                    }
                }
            };
            ("spectral".into(), json!({ "clip": clip }), Answer::sym(&c))
        }
        QueryKind::Pca { k } => {
            let p = pca(histogram_only(snap, "pca")?, *k).map_err(query_error)?;
            ("pca".into(), json!({ "k": k }), Answer::sym(p.matrix()))
        }
        QueryKind::Cpca { k, solver } => {
            let h = histogram_only(snap, "cpca")?;
            let s = solver_by_name(solver).map_err(CliError::usage)?;
            let p = constrained_pca(h, *k, s.as_ref()).map_err(query_error)?;
            (
                "cpca".into(),
                json!({ "k": k, "solver": solver, "gamma": s.gamma().is_finite().then(|| s.gamma()) }),
                Answer::sym(p.matrix()),
            )
        }
        QueryKind::Regress { p } => {
            let r = regress(histogram_only(snap, "regress")?, *p).map_err(query_error)?;
            ("regress".into(), json!({ "p": p, "objective": r.objective }), Answer::matrix(&r.x))
        }
        QueryKind::Variance { x } => {
            let x: Vec<f64> = parse_list(x, "--x")?;
            let v = directional_variance(&query_matrix(snap)?, &x).map_err(query_error)?;
            ("variance".into(), json!({ "x": x }), Answer::Scalar(v))
        }
        QueryKind::Cut { set } => {
            let set: Vec<usize> = parse_list(set, "--set")?;
            let v = cut_query(&query_matrix(snap)?, &set).map_err(query_error)?;
            ("cut".into(), json!({ "set": set }), Answer::Scalar(v))
        }
    })
}

fn cmd_query(args: QueryArgs) -> Result<(), CliError> {
    let snap = read_snapshot(&args.snapshot)?;
    let (query, params, answer) = answer(&snap, &args.query)?;
    let (budget, eta, seed) = match &snap {
        Snapshot::Histogram(h) => (h.params().budget, h.params().eta, h.params().seed),
        Snapshot::Tree(t) => (t.params().budget, 0.0, t.params().seed),
    };
    let record = QueryRecord {
        query,
        params,
        answer,
        mode: snap.mode_name().to_string(),
        epsilon: budget.epsilon(),
        delta: budget.delta(),
        eta,
        seed,
    };
    let text = serde_json::to_string_pretty(&record).map_err(|e| CliError::Io(e.to_string()))?;
    match &args.out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => writeln!(io::stdout(), "{text}").map_err(CliError::io),
    }
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let modes: Vec<String> = parse_list(&args.modes, "--modes")?;
    for m in &modes {
        if !["jl", "wishart", "exact", "tree"].contains(&m.as_str()) {
            return Err(CliError::Usage(format!("unknown mode {m:?}")));
        }
    }
    let grid = bench::Grid {
        modes,
        windows: parse_list(&args.windows, "--windows")?,
        etas: parse_list(&args.etas, "--etas")?,
        d: args.d,
        rank: args.rank,
        steps: args.steps,
        every: args.every,
        budget: PrivacyBudget::new(args.eps, args.delta).map_err(CliError::usage)?,
        seed: args.seed,
    };
    match &args.out {
        Some(p) => {
            let f = File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            let mut w = BufWriter::new(f);
            bench::run(&grid, &mut w)?;
            w.flush().map_err(CliError::io)
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            bench::run(&grid, &mut w)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DPMAT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Query(a) => cmd_query(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dpmat: {e}");
            ExitCode::from(e.code())
        }
    }
}
