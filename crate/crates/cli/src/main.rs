use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hawkes_core::experiments::{
    run_benchmark, run_consistency_study, BenchmarkConfig, ConsistencyConfig, SyntheticRecipe,
};
use hawkes_core::io::{
    ingest_grouped_posts, ingest_lobster, read_events_file, write_events_file, write_trace_file, GroupMapping,
    IngestSummary, LobsterMapping, ParamsFile, RunConfig,
};
use hawkes_core::simulate::{simulate_cluster, simulate_thinning};
use hawkes_core::{
    branching_matrix, spectral_radius, stationary_mean_intensity, Algorithm, Error, EventSequence, SimConfig,
};

const THREADS_VAR: &str = "HAWKES_MLE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "hawkes-mle", version, about = "Multivariate Hawkes process simulation and regularized MLE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Cluster,
    Thinning,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an event stream from the config's `params` (or `init`).
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config horizon.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Cluster)]
        method: Method,
    },
    /// Fit the regularized likelihood to an event file.
    Fit {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config algorithm.
        #[arg(long)]
        algo: Option<Algorithm>,
        /// Overrides the config iteration budget.
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        allow_noncompliant_hp: bool,
    },
    /// Compare the three solvers on synthetic instances.
    Benchmark {
        #[arg(long, conflicts_with = "recipe", required_unless_present = "recipe")]
        config: Option<PathBuf>,
        /// Built-in recipe such as `exp-k10` or `pwl-k10`.
        #[arg(long)]
        recipe: Option<String>,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        allow_noncompliant_hp: bool,
    },
    /// Parameter error against a known truth at several horizons.
    Consistency {
        /// Defaults to the built-in two-dimensional study.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the branching matrix, its spectral radius and the mean intensity.
    CheckStationarity {
        #[arg(long)]
        params: PathBuf,
    },
    /// Convert LOBSTER-style order-book messages to an event file.
    IngestLobster {
        #[arg(long)]
        messages: PathBuf,
        /// Defaults to the six-type limit/market/cancel by side mapping.
        #[arg(long)]
        types: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a `time,group` posting log to an event file.
    IngestMemetracker {
        #[arg(long)]
        posts: PathBuf,
        #[arg(long)]
        groups: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Dimension { .. } | Error::Io(_) => 1,
        Error::Domain(_)
        | Error::NonStationary { .. }
        | Error::Infeasible(_)
        | Error::MaxEventsExceeded { .. }
        | Error::InvariantViolation(_) => 2,
        Error::Data { .. } | Error::Csv(_) | Error::Json(_) => 3,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_VAR} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: noncompliant hyperparameters: {w}");
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn print_summary(summary: &IngestSummary, events: &EventSequence) {
    println!(
        "rows: {}, kept: {}, unmapped: {}, malformed: {}",
        summary.rows, summary.kept, summary.unmapped, summary.malformed
    );
    println!("horizon: {}", events.horizon());
}

fn simulate(config: &Path, horizon: Option<f64>, seed: u64, out: &Path, method: Method) -> Result<(), Error> {
    let cfg = RunConfig::read(config)?.resolve(true)?;
    let horizon = horizon.unwrap_or(cfg.horizon);
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("horizon must be finite and >= 0, got {horizon}")));
    }
    let lambda = stationary_mean_intensity(&cfg.spec, &cfg.sim_params)?;
    let sim = SimConfig::new(seed);
    let events = match method {
        Method::Cluster => simulate_cluster(&cfg.spec, &cfg.sim_params, horizon, &sim)?,
        Method::Thinning => simulate_thinning(&cfg.spec, &cfg.sim_params, horizon, &sim)?,
    };
    write_events_file(&events, out)?;
    println!("events: {}", events.len());
    for (i, (n, l)) in events.counts(cfg.spec.dim()).iter().zip(&lambda).enumerate() {
        let rate = if horizon > 0.0 { *n as f64 / horizon } else { 0.0 };
        println!("type {i}: count {n}, empirical rate {rate:.6}, stationary rate {l:.6}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit(
    events: &Path,
    config: &Path,
    algo: Option<Algorithm>,
    iters: Option<usize>,
    out: &Path,
    trace: Option<&Path>,
    allow_noncompliant: bool,
) -> Result<(), Error> {
    let cfg = RunConfig::read(config)?.resolve(allow_noncompliant)?;
    warn_all(&cfg.warnings);
    let events = read_events_file(events, cfg.horizon, Some(cfg.spec.dim()))?;
    let problem = cfg.problem(events)?;
    let algorithm = algo.unwrap_or(cfg.algorithm);
    let mut hyper = cfg.hyper.clone();
    if let Some(n) = iters {
        hyper.max_iters = n;
    }
    let result = algorithm.run(&problem, &hyper, &cfg.init)?;
    ParamsFile::from_fit(&cfg.spec, &result).write(out)?;
    if let Some(path) = trace {
        write_trace_file(&result.trace, path)?;
    }
    println!("algorithm: {algorithm}");
    println!("iterations: {}", result.stats.iterations);
    println!("objective: {}", result.objective);
    if algorithm == Algorithm::AaIpalm {
        println!(
            "aa accepted: {}, rejected: {}, restarts: {}",
            result.stats.aa_accepted, result.stats.aa_rejected, result.stats.restarts
        );
    }
    Ok(())
}

fn benchmark(
    config: Option<&Path>,
    recipe: Option<&str>,
    iters: usize,
    seeds: u64,
    out: &Path,
    allow_noncompliant: bool,
) -> Result<(), Error> {
    let cfg = match (config, recipe) {
        (Some(path), _) => read_json::<BenchmarkConfig>(path)?,
        (None, Some(name)) => BenchmarkConfig::new(SyntheticRecipe::by_name(name)?, iters, (0..seeds).collect()),
        (None, None) => return Err(Error::Config("one of --config or --recipe is required".into())),
    };
    let mut hyper = match &cfg.hyper {
        Some(h) => h.clone(),
        None => cfg.recipe.generate()?.hyper,
    };
    hyper.max_iters = cfg.iters;
    hyper.validate()?;
    let warnings = hyper.compliance();
    warn_all(&warnings);
    if !warnings.is_empty() && !allow_noncompliant {
        return Err(Error::Config(
            "noncompliant hyperparameters (pass --allow-noncompliant-hp to run anyway)".into(),
        ));
    }
    let report = run_benchmark(&cfg)?;
    report.write(out)?;
    for alg in &cfg.algorithms {
        println!("{alg}: median final objective {}", report.median_final_objective(*alg));
    }
    println!("report written to {}", out.display());
    Ok(())
}

fn consistency(config: Option<&Path>, out: &Path) -> Result<(), Error> {
    let cfg = match config {
        Some(path) => read_json::<ConsistencyConfig>(path)?,
        None => ConsistencyConfig::default_k2(),
    };
    let report = run_consistency_study(&cfg)?;
    report.write(out)?;
    for (horizon, err) in report.medians() {
        println!("horizon {horizon}: median relative error {err:.6}");
    }
    println!("report written to {}", out.display());
    Ok(())
}

fn check_stationarity(path: &Path) -> Result<(), Error> {
    let file = ParamsFile::read(path)?;
    let spec = file.spec()?;
    let params = file.params()?;
    params.validate(&spec)?;
    let g = branching_matrix(&spec, &params)?;
    let radius = spectral_radius(&g);
    println!("branching matrix G:");
    for row in g.row_iter() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.6}")).collect();
        println!("  [{}]", cells.join(", "));
    }
    println!("spectral radius: {radius}");
    let lambda = stationary_mean_intensity(&spec, &params)?;
    let cells: Vec<String> = lambda.iter().map(|x| format!("{x:.6}")).collect();
    println!("stationary mean intensity: [{}]", cells.join(", "));
    Ok(())
}

fn ingest_lobster_cmd(messages: &Path, types: Option<&Path>, out: &Path) -> Result<(), Error> {
    let mapping = match types {
        Some(p) => LobsterMapping::read(p)?,
        None => LobsterMapping::six_type(),
    };
    let (events, summary) = ingest_lobster(std::fs::File::open(messages)?, &mapping)?;
    write_events_file(&events, out)?;
    print_summary(&summary, &events);
    Ok(())
}

fn ingest_memetracker(posts: &Path, groups: &Path, out: &Path) -> Result<(), Error> {
    let mapping = GroupMapping::read(groups)?;
    let (events, summary) = ingest_grouped_posts(std::fs::File::open(posts)?, &mapping)?;
    write_events_file(&events, out)?;
    print_summary(&summary, &events);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { config, horizon, seed, out, method } => simulate(&config, horizon, seed, &out, method),
        Command::Fit { events, config, algo, iters, out, trace, allow_noncompliant_hp } => {
            fit(&events, &config, algo, iters, &out, trace.as_deref(), allow_noncompliant_hp)
        }
        Command::Benchmark { config, recipe, iters, seeds, out, allow_noncompliant_hp } => {
            benchmark(config.as_deref(), recipe.as_deref(), iters, seeds, &out, allow_noncompliant_hp)
        }
        Command::Consistency { config, out } => consistency(config.as_deref(), &out),
        Command::CheckStationarity { params } => check_stationarity(&params),
        Command::IngestLobster { messages, types, out } => ingest_lobster_cmd(&messages, types.as_deref(), &out),
        Command::IngestMemetracker { posts, groups, out } => ingest_memetracker(&posts, &groups, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
