//! Command-line entry points behind the `seqcorr` binary.
//!
//! Exit codes: 0 success, 1 unexpected failure, 2 unmet precondition
//! (missing or invalid input, refused replay), 3 verification mismatch.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{run_benchmark, write_outputs, BenchmarkConfig};
use crate::dstar::{all_slots, build_library, exhaustive_dstar, DStarLibrary, OptimizerConfig};
use crate::error::Error;
use crate::rewards::Scenario;
use crate::service::{library_path_for, load_scenario_dir, serve, AppState, ServiceConfig};
use crate::sim::{replay_jsonl, Engine, InferenceModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PRECONDITION: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "seqcorr", version, about = "Reward inference from sequences of physical corrections")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the D* library for a scenario.
    Precompute(PrecomputeArgs),
    /// Run simulated-corrector episodes and report accuracy.
    Benchmark(BenchmarkArgs),
    /// Re-execute episode logs and check their belief traces.
    Replay(ReplayArgs),
    /// Serve live sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PrecomputeArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub kmax: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Slot assignments sampled per entry.
    #[arg(long, default_value_t = 200)]
    pub t_max: usize,
    #[arg(long, default_value_t = 300)]
    pub inner_iterations: usize,
    /// Library path; defaults to `<scenario stem>.dstar.json` beside the
    /// scenario. Matching entries already there are kept.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also solve every entry exhaustively on a force grid and report the gap.
    #[arg(long)]
    pub oracle: bool,
    /// Grid spacing for `--oracle`.
    #[arg(long, default_value_t = 0.1)]
    pub grid: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Sequence,
    Independent,
    Final,
    All,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
    pub model: Vec<ModelArg>,
    #[arg(long, default_value_t = 50)]
    pub episodes: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.3")]
    pub sigma: Vec<f64>,
    #[arg(long)]
    pub seed: u64,
    /// Library path; defaults to `<scenario stem>.dstar.json`.
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long, default_value = "benchmark-out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Log files, or directories searched recursively for `*.jsonl`.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// Refuse logs recorded under a different model.
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory of scenario files (with optional `<stem>.dstar.json`
    /// libraries).
    #[arg(long)]
    pub scenarios: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 5.0)]
    pub tick_rate: f64,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidScenario(_)
        | Error::InvalidHyperparameter(_)
        | Error::LibraryMiss(_)
        | Error::InfeasibleK { .. }
        | Error::Log(_)
        | Error::Io(_)
        | Error::Json(_) => EXIT_PRECONDITION,
        _ => EXIT_FAILURE,
    }
}

fn fail(e: Error) -> i32 {
    eprintln!("error: {e}");
    exit_code(&e)
}

fn models_of(args: &[ModelArg]) -> Vec<InferenceModel> {
    let mut out = Vec::new();
    for a in args {
        let add: &[InferenceModel] = match a {
            ModelArg::Sequence => &[InferenceModel::Sequence],
            ModelArg::Independent => &[InferenceModel::Independent],
            ModelArg::Final => &[InferenceModel::Final],
            ModelArg::All => &InferenceModel::ALL,
        };
        for m in add {
            if !out.contains(m) {
                out.push(*m);
            }
        }
    }
    out
}

pub fn precompute(args: &PrecomputeArgs) -> i32 {
    let scenario = match Scenario::load(&args.scenario) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let out = args.out.clone().unwrap_or_else(|| library_path_for(&args.scenario));
    let engine = match Engine::with_defaults(scenario.clone(), None) {
        Ok(e) => e,
        Err(e) => return fail(e),
    };
    let opt = OptimizerConfig {
        t_max: args.t_max,
        inner_iterations: args.inner_iterations,
        seed: args.seed,
        ..OptimizerConfig::for_scenario(&scenario)
    };
    let existing = if out.exists() {
        match DStarLibrary::load(&out) {
            Ok(l) => Some(l),
            Err(e) => return fail(e),
        }
    } else {
        None
    };
    let evidence = engine.config().evidence;
    let library = match build_library(&scenario, engine.initial_plan(), args.kmax, &evidence, &opt, existing) {
        Ok(l) => l,
        Err(e) => return fail(e),
    };
    if let Err(e) = library.save(&out) {
        return fail(e);
    }
    println!("{:<8} {:>3} {:>14}  slots (time, agent)", "theta", "K", "D*");
    for t in 0..scenario.num_candidates() {
        for k in 1..=args.kmax {
            let e = library.get(&scenario.id, t, k).expect("just built");
            let slots: Vec<String> = e.times.iter().zip(&e.agents).map(|(t, a)| format!("({t},{a})")).collect();
            println!("{t:<8} {k:>3} {:>14.6}  {}", e.dstar, slots.join(" "));
        }
    }
    println!("wrote {} entries to {}", library.len(), out.display());

    if args.oracle {
        return oracle(&scenario, &engine, &library, args);
    }
    EXIT_OK
}

fn oracle(scenario: &Scenario, engine: &Engine, library: &DStarLibrary, args: &PrecomputeArgs) -> i32 {
    let per_axis = 2.0 * (scenario.hyperparameters.force_bound / args.grid).round() + 1.0;
    let slots = all_slots(scenario).len() as f64;
    let mut worst_gap: f64 = 0.0;
    println!("{:<8} {:>3} {:>14} {:>14} {:>9}", "theta", "K", "exhaustive", "sampled", "gap");
    for t in 0..scenario.num_candidates() {
        for k in 1..=args.kmax {
            let work = slots.powi(k as i32) * per_axis.powi(2 * k as i32);
            if work > 1e10 {
                eprintln!("error: exhaustive search for K = {k} is too large ({work:.1e} evaluations)");
                return EXIT_PRECONDITION;
            }
            let ex = match exhaustive_dstar(
                engine.initial_plan(),
                &scenario.theta(t),
                k,
                &engine.config().evidence,
                args.grid,
                scenario.hyperparameters.force_bound,
                scenario,
            ) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            let mc = library.get(&scenario.id, t, k).expect("built").dstar;
            let range = (ex.best.dstar - ex.worst).max(f64::MIN_POSITIVE);
            let gap = (ex.best.dstar - mc) / range;
            worst_gap = worst_gap.max(gap);
            println!("{t:<8} {k:>3} {:>14.6} {mc:>14.6} {:>8.3}%", ex.best.dstar, 100.0 * gap);
        }
    }
    if worst_gap > 0.02 {
        println!("oracle gap {:.3}% exceeds 2%", 100.0 * worst_gap);
        return EXIT_MISMATCH;
    }
    println!("oracle gap {:.3}% within 2%", 100.0 * worst_gap);
    EXIT_OK
}

pub fn benchmark(args: &BenchmarkArgs) -> i32 {
    let scenario = match Scenario::load(&args.scenario) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let models = models_of(&args.model);
    let lib_path = args.library.clone().unwrap_or_else(|| library_path_for(&args.scenario));
    let library = if lib_path.exists() {
        match DStarLibrary::load(&lib_path) {
            Ok(l) => Some(l),
            Err(e) => return fail(e),
        }
    } else {
        None
    };
    let engine = match Engine::with_defaults(scenario, library) {
        Ok(e) => Arc::new(e),
        Err(e) => return fail(e),
    };
    if models.contains(&InferenceModel::Sequence) && engine.check_model(InferenceModel::Sequence).is_err() {
        eprintln!(
            "error: no usable D* library at {}; run `seqcorr precompute --scenario {}` first",
            lib_path.display(),
            args.scenario.display()
        );
        return EXIT_PRECONDITION;
    }
    let cfg = BenchmarkConfig {
        models,
        episodes: args.episodes,
        sigmas: args.sigma.clone(),
        seed: args.seed,
    };
    let outcome = match run_benchmark(engine, &cfg) {
        Ok(o) => o,
        Err(e) => return fail(e),
    };
    if let Err(e) = write_outputs(&args.out, &outcome) {
        return fail(e);
    }
    println!("{:<12} {:>6} {:>9} {:>16} {:>8}", "model", "sigma", "episodes", "accuracy", "mean K");
    for r in &outcome.summary.results {
        println!(
            "{:<12} {:>6} {:>9} {:>7.1}% ± {:>5.1}% {:>8.2}",
            r.model.as_str(),
            r.sigma,
            r.episodes,
            100.0 * r.accuracy,
            100.0 * r.accuracy_std,
            r.mean_corrections
        );
    }
    println!("wrote {}", args.out.display());
    EXIT_OK
}

fn collect_logs(path: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() || p.extension().is_some_and(|x| x == "jsonl") {
                collect_logs(&p, out)?;
            }
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

pub fn replay(args: &ReplayArgs) -> i32 {
    let expected = args.model.and_then(|m| models_of(&[m]).first().copied().filter(|_| m != ModelArg::All));
    let mut paths = Vec::new();
    for p in &args.logs {
        if let Err(e) = collect_logs(p, &mut paths) {
            return fail(e.into());
        }
    }
    let mut code = EXIT_OK;
    for path in &paths {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(e.into()),
        };
        match replay_jsonl(&text, expected) {
            Ok(report) => match report.divergence {
                None => println!("PASS {} ({} records)", path.display(), report.records),
                Some(d) => {
                    println!(
                        "FAIL {}: line {} ({}) at {}: logged {} but replay produced {}",
                        path.display(),
                        d.line,
                        d.kind,
                        if d.path.is_empty() { "/" } else { &d.path },
                        d.expected,
                        d.actual
                    );
                    code = EXIT_MISMATCH;
                }
            },
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return exit_code(&e);
            }
        }
    }
    code
}

pub fn serve_command(args: &ServeArgs) -> i32 {
    let engines = match load_scenario_dir(&args.scenarios) {
        Ok(e) => e,
        Err(e) => return fail(e),
    };
    if let Some(dir) = &args.log_dir {
        if let Err(e) = std::fs::create_dir_all(dir) {
            return fail(e.into());
        }
    }
    let config = ServiceConfig {
        log_dir: args.log_dir.clone(),
        default_tick_rate: args.tick_rate,
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => return fail(e.into()),
    };
    runtime.block_on(async {
        let listener = match tokio::net::TcpListener::bind(&args.addr).await {
            Ok(l) => l,
            Err(e) => return fail(e.into()),
        };
        for e in &engines {
            println!("scenario {} (library K max {})", e.scenario().id, e.library_k_max());
        }
        println!("listening on http://{}", listener.local_addr().map_or(args.addr.clone(), |a| a.to_string()));
        match serve(listener, AppState::new(engines, config)).await {
            Ok(()) => EXIT_OK,
            Err(e) => fail(e.into()),
        }
    })
}

pub fn run(cli: Cli) -> i32 {
    match &cli.command {
        Command::Precompute(a) => precompute(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Replay(a) => replay(a),
        Command::Serve(a) => serve_command(a),
    }
}

/// Parses the process arguments, sets up logging, and runs.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run(Cli::parse())
}
