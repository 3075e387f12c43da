//! Command line interface: catalog validation, query planning, simulated
//! execution, and the strategy benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wsms::bench::{bench_csv, generated_catalogs, run_bench};
use wsms::catalog::{load_catalog, parse_catalog, validate_catalog, Catalog};
use wsms::costmodel::ProfilerStats;
use wsms::executor::execute_plan;
use wsms::planner::strategy::strategy;
use wsms::simfabric::SimFabric;
use wsms::sqlfront::{parse_query, validate_query};

#[derive(Parser)]
#[command(name = "wsms", about = "Web service query planning over a simulated service fabric")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a catalog file and report every violation.
    Validate {
        #[arg(long)]
        catalog: PathBuf,
    },
    /// Plan a query and print the execution plan and its cost estimate.
    Plan {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Plan and execute a query against the simulated fabric.
    Run {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Relative call-time jitter amplitude, in [0, 1).
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        /// Print the plan before the results.
        #[arg(long)]
        explain: bool,
        /// Print the per-invocation trace after the results.
        #[arg(long)]
        trace: bool,
    },
    /// Run every strategy over a set of catalogs and emit a CSV report.
    Bench {
        /// Directory of catalog JSON files (alternative to --generate).
        #[arg(long, conflicts_with = "generate")]
        catalogs: Option<PathBuf>,
        /// Number of catalogs to generate instead of reading a directory.
        #[arg(long)]
        generate: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    query: String,
    #[arg(long, default_value = "greedy_heur")]
    strategy: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Dot,
}

/// Exit 1: the inputs are wrong (parse, validation, planning, execution).
/// Exit 2: the inputs are unreadable.
fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

enum AppError {
    Domain(String),
    Io(String),
}

fn domain(e: impl std::fmt::Display) -> AppError {
    AppError::Domain(e.to_string())
}

fn read(path: &Path) -> Result<String, AppError> {
    std::fs::read_to_string(path)
        .map_err(|e| AppError::Io(format!("cannot read {}: {e}", path.display())))
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Validate { catalog } => cmd_validate(&catalog),
        Command::Plan { query, format } => cmd_plan(&query, format),
        Command::Run { query, seed, jitter, explain, trace } => {
            cmd_run(&query, seed, jitter, explain, trace)
        }
        Command::Bench { catalogs, generate, seed, out } => {
            cmd_bench(catalogs.as_deref(), generate, seed, out.as_deref())
        }
    }
}

fn cmd_validate(path: &Path) -> Result<(), AppError> {
    let cat = parse_catalog(&read(path)?).map_err(domain)?;
    let violations = validate_catalog(&cat);
    if violations.is_empty() {
        println!("ok: {} services", cat.services.len());
        Ok(())
    } else {
        for v in &violations {
            println!("violation: {v}");
        }
        Err(AppError::Domain(format!("{} violation(s)", violations.len())))
    }
}

fn plan_query(
    args: &QueryArgs,
) -> Result<(Catalog, wsms::sqlfront::ValidatedQuery, wsms::planner::ExecutionPlan), AppError> {
    let cat = load_catalog(&read(&args.catalog)?).map_err(domain)?;
    let s = strategy(&args.strategy).ok_or_else(|| {
        AppError::Domain(format!(
            "unknown strategy {:?}; known: {}",
            args.strategy,
            wsms::planner::strategy::strategy_names().join(", ")
        ))
    })?;
    let ast = parse_query(&args.query).map_err(domain)?;
    let vq = validate_query(&ast, &cat).map_err(domain)?;
    let plan = s.plan(&vq, &cat).map_err(domain)?;
    Ok((cat, vq, plan))
}

fn cmd_plan(args: &QueryArgs, format: Format) -> Result<(), AppError> {
    let (_, _, plan) = plan_query(args)?;
    match format {
        Format::Text => {
            print!("{}", plan.to_text());
            println!("# estimated cost: {:.6}", plan.estimate.total);
            for sc in &plan.estimate.per_service {
                println!(
                    "# {}: calls={:.6} per_call={:.6} subtotal={:.6}",
                    sc.service, sc.input_cardinality, sc.per_call_cost, sc.subtotal
                );
            }
        }
        Format::Dot => print!("{}", plan.logical.to_dot()),
    }
    Ok(())
}

fn cmd_run(
    args: &QueryArgs,
    seed: u64,
    jitter: f64,
    explain: bool,
    trace: bool,
) -> Result<(), AppError> {
    if !(0.0..1.0).contains(&jitter) {
        return Err(AppError::Domain(format!("jitter {jitter} not in [0, 1)")));
    }
    let (cat, _, plan) = plan_query(args)?;
    if explain {
        print!("{}", plan.to_text());
        println!("# estimated cost: {:.6}", plan.estimate.total);
    }
    let mut fabric = SimFabric::new(&cat, seed, jitter);
    let mut profiler = ProfilerStats::default();
    let (result, report) =
        execute_plan(&plan, &cat, &mut fabric, &mut profiler).map_err(domain)?;
    print!("{}", result.to_csv());
    println!("# cost");
    println!("# estimated: {:.6}", plan.estimate.total);
    println!("# measured: {:.6}", report.total);
    println!("# calls: {}", report.calls);
    if trace {
        println!("# trace");
        print!("{}", fabric.trace_csv());
    }
    Ok(())
}

fn cmd_bench(
    dir: Option<&Path>,
    generate: Option<usize>,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), AppError> {
    let catalogs: Vec<(String, Catalog)> = match (dir, generate) {
        (Some(dir), _) => {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| AppError::Io(format!("cannot read {}: {e}", dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            entries.sort();
            if entries.is_empty() {
                return Err(AppError::Domain(format!(
                    "no catalog JSON files in {}",
                    dir.display()
                )));
            }
            entries
                .into_iter()
                .map(|p| {
                    let name = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    Ok((name, load_catalog(&read(&p)?).map_err(domain)?))
                })
                .collect::<Result<_, AppError>>()?
        }
        (None, Some(n)) => generated_catalogs(n, seed),
        (None, None) => {
            return Err(AppError::Domain(
                "either --catalogs <dir> or --generate <n> is required".into(),
            ))
        }
    };
    let csv = bench_csv(&run_bench(&catalogs, seed).map_err(domain)?);
    match out {
        Some(path) => std::fs::write(path, csv)
            .map_err(|e| AppError::Io(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{csv}"),
    }
    Ok(())
}
