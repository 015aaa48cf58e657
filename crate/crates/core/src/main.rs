use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use osalg::allocators::AllocatorKind;
use osalg::binding::legal_orderings;
use osalg::combinators::SortKey;
use osalg::schedulers::{ClassQuanta, Policy, Quantum};
use osalg::sim::{csv_line, SimConfig, SimError, Simulator, TRACE_HEADER};
use osalg::workload::{emit_workload, generate, parse_workload, GenParams};

const USAGE: &str =
    "usage: osalg run --workload <path> --scheduler <fcfs|sjf-size|sjf-time|priority|rr --quantum N|var-quantum>
                 --allocator <first-fit|fixed --unit N|buddy|paging --page-size N|segmentation>
                 [--memory N] [--backing N] [--trace <path>] [--metrics <path>] [--seed N]
       osalg orderings --symbols a,b,c --deps a<c,b<c
       osalg generate [--count N] [--seed N]";

const EXIT_USAGE: u8 = 1;
const EXIT_WORKLOAD: u8 = 2;
const EXIT_UNRUNNABLE: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser)]
#[command(name = "osalg", version, about = "Scheduling and memory-allocation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a workload and print its event trace.
    Run(RunArgs),
    /// Print every binding order consistent with the dependencies.
    Orderings {
        #[arg(long, value_delimiter = ',', required = true)]
        symbols: Vec<String>,
        /// Dependencies as `a<b` (a must be bound before b).
        #[arg(long, value_delimiter = ',')]
        deps: Vec<String>,
    },
    /// Write a random workload file.
    Generate {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        max_size: u64,
        #[arg(long, default_value_t = 10)]
        max_time: u64,
        #[arg(long, default_value_t = 3)]
        max_gap: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedulerName {
    Fcfs,
    SjfSize,
    SjfTime,
    Priority,
    Rr,
    VarQuantum,
}

#[derive(Clone, Copy, ValueEnum)]
enum AllocatorName {
    FirstFit,
    Fixed,
    Buddy,
    Paging,
    Segmentation,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    workload: PathBuf,
    #[arg(long, value_enum)]
    scheduler: SchedulerName,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    quantum: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    io_quantum: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    cpu_quantum: Option<u64>,
    #[arg(long, value_enum)]
    allocator: AllocatorName,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    unit: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    page_size: Option<u64>,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    memory: u64,
    /// Backing-store capacity; defaults to the memory capacity.
    #[arg(long)]
    backing: Option<u64>,
    /// Trace destination; standard output when absent.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Metrics destination; standard error when absent.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

fn policy(args: &RunArgs) -> Result<Policy, Failure> {
    Ok(match args.scheduler {
        SchedulerName::Fcfs => Policy::Fcfs,
        SchedulerName::SjfSize => Policy::Sjf(SortKey::Size),
        SchedulerName::SjfTime => Policy::Sjf(SortKey::Time),
        SchedulerName::Priority => Policy::Priority,
        SchedulerName::Rr => {
            Policy::round_robin(args.quantum.ok_or_else(|| fail(EXIT_USAGE, "rr requires --quantum N"))?)
        }
        SchedulerName::VarQuantum => {
            let d = ClassQuanta::default();
            Policy::Chunked(Quantum::Variable(ClassQuanta {
                io_bound: args.io_quantum.unwrap_or(d.io_bound),
                cpu_bound: args.cpu_quantum.unwrap_or(d.cpu_bound),
            }))
        }
    })
}

fn allocator(args: &RunArgs) -> Result<AllocatorKind, Failure> {
    Ok(match args.allocator {
        AllocatorName::FirstFit => AllocatorKind::FirstFit,
        AllocatorName::Fixed => {
            AllocatorKind::Fixed { unit: args.unit.ok_or_else(|| fail(EXIT_USAGE, "fixed requires --unit N"))? }
        }
        AllocatorName::Buddy => AllocatorKind::Buddy,
        AllocatorName::Paging => AllocatorKind::Paging {
            page_size: args.page_size.ok_or_else(|| fail(EXIT_USAGE, "paging requires --page-size N"))?,
        },
        AllocatorName::Segmentation => AllocatorKind::Segmentation,
    })
}

fn sim_failure(e: SimError) -> Failure {
    let code = match &e {
        SimError::Unrunnable { .. } => EXIT_UNRUNNABLE,
        SimError::Config(_) => EXIT_USAGE,
        SimError::Sched(_) => EXIT_WORKLOAD,
        _ => EXIT_INTERNAL,
    };
    fail(code, e.to_string())
}

fn io_failure(path: &std::path::Path, e: io::Error) -> Failure {
    fail(EXIT_INTERNAL, format!("{}: {e}", path.display()))
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = SimConfig::new(policy(&args)?, allocator(&args)?, args.memory);
    cfg.backing = args.backing.unwrap_or(args.memory);
    cfg.seed = args.seed;
    cfg.strict = std::env::var("OSALG_STRICT").is_ok_and(|v| v == "1");
    cfg.validate().map_err(sim_failure)?;

    let text = fs::read_to_string(&args.workload)
        .map_err(|e| fail(EXIT_WORKLOAD, format!("{}: {e}", args.workload.display())))?;
    let set = parse_workload(&text).map_err(|e| fail(EXIT_WORKLOAD, format!("{}: {e}", args.workload.display())))?;
    cfg.policy.check(&set).map_err(|e| fail(EXIT_WORKLOAD, e.to_string()))?;

    let mut out: Box<dyn Write> = match &args.trace {
        Some(path) => Box::new(io::BufWriter::new(fs::File::create(path).map_err(|e| io_failure(path, e))?)),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    };
    let write_err = |e: io::Error| fail(EXIT_INTERNAL, format!("writing trace: {e}"));
    writeln!(out, "{TRACE_HEADER}").map_err(write_err)?;

    let mut sim = Simulator::new(set.into_members().into_iter(), cfg).map_err(sim_failure)?;
    let mut written = 0;
    loop {
        let more = sim.step();
        for e in &sim.trace().events[written..] {
            writeln!(out, "{}", csv_line(e)).map_err(write_err)?;
        }
        written = sim.trace().events.len();
        if !more.map_err(sim_failure)? {
            break;
        }
    }
    out.flush().map_err(write_err)?;
    let output = sim.finish().map_err(sim_failure)?;

    let kv = output.metrics.to_kv();
    match &args.metrics {
        Some(path) => fs::write(path, kv).map_err(|e| io_failure(path, e))?,
        None => eprint!("{kv}"),
    }
    Ok(())
}

fn orderings(symbols: &[String], deps: &[String]) -> Result<(), Failure> {
    let pairs: Vec<(&str, &str)> = deps
        .iter()
        .map(|d| {
            d.split_once('<')
                .map(|(a, b)| (a.trim(), b.trim()))
                .filter(|(a, b)| !a.is_empty() && !b.is_empty())
                .ok_or_else(|| fail(EXIT_USAGE, format!("dependency {d:?} is not of the form a<b")))
        })
        .collect::<Result<_, _>>()?;
    let names: Vec<&str> = symbols.iter().map(String::as_str).collect();
    for (a, b) in &pairs {
        if !names.contains(a) || !names.contains(b) {
            return Err(fail(EXIT_USAGE, format!("dependency {a}<{b} names an unlisted symbol")));
        }
    }
    let orders = legal_orderings(&names, &pairs).map_err(|e| fail(EXIT_WORKLOAD, e.to_string()))?;
    let mut out = io::stdout().lock();
    for order in orders {
        let _ = writeln!(out, "{}", order.join(","));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !matches!(e.kind(), ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                eprintln!("\n{USAGE}");
            }
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Orderings { symbols, deps } => orderings(&symbols, &deps),
        Command::Generate { count, seed, max_size, max_time, max_gap } => {
            let params = GenParams { count, max_size, max_time, max_gap, ..GenParams::default() };
            print!("{}", emit_workload(&generate(seed, &params)));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("osalg: {}", f.message);
            if f.code == EXIT_USAGE {
                eprintln!("{USAGE}");
            }
            ExitCode::from(f.code)
        }
    }
}
