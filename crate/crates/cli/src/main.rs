use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rhkcas_core::harness::{self, Format, GridSpec, WorkloadSpec};
use rhkcas_core::verify::{self, Suite, SuiteOptions};
use rhkcas_core::HarnessError;

/// Benchmark and verify the K-CAS Robin Hood hash set.
#[derive(Parser, Debug)]
#[command(name = "rhkcas", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the timed workload grid and emit one record per trial plus
    /// per-cell averages (trial = -1).
    Bench(BenchArgs),
    /// Run one verification suite.
    Verify(VerifyArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    JsonLines,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 18)]
    capacity_log2: u32,
    #[arg(long = "load-factor", default_values_t = [0.2, 0.4, 0.6, 0.8])]
    load_factors: Vec<f64>,
    #[arg(long = "update-ratio", default_values_t = [0.1, 0.2])]
    update_ratios: Vec<f64>,
    /// Thread counts; defaults to powers of two up to the core count.
    #[arg(long = "threads")]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 2.0)]
    duration_secs: f64,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    shard_log2: u32,
    /// Exponential backoff before each retry.
    #[arg(long)]
    backoff: bool,
    /// Audit the table after every trial; any failure makes the exit code 1.
    #[arg(long)]
    verify: bool,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
    /// Write records here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    Audit,
    Linearizability,
    Races,
    KcasTorture,
    ProbeStats,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Suite {
        match s {
            SuiteArg::Audit => Suite::Audit,
            SuiteArg::Linearizability => Suite::Linearizability,
            SuiteArg::Races => Suite::Races,
            SuiteArg::KcasTorture => Suite::KcasTorture,
            SuiteArg::ProbeStats => Suite::ProbeStats,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    JsonLines,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    suite: SuiteArg,
    #[arg(long, default_value_t = 8)]
    threads: usize,
    /// Length of each stress run or of the counter torture.
    #[arg(long, default_value_t = 2.0)]
    duration_secs: f64,
    /// Table size for the audit stress and the probe statistics.
    #[arg(long, default_value_t = 16)]
    capacity_log2: u32,
    /// Key space of the linearizability stress.
    #[arg(long, default_value_t = 8)]
    keys: u64,
    /// Stress runs, executions per race scenario, or probe-statistics seeds.
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Cells of the K-CAS counter torture.
    #[arg(long, default_value_t = 4)]
    cells: usize,
    /// Randomized schedules of the K-CAS overlap test.
    #[arg(long, default_value_t = 10_000)]
    overlap_rounds: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    format: ReportFormat,
}

fn default_threads() -> Vec<usize> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut out: Vec<usize> = std::iter::successors(Some(1), |&t| Some(t * 2))
        .take_while(|&t| t <= cores)
        .collect();
    if out.last() != Some(&cores) {
        out.push(cores);
    }
    out
}

fn duration(secs: f64) -> Result<Duration, HarnessError> {
    Duration::try_from_secs_f64(secs)
        .map_err(|_| HarnessError::InvalidWorkload(format!("invalid duration {secs}")))
}

fn bench(args: BenchArgs) -> Result<bool, HarnessError> {
    let grid = GridSpec {
        base: WorkloadSpec {
            capacity_log2: args.capacity_log2,
            duration: duration(args.duration_secs)?,
            trials: args.trials,
            seed: args.seed,
            shard_log2: args.shard_log2,
            backoff: args.backoff,
            ..WorkloadSpec::default()
        },
        load_factors: args.load_factors,
        update_ratios: args.update_ratios,
        threads: if args.threads.is_empty() { default_threads() } else { args.threads },
    };
    let mut audits_ok = true;
    let records = harness::run_grid(&grid, args.verify, |r| {
        let audit = match &r.audit {
            Some(a) if a.passed() => " audit=pass".to_owned(),
            Some(a) => format!(" audit=FAIL ({})", a.summary()),
            None => String::new(),
        };
        audits_ok &= r.audit_passed();
        eprintln!(
            "load={} updates={} threads={} trial={}: {:.3} ops/us, {:.4} retries/op, final load {:.3}{audit}",
            r.spec.load_factor, r.spec.update_ratio, r.spec.threads, r.trial, r.ops_per_us, r.retries_per_op, r.final_load
        );
    })?;
    let format = match args.format {
        OutputFormat::Csv => Format::Csv,
        OutputFormat::JsonLines => Format::JsonLines,
    };
    match args.out {
        Some(path) => harness::emit(&records, format, BufWriter::new(File::create(path)?))?,
        None => harness::emit(&records, format, io::stdout().lock())?,
    }
    Ok(audits_ok)
}

fn verify(args: VerifyArgs) -> Result<bool, HarnessError> {
    let opts = SuiteOptions {
        threads: args.threads,
        duration: duration(args.duration_secs)?,
        capacity_log2: args.capacity_log2,
        keys: args.keys,
        runs: args.runs,
        cells: args.cells,
        overlap_rounds: args.overlap_rounds,
        seed: args.seed,
    };
    if !(1..=rhkcas_core::MAX_ENTRIES).contains(&opts.cells) {
        return Err(HarnessError::InvalidWorkload(format!(
            "--cells must be in 1..={}",
            rhkcas_core::MAX_ENTRIES
        )));
    }
    if opts.threads == 0 || opts.keys == 0 {
        return Err(HarnessError::InvalidWorkload("--threads and --keys must be positive".into()));
    }
    let records = verify::run_suite(args.suite.into(), &opts)?;
    let mut out = io::stdout().lock();
    match args.format {
        ReportFormat::Text => {
            for r in &records {
                writeln!(out, "{r}")?;
            }
        }
        ReportFormat::JsonLines => harness::write_json_lines(&records, &mut out)?,
    }
    Ok(records.iter().all(|r| r.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Bench(args) => bench(args),
        Command::Verify(args) => verify(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
