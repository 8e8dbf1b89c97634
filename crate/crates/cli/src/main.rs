use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use ironkit::{Method, Phi};
use ironkit_cli::{batch_csv_path, execute, read_input, write_csv, CliError, Overrides};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PhiArg {
    Quadratic,
    Quartic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Oracle,
    Flow,
}

/// Solve ironing, access-rights, mechanism and dominance instances.
///
/// INSTANCE is a JSON file (one instance or an array of them), a fixture
/// name, or "-" for stdin. Results go to stdout as JSON.
#[derive(Debug, Parser)]
#[command(name = "ironkit", version)]
struct Args {
    instance: String,
    /// Relative objective decrease below which ironing stops
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long, value_enum)]
    phi: Option<PhiArg>,
    /// Majorization check used to verify ironing results
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Goods mode: allow discriminatory access rights
    #[arg(long)]
    with_access: bool,
    /// Dyadic level for continuous problems
    #[arg(long)]
    level: Option<u32>,
    /// Seed of the sampled utility battery
    #[arg(long)]
    seed: Option<u64>,
    /// Write one row per type profile to this CSV file
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Do not report wall time on stderr
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let start = Instant::now();
    let code = match solve(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    if !args.quiet {
        eprintln!("wall time {:.3?}", start.elapsed());
    }
    ExitCode::from(code as u8)
}

fn solve(args: &Args) -> Result<i32, CliError> {
    let overrides = Overrides {
        tol: args.tol,
        max_sweeps: args.max_sweeps,
        phi: args.phi.map(|p| match p {
            PhiArg::Quadratic => Phi::Quadratic,
            PhiArg::Quartic => Phi::Quartic,
        }),
        method: args.method.map(|m| match m {
            MethodArg::Oracle => Method::Oracle,
            MethodArg::Flow => Method::Flow,
        }),
        with_access: args.with_access,
        level: args.level,
        seed: args.seed,
    };
    let text = read_input(&args.instance)?;
    let exec = execute(&text, &overrides);
    print!("{}", exec.stdout);
    for e in &exec.errors {
        eprintln!("error: {e}");
    }
    if let Some(path) = &args.csv {
        for (k, table) in exec.tables.iter().enumerate() {
            if let Some(t) = table {
                let p = if exec.batch { batch_csv_path(path, k) } else { path.clone() };
                write_csv(&p, t)?;
            }
        }
    }
    Ok(exec.exit_code())
}
