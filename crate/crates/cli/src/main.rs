use clap::{Parser, Subcommand};
use proxyhedge_cli::commands::{self, CliError, Outcome, Status};
use proxyhedge_cli::config::{self, RunConfig, SolverChoice};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "proxyhedge", version, about = "Indifference price and static hedge of an illiquid claim")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (key = value under [section] headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// CSV destination; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Highest asymptotic order.
    #[arg(long, global = true)]
    order: Option<usize>,
    #[arg(long, global = true, value_parser = ["asym", "fd", "both"])]
    solver: Option<String>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sup-norm discrepancy allowed by `validate`.
    #[arg(long, global = true)]
    threshold: Option<f64>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Price along the u-range of the configured v slice.
    Price,
    /// Compare the asymptotic orders with the finite-difference solution.
    Validate,
    /// Optimal static hedge along the u-range.
    Hedge,
    /// Price at the spot across the [sweep] axis.
    Sweep,
    /// Seeded property checks and closed-form limits.
    Selftest,
}

fn configure(cli: &Cli) -> Result<Option<RunConfig>, CliError> {
    let Some(path) = &cli.config else {
        return if cli.command == Command::Selftest { Ok(None) } else { Err(CliError::Config("--config is required".into())) };
    };
    let mut cfg = config::load(path).map_err(|e| CliError::Config(e.0))?;
    if let Some(n) = cli.order {
        cfg.options.order = n;
    }
    if let Some(s) = &cli.solver {
        cfg.solver = SolverChoice::parse(s).map_err(|e| CliError::Config(e.0))?;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threshold {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(CliError::Config(format!("threshold {t} must be a non-negative number")));
        }
        cfg.threshold = t;
    }
    Ok(Some(cfg))
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let cfg = configure(cli)?;
    let need = || cfg.as_ref().expect("config checked");
    let outcome = match cli.command {
        Command::Price => commands::price(need())?,
        Command::Validate => commands::validate(need())?,
        Command::Hedge => commands::hedge(need())?,
        Command::Sweep => commands::sweep(need())?,
        Command::Selftest => commands::selftest(cfg.as_ref(), cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0))?,
    };
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    match &cli.out {
        Some(p) => proxyhedge_cli::write_csv(std::fs::File::create(p).map_err(io)?, &outcome.table).map_err(io)?,
        None => proxyhedge_cli::write_csv(std::io::stdout().lock(), &outcome.table).map_err(io)?,
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(o) => {
            for n in &o.notes {
                eprintln!("{n}");
            }
            match o.status {
                Status::Ok => ExitCode::SUCCESS,
                Status::ThresholdFailed => ExitCode::from(2),
            }
        }
        Err(e) => {
            eprintln!("proxyhedge: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
